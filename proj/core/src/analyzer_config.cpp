#include <algorithm>

#include <fmt/format.h>

#include "umbra/analyzer.hpp"
#include "umbra/errors.hpp"

namespace umbra::analyzer {
namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& dst, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(path + "." + key, "wrong type");
  }
}

}  // namespace

AnalyzerConfig AnalyzerConfig::desk() { return {}; }

AnalyzerConfig AnalyzerConfig::paper() {
  AnalyzerConfig c;
  c.preset = "paper";
  c.input_resolution = 512;
  c.encoder_channels = {64, 64, 256, 512, 512, 512, 512};
  c.style_dim = 512;
  c.noise_dim = 512;
  c.mapping_depth = 8;
  c.detector_input_sizes = {8, 16, 32, 64};
  c.detector_output_size = 256;
  c.detector_channels = 128;
  c.fms_source_sizes = {16, 32, 64, 128};
  c.fms_grid = 32;
  c.disc_channels = 64;
  c.perceptual_channels = 64;
  return c;
}

AnalyzerConfig AnalyzerConfig::tiny() {
  AnalyzerConfig c;
  c.preset = "tiny";
  c.input_resolution = 16;
  c.encoder_channels = {4, 6, 8};
  c.style_dim = 8;
  c.noise_dim = 8;
  c.mapping_depth = 2;
  c.detector_input_sizes = {2, 4};
  c.detector_output_size = 8;
  c.detector_channels = 4;
  c.fms_source_sizes = {4, 8};
  c.fms_grid = 4;
  c.disc_channels = 4;
  c.perceptual_channels = 4;
  return c;
}

AnalyzerConfig AnalyzerConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  if (name == "tiny") return tiny();
  throw InvalidArgument("unknown analyzer preset '" + name + "'");
}

int AnalyzerConfig::level_of_size(int size) const {
  for (int l = 0; l < levels(); ++l)
    if (level_size(l) == size) return l;
  throw InvalidArgument(fmt::format("no pyramid level of size {}", size));
}

int AnalyzerConfig::fms_channels() const {
  int c = 0;
  for (int s : fms_source_sizes) c += encoder_channels[level_of_size(s)];
  return c;
}

void AnalyzerConfig::validate() const {
  if (!is_pow2(input_resolution)) throw InvalidArgument("input_resolution must be a power of two");
  if (encoder_channels.empty()) throw InvalidArgument("encoder needs at least one level");
  if (level_size(levels() - 1) < 2) throw InvalidArgument("too many pyramid levels for the input resolution");
  if (std::any_of(encoder_channels.begin(), encoder_channels.end(), [](int c) { return c < 1; }))
    throw InvalidArgument("encoder channels must be positive");
  if (style_dim < 1 || noise_dim < 1 || mapping_depth < 1) throw InvalidArgument("style/noise/mapping sizes must be positive");
  if (detector_input_sizes.empty() || fms_source_sizes.empty()) throw InvalidArgument("detector and F_ms level lists must be non-empty");
  for (int s : detector_input_sizes) level_of_size(s);
  for (int s : fms_source_sizes) level_of_size(s);
  const int det_in = *std::max_element(detector_input_sizes.begin(), detector_input_sizes.end());
  if (!is_pow2(detector_output_size) || detector_output_size < det_in || detector_output_size > input_resolution)
    throw InvalidArgument("detector_output_size must be a power of two between the largest detector input and the input resolution");
  if (!is_pow2(fms_grid)) throw InvalidArgument("fms_grid must be a power of two");
  if (input_resolution < 16) throw InvalidArgument("input_resolution must be at least 16");
  if (disc_channels < 1 || perceptual_channels < 1 || detector_channels < 1) throw InvalidArgument("channel widths must be positive");
  if (loss.r1_interval < 1) throw InvalidArgument("r1_interval must be >= 1");
}

nlohmann::json AnalyzerConfig::to_json() const {
  return {{"preset", preset},
          {"input_resolution", input_resolution},
          {"encoder_channels", encoder_channels},
          {"style_dim", style_dim},
          {"noise_dim", noise_dim},
          {"mapping_depth", mapping_depth},
          {"detector_input_sizes", detector_input_sizes},
          {"detector_output_size", detector_output_size},
          {"detector_channels", detector_channels},
          {"fms_source_sizes", fms_source_sizes},
          {"fms_grid", fms_grid},
          {"disc_channels", disc_channels},
          {"perceptual_channels", perceptual_channels},
          {"loss",
           {{"l1", loss.l1},
            {"perceptual", loss.perceptual},
            {"adversarial", loss.adversarial},
            {"dice", loss.dice},
            {"r1_gamma", loss.r1_gamma},
            {"r1_interval", loss.r1_interval}}}};
}

AnalyzerConfig AnalyzerConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("analyzer", "expected an object");
  AnalyzerConfig c;
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw SchemaError("analyzer.preset", "expected a string");
    c = preset_named(j["preset"].get<std::string>());
  }
  const std::string p = "analyzer";
  read_opt(j, "input_resolution", c.input_resolution, p);
  read_opt(j, "encoder_channels", c.encoder_channels, p);
  read_opt(j, "style_dim", c.style_dim, p);
  read_opt(j, "noise_dim", c.noise_dim, p);
  read_opt(j, "mapping_depth", c.mapping_depth, p);
  read_opt(j, "detector_input_sizes", c.detector_input_sizes, p);
  read_opt(j, "detector_output_size", c.detector_output_size, p);
  read_opt(j, "detector_channels", c.detector_channels, p);
  read_opt(j, "fms_source_sizes", c.fms_source_sizes, p);
  read_opt(j, "fms_grid", c.fms_grid, p);
  read_opt(j, "disc_channels", c.disc_channels, p);
  read_opt(j, "perceptual_channels", c.perceptual_channels, p);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    if (!l.is_object()) throw SchemaError("analyzer.loss", "expected an object");
    read_opt(l, "l1", c.loss.l1, p + ".loss");
    read_opt(l, "perceptual", c.loss.perceptual, p + ".loss");
    read_opt(l, "adversarial", c.loss.adversarial, p + ".loss");
    read_opt(l, "dice", c.loss.dice, p + ".loss");
    read_opt(l, "r1_gamma", c.loss.r1_gamma, p + ".loss");
    read_opt(l, "r1_interval", c.loss.r1_interval, p + ".loss");
  }
  c.validate();
  return c;
}

}  // namespace umbra::analyzer
