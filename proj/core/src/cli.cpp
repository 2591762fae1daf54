#include "umbra/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "umbra/augment.hpp"
#include "umbra/dataset.hpp"
#include "umbra/errors.hpp"
#include "umbra/metrics.hpp"
#include "umbra/pipeline.hpp"
#include "umbra/png_io.hpp"
#include "umbra/service.hpp"

namespace umbra::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw SchemaError(path.string(), e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw IoError(fmt::format("cannot write {}", path.string()));
}

std::vector<world::SceneSample> load_split(const fs::path& dir, const std::string& split) {
  std::vector<world::SceneSample> out;
  for (auto& e : dataset::read_dataset(dir)) {
    const bool keep = split == "all" || (split == "train") == (e.split == dataset::Split::train);
    if (keep) out.push_back(std::move(e.sample));
  }
  if (out.empty()) throw InvalidArgument(fmt::format("{}: no '{}' samples", dir.string(), split));
  return out;
}

// --- gen-data -------------------------------------------------------------

struct GenArgs {
  int scenes = 0;
  std::uint64_t seed = 0;
  int resolution = 128;
  std::string out;
};

void gen_data(const GenArgs& a, std::ostream& out) {
  if (a.scenes < 1) throw InvalidArgument("--scenes must be >= 1");
  const auto entries = dataset::generate(a.scenes, a.seed, {a.resolution, a.resolution});
  dataset::write_dataset(entries, a.out);
  out << fmt::format("wrote {} scenes to {}\n", entries.size(), a.out);
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, out, resume, log, analyzer;
};

std::ostream* open_log(const std::string& path, std::ofstream& file, std::ostream& fallback) {
  if (path.empty()) return &fallback;
  file.open(path, std::ios::app);
  if (!file) throw IoError(fmt::format("cannot open {}", path));
  return &file;
}

void train_analyzer(const TrainArgs& a, std::ostream& out) {
  const auto j = read_json(a.config);
  const auto cfg = analyzer::AnalyzerConfig::from_json(j.value("analyzer", json::object()));
  const auto train = analyzer::TrainConfig::from_json(j.value("train", json::object()));
  data::SamplingPolicy policy;
  policy.batch_size = train.batch_size;
  policy.p_empty_object_mask = train.p_empty_object_mask;
  if (!j.contains("sources") || !j.at("sources").is_array() || j.at("sources").empty())
    throw SchemaError("sources", "expected a non-empty array");
  for (std::size_t i = 0; i < j.at("sources").size(); ++i) {
    const auto& s = j.at("sources")[i];
    const std::string path = fmt::format("sources[{}]", i);
    if (!s.is_object() || !s.contains("data") || !s.at("data").is_string()) throw SchemaError(path + ".data", "expected a path");
    const auto annotation = s.value("annotation", std::string("full"));
    if (annotation != "full" && annotation != "partial") throw SchemaError(path + ".annotation", "expected 'full' or 'partial'");
    auto samples = load_split(s.at("data").get<std::string>(), s.value("split", std::string("train")));
    if (annotation == "partial")
      for (auto& x : samples) x = data::as_partial(x);
    policy.sources.push_back({std::make_shared<const std::vector<world::SceneSample>>(std::move(samples)),
                              annotation == "full" ? world::Annotation::full : world::Annotation::partial, s.value("repeat", 1)});
  }
  analyzer::Trainer trainer(cfg, train, policy);
  if (!a.resume.empty()) trainer.restore(a.resume);
  trainer.nan_dump_path = fs::path(a.out).replace_extension(".nan.ckp");
  std::ofstream file;
  trainer.run(open_log(a.log, file, out), a.out);
  trainer.save(a.out);
}

void train_synthesizer(const TrainArgs& a, std::ostream& out) {
  const auto j = read_json(a.config);
  const auto cfg = synth::SynthConfig::from_json(j.value("synthesizer", json::object()));
  const auto train = synth::SynthTrainConfig::from_json(j.value("train", json::object()));
  const auto pairs_policy = synth::PairPolicy::from_json(j.value("pairs", json::object()));
  std::string analyzer_path = a.analyzer;
  if (analyzer_path.empty()) {
    if (!j.contains("analyzer_checkpoint") || !j.at("analyzer_checkpoint").is_string())
      throw SchemaError("analyzer_checkpoint", "expected a path (or pass --analyzer)");
    analyzer_path = j.at("analyzer_checkpoint").get<std::string>();
  }
  if (!j.contains("data") || !j.at("data").is_string()) throw SchemaError("data", "expected a dataset directory");
  auto an = analyzer::load_analyzer(analyzer_path);
  const auto scenes = load_split(j.at("data").get<std::string>(), j.value("split", std::string("train")));
  auto pairs = synth::build_pairs(an, cfg, scenes, pairs_policy);
  if (pairs.empty()) throw InvalidArgument("no training pairs could be built from the dataset");
  out << fmt::format("{{\"pairs\":{}}}\n", pairs.size());
  synth::SynthTrainer trainer(cfg, train, std::move(pairs));
  trainer.analyzer_hash = an.weight_hash;
  if (!a.resume.empty()) trainer.restore(a.resume);
  trainer.nan_dump_path = fs::path(a.out).replace_extension(".nan.ckp");
  std::ofstream file;
  trainer.run(open_log(a.log, file, out), a.out);
  trainer.save(a.out);
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string task, ckpt, analyzer, data, report, split = "test";
  std::uint64_t seed = 0;
  int native_resolution = 0;
  bool oracle = false;
};

void eval(const EvalArgs& a, std::ostream& out) {
  const auto task = metrics::parse_task(a.task);
  const auto scenes = load_split(a.data, a.split);
  if (!a.oracle && a.ckpt.empty()) throw InvalidArgument("--ckpt is required unless --oracle is given");

  std::optional<analyzer::LoadedAnalyzer> an;
  std::optional<synth::LoadedSynth> sy;
  if (!a.oracle) {
    if (task == metrics::Task::synthesis) {
      sy = synth::load_synthesizer(a.ckpt);
      if (sy->config.embedding == synth::EmbeddingMode::analyzer) {
        if (a.analyzer.empty()) throw InvalidArgument("synthesis with analyzer features needs --ckpt-analyzer");
        an = analyzer::load_analyzer(a.analyzer);
      }
    } else {
      an = analyzer::load_analyzer(a.ckpt);
    }
  }

  std::vector<metrics::EvalCase> cases;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const int n = static_cast<int>(s.object_masks.size());
    for (int k = 0; k < n; ++k) {
      metrics::EvalCase c;
      c.id = fmt::format("{}/{}", i, k);
      if (task == metrics::Task::synthesis) {
        // The other object in the same scene is the reference.
        if (n < 2 && sy && sy->config.embedding == synth::EmbeddingMode::analyzer) continue;
        c.gt_image = s.image_shadowed;
        c.gt_mask = s.shadow_masks[k];
        if (a.oracle) {
          c.pred_image = c.gt_image;
          c.pred_mask = c.gt_mask;
        } else {
          const auto composite = data::augment_shadow_drop(s, k).image_shadowed;
          std::optional<pipeline::Reference> ref;
          if (sy->config.embedding == synth::EmbeddingMode::analyzer) ref = pipeline::Reference{s.image_shadowed, s.object_masks[(k + 1) % n]};
          const pipeline::Models m{an ? &*an : nullptr, &*sy, nullptr};
          const auto r = pipeline::insert(m, composite, composite, s.object_masks[k], 0, 0, ref, {.seed = a.seed});
          c.pred_image = r.final_image;
          c.pred_mask = r.new_shadow_mask;
        }
      } else {
        const auto ex = data::make_example(s, k);
        c.gt_image = ex.target_shadowfree;
        c.gt_mask = ex.target_shadow_mask;
        if (a.oracle) {
          c.pred_image = c.gt_image;
          c.pred_mask = c.gt_mask;
        } else {
          const auto r = pipeline::analyze(*an, s.image_shadowed, s.object_masks[k], a.seed);
          c.pred_image = r.shadowfree;
          c.pred_mask = r.shadow_mask;
        }
      }
      cases.push_back(std::move(c));
    }
  }
  if (cases.empty()) throw InvalidArgument("no evaluable cases in the dataset");
  const int native = a.native_resolution > 0 ? a.native_resolution : scenes.front().width();
  const auto report = metrics::evaluate(task, cases, native);
  write_text(a.report, fs::path(a.report).extension() == ".csv" ? report.to_csv() : report.to_json().dump(2) + "\n");
  out << report.to_json().at("aggregates").dump() << "\n";
}

// --- edit -----------------------------------------------------------------

struct EditArgs {
  std::string image, mask, out, ckpt_analyzer, ckpt_synth, ckpt_baseline;
  std::string patch, patch_mask, reference_image, reference_mask;
  int dx = 0, dy = 0, x = 0, y = 0;
  std::uint64_t seed = 0;
  bool no_keep = false;
};

struct LoadedModels {
  std::optional<analyzer::LoadedAnalyzer> analyzer;
  std::optional<synth::LoadedSynth> synth, baseline;
  pipeline::Models view() {
    return {analyzer ? &*analyzer : nullptr, synth ? &*synth : nullptr, baseline ? &*baseline : nullptr};
  }
};

LoadedModels load_models(const EditArgs& a) {
  LoadedModels m;
  if (!a.ckpt_analyzer.empty()) m.analyzer = analyzer::load_analyzer(a.ckpt_analyzer);
  if (!a.ckpt_synth.empty()) m.synth = synth::load_synthesizer(a.ckpt_synth);
  if (!a.ckpt_baseline.empty()) m.baseline = synth::load_synthesizer(a.ckpt_baseline);
  return m;
}

void edit_relocate(const EditArgs& a, std::ostream& out) {
  auto m = load_models(a);
  const auto r = pipeline::relocate(m.view(), png::read_rgb(a.image), png::read_gray(a.mask), {a.dx, a.dy},
                                    {.seed = a.seed, .keep_region = !a.no_keep});
  r.write(a.out);
  out << r.to_json().dump() << "\n";
}

void edit_remove(const EditArgs& a, std::ostream& out) {
  if (a.ckpt_analyzer.empty()) throw CheckpointError("remove needs --ckpt-analyzer");
  auto an = analyzer::load_analyzer(a.ckpt_analyzer);
  const auto img = pipeline::remove_object_and_shadow(an, png::read_rgb(a.image), png::read_gray(a.mask), a.seed);
  fs::create_directories(a.out);
  png::write(fs::path(a.out) / "removed.png", img);
  const json j = {{"seed", a.seed}, {"files", {{"removed_view", "removed.png"}}}};
  write_text(fs::path(a.out) / "result.json", j.dump(2) + "\n");
  out << j.dump() << "\n";
}

void edit_insert(const EditArgs& a, std::ostream& out) {
  auto m = load_models(a);
  std::optional<pipeline::Reference> ref;
  if (!a.reference_image.empty() || !a.reference_mask.empty()) {
    if (a.reference_image.empty() || a.reference_mask.empty())
      throw InvalidArgument("--reference-image and --reference-mask go together");
    ref = pipeline::Reference{png::read_rgb(a.reference_image), png::read_gray(a.reference_mask)};
  }
  const auto r = pipeline::insert(m.view(), png::read_rgb(a.image), png::read_rgb(a.patch), png::read_gray(a.patch_mask), a.x, a.y,
                                  ref, {.seed = a.seed, .keep_region = !a.no_keep});
  r.write(a.out);
  out << r.to_json().dump() << "\n";
}

// --- serve ----------------------------------------------------------------

struct ServeArgs {
  std::string config, host, ckpt_analyzer, ckpt_synth, ckpt_baseline, data;
  int port = -1, workers = 0;
};

void serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  service::ServiceConfig cfg;
  if (!a.config.empty()) cfg = service::ServiceConfig::from_json(read_json(a.config));
  cfg.apply_env();
  if (!a.host.empty()) cfg.host = a.host;
  if (a.port >= 0) cfg.port = a.port;
  if (!a.ckpt_analyzer.empty()) cfg.analyzer_checkpoint = a.ckpt_analyzer;
  if (!a.ckpt_synth.empty()) cfg.synth_checkpoint = a.ckpt_synth;
  if (!a.ckpt_baseline.empty()) cfg.baseline_checkpoint = a.ckpt_baseline;
  if (!a.data.empty()) cfg.data = a.data;
  if (a.workers > 0) cfg.workers = a.workers;
  service::Service svc(cfg);
  if (const auto problem = svc.load(); !problem.empty()) err << "warning: " << problem << "\n";
  out << fmt::format("listening on {}:{}\n", cfg.host, cfg.port) << std::flush;
  if (!svc.listen()) throw IoError(fmt::format("cannot listen on {}:{}", cfg.host, cfg.port));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Object-centred shadow analysis and synthesis", "umbra"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a procedural paired dataset");
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
  gen_cmd->add_option("--resolution", gen.resolution, "Square image size")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->require_subcommand(1);
  auto* train_an = train_cmd->add_subcommand("analyzer", "Train the shadow analyzer");
  auto* train_sy = train_cmd->add_subcommand("synthesizer", "Train the shadow synthesizer against a frozen analyzer");
  for (auto* c : {train_an, train_sy}) {
    c->add_option("--config", tr.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
    c->add_option("--out", tr.out, "Checkpoint path")->required();
    c->add_option("--resume", tr.resume, "Resume from this checkpoint")->check(CLI::ExistingFile);
    c->add_option("--log", tr.log, "Append JSON step logs here instead of stdout");
  }
  train_sy->add_option("--analyzer", tr.analyzer, "Analyzer checkpoint (overrides the config)")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  eval_cmd->add_option("--task", ev.task, "detection, removal or synthesis")
      ->required()
      ->check(CLI::IsMember({"detection", "removal", "synthesis"}));
  eval_cmd->add_option("--ckpt", ev.ckpt, "Analyzer checkpoint, or synthesizer for --task synthesis");
  eval_cmd->add_option("--ckpt-analyzer", ev.analyzer, "Analyzer checkpoint for synthesis");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--report", ev.report, "Report path (.json or .csv)")->required();
  eval_cmd->add_option("--split", ev.split, "train, test or all")->capture_default_str()->check(CLI::IsMember({"train", "test", "all"}));
  eval_cmd->add_option("--seed", ev.seed, "Noise seed")->capture_default_str();
  eval_cmd->add_option("--native-resolution", ev.native_resolution, "Resolution the size buckets refer to (default: data size)");
  eval_cmd->add_flag("--oracle", ev.oracle, "Use ground truth as predictions");

  EditArgs ed;
  auto* edit_cmd = app.add_subcommand("edit", "Edit one image");
  edit_cmd->require_subcommand(1);
  auto* reloc = edit_cmd->add_subcommand("relocate", "Move an object and synthesize its new shadow");
  auto* remove = edit_cmd->add_subcommand("remove", "Remove an object and its shadow");
  auto* ins = edit_cmd->add_subcommand("insert", "Insert an object patch and synthesize its shadow");
  for (auto* c : {reloc, remove, ins}) {
    c->add_option("--image", ed.image, c == ins ? "Background PNG" : "Input PNG")->required()->check(CLI::ExistingFile);
    c->add_option("--seed", ed.seed, "Noise seed")->capture_default_str();
    c->add_option("--out", ed.out, "Output directory")->required();
    c->add_option("--ckpt-analyzer", ed.ckpt_analyzer, "Analyzer checkpoint")->check(CLI::ExistingFile);
  }
  for (auto* c : {reloc, remove}) c->add_option("--mask", ed.mask, "Object mask PNG")->required()->check(CLI::ExistingFile);
  for (auto* c : {reloc, ins}) {
    c->add_option("--ckpt-synth", ed.ckpt_synth, "Synthesizer checkpoint")->check(CLI::ExistingFile);
    c->add_flag("--no-keep", ed.no_keep, "Let the sampler change pixels outside the candidate shadow region");
  }
  reloc->add_option("--dx", ed.dx, "Horizontal offset in pixels");
  reloc->add_option("--dy", ed.dy, "Vertical offset in pixels");
  ins->add_option("--patch", ed.patch, "Object patch PNG")->required()->check(CLI::ExistingFile);
  ins->add_option("--patch-mask", ed.patch_mask, "Object patch mask PNG")->required()->check(CLI::ExistingFile);
  ins->add_option("--x", ed.x, "Left edge of the patch in the background")->required();
  ins->add_option("--y", ed.y, "Top edge of the patch in the background")->required();
  ins->add_option("--reference-image", ed.reference_image, "Image holding the reference object")->check(CLI::ExistingFile);
  ins->add_option("--reference-mask", ed.reference_mask, "Mask of the reference object")->check(CLI::ExistingFile);
  ins->add_option("--ckpt-baseline", ed.ckpt_baseline, "Learned-constant synthesizer used without a reference")
      ->check(CLI::ExistingFile);

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP editing service");
  serve_cmd->add_option("--config", sv.config, "Service config (JSON)")->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", sv.host, "Bind address");
  serve_cmd->add_option("--port", sv.port, "Port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--ckpt-analyzer", sv.ckpt_analyzer, "Analyzer checkpoint");
  serve_cmd->add_option("--ckpt-synth", sv.ckpt_synth, "Synthesizer checkpoint");
  serve_cmd->add_option("--ckpt-baseline", sv.ckpt_baseline, "Learned-constant synthesizer for reference-free insertion");
  serve_cmd->add_option("--data", sv.data, "Dataset directory listed under /api/scenes");
  serve_cmd->add_option("--workers", sv.workers, "Concurrent inferences")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (gen_cmd->parsed()) gen_data(gen, out);
    else if (train_an->parsed()) train_analyzer(tr, out);
    else if (train_sy->parsed()) train_synthesizer(tr, out);
    else if (eval_cmd->parsed()) eval(ev, out);
    else if (reloc->parsed()) edit_relocate(ed, out);
    else if (remove->parsed()) edit_remove(ed, out);
    else if (ins->parsed()) edit_insert(ed, out);
    else if (serve_cmd->parsed()) serve(sv, out, err);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace umbra::cli
