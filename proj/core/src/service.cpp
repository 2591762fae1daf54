#include "umbra/service.hpp"

#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>

#include <fmt/format.h>
#include <httplib.h>

#include "umbra/base64.hpp"
#include "umbra/dataset.hpp"
#include "umbra/errors.hpp"
#include "umbra/pipeline.hpp"
#include "umbra/png_io.hpp"

namespace umbra::service {
namespace {

using json = nlohmann::json;

// Carries the HTTP status of a failed request.
struct HttpError : Error {
  HttpError(int status, const std::string& what) : Error(what), status(status) {}
  int status;
};

HttpError bad_field(const std::string& field, const std::string& what) {
  return HttpError(400, fmt::format("{}: {}", field, what));
}

template <typename T>
T field(const json& j, const std::string& key) {
  if (!j.contains(key)) throw bad_field(key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw bad_field(key, "wrong type");
  }
}

template <typename T>
T field_or(const json& j, const std::string& key, T fallback) {
  return j.contains(key) ? field<T>(j, key) : fallback;
}

std::vector<std::uint8_t> decode_png_bytes(const json& j, const std::string& key) {
  const auto text = field<std::string>(j, key);
  auto bytes = base64::decode(text);
  if (!bytes) throw bad_field(key, "malformed base64");
  return std::move(*bytes);
}

ImageRGB image_field(const json& j, const std::string& key) {
  const auto bytes = decode_png_bytes(j, key);
  try {
    return png::decode_rgb(bytes);
  } catch (const Error& e) {
    throw bad_field(key, std::string("not a PNG image: ") + e.what());
  }
}

MaskGray mask_field(const json& j, const std::string& key) {
  const auto bytes = decode_png_bytes(j, key);
  try {
    return png::decode_gray(bytes);
  } catch (const Error& e) {
    throw bad_field(key, std::string("not a PNG image: ") + e.what());
  }
}

template <int C>
std::string encode_png(const Raster<C>& r) {
  return base64::encode(png::encode(r));
}

json edit_json(const pipeline::EditResult& r) {
  auto j = r.to_json();
  j.erase("files");
  j["final_image"] = encode_png(r.final_image);
  j["removed_view"] = encode_png(r.removed_view);
  j["new_object_mask"] = encode_png(r.new_object_mask);
  j["new_shadow_mask"] = encode_png(r.new_shadow_mask);
  return j;
}

std::string getenv_str(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

}  // namespace

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw InvalidArgument("service.port must be in [0, 65535]");
  if (workers < 1) throw InvalidArgument("service.workers must be >= 1");
}

nlohmann::json ServiceConfig::to_json() const {
  return {{"host", host},
          {"port", port},
          {"analyzer_checkpoint", analyzer_checkpoint.string()},
          {"synth_checkpoint", synth_checkpoint.string()},
          {"baseline_checkpoint", baseline_checkpoint.string()},
          {"data", data.string()},
          {"workers", workers}};
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("service", "expected an object");
  ServiceConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    } catch (const json::exception&) {
      throw SchemaError(std::string("service.") + key, "wrong type");
    }
  };
  std::string a, s, b, d;
  get("host", c.host);
  get("port", c.port);
  get("analyzer_checkpoint", a);
  get("synth_checkpoint", s);
  get("baseline_checkpoint", b);
  get("data", d);
  get("workers", c.workers);
  c.analyzer_checkpoint = a;
  c.synth_checkpoint = s;
  c.baseline_checkpoint = b;
  c.data = d;
  c.validate();
  return c;
}

void ServiceConfig::apply_env() {
  const auto to_int = [](const std::string& name, const std::string& v) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw InvalidArgument(fmt::format("{} must be an integer, got '{}'", name, v));
    }
  };
  if (auto v = getenv_str("UMBRA_HOST"); !v.empty()) host = v;
  if (auto v = getenv_str("UMBRA_PORT"); !v.empty()) port = to_int("UMBRA_PORT", v);
  if (auto v = getenv_str("UMBRA_CKPT_ANALYZER"); !v.empty()) analyzer_checkpoint = v;
  if (auto v = getenv_str("UMBRA_CKPT_SYNTH"); !v.empty()) synth_checkpoint = v;
  if (auto v = getenv_str("UMBRA_CKPT_BASELINE"); !v.empty()) baseline_checkpoint = v;
  if (auto v = getenv_str("UMBRA_DATA"); !v.empty()) data = v;
  if (auto v = getenv_str("UMBRA_WORKERS"); !v.empty()) workers = to_int("UMBRA_WORKERS", v);
  validate();
}

struct Service::State {
  explicit State(ServiceConfig c) : cfg(std::move(c)), slots(cfg.workers) {}

  ServiceConfig cfg;
  std::optional<analyzer::LoadedAnalyzer> analyzer;
  std::optional<synth::LoadedSynth> synth, baseline;
  std::string load_error = "checkpoints not loaded";
  std::vector<dataset::Entry> scenes;
  std::map<std::string, std::size_t> scene_index;
  std::counting_semaphore<64> slots;
  httplib::Server server;

  // Inference runs under one of `workers` slots.
  template <typename F>
  auto infer(F&& f) {
    slots.acquire();
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{slots};
    return f();
  }

  pipeline::Models models() {
    return {analyzer ? &*analyzer : nullptr, synth ? &*synth : nullptr, baseline ? &*baseline : nullptr};
  }

  void require_ready() const {
    if (!load_error.empty()) throw HttpError(409, load_error);
  }

  const dataset::Entry& scene(const std::string& id) const {
    const auto it = scene_index.find(id);
    if (it == scene_index.end()) throw HttpError(404, fmt::format("unknown scene '{}'", id));
    return scenes[it->second];
  }

  // Object mask from either an explicit PNG or a scene's object index.
  MaskGray object_mask(const json& j, const world::SceneSample* sample, const char* mask_key) const {
    if (j.contains(mask_key)) return mask_field(j, mask_key);
    if (!sample) throw bad_field(mask_key, "missing");
    const int k = field<int>(j, "object_index");
    if (k < 0 || k >= static_cast<int>(sample->object_masks.size())) throw bad_field("object_index", "out of range");
    return sample->object_masks[k];
  }

  Reply health() const {
    if (!load_error.empty()) return {409, {{"code", 409}, {"message", load_error}, {"status", "not_ready"}}};
    json ckpts = {{"analyzer", {{"preset", analyzer->config.preset}, {"weight_hash", fmt::format("{:016x}", analyzer->weight_hash)}}},
                  {"synthesizer",
                   {{"preset", synth->config.preset},
                    {"embedding", synth::mode_name(synth->config.embedding)},
                    {"analyzer_hash", fmt::format("{:016x}", synth->analyzer_hash)}}}};
    if (baseline) ckpts["baseline"] = {{"preset", baseline->config.preset}, {"embedding", synth::mode_name(baseline->config.embedding)}};
    return {200, {{"status", "ok"}, {"checkpoints", ckpts}}};
  }

  Reply list_scenes() const {
    json out = json::array();
    for (const auto& e : scenes) {
      const auto thumb = resize_bilinear(e.sample.image_shadowed, 64, 64);
      out.push_back({{"id", e.id},
                     {"split", e.split == dataset::Split::train ? "train" : "test"},
                     {"objects", e.sample.object_masks.size()},
                     {"width", e.sample.width()},
                     {"height", e.sample.height()},
                     {"thumbnail", encode_png(thumb)}});
    }
    return {200, {{"scenes", out}}};
  }

  Reply get_scene(const std::string& id) const {
    const auto& e = scene(id);
    json objs = json::array(), shads = json::array();
    for (const auto& m : e.sample.object_masks) objs.push_back(encode_png(m));
    for (const auto& m : e.sample.shadow_masks) shads.push_back(encode_png(m));
    return {200,
            {{"id", e.id},
             {"width", e.sample.width()},
             {"height", e.sample.height()},
             {"image", encode_png(e.sample.image_shadowed)},
             {"shadowfree", encode_png(e.sample.image_shadowfree)},
             {"object_masks", objs},
             {"shadow_masks", shads}}};
  }

  Reply analyze(const json& req) {
    require_ready();
    const auto image = image_field(req, "image");
    const auto mask = req.contains("object_mask") ? mask_field(req, "object_mask") : MaskGray(image.height(), image.width());
    const auto seed = field_or<std::uint64_t>(req, "seed", 0);
    if (!mask.same_shape(MaskGray(image.height(), image.width()))) throw bad_field("object_mask", "size differs from image");
    const auto an = infer([&] { return pipeline::analyze(*analyzer, image, mask, seed); });
    return {200, {{"shadowfree", encode_png(an.shadowfree)}, {"shadow_mask", encode_png(an.shadow_mask)}, {"seed", seed}}};
  }

  Reply relocate(const json& req) {
    require_ready();
    const world::SceneSample* sample = req.contains("scene_id") ? &scene(field<std::string>(req, "scene_id")).sample : nullptr;
    const auto image = sample ? sample->image_shadowed : image_field(req, "image");
    const auto mask = object_mask(req, sample, "object_mask");
    if (!mask.same_shape(MaskGray(image.height(), image.width()))) throw bad_field("object_mask", "size differs from image");
    pipeline::EditOptions opt;
    opt.seed = field_or<std::uint64_t>(req, "seed", 0);
    opt.keep_region = field_or<bool>(req, "keep_region", true);
    const world::Offset off{field_or<int>(req, "dx", 0), field_or<int>(req, "dy", 0)};
    const auto r = infer([&] { return pipeline::relocate(models(), image, mask, off, opt); });
    return {200, edit_json(r)};
  }

  Reply insert(const json& req) {
    require_ready();
    const world::SceneSample* sample = req.contains("scene_id") ? &scene(field<std::string>(req, "scene_id")).sample : nullptr;
    const auto background = sample ? sample->image_shadowed : image_field(req, "background");
    const auto patch = image_field(req, "patch");
    const auto patch_mask = mask_field(req, "patch_mask");
    if (!patch.same_shape(ImageRGB(patch_mask.height(), patch_mask.width()))) throw bad_field("patch_mask", "size differs from patch");
    std::optional<pipeline::Reference> ref;
    if (req.contains("reference") && !req.at("reference").is_null()) {
      const auto& r = req.at("reference");
      if (!r.is_object()) throw bad_field("reference", "expected an object");
      const world::SceneSample* rs = r.contains("scene_id") ? &scene(field<std::string>(r, "scene_id")).sample : nullptr;
      pipeline::Reference rf{rs ? rs->image_shadowed : image_field(r, "image"), object_mask(r, rs, "object_mask")};
      if (!rf.object_mask.same_shape(MaskGray(rf.image.height(), rf.image.width())))
        throw bad_field("reference.object_mask", "size differs from image");
      ref = std::move(rf);
    }
    pipeline::EditOptions opt;
    opt.seed = field_or<std::uint64_t>(req, "seed", 0);
    opt.keep_region = field_or<bool>(req, "keep_region", true);
    const int x = field<int>(req, "x"), y = field<int>(req, "y");
    const auto r = infer([&] { return pipeline::insert(models(), background, patch, patch_mask, x, y, ref, opt); });
    return {200, edit_json(r)};
  }
};

Service::Service(ServiceConfig cfg) : state_(std::make_unique<State>(std::move(cfg))) { state_->cfg.validate(); }
Service::~Service() = default;

const ServiceConfig& Service::config() const { return state_->cfg; }
bool Service::ready() const { return state_->load_error.empty(); }

std::string Service::load() {
  auto& s = *state_;
  std::vector<std::string> problems;
  if (!s.cfg.data.empty()) {
    s.scenes = dataset::read_dataset(s.cfg.data);
    for (std::size_t i = 0; i < s.scenes.size(); ++i) s.scene_index[s.scenes[i].id] = i;
  }
  const auto attempt = [&](const std::filesystem::path& p, const char* what, auto&& fn) {
    if (p.empty()) {
      problems.push_back(fmt::format("{} checkpoint not configured", what));
      return;
    }
    try {
      fn(p);
    } catch (const Error& e) {
      problems.push_back(fmt::format("{} checkpoint: {}", what, e.what()));
    }
  };
  attempt(s.cfg.analyzer_checkpoint, "analyzer", [&](const auto& p) { s.analyzer = analyzer::load_analyzer(p); });
  attempt(s.cfg.synth_checkpoint, "synthesizer", [&](const auto& p) { s.synth = synth::load_synthesizer(p); });
  if (!s.cfg.baseline_checkpoint.empty())
    attempt(s.cfg.baseline_checkpoint, "baseline", [&](const auto& p) { s.baseline = synth::load_synthesizer(p); });
  s.load_error.clear();
  for (const auto& p : problems) s.load_error += (s.load_error.empty() ? "" : "; ") + p;
  return s.load_error;
}

Reply Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  auto& s = *state_;
  static const std::regex scene_re("^/api/scenes/([A-Za-z0-9_.-]+)$");
  try {
    std::smatch m;
    if (method == "GET") {
      if (path == "/api/health") return s.health();
      if (path == "/api/scenes") return s.list_scenes();
      if (std::regex_match(path, m, scene_re)) return s.get_scene(m[1]);
    } else if (method == "POST") {
      const bool known = path == "/api/analyze" || path == "/api/relocate" || path == "/api/insert";
      if (known) {
        json req;
        try {
          req = json::parse(body);
        } catch (const json::exception&) {
          throw HttpError(400, "body: malformed JSON");
        }
        if (!req.is_object()) throw HttpError(400, "body: expected a JSON object");
        if (path == "/api/analyze") return s.analyze(req);
        if (path == "/api/relocate") return s.relocate(req);
        return s.insert(req);
      }
    }
    throw HttpError(404, fmt::format("no route for {} {}", method, path));
  } catch (const HttpError& e) {
    return {e.status, {{"code", e.status}, {"message", e.what()}}};
  } catch (const OutOfFrameError& e) {
    return {422, {{"code", 422}, {"message", e.what()}}};
  } catch (const CheckpointError& e) {
    return {409, {{"code", 409}, {"message", e.what()}}};
  } catch (const InvalidArgument& e) {
    return {400, {{"code", 400}, {"message", e.what()}}};
  } catch (const std::exception& e) {
    return {500, {{"code", 500}, {"message", e.what()}}};
  }
}

namespace {

void route(Service& svc, httplib::Server& server) {
  const auto forward = [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto r = svc.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/api/.*)", forward);
  server.Post(R"(/api/.*)", forward);
}

}  // namespace

bool Service::listen() {
  route(*this, state_->server);
  return state_->server.listen(state_->cfg.host, state_->cfg.port);
}

int Service::bind_any_port() {
  route(*this, state_->server);
  return state_->server.bind_to_any_port(state_->cfg.host);
}

bool Service::listen_after_bind() { return state_->server.listen_after_bind(); }

void Service::stop() { state_->server.stop(); }

}  // namespace umbra::service
