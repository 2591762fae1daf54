#include "umbra/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "umbra/errors.hpp"

namespace umbra::ckpt {
namespace {

constexpr char kMagic[8] = {'U', 'M', 'B', 'R', 'A', 'C', 'K', 'P'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw CheckpointError(fmt::format("unsupported tensor dtype {}", c10::toString(t)));
  }
}

torch::ScalarType dtype_of(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  throw CheckpointError("unknown dtype tag '" + name + "'");
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("truncated checkpoint header");
  return v;
}

struct Header {
  nlohmann::json json;
  std::streamoff blob_start = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError(path.string() + " is not an umbra checkpoint");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion) throw CheckpointError(fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
  const auto len = read_pod<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");
  Header h;
  try {
    h.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt header: " + e.what());
  }
  h.blob_start = in.tellg();
  return h;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    torch::Tensor c = t.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<std::uint64_t>(c.numel() * c.element_size());
    index.push_back({{"name", name}, {"dtype", dtype_name(c.scalar_type())}, {"shape", c.sizes().vec()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
    blobs.push_back(std::move(c));
  }
  const nlohmann::json header = {{"kind", ckpt.kind}, {"meta", ckpt.meta}, {"tensors", index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_pod(out, kFormatVersion);
    write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : blobs) out.write(static_cast<const char*>(b.data_ptr()), static_cast<std::streamsize>(b.numel() * b.element_size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_header(const std::filesystem::path& path) {
  auto in = open(path);
  const Header h = read_header(in, path);
  Checkpoint c;
  try {
    c.kind = h.json.at("kind").get<std::string>();
    c.meta = h.json.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": header missing kind/meta");
  }
  return c;
}

Checkpoint load(const std::filesystem::path& path) {
  auto in = open(path);
  const Header h = read_header(in, path);
  Checkpoint c;
  try {
    c.kind = h.json.at("kind").get<std::string>();
    c.meta = h.json.at("meta");
    for (const auto& e : h.json.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<int64_t>>();
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_of(e.at("dtype").get<std::string>())));
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size()))
        throw CheckpointError(path.string() + ": size mismatch for " + e.at("name").get<std::string>());
      in.seekg(h.blob_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
      in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
      if (!in) throw CheckpointError(path.string() + ": truncated tensor " + e.at("name").get<std::string>());
      c.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed tensor index: " + e.what());
  }
  return c;
}

void put_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) ckpt.tensors[prefix + "." + p.key()] = p.value().detach().clone();
  for (const auto& b : module.named_buffers()) ckpt.tensors[prefix + "." + b.key()] = b.value().detach().clone();
}

void get_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard guard;
  auto assign = [&](const std::string& name, torch::Tensor& dst) {
    const auto it = ckpt.tensors.find(prefix + "." + name);
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks tensor " + prefix + "." + name);
    if (it->second.sizes() != dst.sizes())
      throw CheckpointError(fmt::format("shape mismatch for {}.{}: stored {} vs model {}", prefix, name,
                                        fmt::join(it->second.sizes().vec(), "x"), fmt::join(dst.sizes().vec(), "x")));
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) assign(p.key(), p.value());
  for (auto& b : module.named_buffers()) assign(b.key(), b.value());
}

void put_adam(Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt) {
  auto& state = opt.state();
  for (std::size_t g = 0; g < opt.param_groups().size(); ++g) {
    const auto& params = opt.param_groups()[g].params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto it = state.find(params[i].unsafeGetTensorImpl());
      if (it == state.end()) continue;
      const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
      const std::string key = fmt::format("{}.{}.{}", prefix, g, i);
      ckpt.tensors[key + ".exp_avg"] = s.exp_avg().clone();
      ckpt.tensors[key + ".exp_avg_sq"] = s.exp_avg_sq().clone();
      ckpt.tensors[key + ".step"] = torch::tensor({s.step()}, torch::kInt64);
    }
  }
}

void get_adam(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt) {
  auto& state = opt.state();
  state.clear();
  for (std::size_t g = 0; g < opt.param_groups().size(); ++g) {
    const auto& params = opt.param_groups()[g].params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string key = fmt::format("{}.{}.{}", prefix, g, i);
      const auto avg = ckpt.tensors.find(key + ".exp_avg");
      if (avg == ckpt.tensors.end()) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      if (avg->second.sizes() != params[i].sizes()) throw CheckpointError("optimizer state shape mismatch at " + key);
      s->exp_avg(avg->second.clone());
      s->exp_avg_sq(ckpt.tensors.at(key + ".exp_avg_sq").clone());
      s->step(ckpt.tensors.at(key + ".step").item<int64_t>());
      state[params[i].unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

std::uint64_t weight_hash(const torch::nn::Module& module) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const torch::Tensor& t) {
    const torch::Tensor c = t.detach().to(torch::kCPU).contiguous();
    const auto* p = static_cast<const unsigned char*>(c.data_ptr());
    for (int64_t i = 0; i < c.numel() * c.element_size(); ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : module.named_parameters()) mix(p.value());
  for (const auto& b : module.named_buffers()) mix(b.value());
  return h;
}

}  // namespace umbra::ckpt
