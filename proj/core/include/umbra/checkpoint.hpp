#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/optim/adam.h>

/// Versioned single-file archive of named tensors plus a JSON header.
///
/// Layout: 8-byte magic "UMBRACKP", u32 format version, u64 header length,
/// UTF-8 JSON header, then the raw little-endian tensor blobs back to back.
/// The header carries `kind`, `meta` and a `tensors` index of
/// {name, dtype, shape, offset, nbytes} with offsets relative to the blob area.
namespace umbra::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
};

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);
/// Reads only the header (kind and meta); tensors stay empty.
Checkpoint load_header(const std::filesystem::path& path);

/// Parameters and buffers of `module` stored under `prefix.`.
void put_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module);
/// Copies stored values into `module`; every parameter and buffer must be present
/// with a matching shape, otherwise CheckpointError.
void get_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module);

/// Adam moment estimates keyed by the parameter's position in each group.
void put_adam(Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt);
void get_adam(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt);

/// FNV-1a over the raw bytes of every parameter and buffer, in name order.
std::uint64_t weight_hash(const torch::nn::Module& module);

}  // namespace umbra::ckpt
