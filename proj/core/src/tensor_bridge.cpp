#include "umbra/tensor_bridge.hpp"

#include <torch/nn/functional/upsampling.h>

namespace umbra::tensor {

template <int C>
torch::Tensor from_raster(const Raster<C>& r) {
  torch::Tensor t = torch::empty({r.height(), r.width(), C}, torch::kFloat32);
  std::copy(r.values().begin(), r.values().end(), t.data_ptr<float>());
  return t.permute({2, 0, 1}).contiguous();
}

template <int C>
torch::Tensor stack(const std::vector<Raster<C>>& rs) {
  if (rs.empty()) throw InvalidArgument("tensor::stack: no rasters");
  std::vector<torch::Tensor> ts;
  ts.reserve(rs.size());
  for (const auto& r : rs) {
    require_same_shape(rs.front(), r, "tensor::stack");
    ts.push_back(from_raster(r));
  }
  return torch::stack(ts);
}

namespace {

template <int C>
Raster<C> to_raster(const torch::Tensor& in) {
  torch::Tensor t = in.dim() == 4 ? in.squeeze(0) : in;
  if (t.dim() != 3 || t.size(0) != C) throw InvalidArgument("tensor does not have the expected [C, H, W] layout");
  t = t.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  Raster<C> r(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
  std::copy(t.data_ptr<float>(), t.data_ptr<float>() + t.numel(), r.values().begin());
  return r;
}

}  // namespace

ImageRGB to_image(const torch::Tensor& t) { return to_raster<3>(t); }
MaskGray to_mask(const torch::Tensor& t) { return to_raster<1>(t); }

torch::Tensor resize(const torch::Tensor& x, int height, int width) {
  if (x.size(2) == height && x.size(3) == width) return x;
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

template torch::Tensor from_raster<1>(const Raster<1>&);
template torch::Tensor from_raster<3>(const Raster<3>&);
template torch::Tensor stack<1>(const std::vector<Raster<1>>&);
template torch::Tensor stack<3>(const std::vector<Raster<3>>&);

}  // namespace umbra::tensor
