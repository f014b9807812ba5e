#include "lgdg/layers.hpp"

#include <cmath>

namespace lgdg {

namespace {

Tensor uniform_param(const Shape& shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(shape, std::move(v));
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_param({in, out}, bound, rng);
  bias = uniform_param({1, out}, bound, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  const Tensor ones = Tensor::full({x.dim(0), 1}, 1.0);
  return add(matmul(x, weight), matmul(ones, bias));
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
               std::size_t padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = uniform_param({out, in, kernel, kernel}, bound, rng);
  bias = uniform_param({out}, bound, rng);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

ConvTranspose2d::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel,
                                 std::size_t stride_, Rng& rng)
    : stride(stride_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = uniform_param({in, out, kernel, kernel}, bound, rng);
  bias = uniform_param({out}, bound, rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  return conv_transpose2d(x, weight, bias, stride);
}

void ConvTranspose2d::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg),
      conv1_(3, cfg.hidden_channels, 3, 2, 1, rng),
      conv2_(cfg.hidden_channels, cfg.channels, 3, 2, 1, rng) {
  if (cfg.input_size % 8 != 0) throw ConfigError("backbone input size must be a multiple of 8");
}

Tensor Backbone::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.input_size ||
      image.dim(2) != cfg_.input_size) {
    throw ShapeError("backbone expects 3x" + std::to_string(cfg_.input_size) + "x" +
                     std::to_string(cfg_.input_size) + ", got " + shape_str(image.shape()));
  }
  const Tensor pooled = avg_pool2d(image, 2);
  return relu(conv2_.forward(relu(conv1_.forward(pooled))));
}

void Backbone::collect(const std::string& prefix, NamedParams& out) const {
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
}

std::vector<std::vector<double>> snapshot(const NamedParams& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(NamedParams& params, const std::vector<std::vector<double>>& values) {
  if (values.size() != params.size()) throw ShapeError("snapshot does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].second.mutable_data();
    if (dst.size() != values[i].size()) throw ShapeError("snapshot entry size mismatch");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

void copy_matching(const NamedParams& from, const std::string& from_prefix, NamedParams& to,
                   const std::string& to_prefix) {
  for (auto& [name, dst] : to) {
    if (name.rfind(to_prefix, 0) != 0) continue;
    const std::string key = from_prefix + name.substr(to_prefix.size());
    bool found = false;
    for (const auto& [src_name, src] : from) {
      if (src_name != key) continue;
      if (src.shape() != dst.shape()) throw ShapeError("parameter shape mismatch for " + key);
      auto d = dst.mutable_data();
      std::copy(src.data().begin(), src.data().end(), d.begin());
      found = true;
      break;
    }
    if (!found) throw ShapeError("no source parameter named " + key);
  }
}

std::size_t parameter_count(const NamedParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace lgdg
