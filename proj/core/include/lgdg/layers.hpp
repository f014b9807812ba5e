#pragma once

// Trainable building blocks shared by the detector and the classifiers.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lgdg/rng.hpp"
#include "lgdg/tensor.hpp"

namespace lgdg {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// x (n×in) · W (in×out) + b, with b broadcast through an explicit ones column.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct Conv2d {
  Tensor weight;  // out×in×k×k
  Tensor bias;    // out
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct ConvTranspose2d {
  Tensor weight;  // in×out×k×k
  Tensor bias;    // out
  std::size_t stride = 2;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                  Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct BackboneConfig {
  std::size_t input_size = 64;  // images are resampled to input_size² first
  std::size_t hidden_channels = 8;
  std::size_t channels = 16;    // C_b
};

// 2× average pool, then two stride-2 3×3 conv + ReLU layers:
// 3×64×64 → C_b×8×8 at the defaults.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& image) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  const BackboneConfig& config() const { return cfg_; }
  std::size_t output_size() const { return cfg_.input_size / 8; }

 private:
  BackboneConfig cfg_;
  Conv2d conv1_;
  Conv2d conv2_;
};

// Parameter value snapshots, used for best-epoch model selection.
std::vector<std::vector<double>> snapshot(const NamedParams& params);
void restore(NamedParams& params, const std::vector<std::vector<double>>& values);

// Copies values between identically named and shaped parameters; every
// parameter of `to` whose name starts with `to_prefix` must find its match in
// `from` under `from_prefix`.
void copy_matching(const NamedParams& from, const std::string& from_prefix, NamedParams& to,
                   const std::string& to_prefix);

std::size_t parameter_count(const NamedParams& params);

}  // namespace lgdg
