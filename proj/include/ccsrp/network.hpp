#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ccsrp/rng.hpp"
#include "ccsrp/tensor.hpp"

namespace ccsrp {

struct IncompatibleShapes : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LayerKind { Conv2D, Dense };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv2D;
  // Conv2D fields.
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  // Dense fields.
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // LIF nonlinearity after the affine map; the final layer is the
  // non-spiking readout.
  bool spiking = true;

  std::size_t output_units() const {
    return kind == LayerKind::Conv2D ? out_channels : out_features;
  }

  static LayerSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                        std::size_t stride = 1, std::size_t padding = 0,
                        bool spiking = true) {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel_h = k;
    s.kernel_w = k;
    s.stride = stride;
    s.padding = padding;
    s.spiking = spiking;
    return s;
  }

  static LayerSpec dense(std::size_t in, std::size_t out, bool spiking = false) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_features = in;
    s.out_features = out;
    s.spiking = spiking;
    return s;
  }
};

// Discrete-time LIF dynamics: v' = decay*v + current, spike at threshold,
// hard reset to zero. surrogate_width controls both the triangular spiking
// surrogate and the soft-mode ramp.
struct LifConfig {
  float decay = 0.9f;
  float threshold = 1.0f;
  std::size_t timesteps = 4;
  float surrogate_width = 1.0f;

  void validate() const {
    if (!(decay > 0.0f && decay <= 1.0f)) {
      throw std::invalid_argument("LifConfig.decay must be in (0,1]");
    }
    if (!(threshold > 0.0f)) {
      throw std::invalid_argument("LifConfig.threshold must be > 0");
    }
    if (timesteps < 1) {
      throw std::invalid_argument("LifConfig.timesteps must be >= 1");
    }
    if (!(surrogate_width > 0.0f)) {
      throw std::invalid_argument("LifConfig.surrogate_width must be > 0");
    }
  }
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // Conv2D: [out_ch, in_ch, kh, kw]; Dense: [out, in]
  Tensor bias;    // [out_ch] / [out]
};

struct Network {
  std::vector<Layer> layers;
  LifConfig lif;
  std::uint64_t seed_tag = 0;
  // Bumped whenever weights are mutated; traces record it to detect staleness.
  std::uint64_t revision = 0;

  void touch() { ++revision; }

  std::size_t num_layers() const { return layers.size(); }

  // Indices of prunable layers: all Conv2D layers (the readout Dense layer
  // is never pruned).
  std::vector<std::size_t> prunable_layers() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].spec.kind == LayerKind::Conv2D) idx.push_back(i);
    }
    return idx;
  }

  // Per-conv-layer filter counts; used to bind masks to a network shape.
  std::vector<std::size_t> filter_fingerprint() const {
    std::vector<std::size_t> fp;
    for (const auto& l : layers) {
      if (l.spec.kind == LayerKind::Conv2D) fp.push_back(l.spec.out_channels);
    }
    return fp;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
    return n;
  }
};

// Validates adjacency: conv->conv channel match, a single flatten point
// before the first Dense layer, exactly one non-spiking layer and it is last.
void validate_specs(const std::vector<LayerSpec>& specs);

// He-initialized network: weights ~ N(0, sqrt(2/fan_in)), biases zero.
// Deterministic for a given rng stream.
Network init_network(const std::vector<LayerSpec>& specs, const LifConfig& lif,
                     Rng rng);

// Spatial output size of a conv layer for a given input size.
inline std::size_t conv_out_size(std::size_t in, std::size_t k,
                                 std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

}  // namespace ccsrp
