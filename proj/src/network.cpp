#include "ccsrp/network.hpp"

#include <cmath>

namespace ccsrp {

void validate_specs(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw IncompatibleShapes("network has no layers");
  bool seen_dense = false;
  std::size_t non_spiking = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    if (!s.spiking) ++non_spiking;
    if (s.kind == LayerKind::Conv2D) {
      if (seen_dense) {
        throw IncompatibleShapes("Conv2D layer after Dense layer at index " +
                                 std::to_string(i));
      }
      if (s.out_channels < 1 || s.kernel_h < 1 || s.kernel_w < 1 ||
          s.stride < 1) {
        throw IncompatibleShapes("invalid Conv2D spec at index " +
                                 std::to_string(i));
      }
      if (i > 0 && specs[i - 1].kind == LayerKind::Conv2D &&
          specs[i - 1].out_channels != s.in_channels) {
        throw IncompatibleShapes("channel mismatch between layers " +
                                 std::to_string(i - 1) + " and " +
                                 std::to_string(i));
      }
    } else {
      if (s.out_features < 1 || s.in_features < 1) {
        throw IncompatibleShapes("invalid Dense spec at index " +
                                 std::to_string(i));
      }
      if (seen_dense && specs[i - 1].out_features != s.in_features) {
        throw IncompatibleShapes("feature mismatch between layers " +
                                 std::to_string(i - 1) + " and " +
                                 std::to_string(i));
      }
      seen_dense = true;
    }
  }
  if (non_spiking != 1 || specs.back().spiking) {
    throw IncompatibleShapes(
        "exactly one non-spiking layer is required and it must be last");
  }
}

Network init_network(const std::vector<LayerSpec>& specs, const LifConfig& lif,
                     Rng rng) {
  validate_specs(specs);
  lif.validate();

  Network net;
  net.lif = lif;
  net.layers.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    Layer layer;
    layer.spec = s;
    std::size_t fan_in;
    if (s.kind == LayerKind::Conv2D) {
      fan_in = s.in_channels * s.kernel_h * s.kernel_w;
      layer.weight =
          Tensor({s.out_channels, s.in_channels, s.kernel_h, s.kernel_w});
      layer.bias = Tensor({s.out_channels});
    } else {
      fan_in = s.in_features;
      layer.weight = Tensor({s.out_features, s.in_features});
      layer.bias = Tensor({s.out_features});
    }
    const float std = std::sqrt(2.0f / static_cast<float>(fan_in));
    Rng lrng = rng.child({0x6c61796572ull, i});
    for (std::size_t j = 0; j < layer.weight.numel(); ++j) {
      layer.weight[j] = std * static_cast<float>(lrng.normal());
    }
    net.layers.push_back(std::move(layer));
  }
  net.seed_tag = rng.child(0x696e6974ull).next_u64();
  return net;
}

}  // namespace ccsrp
