#pragma once

// Test-only double-precision reference: soft-mode LIF forward plus mean
// cross-entropy, written independently of the engine so finite differences
// against it are a genuine oracle.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ccsrp/network.hpp"
#include "ccsrp/tensor.hpp"

namespace ccsrp::testref {

inline double soft_ce_loss(const Network& net, const Tensor& batch,
                           const std::vector<int>& labels) {
  const std::size_t B = batch.dim(0);
  const double decay = net.lif.decay;
  const double theta = net.lif.threshold;
  const double width = net.lif.surrogate_width;
  const std::size_t T = net.lif.timesteps;

  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    // Per-example state: activations as flat double vectors per layer.
    std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    std::vector<double> input(c * h * w);
    for (std::size_t i = 0; i < input.size(); ++i) {
      input[i] = batch[b * input.size() + i];
    }

    std::vector<std::vector<double>> membrane(net.layers.size());
    const std::size_t classes = net.layers.back().spec.out_features;
    std::vector<double> logits(classes, 0.0);

    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> act = input;
      std::size_t lc = c, lh = h, lw = w;
      for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const Layer& L = net.layers[li];
        const LayerSpec& s = L.spec;
        std::vector<double> cur;
        if (s.kind == LayerKind::Conv2D) {
          const std::size_t oh = (lh + 2 * s.padding - s.kernel_h) / s.stride + 1;
          const std::size_t ow = (lw + 2 * s.padding - s.kernel_w) / s.stride + 1;
          cur.assign(s.out_channels * oh * ow, 0.0);
          for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
            for (std::size_t y = 0; y < oh; ++y) {
              for (std::size_t x = 0; x < ow; ++x) {
                double acc = L.bias[oc];
                for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
                  for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
                    for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                      const long iy = long(y * s.stride + ky) - long(s.padding);
                      const long ix = long(x * s.stride + kx) - long(s.padding);
                      if (iy < 0 || iy >= long(lh) || ix < 0 || ix >= long(lw))
                        continue;
                      acc += act[(ic * lh + iy) * lw + ix] *
                             L.weight[((oc * s.in_channels + ic) * s.kernel_h +
                                       ky) *
                                          s.kernel_w +
                                      kx];
                    }
                  }
                }
                cur[(oc * oh + y) * ow + x] = acc;
              }
            }
          }
          lc = s.out_channels;
          lh = oh;
          lw = ow;
        } else {
          cur.assign(s.out_features, 0.0);
          for (std::size_t o = 0; o < s.out_features; ++o) {
            double acc = L.bias[o];
            for (std::size_t i = 0; i < s.in_features; ++i) {
              acc += L.weight[o * s.in_features + i] * act[i];
            }
            cur[o] = acc;
          }
        }
        if (s.spiking) {
          auto& v = membrane[li];
          if (v.empty()) v.assign(cur.size(), 0.0);
          std::vector<double> spikes(cur.size());
          for (std::size_t i = 0; i < cur.size(); ++i) {
            const double u = decay * v[i] + cur[i];
            const double sp = std::clamp((u - theta) / width + 0.5, 0.0, 1.0);
            spikes[i] = sp;
            v[i] = u * (1.0 - sp);
          }
          act = std::move(spikes);
        } else {
          for (std::size_t i = 0; i < classes; ++i) {
            logits[i] += cur[i] / double(T);
          }
        }
      }
    }

    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    total += std::log(sum) - (logits[labels[b]] - mx);
  }
  return total / double(B);
}

}  // namespace ccsrp::testref
