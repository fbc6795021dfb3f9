#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ccsrp/data.hpp"
#include "ccsrp/engine.hpp"
#include "ccsrp/network.hpp"
#include "ccsrp/pruning.hpp"
#include "ccsrp/rng.hpp"

namespace ccsrp {

struct ConfigInvalid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AttackConfig {
  float epsilon = 8.0f / 255.0f;  // L-inf budget, pixel units
  float alpha = 2.0f / 255.0f;    // per-step size
  int steps = 10;
  bool random_start = true;

  void validate() const {
    if (!(alpha > 0.0f && alpha <= epsilon && epsilon <= 1.0f) || steps < 1) {
      throw ConfigInvalid("AttackConfig: need 0 < alpha <= epsilon <= 1 and steps >= 1");
    }
  }

  static AttackConfig training() { return {8.0f / 255.0f, 2.0f / 255.0f, 10, true}; }
  static AttackConfig evaluation() { return {8.0f / 255.0f, 2.0f / 255.0f, 40, true}; }
};

struct AdvProvenance {
  std::size_t subnet_id = 0;
  std::size_t source_index = 0;
};

struct AdvDataset {
  Tensor examples;  // [N,C,H,W]
  std::vector<int> labels;
  std::vector<AdvProvenance> provenance;

  std::size_t size() const { return labels.size(); }
};

// L-inf PGD: x <- clip(x + alpha*sign(grad CE), ball(x0, eps) and [0,1]).
// Gradients use spiking-mode surrogate BPTT. sign(0) = 0.
Tensor pgd_attack(const Network& net, const FilterMask* mask, const Tensor& x,
                  const std::vector<int>& y, const AttackConfig& cfg, Rng rng);

inline Tensor pgd_attack(const Network& net, const Tensor& x,
                         const std::vector<int>& y, const AttackConfig& cfg,
                         Rng rng) {
  return pgd_attack(net, nullptr, x, y, cfg, rng);
}

// Algorithm: k times, randomly select max(1, floor(n/k)) prunable layers,
// mutate their mask segments (p1, r) to obtain a sub-net, and PGD-attack the
// i-th of k equal shards of D_s with it. Shards partition D_s, so
// |result| == |D_s|.
AdvDataset generate_adv_dataset(const Network& base, const Dataset& ds, int k,
                                double p1, double r, const AttackConfig& cfg,
                                Rng rng);

// Top-1 accuracy on an adversarial dataset.
double robust_accuracy(const Network& net, const FilterMask* mask,
                       const AdvDataset& da, std::size_t batch_size = 64);

}  // namespace ccsrp
