#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ccsrp/attack.hpp"
#include "ccsrp/data.hpp"
#include "ccsrp/network.hpp"
#include "ccsrp/pruning.hpp"
#include "ccsrp/training.hpp"

namespace ccsrp {

struct UnevaluatedIndividual : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SegmentLengthMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EaConfig {
  int d = 5;        // population size
  double p1 = 0.05; // init mutation rate
  double p2 = 0.1;  // offspring mutation rate
  double r = 0.1;   // ratio bound on pruned filters per application
  int generations = 10;

  void validate() const {
    if (d < 1 || p1 < 0 || p1 > 1 || p2 < 0 || p2 > 1 || !(r > 0 && r <= 1) ||
        generations < 1) {
      throw ConfigInvalid("EaConfig: invalid field");
    }
  }
};

struct CcsrpConfig {
  int iterations = 16;        // T
  int subnets = 5;            // k
  double sample_fraction = 0.10;
  bool resample_ds = true;
  EaConfig ea;
  TrainConfig finetune;
  AttackConfig eval_attack = AttackConfig::evaluation();

  void validate() const {
    if (iterations < 1 || subnets < 1 ||
        !(sample_fraction > 0 && sample_fraction <= 1)) {
      throw ConfigInvalid("CcsrpConfig: invalid field");
    }
    ea.validate();
    finetune.validate();
    eval_attack.validate();
  }
};

struct Fitness {
  double acc = 0.0;
  double accr = 0.0;
  std::uint64_t flops = 0;

  double score() const { return 0.5 * (acc + accr); }
};

// One layer's mask segment plus its fitness triple.
struct Individual {
  std::vector<std::uint8_t> bits;
  std::optional<Fitness> fitness;
};

struct IterationRecord {
  std::size_t iteration = 0;
  FilterMask mask;      // mask chosen this iteration, relative to its base
  Network network;      // fine-tuned pruned network
  Fitness fit;          // measured on this iteration's (D_s, D_a)
  std::uint64_t base_flops = 0;
};

struct Archive {
  std::vector<IterationRecord> entries;
  bool aborted = false;
};

// Bitwise mutation with a ratio bound: each bit is scheduled to flip with
// probability p; at most ceil(r * len) of the scheduled 1->0 flips are kept
// (a uniformly random subset when exceeded); 0->1 flips apply
// unconditionally. An all-zero result has one random bit restored.
std::vector<std::uint8_t> bounded_bitwise_mutation(
    const std::vector<std::uint8_t>& bits, double p, double r, Rng& rng);

// Element 0 is m0 verbatim; the rest are independent bounded mutations of
// m0 at rate p1.
std::vector<Individual> init_subpopulation(const std::vector<std::uint8_t>& m0,
                                           const EaConfig& cfg, Rng& rng);

// Splices the candidate segment into base_mask at layer_idx (an index into
// the conv-layer sequence) and measures acc on ds, robust acc on da, and
// FLOPs of the masked view.
Fitness evaluate_individual(Individual& ind, std::size_t conv_layer_idx,
                            const Network& base, const FilterMask& base_mask,
                            const Dataset& ds, const AdvDataset& da);

// Descending by (acc+accr)/2; ties favor fewer FLOPs, then lower original
// index. Returns pool indices in rank order.
std::vector<std::size_t> rank(const std::vector<Individual>& pool);

// G generations of mutate/evaluate/truncate over one layer's subpopulation;
// returns the rank-one individual.
Individual ea_optimize_layer(std::size_t conv_layer_idx, const Network& base,
                             const FilterMask& base_mask, const Dataset& ds,
                             const AdvDataset& da, const EaConfig& cfg,
                             Rng rng);

// Runs one CCSRP iteration against base: sample D_s, build D_a, optimize
// every prunable layer against the all-ones mask, combine winners,
// materialize, fine-tune. master_rng must be the run-level stream; the
// iteration derives all randomness from (master, iteration index).
IterationRecord ccsrp_iteration(const Network& base, const Dataset& dt,
                                const CcsrpConfig& cfg, std::size_t iteration,
                                const Rng& master_rng,
                                const TrainLogSink& log = nullptr);

using IterationSink = std::function<void(const IterationRecord&)>;

// Full loop: T iterations starting from the pretrained network. on_entry
// fires after each completed iteration (checkpointing hook). On failure the
// partial archive is returned with aborted=true.
Archive ccsrp_run(const Network& pretrained, const Dataset& dt,
                  const CcsrpConfig& cfg, Rng master_rng,
                  std::size_t start_iteration = 0,
                  const IterationSink& on_entry = nullptr,
                  const TrainLogSink& log = nullptr);

}  // namespace ccsrp
