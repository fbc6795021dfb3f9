#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ccsrp/attack.hpp"
#include "ccsrp/data.hpp"
#include "ccsrp/engine.hpp"
#include "ccsrp/network.hpp"

namespace ccsrp {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  float lr0 = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  float trades_beta = 6.0f;
  AttackConfig attack = AttackConfig::training();
  // When false, training uses plain cross-entropy on clean batches (the
  // "undefended twin" used in comparisons).
  bool adversarial = true;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || !(lr0 > 0.0f) || momentum < 0.0f ||
        weight_decay < 0.0f || trades_beta < 0.0f) {
      throw ConfigInvalid("TrainConfig: invalid field");
    }
    if (adversarial) attack.validate();
  }
};

struct TradesResult {
  float loss = 0.0f;
  float ce = 0.0f;
  float kl = 0.0f;
  Tensor dlogits_clean;
  Tensor dlogits_adv;
};

// loss = CE(logits_clean, y) + beta * KL(softmax(clean) || softmax(adv)),
// mean over the batch.
TradesResult trades_loss(const Tensor& logits_clean, const Tensor& logits_adv,
                         const std::vector<int>& y, float beta);

// Cosine annealing: lr0/2 * (1 + cos(pi * step / total_steps)).
float cosine_lr(std::size_t step, std::size_t total_steps, float lr0);

// Momentum SGD with decoupled-into-gradient weight decay:
// g' = g + wd*p; v = momentum*v + g'; p = p - lr*v.
void sgd_step(std::vector<float>& params, const std::vector<float>& grads,
              std::vector<float>& velocity, float lr, float momentum,
              float weight_decay);

struct TrainLogRow {
  std::size_t step = 0;
  float lr = 0.0f;
  float loss = 0.0f;
  double acc = -1.0;   // periodic eval; -1 when not measured
  double accr = -1.0;
};

using TrainLogSink = std::function<void(const TrainLogRow&)>;

// TRADES fine-tuning loop: per batch, craft adversarial examples with the
// training attack, then one SGD step on the TRADES objective. Deterministic
// given the rng stream. Returns the trained network.
Network adv_finetune(Network net, const Dataset& dt, const TrainConfig& cfg,
                     Rng rng, const TrainLogSink& log = nullptr);

// init_network followed by adv_finetune.
Network pretrain(const std::vector<LayerSpec>& specs, const LifConfig& lif,
                 const Dataset& dt, const TrainConfig& cfg, Rng rng,
                 const TrainLogSink& log = nullptr);

}  // namespace ccsrp
