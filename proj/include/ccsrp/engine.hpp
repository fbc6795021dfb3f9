#pragma once

#include <optional>
#include <vector>

#include "ccsrp/network.hpp"
#include "ccsrp/pruning.hpp"
#include "ccsrp/tensor.hpp"

namespace ccsrp {

struct StaleTrace : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SpikeMode {
  Spiking,  // Heaviside spikes, triangular surrogate in backward
  Soft      // differentiable ramp sigma_w in forward and backward
};

// Single LIF update: v_pre = decay*v + current; spike where v_pre >= theta;
// hard reset to zero at spiking positions.
void lif_step(const Tensor& v, const Tensor& input_current,
              const LifConfig& cfg, Tensor& v_next, Tensor& spikes);

// Per-timestep cached state needed for backpropagation through time.
struct ForwardTrace {
  SpikeMode mode = SpikeMode::Spiking;
  std::uint64_t net_revision = 0;
  const Network* net = nullptr;
  Tensor batch;               // input, injected at every timestep
  FilterMask mask;            // empty segments when unmasked
  bool masked = false;
  // [timestep][layer] membrane pre-activations and spike outputs for every
  // spiking layer; the readout layer needs no per-step cache.
  std::vector<std::vector<Tensor>> u;
  std::vector<std::vector<Tensor>> s;
};

struct ForwardResult {
  Tensor logits;  // [B, num_classes]
  std::optional<ForwardTrace> trace;
};

// Time-stepped simulation with direct input coding: the analog batch is
// injected as current at every timestep; logits are the readout layer's
// input current averaged over timesteps.
ForwardResult forward(const Network& net, const Tensor& batch,
                      SpikeMode mode = SpikeMode::Spiking, bool record = false,
                      const FilterMask* mask = nullptr);

inline ForwardResult forward(const MaskedView& view, const Tensor& batch,
                             SpikeMode mode = SpikeMode::Spiking,
                             bool record = false) {
  return forward(*view.net, batch, mode, record, view.mask);
}

struct Gradients {
  std::vector<Tensor> weight;  // per layer, same shapes as net weights
  std::vector<Tensor> bias;
  Tensor input;  // [B,C,H,W], summed over timesteps
};

// BPTT from an upstream gradient on the logits. In Spiking mode the
// Heaviside derivative is replaced by the triangular surrogate
// g(v) = max(0, 1 - |v-theta|/w)/w; in Soft mode the exact ramp derivative
// is used.
Gradients backward(const Network& net, const ForwardTrace& trace,
                   const Tensor& dlogits);

enum class Reduction { Mean, Sum };

struct LossResult {
  float loss = 0.0f;
  Tensor dlogits;
};

// Softmax cross-entropy over the batch with its logits gradient.
LossResult cross_entropy(const Tensor& logits,
                         const std::vector<int>& labels,
                         Reduction reduction = Reduction::Mean);

// Top-1 predictions; argmax ties break to the lowest class index.
std::vector<int> predict(const Tensor& logits);

double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace ccsrp
