#include "ccsrp/attack.hpp"

#include <algorithm>
#include <cmath>

#include "ccsrp/evolution.hpp"

namespace ccsrp {

namespace {

// PGD on a single batch; x0 holds the clean sources defining the L-inf ball.
void pgd_batch(const Network& net, const FilterMask* mask, const Tensor& x0,
               const std::vector<int>& y, const AttackConfig& cfg, Rng& rng,
               Tensor& x) {
  const std::size_t n = x0.numel();
  x = x0;
  if (cfg.random_start) {
    for (std::size_t i = 0; i < n; ++i) {
      const float d = cfg.epsilon * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
      x[i] = std::clamp(x0[i] + d, 0.0f, 1.0f);
    }
  }
  for (int step = 0; step < cfg.steps; ++step) {
    ForwardResult fr = forward(net, x, SpikeMode::Spiking, true, mask);
    LossResult lr = cross_entropy(fr.logits, y, Reduction::Mean);
    Gradients g = backward(net, *fr.trace, lr.dlogits);
    for (std::size_t i = 0; i < n; ++i) {
      const float gi = g.input[i];
      const float s = gi > 0.0f ? 1.0f : (gi < 0.0f ? -1.0f : 0.0f);
      float v = x[i] + cfg.alpha * s;
      v = std::clamp(v, x0[i] - cfg.epsilon, x0[i] + cfg.epsilon);
      x[i] = std::clamp(v, 0.0f, 1.0f);
    }
  }
}

}  // namespace

Tensor pgd_attack(const Network& net, const FilterMask* mask, const Tensor& x,
                  const std::vector<int>& y, const AttackConfig& cfg,
                  Rng rng) {
  cfg.validate();
  if (x.ndim() != 4 || x.dim(0) != y.size()) {
    throw ShapeMismatch("pgd_attack: batch/label mismatch");
  }
  const std::size_t total = x.dim(0);
  const std::size_t chunk = 64;
  const std::size_t plane = x.numel() / total;
  Tensor out(x.shape());
  for (std::size_t start = 0; start < total; start += chunk) {
    const std::size_t len = std::min(chunk, total - start);
    Tensor xb({len, x.dim(1), x.dim(2), x.dim(3)});
    std::copy(x.data() + start * plane, x.data() + (start + len) * plane,
              xb.data());
    std::vector<int> yb(y.begin() + start, y.begin() + start + len);
    Tensor adv;
    Rng crng = rng.child({0x706764ull, start});
    pgd_batch(net, mask, xb, yb, cfg, crng, adv);
    std::copy(adv.data(), adv.data() + len * plane, out.data() + start * plane);
  }
  return out;
}

AdvDataset generate_adv_dataset(const Network& base, const Dataset& ds, int k,
                                double p1, double r, const AttackConfig& cfg,
                                Rng rng) {
  cfg.validate();
  if (ds.size() == 0) throw EmptyDataset("generate_adv_dataset: empty D_s");
  if (k < 1) throw ConfigInvalid("generate_adv_dataset: k must be >= 1");

  const auto prunable = base.prunable_layers();
  const std::size_t n_layers = prunable.size();
  // floor(n/k), clamped below at 1 for shallow networks.
  const std::size_t per_subnet =
      std::max<std::size_t>(1, n_layers / static_cast<std::size_t>(k));

  const std::size_t total = ds.size();
  const std::size_t plane = ds.channels() * ds.height() * ds.width();

  AdvDataset da;
  da.examples = Tensor({total, ds.channels(), ds.height(), ds.width()});
  da.labels.resize(total);
  da.provenance.resize(total);

  std::size_t cursor = 0;
  for (int i = 0; i < k; ++i) {
    // Shard i of k, sizes balanced to partition D_s exactly.
    const std::size_t shard =
        total / k + (static_cast<std::size_t>(i) < total % k ? 1 : 0);
    if (shard == 0) continue;

    Rng srng = rng.child({0x73756274ull, static_cast<std::uint64_t>(i)});

    // Mutate a random subset of layers to obtain the sub-net.
    FilterMask mask = all_ones_mask(base);
    std::vector<std::size_t> pick(n_layers);
    for (std::size_t j = 0; j < n_layers; ++j) pick[j] = j;
    for (std::size_t j = 0; j < per_subnet && j < n_layers; ++j) {
      const std::size_t sel = j + srng.uniform_int(n_layers - j);
      std::swap(pick[j], pick[sel]);
      Rng mrng = srng.child({0x6d7574ull, pick[j]});
      mask.segments[pick[j]] =
          bounded_bitwise_mutation(mask.segments[pick[j]], p1, r, mrng);
    }

    std::vector<std::size_t> idx(shard);
    for (std::size_t j = 0; j < shard; ++j) idx[j] = cursor + j;
    Tensor xb = ds.batch_of(idx);
    std::vector<int> yb = ds.labels_of(idx);
    Tensor adv = pgd_attack(base, &mask, xb, yb, cfg,
                            srng.child(0x61747461636bull));
    std::copy(adv.data(), adv.data() + shard * plane,
              da.examples.data() + cursor * plane);
    for (std::size_t j = 0; j < shard; ++j) {
      da.labels[cursor + j] = yb[j];
      da.provenance[cursor + j] = {static_cast<std::size_t>(i), cursor + j};
    }
    cursor += shard;
  }
  return da;
}

double robust_accuracy(const Network& net, const FilterMask* mask,
                       const AdvDataset& da, std::size_t batch_size) {
  const std::size_t total = da.size();
  if (total == 0) return 0.0;
  const std::size_t plane = da.examples.numel() / total;
  std::size_t hit = 0;
  for (std::size_t start = 0; start < total; start += batch_size) {
    const std::size_t len = std::min(batch_size, total - start);
    Tensor xb({len, da.examples.dim(1), da.examples.dim(2),
               da.examples.dim(3)});
    std::copy(da.examples.data() + start * plane,
              da.examples.data() + (start + len) * plane, xb.data());
    ForwardResult fr = forward(net, xb, SpikeMode::Spiking, false, mask);
    const auto pred = predict(fr.logits);
    for (std::size_t j = 0; j < len; ++j) {
      if (pred[j] == da.labels[start + j]) ++hit;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace ccsrp
