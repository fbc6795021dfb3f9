#include "ccsrp/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccsrp {

namespace {

std::size_t prune_cap(double r, std::size_t len) {
  return static_cast<std::size_t>(
      std::ceil(r * static_cast<double>(len) - 1e-9));
}

double dataset_accuracy(const Network& net, const FilterMask* mask,
                        const Dataset& ds, std::size_t batch_size = 64) {
  const std::size_t n = ds.size();
  std::size_t hit = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    std::vector<std::size_t> idx(len);
    for (std::size_t i = 0; i < len; ++i) idx[i] = start + i;
    Tensor x = ds.batch_of(idx);
    const auto pred = predict(forward(net, x, SpikeMode::Spiking, false, mask).logits);
    for (std::size_t i = 0; i < len; ++i) {
      if (pred[i] == ds.labels[start + i]) ++hit;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace

std::vector<std::uint8_t> bounded_bitwise_mutation(
    const std::vector<std::uint8_t>& bits, double p, double r, Rng& rng) {
  const std::size_t len = bits.size();
  std::vector<std::uint8_t> out = bits;
  std::vector<std::size_t> prune_flips;
  for (std::size_t i = 0; i < len; ++i) {
    if (!rng.bernoulli(p)) continue;
    if (bits[i]) {
      prune_flips.push_back(i);
    } else {
      out[i] = 1;  // restores are not subject to the ratio bound
    }
  }
  const std::size_t cap = prune_cap(r, len);
  if (prune_flips.size() > cap) {
    // Keep a uniformly random subset of size cap.
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t j = i + rng.uniform_int(prune_flips.size() - i);
      std::swap(prune_flips[i], prune_flips[j]);
    }
    prune_flips.resize(cap);
  }
  for (std::size_t i : prune_flips) out[i] = 0;
  bool any = false;
  for (std::uint8_t b : out) any = any || b;
  if (!any) out[rng.uniform_int(len)] = 1;
  return out;
}

std::vector<Individual> init_subpopulation(const std::vector<std::uint8_t>& m0,
                                           const EaConfig& cfg, Rng& rng) {
  std::vector<Individual> pop;
  pop.reserve(static_cast<std::size_t>(cfg.d));
  pop.push_back(Individual{m0, std::nullopt});
  for (int i = 1; i < cfg.d; ++i) {
    Rng irng = rng.child({0x696e6974ull, static_cast<std::uint64_t>(i)});
    pop.push_back(
        Individual{bounded_bitwise_mutation(m0, cfg.p1, cfg.r, irng), std::nullopt});
  }
  return pop;
}

Fitness evaluate_individual(Individual& ind, std::size_t conv_layer_idx,
                            const Network& base, const FilterMask& base_mask,
                            const Dataset& ds, const AdvDataset& da) {
  if (ind.fitness) return *ind.fitness;
  if (conv_layer_idx >= base_mask.segments.size() ||
      ind.bits.size() != base_mask.segments[conv_layer_idx].size()) {
    throw SegmentLengthMismatch("individual does not fit layer segment");
  }
  FilterMask mask = base_mask;
  mask.segments[conv_layer_idx] = ind.bits;
  mask.check_nonempty();
  MaskedView view = apply_mask(base, mask);
  Fitness f;
  f.acc = dataset_accuracy(base, &mask, ds);
  f.accr = robust_accuracy(base, &mask, da);
  f.flops = count_flops(view, ds.height(), ds.width()).total_flops;
  ind.fitness = f;
  return f;
}

std::vector<std::size_t> rank(const std::vector<Individual>& pool) {
  for (const auto& ind : pool) {
    if (!ind.fitness) {
      throw UnevaluatedIndividual("rank: pool contains unevaluated individual");
    }
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     const Fitness& fa = *pool[a].fitness;
                     const Fitness& fb = *pool[b].fitness;
                     if (fa.score() != fb.score()) {
                       return fa.score() > fb.score();
                     }
                     if (fa.flops != fb.flops) return fa.flops < fb.flops;
                     return a < b;
                   });
  return order;
}

Individual ea_optimize_layer(std::size_t conv_layer_idx, const Network& base,
                             const FilterMask& base_mask, const Dataset& ds,
                             const AdvDataset& da, const EaConfig& cfg,
                             Rng rng) {
  cfg.validate();
  const std::vector<std::uint8_t>& m0 = base_mask.segments[conv_layer_idx];
  Rng init_rng = rng.child(0x706f70ull);
  std::vector<Individual> pop = init_subpopulation(m0, cfg, init_rng);
  for (auto& ind : pop) {
    evaluate_individual(ind, conv_layer_idx, base, base_mask, ds, da);
  }
  const std::size_t d = static_cast<std::size_t>(cfg.d);
  for (int g = 0; g < cfg.generations; ++g) {
    Rng grng = rng.child({0x67656eull, static_cast<std::uint64_t>(g)});
    std::vector<Individual> q = pop;
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t parent = grng.uniform_int(d);
      Rng mrng = grng.child({0x6f6666ull, i});
      Individual child{
          bounded_bitwise_mutation(pop[parent].bits, cfg.p2, cfg.r, mrng),
          std::nullopt};
      evaluate_individual(child, conv_layer_idx, base, base_mask, ds, da);
      q.push_back(std::move(child));
    }
    const auto order = rank(q);
    std::vector<Individual> next;
    next.reserve(d);
    for (std::size_t i = 0; i < d; ++i) next.push_back(q[order[i]]);
    pop = std::move(next);
  }
  const auto order = rank(pop);
  return pop[order[0]];
}

IterationRecord ccsrp_iteration(const Network& base, const Dataset& dt,
                                const CcsrpConfig& cfg, std::size_t iteration,
                                const Rng& master_rng,
                                const TrainLogSink& log) {
  cfg.validate();
  Rng it_rng = master_rng.child({0x69746572ull, iteration});

  Rng ds_rng = cfg.resample_ds ? it_rng.child(0x6473ull)
                               : master_rng.child(0x6473ull);
  Dataset ds = sample_subset(dt, cfg.sample_fraction, ds_rng.next_u64());

  AdvDataset da =
      generate_adv_dataset(base, ds, cfg.subnets, cfg.ea.p1, cfg.ea.r,
                           cfg.eval_attack, it_rng.child(0x616476ull));

  FilterMask base_mask = all_ones_mask(base);
  const std::uint64_t base_flops =
      count_flops(base, dt.height(), dt.width()).total_flops;

  // Per-layer EAs are independent: each candidate is spliced into the
  // all-ones base mask, winners are only combined afterwards.
  FilterMask combined = base_mask;
  const std::size_t n_layers = base_mask.segments.size();
  for (std::size_t ci = 0; ci < n_layers; ++ci) {
    Individual winner =
        ea_optimize_layer(ci, base, base_mask, ds, da, cfg.ea,
                          it_rng.child({0x6c61796572ull, ci}));
    combined.segments[ci] = winner.bits;
  }
  combined.check_nonempty();

  Network pruned = materialize(base, combined);
  Network finetuned = adv_finetune(std::move(pruned), dt, cfg.finetune,
                                   it_rng.child(0x66696e65ull), log);

  IterationRecord rec;
  rec.iteration = iteration;
  rec.mask = combined;
  rec.fit.acc = dataset_accuracy(finetuned, nullptr, ds);
  rec.fit.accr = robust_accuracy(finetuned, nullptr, da);
  rec.fit.flops =
      count_flops(finetuned, dt.height(), dt.width()).total_flops;
  rec.base_flops = base_flops;
  rec.network = std::move(finetuned);
  return rec;
}

Archive ccsrp_run(const Network& pretrained, const Dataset& dt,
                  const CcsrpConfig& cfg, Rng master_rng,
                  std::size_t start_iteration, const IterationSink& on_entry,
                  const TrainLogSink& log) {
  Archive archive;
  const Network* base = &pretrained;
  Network current;
  for (std::size_t t = start_iteration;
       t < static_cast<std::size_t>(cfg.iterations); ++t) {
    try {
      IterationRecord rec = ccsrp_iteration(*base, dt, cfg, t, master_rng, log);
      if (on_entry) on_entry(rec);
      archive.entries.push_back(std::move(rec));
      current = archive.entries.back().network;
      base = &current;
    } catch (const std::exception&) {
      archive.aborted = true;
      return archive;
    }
  }
  return archive;
}

}  // namespace ccsrp
