#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "ccsrp/engine.hpp"
#include "ccsrp/evolution.hpp"

using namespace ccsrp;

namespace {

using Bits = std::vector<std::uint8_t>;

std::size_t pruned_vs(const Bits& before, const Bits& after) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i] == 1 && after[i] == 0) ++n;
  }
  return n;
}

std::size_t popcount(const Bits& b) {
  std::size_t n = 0;
  for (auto v : b) n += v;
  return n;
}

Network small_net(std::uint64_t seed) {
  std::vector<LayerSpec> specs{LayerSpec::conv(1, 4, 3, 1, 1),
                               LayerSpec::conv(4, 4, 3, 1, 1),
                               LayerSpec::dense(4 * 8 * 8, 4)};
  return init_network(specs, LifConfig{}, Rng(seed));
}

AdvDataset clean_adv(const Dataset& ds) {
  AdvDataset da;
  da.examples = ds.images;
  da.labels = ds.labels;
  return da;
}

Individual evaluated(double acc, double accr, std::uint64_t flops) {
  Individual ind;
  ind.bits = {1};
  ind.fitness = Fitness{acc, accr, flops};
  return ind;
}

// The documented ordering, restated naively for the oracle comparison.
bool rank_less(const Individual& a, const Individual& b) {
  if (a.fitness->score() != b.fitness->score())
    return a.fitness->score() > b.fitness->score();
  return a.fitness->flops < b.fitness->flops;
}

}  // namespace

TEST_CASE("bounded mutation: rate zero is the identity") {
  Rng rng(1);
  const Bits bits{1, 0, 1, 1, 0, 1};
  for (int i = 0; i < 100; ++i) {
    CHECK(bounded_bitwise_mutation(bits, 0.0, 0.1, rng) == bits);
  }
}

TEST_CASE("bounded mutation: prune cap holds over 1e4 trials") {
  Rng rng(2);
  const Bits ones(10, 1);
  for (int trial = 0; trial < 10000; ++trial) {
    Bits out = bounded_bitwise_mutation(ones, 0.1, 0.1, rng);
    CHECK(pruned_vs(ones, out) <= 1);
    CHECK(popcount(out) >= 1);
  }
}

TEST_CASE("bounded mutation: forced-flip arithmetic at p=1") {
  Rng rng(3);
  SUBCASE("all-ones length 10 loses exactly the cap") {
    for (int i = 0; i < 50; ++i) {
      Bits out = bounded_bitwise_mutation(Bits(10, 1), 1.0, 0.1, rng);
      CHECK(popcount(out) == 9);
    }
  }
  SUBCASE("zeros restore unconditionally") {
    const Bits mixed{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    for (int i = 0; i < 50; ++i) {
      Bits out = bounded_bitwise_mutation(mixed, 1.0, 0.1, rng);
      // All five zeros flip up; of the five scheduled prunes only one lands.
      CHECK(popcount(out) == 9);
      for (std::size_t j = 5; j < 10; ++j) CHECK(out[j] == 1);
    }
  }
  SUBCASE("length-1 segment never empties") {
    for (int i = 0; i < 200; ++i) {
      Bits out = bounded_bitwise_mutation(Bits{1}, 1.0, 1.0, rng);
      CHECK(out == Bits{1});
    }
  }
}

TEST_CASE("subpopulation initialization") {
  const Bits m0(20, 1);
  SUBCASE("d=1 is just m0") {
    Rng rng(4);
    EaConfig cfg{1, 0.05, 0.1, 0.1, 5};
    auto pop = init_subpopulation(m0, cfg, rng);
    REQUIRE(pop.size() == 1);
    CHECK(pop[0].bits == m0);
  }
  SUBCASE("p1=0 gives d copies") {
    Rng rng(5);
    EaConfig cfg{5, 0.0, 0.1, 0.1, 5};
    auto pop = init_subpopulation(m0, cfg, rng);
    REQUIRE(pop.size() == 5);
    for (const auto& ind : pop) CHECK(ind.bits == m0);
  }
  SUBCASE("mutants prune at most ceil(r*len) bits") {
    Rng rng(6);
    EaConfig cfg{5, 0.05, 0.1, 0.1, 5};
    for (int rep = 0; rep < 200; ++rep) {
      auto pop = init_subpopulation(m0, cfg, rng);
      REQUIRE(pop.size() == 5);
      CHECK(pop[0].bits == m0);
      for (std::size_t i = 1; i < pop.size(); ++i) {
        CHECK(pruned_vs(m0, pop[i].bits) <= 2);
        CHECK(popcount(pop[i].bits) >= 1);
      }
    }
  }
}

TEST_CASE("rank instantiations") {
  SUBCASE("average tie favors fewer flops") {
    std::vector<Individual> pool;
    pool.push_back(evaluated(0.8, 0.6, 100));  // A
    pool.push_back(evaluated(0.7, 0.7, 90));   // B
    auto order = rank(pool);
    CHECK(order == std::vector<std::size_t>{1, 0});
  }
  SUBCASE("identical triples keep original order") {
    std::vector<Individual> pool(4, evaluated(0.5, 0.5, 10));
    CHECK(rank(pool) == std::vector<std::size_t>{0, 1, 2, 3});
  }
  SUBCASE("unevaluated individuals are rejected") {
    std::vector<Individual> pool(1);
    pool[0].bits = {1};
    CHECK_THROWS_AS(rank(pool), UnevaluatedIndividual);
  }
}

TEST_CASE("rank agrees with a naive comparator sort on random pools") {
  Rng rng(7);
  const double accs[] = {0.2, 0.4, 0.6, 0.8};
  const std::uint64_t flops[] = {10, 20, 30};
  for (int pool_i = 0; pool_i < 1000; ++pool_i) {
    const std::size_t n = 2 + rng.uniform_int(7);
    std::vector<Individual> pool;
    for (std::size_t i = 0; i < n; ++i) {
      // Small discrete value sets so ties are common.
      pool.push_back(evaluated(accs[rng.uniform_int(4)],
                               accs[rng.uniform_int(4)],
                               flops[rng.uniform_int(3)]));
    }
    std::vector<std::size_t> naive(n);
    for (std::size_t i = 0; i < n; ++i) naive[i] = i;
    std::stable_sort(naive.begin(), naive.end(),
                     [&](std::size_t a, std::size_t b) {
                       return rank_less(pool[a], pool[b]);
                     });
    CHECK(rank(pool) == naive);
  }
}

TEST_CASE("evaluate_individual splices into the base mask") {
  Network net = small_net(8);
  Dataset ds = synth_blobs(4, 8, 8, 0.2, 9, 0.5);
  AdvDataset da = clean_adv(ds);
  FilterMask base_mask = all_ones_mask(net);

  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const double base_acc =
      accuracy(forward(net, ds.batch_of(idx)).logits, ds.labels);
  const std::uint64_t base_flops = count_flops(net, 8, 8).total_flops;

  SUBCASE("identity splice reproduces the base fitness") {
    Individual ind;
    ind.bits = Bits(4, 1);
    Fitness f = evaluate_individual(ind, 0, net, base_mask, ds, da);
    CHECK(f.acc == doctest::Approx(base_acc));
    CHECK(f.accr == doctest::Approx(base_acc));  // D_a holds clean copies
    CHECK(f.flops == base_flops);
    REQUIRE(ind.fitness.has_value());
    CHECK(ind.fitness->flops == base_flops);
  }
  SUBCASE("pruning strictly reduces flops and repeated eval is pure") {
    Individual ind;
    ind.bits = Bits{1, 0, 1, 1};
    Fitness f1 = evaluate_individual(ind, 0, net, base_mask, ds, da);
    CHECK(f1.flops < base_flops);
    CHECK(f1.acc >= 0.0);
    CHECK(f1.acc <= 1.0);
    Individual again;
    again.bits = ind.bits;
    Fitness f2 = evaluate_individual(again, 0, net, base_mask, ds, da);
    CHECK(f2.acc == f1.acc);
    CHECK(f2.accr == f1.accr);
    CHECK(f2.flops == f1.flops);
  }
  SUBCASE("segment length mismatch is rejected") {
    Individual ind;
    ind.bits = Bits(3, 1);
    CHECK_THROWS_AS(evaluate_individual(ind, 0, net, base_mask, ds, da),
                    SegmentLengthMismatch);
  }
}

TEST_CASE("ea elitism: winner never scores below the all-ones individual") {
  Network net = small_net(10);
  Dataset ds = synth_blobs(4, 8, 8, 0.3, 11, 0.4);
  AdvDataset da = clean_adv(ds);
  FilterMask base_mask = all_ones_mask(net);
  EaConfig cfg{3, 0.2, 0.3, 0.25, 3};

  Individual m0;
  m0.bits = Bits(4, 1);
  Fitness base_fit = evaluate_individual(m0, 1, net, base_mask, ds, da);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Individual win =
        ea_optimize_layer(1, net, base_mask, ds, da, cfg, Rng(seed));
    REQUIRE(win.fitness.has_value());
    CHECK(win.bits.size() == 4);
    CHECK(popcount(win.bits) >= 1);
    const bool better = win.fitness->score() > base_fit.score();
    const bool tied_not_worse = win.fitness->score() == base_fit.score() &&
                                win.fitness->flops <= base_fit.flops;
    CHECK((better || tied_not_worse));
  }
}

TEST_CASE("ccsrp run: monotone flops, nonempty masks, determinism") {
  Network net = small_net(12);
  Dataset dt = synth_blobs(4, 10, 8, 0.3, 13, 0.4);

  CcsrpConfig cfg;
  cfg.iterations = 3;
  cfg.subnets = 2;
  cfg.sample_fraction = 0.5;
  cfg.ea = EaConfig{3, 0.2, 0.3, 0.25, 2};
  cfg.finetune.epochs = 1;
  cfg.finetune.batch_size = 16;
  cfg.eval_attack.steps = 2;

  Archive a = ccsrp_run(net, dt, cfg, Rng(14));
  REQUIRE(!a.aborted);
  REQUIRE(a.entries.size() == 3);
  std::uint64_t prev = count_flops(net, 8, 8).total_flops;
  for (std::size_t t = 0; t < a.entries.size(); ++t) {
    const auto& e = a.entries[t];
    CHECK(e.iteration == t);
    CHECK(e.fit.flops <= prev);
    prev = e.fit.flops;
    e.mask.check_nonempty();
    CHECK(e.network.prunable_layers().size() == 2);
  }

  Archive b = ccsrp_run(net, dt, cfg, Rng(14));
  REQUIRE(b.entries.size() == a.entries.size());
  for (std::size_t t = 0; t < a.entries.size(); ++t) {
    CHECK(a.entries[t].mask.to_text() == b.entries[t].mask.to_text());
    CHECK(a.entries[t].fit.acc == b.entries[t].fit.acc);
    CHECK(a.entries[t].fit.accr == b.entries[t].fit.accr);
    CHECK(a.entries[t].fit.flops == b.entries[t].fit.flops);
  }

  SUBCASE("resume reproduces the tail of a full run") {
    Archive tail = ccsrp_run(a.entries[0].network, dt, cfg, Rng(14), 1);
    REQUIRE(tail.entries.size() == 2);
    CHECK(tail.entries[0].mask.to_text() == a.entries[1].mask.to_text());
    CHECK(tail.entries[1].mask.to_text() == a.entries[2].mask.to_text());
  }
}
