#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ccsrp/data.hpp"
#include "ccsrp/engine.hpp"
#include "ccsrp/network.hpp"
#include "ccsrp/training.hpp"

using namespace ccsrp;

namespace {

Tensor logits_from(const std::vector<std::vector<float>>& rows) {
  Tensor t({rows.size(), rows[0].size()});
  std::size_t i = 0;
  for (const auto& r : rows)
    for (float v : r) t[i++] = v;
  return t;
}

// Double-precision restatement of the TRADES objective, used as a
// finite-difference oracle for the logits gradients.
double trades_ref(const std::vector<double>& zc, const std::vector<double>& za,
                  const std::vector<int>& y, std::size_t classes, double beta) {
  const std::size_t B = y.size();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    auto softmax = [&](const std::vector<double>& z, std::size_t j) {
      double mx = z[b * classes];
      for (std::size_t c = 0; c < classes; ++c)
        mx = std::max(mx, z[b * classes + c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < classes; ++c)
        sum += std::exp(z[b * classes + c] - mx);
      return std::exp(z[b * classes + j] - mx) / sum;
    };
    total += -std::log(softmax(zc, std::size_t(y[b])));
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = softmax(zc, c), q = softmax(za, c);
      total += beta * p * (std::log(p) - std::log(q));
    }
  }
  return total / double(B);
}

std::vector<LayerSpec> tiny_specs() {
  return {LayerSpec::conv(1, 4, 3, 1, 1), LayerSpec::conv(4, 4, 3, 1, 1),
          LayerSpec::dense(4 * 8 * 8, 4)};
}

bool same_weights(const Network& a, const Network& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t li = 0; li < a.layers.size(); ++li) {
    for (std::size_t i = 0; i < a.layers[li].weight.numel(); ++i) {
      if (a.layers[li].weight[i] != b.layers[li].weight[i]) return false;
    }
    for (std::size_t i = 0; i < a.layers[li].bias.numel(); ++i) {
      if (a.layers[li].bias[i] != b.layers[li].bias[i]) return false;
    }
  }
  return true;
}

double clean_acc(const Network& net, const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return accuracy(forward(net, ds.batch_of(idx)).logits, ds.labels);
}

}  // namespace

TEST_CASE("trades loss reductions") {
  Tensor zc = logits_from({{2.0f, -1.0f, 0.5f}, {-0.5f, 1.5f, 0.0f}});
  const std::vector<int> y{0, 1};
  const float ce = cross_entropy(zc, y).loss;

  SUBCASE("identical logits collapse to cross-entropy") {
    TradesResult r = trades_loss(zc, zc, y, 6.0f);
    CHECK(r.kl == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(r.loss == doctest::Approx(ce).epsilon(1e-6));
  }
  SUBCASE("beta zero collapses to cross-entropy") {
    Tensor za = logits_from({{0.1f, 0.2f, 0.3f}, {1.0f, -1.0f, 0.0f}});
    TradesResult r = trades_loss(zc, za, y, 0.0f);
    CHECK(r.loss == doctest::Approx(ce).epsilon(1e-6));
  }
  SUBCASE("loss never drops below clean cross-entropy") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor a({2, 3}), b({2, 3});
      for (std::size_t i = 0; i < 6; ++i) {
        a[i] = float(rng.normal());
        b[i] = float(rng.normal());
      }
      TradesResult r = trades_loss(a, b, y, 6.0f);
      CHECK(r.loss >= cross_entropy(a, y).loss - 1e-6f);
      CHECK(r.kl >= -1e-7f);
    }
  }
}

TEST_CASE("trades kl matches the hand-computed two-class oracle") {
  // softmax(ln .9, ln .1) = (0.9, 0.1); softmax(0, 0) = (0.5, 0.5).
  Tensor zc = logits_from({{std::log(0.9f), std::log(0.1f)}});
  Tensor za = logits_from({{0.0f, 0.0f}});
  TradesResult r = trades_loss(zc, za, {0}, 1.0f);
  const double kl = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
  CHECK(r.kl == doctest::Approx(kl).epsilon(1e-4));
  CHECK(r.loss == doctest::Approx(-std::log(0.9) + kl).epsilon(1e-4));
}

TEST_CASE("trades logits gradients match finite differences") {
  const std::size_t B = 3, C = 4;
  const std::vector<int> y{2, 0, 3};
  Rng rng(77);
  std::vector<double> zc(B * C), za(B * C);
  Tensor tc({B, C}), ta({B, C});
  for (std::size_t i = 0; i < B * C; ++i) {
    zc[i] = rng.normal();
    za[i] = rng.normal();
    tc[i] = float(zc[i]);
    ta[i] = float(za[i]);
  }
  const float beta = 6.0f;
  TradesResult r = trades_loss(tc, ta, y, beta);
  const double h = 1e-5;
  for (std::size_t i = 0; i < B * C; ++i) {
    auto bump = [&](std::vector<double> v, double d) {
      v[i] += d;
      return v;
    };
    const double fdc = (trades_ref(bump(zc, h), za, y, C, beta) -
                        trades_ref(bump(zc, -h), za, y, C, beta)) /
                       (2 * h);
    const double fda = (trades_ref(zc, bump(za, h), y, C, beta) -
                        trades_ref(zc, bump(za, -h), y, C, beta)) /
                       (2 * h);
    CHECK(r.dlogits_clean[i] ==
          doctest::Approx(fdc).epsilon(2e-3).scale(std::max(std::abs(fdc), 0.01)));
    CHECK(r.dlogits_adv[i] ==
          doctest::Approx(fda).epsilon(2e-3).scale(std::max(std::abs(fda), 0.01)));
  }
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0, 100, 0.1f) == doctest::Approx(0.1));
  CHECK(cosine_lr(100, 100, 0.1f) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(cosine_lr(50, 100, 0.1f) == doctest::Approx(0.05));
}

TEST_CASE("sgd update formula") {
  SUBCASE("vanilla step") {
    std::vector<float> p{1.0f, -2.0f}, g{0.5f, 0.25f}, v{0.0f, 0.0f};
    sgd_step(p, g, v, 0.1f, 0.0f, 0.0f);
    CHECK(p[0] == doctest::Approx(0.95));
    CHECK(p[1] == doctest::Approx(-2.025));
  }
  SUBCASE("zero grads only decay the velocity") {
    std::vector<float> p{1.0f}, g{0.0f}, v{2.0f};
    sgd_step(p, g, v, 0.1f, 0.5f, 0.0f);
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(p[0] == doctest::Approx(0.9));
  }
  SUBCASE("hand arithmetic oracle") {
    std::vector<float> p{1.0f}, g{1.0f}, v{0.0f};
    sgd_step(p, g, v, 0.1f, 0.9f, 0.1f);
    CHECK(v[0] == doctest::Approx(1.1));
    CHECK(p[0] == doctest::Approx(0.89));
  }
  SUBCASE("weight-decay-only dynamics shrink by (1 - lr*wd)") {
    std::vector<float> p{2.0f}, g{0.0f}, v{0.0f};
    for (int step = 0; step < 5; ++step) {
      std::vector<float> zero{0.0f};
      v[0] = 0.0f;
      sgd_step(p, zero, v, 0.1f, 0.0f, 0.01f);
    }
    CHECK(p[0] == doctest::Approx(2.0 * std::pow(1.0 - 0.1 * 0.01, 5)));
  }
}

TEST_CASE("finetune with zero epochs is the identity") {
  Dataset ds = synth_blobs(4, 8, 8, 0.1, 40);
  Network net = init_network(tiny_specs(), LifConfig{}, Rng(41));
  TrainConfig cfg;
  cfg.epochs = 0;
  Network out = adv_finetune(net, ds, cfg, Rng(42));
  CHECK(same_weights(net, out));
}

TEST_CASE("pretraining is seed-reproducible") {
  Dataset ds = synth_blobs(4, 16, 8, 0.1, 43);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.adversarial = false;
  Network a = pretrain(tiny_specs(), LifConfig{}, ds, cfg, Rng(44));
  Network b = pretrain(tiny_specs(), LifConfig{}, ds, cfg, Rng(44));
  Network c = pretrain(tiny_specs(), LifConfig{}, ds, cfg, Rng(45));
  CHECK(same_weights(a, b));
  CHECK(!same_weights(a, c));
}

TEST_CASE("training fits separable synthetic data") {
  Dataset ds = synth_blobs(4, 32, 8, 0.05, 46);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.adversarial = false;
  Network net = pretrain(tiny_specs(), LifConfig{}, ds, cfg, Rng(48));
  CHECK(clean_acc(net, ds) >= 0.9);
}

TEST_CASE("loss trends down over training") {
  Dataset ds = synth_blobs(4, 64, 8, 0.1, 48);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.adversarial = false;
  std::vector<float> losses;
  auto sink = [&](const TrainLogRow& row) { losses.push_back(row.loss); };
  pretrain(tiny_specs(), LifConfig{}, ds, cfg, Rng(49), sink);
  REQUIRE(losses.size() >= 8);
  const std::size_t q = losses.size() / 4;
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    head += losses[i];
    tail += losses[losses.size() - 1 - i];
  }
  CHECK(tail / double(q) < head / double(q));
}

TEST_CASE("adversarial training beats a plain-CE twin on robust accuracy") {
  // Calibrated so the eval attack actually bites: low-amplitude, noisy blobs.
  Dataset ds = synth_blobs(4, 64, 12, 0.3, 50, 0.3);
  std::vector<LayerSpec> specs{LayerSpec::conv(1, 6, 3, 1, 1),
                               LayerSpec::conv(6, 6, 3, 1, 1),
                               LayerSpec::dense(6 * 12 * 12, 4)};
  TrainConfig adv;
  adv.epochs = 4;
  adv.batch_size = 32;
  TrainConfig plain = adv;
  plain.adversarial = false;

  Network defended = pretrain(specs, LifConfig{}, ds, adv, Rng(55));
  Network undefended = pretrain(specs, LifConfig{}, ds, plain, Rng(55));

  AttackConfig eval = AttackConfig::evaluation();
  AdvDataset da_def =
      generate_adv_dataset(defended, ds, 1, 0.0, 0.1, eval, Rng(56));
  AdvDataset da_und =
      generate_adv_dataset(undefended, ds, 1, 0.0, 0.1, eval, Rng(56));
  const double accr_def = robust_accuracy(defended, nullptr, da_def);
  const double accr_und = robust_accuracy(undefended, nullptr, da_und);
  CHECK(accr_def > accr_und);
}
