#include "ccsrp/training.hpp"

#include <algorithm>
#include <cmath>

namespace ccsrp {

TradesResult trades_loss(const Tensor& logits_clean, const Tensor& logits_adv,
                         const std::vector<int>& y, float beta) {
  if (!logits_clean.same_shape(logits_adv)) {
    throw ShapeMismatch("trades_loss: logit shapes differ");
  }
  const std::size_t B = logits_clean.dim(0);
  const std::size_t C = logits_clean.dim(1);
  if (y.size() != B) throw ShapeMismatch("trades_loss: label count mismatch");

  TradesResult r;
  r.dlogits_clean = Tensor(logits_clean.shape());
  r.dlogits_adv = Tensor(logits_adv.shape());
  const float inv_b = 1.0f / static_cast<float>(B);

  double ce_sum = 0.0, kl_sum = 0.0;
  std::vector<double> lp(C), lq(C), p(C), q(C);
  for (std::size_t b = 0; b < B; ++b) {
    const float* zc = logits_clean.data() + b * C;
    const float* za = logits_adv.data() + b * C;
    double mc = zc[0], ma = za[0];
    for (std::size_t c = 1; c < C; ++c) {
      mc = std::max(mc, double(zc[c]));
      ma = std::max(ma, double(za[c]));
    }
    double sc = 0.0, sa = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      sc += std::exp(zc[c] - mc);
      sa += std::exp(za[c] - ma);
    }
    const double lsc = std::log(sc) + mc, lsa = std::log(sa) + ma;
    double kl = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      lp[c] = zc[c] - lsc;
      lq[c] = za[c] - lsa;
      p[c] = std::exp(lp[c]);
      q[c] = std::exp(lq[c]);
      kl += p[c] * (lp[c] - lq[c]);
    }
    ce_sum += -lp[y[b]];
    kl_sum += kl;
    float* dc = r.dlogits_clean.data() + b * C;
    float* da = r.dlogits_adv.data() + b * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double dce = p[c] - (static_cast<int>(c) == y[b] ? 1.0 : 0.0);
      const double dkl_clean = p[c] * ((lp[c] - lq[c]) - kl);
      dc[c] = static_cast<float>((dce + beta * dkl_clean) * inv_b);
      da[c] = static_cast<float>(beta * (q[c] - p[c]) * inv_b);
    }
  }
  r.ce = static_cast<float>(ce_sum * inv_b);
  r.kl = static_cast<float>(kl_sum * inv_b);
  r.loss = r.ce + beta * r.kl;
  return r;
}

float cosine_lr(std::size_t step, std::size_t total_steps, float lr0) {
  if (total_steps == 0) return lr0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return static_cast<float>(0.5 * lr0 * (1.0 + std::cos(M_PI * frac)));
}

void sgd_step(std::vector<float>& params, const std::vector<float>& grads,
              std::vector<float>& velocity, float lr, float momentum,
              float weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeMismatch("sgd_step: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i] + weight_decay * params[i];
    velocity[i] = momentum * velocity[i] + g;
    params[i] -= lr * velocity[i];
  }
}

namespace {

void accumulate(Gradients& into, const Gradients& from) {
  for (std::size_t l = 0; l < into.weight.size(); ++l) {
    for (std::size_t i = 0; i < into.weight[l].numel(); ++i) {
      into.weight[l][i] += from.weight[l][i];
    }
    for (std::size_t i = 0; i < into.bias[l].numel(); ++i) {
      into.bias[l][i] += from.bias[l][i];
    }
  }
}

}  // namespace

Network adv_finetune(Network net, const Dataset& dt, const TrainConfig& cfg,
                     Rng rng, const TrainLogSink& log) {
  if (dt.size() == 0) throw EmptyDataset("adv_finetune: empty training set");
  if (cfg.epochs <= 0) return net;  // zero-step path: unchanged
  cfg.validate();

  const std::size_t n = dt.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  const std::size_t total_steps = batches * static_cast<std::size_t>(cfg.epochs);

  const std::size_t L = net.layers.size();
  std::vector<std::vector<float>> vel_w(L), vel_b(L);
  for (std::size_t l = 0; l < L; ++l) {
    vel_w[l].assign(net.layers[l].weight.numel(), 0.0f);
    vel_b[l].assign(net.layers[l].bias.numel(), 0.0f);
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.child({0x65706f6368ull, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const std::size_t j = i + erng.uniform_int(n - i);
      std::swap(order[i], order[j]);
    }
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t start = b * bs;
      const std::size_t len = std::min(bs, n - start);
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + start + len);
      Tensor x = dt.batch_of(idx);
      std::vector<int> y = dt.labels_of(idx);

      const float lr = cosine_lr(step, total_steps, cfg.lr0);
      float loss;
      Gradients grads;
      if (cfg.adversarial) {
        Tensor x_adv = pgd_attack(net, x, y, cfg.attack,
                                  erng.child({0x616476ull, b}));
        ForwardResult fc = forward(net, x, SpikeMode::Spiking, true);
        ForwardResult fa = forward(net, x_adv, SpikeMode::Spiking, true);
        TradesResult tr =
            trades_loss(fc.logits, fa.logits, y, cfg.trades_beta);
        grads = backward(net, *fc.trace, tr.dlogits_clean);
        Gradients ga = backward(net, *fa.trace, tr.dlogits_adv);
        accumulate(grads, ga);
        loss = tr.loss;
      } else {
        ForwardResult fc = forward(net, x, SpikeMode::Spiking, true);
        LossResult lr2 = cross_entropy(fc.logits, y, Reduction::Mean);
        grads = backward(net, *fc.trace, lr2.dlogits);
        loss = lr2.loss;
      }

      for (std::size_t l = 0; l < L; ++l) {
        sgd_step(net.layers[l].weight.vec(), grads.weight[l].vec(), vel_w[l],
                 lr, cfg.momentum, cfg.weight_decay);
        sgd_step(net.layers[l].bias.vec(), grads.bias[l].vec(), vel_b[l], lr,
                 cfg.momentum, cfg.weight_decay);
      }
      net.touch();

      if (log) {
        TrainLogRow row;
        row.step = step;
        row.lr = lr;
        row.loss = loss;
        const bool epoch_end = (b + 1 == batches);
        if (epoch_end) {
          const std::size_t m = std::min<std::size_t>(128, n);
          std::vector<std::size_t> eidx(m);
          for (std::size_t i = 0; i < m; ++i) eidx[i] = i;
          Tensor ex = dt.batch_of(eidx);
          std::vector<int> ey = dt.labels_of(eidx);
          row.acc = accuracy(forward(net, ex).logits, ey);
          if (cfg.adversarial) {
            Tensor exa = pgd_attack(net, ex, ey, cfg.attack,
                                    erng.child(0x6576616cull));
            row.accr = accuracy(forward(net, exa).logits, ey);
          }
        }
        log(row);
      }
      ++step;
    }
  }
  return net;
}

Network pretrain(const std::vector<LayerSpec>& specs, const LifConfig& lif,
                 const Dataset& dt, const TrainConfig& cfg, Rng rng,
                 const TrainLogSink& log) {
  Network net = init_network(specs, lif, rng.child(0x696e6974ull));
  return adv_finetune(std::move(net), dt, cfg, rng.child(0x747261696eull), log);
}

}  // namespace ccsrp
