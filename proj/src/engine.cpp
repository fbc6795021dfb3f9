#include "ccsrp/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ccsrp {

namespace {

struct LayerDims {
  bool dense = false;
  bool flatten_before = false;
  // conv dims
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_c = 0, out_h = 0, out_w = 0;
  // dense dims
  std::size_t in_f = 0, out_f = 0;

  std::size_t out_units_per_example() const {
    return dense ? out_f : out_c * out_h * out_w;
  }
};

std::vector<LayerDims> plan_dims(const Network& net, std::size_t in_c,
                                 std::size_t in_h, std::size_t in_w) {
  std::vector<LayerDims> dims;
  dims.reserve(net.layers.size());
  std::size_t c = in_c, h = in_h, w = in_w;
  bool flat = false;
  std::size_t feat = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& s = net.layers[i].spec;
    LayerDims d;
    if (s.kind == LayerKind::Conv2D) {
      if (flat) throw ShapeMismatch("conv layer after flatten");
      if (s.in_channels != c) {
        throw ShapeMismatch("layer " + std::to_string(i) + " expects " +
                            std::to_string(s.in_channels) + " channels, got " +
                            std::to_string(c));
      }
      if (h + 2 * s.padding < s.kernel_h || w + 2 * s.padding < s.kernel_w) {
        throw ShapeMismatch("kernel larger than padded input at layer " +
                            std::to_string(i));
      }
      d.in_c = c;
      d.in_h = h;
      d.in_w = w;
      d.out_c = s.out_channels;
      d.out_h = conv_out_size(h, s.kernel_h, s.stride, s.padding);
      d.out_w = conv_out_size(w, s.kernel_w, s.stride, s.padding);
      c = d.out_c;
      h = d.out_h;
      w = d.out_w;
    } else {
      d.dense = true;
      if (!flat) {
        d.flatten_before = true;
        feat = c * h * w;
        flat = true;
      }
      if (s.in_features != feat) {
        throw ShapeMismatch("dense layer " + std::to_string(i) + " expects " +
                            std::to_string(s.in_features) + " features, got " +
                            std::to_string(feat));
      }
      d.in_f = feat;
      d.out_f = s.out_features;
      feat = d.out_f;
    }
    dims.push_back(d);
  }
  return dims;
}

// Conv index of a layer (position among Conv2D layers) or SIZE_MAX.
std::vector<std::size_t> conv_indices(const Network& net) {
  std::vector<std::size_t> ci(net.layers.size(), SIZE_MAX);
  std::size_t k = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].spec.kind == LayerKind::Conv2D) ci[i] = k++;
  }
  return ci;
}

void conv_forward(const Tensor& a, const Layer& layer, const LayerDims& d,
                  std::size_t batch, const std::vector<std::uint8_t>* keep,
                  Tensor& out) {
  const LayerSpec& s = layer.spec;
  const float* ap = a.data();
  const float* wp = layer.weight.data();
  const float* bp = layer.bias.data();
  float* op = out.data();
  const std::size_t in_plane = d.in_h * d.in_w;
  const std::size_t out_plane = d.out_h * d.out_w;
  const std::size_t ksize = s.kernel_h * s.kernel_w;
  for (std::size_t b = 0; b < batch; ++b) {
    const float* abase = ap + b * d.in_c * in_plane;
    for (std::size_t oc = 0; oc < d.out_c; ++oc) {
      float* obase = op + (b * d.out_c + oc) * out_plane;
      if (keep && !(*keep)[oc]) {
        std::memset(obase, 0, out_plane * sizeof(float));
        continue;
      }
      const float* wbase = wp + oc * d.in_c * ksize;
      for (std::size_t oh = 0; oh < d.out_h; ++oh) {
        const long ih0 = static_cast<long>(oh * s.stride) -
                         static_cast<long>(s.padding);
        for (std::size_t ow = 0; ow < d.out_w; ++ow) {
          const long iw0 = static_cast<long>(ow * s.stride) -
                           static_cast<long>(s.padding);
          float acc = bp[oc];
          for (std::size_t ic = 0; ic < d.in_c; ++ic) {
            const float* ain = abase + ic * in_plane;
            const float* win = wbase + ic * ksize;
            for (std::size_t kh = 0; kh < s.kernel_h; ++kh) {
              const long ih = ih0 + static_cast<long>(kh);
              if (ih < 0 || ih >= static_cast<long>(d.in_h)) continue;
              for (std::size_t kw = 0; kw < s.kernel_w; ++kw) {
                const long iw = iw0 + static_cast<long>(kw);
                if (iw < 0 || iw >= static_cast<long>(d.in_w)) continue;
                acc += ain[ih * d.in_w + iw] * win[kh * s.kernel_w + kw];
              }
            }
          }
          obase[oh * d.out_w + ow] = acc;
        }
      }
    }
  }
}

void conv_backward(const Tensor& dout, const Tensor& a, const Layer& layer,
                   const LayerDims& d, std::size_t batch, Tensor& dweight,
                   Tensor& dbias, Tensor* dinput) {
  const LayerSpec& s = layer.spec;
  const float* dop = dout.data();
  const float* ap = a.data();
  const float* wp = layer.weight.data();
  float* dwp = dweight.data();
  float* dbp = dbias.data();
  float* dip = dinput ? dinput->data() : nullptr;
  const std::size_t in_plane = d.in_h * d.in_w;
  const std::size_t out_plane = d.out_h * d.out_w;
  const std::size_t ksize = s.kernel_h * s.kernel_w;
  for (std::size_t b = 0; b < batch; ++b) {
    const float* abase = ap + b * d.in_c * in_plane;
    float* dibase = dip ? dip + b * d.in_c * in_plane : nullptr;
    for (std::size_t oc = 0; oc < d.out_c; ++oc) {
      const float* dobase = dop + (b * d.out_c + oc) * out_plane;
      const float* wbase = wp + oc * d.in_c * ksize;
      float* dwbase = dwp + oc * d.in_c * ksize;
      for (std::size_t oh = 0; oh < d.out_h; ++oh) {
        const long ih0 = static_cast<long>(oh * s.stride) -
                         static_cast<long>(s.padding);
        for (std::size_t ow = 0; ow < d.out_w; ++ow) {
          const float g = dobase[oh * d.out_w + ow];
          if (g == 0.0f) continue;
          const long iw0 = static_cast<long>(ow * s.stride) -
                           static_cast<long>(s.padding);
          dbp[oc] += g;
          for (std::size_t ic = 0; ic < d.in_c; ++ic) {
            const float* ain = abase + ic * in_plane;
            float* din = dibase ? dibase + ic * in_plane : nullptr;
            const float* win = wbase + ic * ksize;
            float* dwin = dwbase + ic * ksize;
            for (std::size_t kh = 0; kh < s.kernel_h; ++kh) {
              const long ih = ih0 + static_cast<long>(kh);
              if (ih < 0 || ih >= static_cast<long>(d.in_h)) continue;
              for (std::size_t kw = 0; kw < s.kernel_w; ++kw) {
                const long iw = iw0 + static_cast<long>(kw);
                if (iw < 0 || iw >= static_cast<long>(d.in_w)) continue;
                dwin[kh * s.kernel_w + kw] += g * ain[ih * d.in_w + iw];
                if (din) din[ih * d.in_w + iw] += g * win[kh * s.kernel_w + kw];
              }
            }
          }
        }
      }
    }
  }
}

void dense_forward(const Tensor& a, const Layer& layer, const LayerDims& d,
                   std::size_t batch, Tensor& out) {
  const float* ap = a.data();
  const float* wp = layer.weight.data();
  const float* bp = layer.bias.data();
  float* op = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const float* ain = ap + b * d.in_f;
    float* obase = op + b * d.out_f;
    for (std::size_t o = 0; o < d.out_f; ++o) {
      const float* win = wp + o * d.in_f;
      float acc = bp[o];
      for (std::size_t i = 0; i < d.in_f; ++i) acc += win[i] * ain[i];
      obase[o] = acc;
    }
  }
}

void dense_backward(const Tensor& dout, const Tensor& a, const Layer& layer,
                    const LayerDims& d, std::size_t batch, Tensor& dweight,
                    Tensor& dbias, Tensor* dinput) {
  const float* dop = dout.data();
  const float* ap = a.data();
  const float* wp = layer.weight.data();
  float* dwp = dweight.data();
  float* dbp = dbias.data();
  float* dip = dinput ? dinput->data() : nullptr;
  for (std::size_t b = 0; b < batch; ++b) {
    const float* ain = ap + b * d.in_f;
    const float* dobase = dop + b * d.out_f;
    float* din = dip ? dip + b * d.in_f : nullptr;
    for (std::size_t o = 0; o < d.out_f; ++o) {
      const float g = dobase[o];
      if (g == 0.0f) continue;
      dbp[o] += g;
      const float* win = wp + o * d.in_f;
      float* dwin = dwp + o * d.in_f;
      for (std::size_t i = 0; i < d.in_f; ++i) {
        dwin[i] += g * ain[i];
        if (din) din[i] += g * win[i];
      }
    }
  }
}

inline float soft_spike(float u, float theta, float w) {
  return std::clamp((u - theta) / w + 0.5f, 0.0f, 1.0f);
}

inline float surrogate_deriv(float u, float theta, float w, SpikeMode mode) {
  if (mode == SpikeMode::Soft) {
    const float x = u - theta;
    return (x > -0.5f * w && x < 0.5f * w) ? 1.0f / w : 0.0f;
  }
  const float t = 1.0f - std::fabs(u - theta) / w;
  return t > 0.0f ? t / w : 0.0f;
}

}  // namespace

void lif_step(const Tensor& v, const Tensor& input_current,
              const LifConfig& cfg, Tensor& v_next, Tensor& spikes) {
  if (!v.same_shape(input_current)) {
    throw ShapeMismatch("lif_step: v and input_current shapes differ");
  }
  v_next = Tensor(v.shape());
  spikes = Tensor(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) {
    const float u = cfg.decay * v[i] + input_current[i];
    if (u >= cfg.threshold) {
      spikes[i] = 1.0f;
      v_next[i] = 0.0f;
    } else {
      spikes[i] = 0.0f;
      v_next[i] = u;
    }
  }
}

ForwardResult forward(const Network& net, const Tensor& batch, SpikeMode mode,
                      bool record, const FilterMask* mask) {
  if (batch.ndim() != 4) {
    throw ShapeMismatch("forward expects a [B,C,H,W] batch, got " +
                        shape_str(batch.shape()));
  }
  if (mask && !mask->bound_to(net)) {
    throw MaskMismatch("mask is not bound to this network");
  }
  const std::size_t B = batch.dim(0);
  const auto dims = plan_dims(net, batch.dim(1), batch.dim(2), batch.dim(3));
  const auto conv_idx = conv_indices(net);
  const LifConfig& lif = net.lif;
  const std::size_t T = lif.timesteps;
  const std::size_t L = net.layers.size();
  const std::size_t classes = net.layers.back().spec.out_features;

  ForwardResult result;
  result.logits = Tensor({B, classes});
  ForwardTrace trace;
  if (record) {
    trace.mode = mode;
    trace.net = &net;
    trace.net_revision = net.revision;
    trace.batch = batch;
    if (mask) {
      trace.mask = *mask;
      trace.masked = true;
    }
    trace.u.resize(T);
    trace.s.resize(T);
  }

  // Membrane state per spiking layer.
  std::vector<Tensor> v(L);
  for (std::size_t i = 0; i < L; ++i) {
    if (net.layers[i].spec.spiking) {
      v[i] = dims[i].dense ? Tensor({B, dims[i].out_f})
                           : Tensor({B, dims[i].out_c, dims[i].out_h,
                                     dims[i].out_w});
    }
  }

  const float inv_t = 1.0f / static_cast<float>(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor* a = &batch;
    Tensor cur;
    for (std::size_t i = 0; i < L; ++i) {
      const Layer& layer = net.layers[i];
      const LayerDims& d = dims[i];
      const std::vector<std::uint8_t>* keep =
          (mask && conv_idx[i] != SIZE_MAX) ? &mask->segments[conv_idx[i]]
                                            : nullptr;
      Tensor c;
      if (d.dense) {
        c = Tensor({B, d.out_f});
        dense_forward(*a, layer, d, B, c);
      } else {
        c = Tensor({B, d.out_c, d.out_h, d.out_w});
        conv_forward(*a, layer, d, B, keep, c);
      }
      if (layer.spec.spiking) {
        Tensor& vm = v[i];
        Tensor spk(c.shape());
        for (std::size_t j = 0; j < c.numel(); ++j) {
          const float u = lif.decay * vm[j] + c[j];
          float s;
          if (mode == SpikeMode::Spiking) {
            s = u >= lif.threshold ? 1.0f : 0.0f;
          } else {
            s = soft_spike(u, lif.threshold, lif.surrogate_width);
          }
          spk[j] = s;
          vm[j] = u * (1.0f - s);
          c[j] = u;  // c now holds the pre-reset membrane for the trace
        }
        if (record) {
          trace.u[t].push_back(c);
          trace.s[t].push_back(spk);
        }
        cur = std::move(spk);
        a = &cur;
      } else {
        for (std::size_t j = 0; j < c.numel(); ++j) {
          result.logits[j] += c[j] * inv_t;
        }
        if (record) {
          trace.u[t].push_back(Tensor());
          trace.s[t].push_back(Tensor());
        }
      }
    }
  }
  result.logits.check_finite();
  if (record) result.trace = std::move(trace);
  return result;
}

Gradients backward(const Network& net, const ForwardTrace& trace,
                   const Tensor& dlogits) {
  if (trace.net != &net || trace.net_revision != net.revision) {
    throw StaleTrace("network weights changed since the trace was recorded");
  }
  const Tensor& batch = trace.batch;
  const std::size_t B = batch.dim(0);
  const auto dims = plan_dims(net, batch.dim(1), batch.dim(2), batch.dim(3));
  const auto conv_idx = conv_indices(net);
  const LifConfig& lif = net.lif;
  const std::size_t T = lif.timesteps;
  const std::size_t L = net.layers.size();
  const SpikeMode mode = trace.mode;

  Gradients g;
  g.weight.resize(L);
  g.bias.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    g.weight[i] = Tensor(net.layers[i].weight.shape());
    g.bias[i] = Tensor(net.layers[i].bias.shape());
  }
  g.input = Tensor(batch.shape());

  // Gradient carried into the previous timestep through the membrane state.
  std::vector<Tensor> dv(L);
  for (std::size_t i = 0; i < L; ++i) {
    if (net.layers[i].spec.spiking) {
      dv[i] = dims[i].dense
                  ? Tensor({B, dims[i].out_f})
                  : Tensor({B, dims[i].out_c, dims[i].out_h, dims[i].out_w});
    }
  }

  const float inv_t = 1.0f / static_cast<float>(T);
  for (std::size_t ti = T; ti-- > 0;) {
    // ds: gradient w.r.t. the current layer's output spikes at this timestep.
    Tensor ds;
    for (std::size_t i = L; i-- > 0;) {
      const Layer& layer = net.layers[i];
      const LayerDims& d = dims[i];
      Tensor dc;
      if (!layer.spec.spiking) {
        dc = Tensor(dlogits.shape());
        for (std::size_t j = 0; j < dc.numel(); ++j) {
          dc[j] = dlogits[j] * inv_t;
        }
      } else {
        const Tensor& u = trace.u[ti][i];
        const Tensor& s = trace.s[ti][i];
        const Tensor& dvc = dv[i];
        dc = Tensor(u.shape());
        for (std::size_t j = 0; j < u.numel(); ++j) {
          const float sp =
              surrogate_deriv(u[j], lif.threshold, lif.surrogate_width, mode);
          // du = ds*s'(u) + dv*((1-s) - u*s'(u)); reset path included.
          dc[j] = ds[j] * sp + dvc[j] * ((1.0f - s[j]) - u[j] * sp);
        }
        if (trace.masked && conv_idx[i] != SIZE_MAX) {
          const auto& keep = trace.mask.segments[conv_idx[i]];
          const std::size_t plane = d.out_h * d.out_w;
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t oc = 0; oc < d.out_c; ++oc) {
              if (keep[oc]) continue;
              float* base = dc.data() + (b * d.out_c + oc) * plane;
              std::memset(base, 0, plane * sizeof(float));
            }
          }
        }
        for (std::size_t j = 0; j < dc.numel(); ++j) {
          dv[i][j] = lif.decay * dc[j];
        }
      }
      // dc is now the gradient w.r.t. this layer's affine output; push it
      // into the parameters and the layer input.
      const Tensor* a = (i == 0) ? &batch : &trace.s[ti][i - 1];
      Tensor da;
      const bool need_input_grad = true;
      if (d.dense) {
        da = Tensor({B, d.in_f});
        dense_backward(dc, *a, layer, d, B, g.weight[i], g.bias[i],
                       need_input_grad ? &da : nullptr);
      } else {
        da = Tensor({B, d.in_c, d.in_h, d.in_w});
        conv_backward(dc, *a, layer, d, B, g.weight[i], g.bias[i],
                      need_input_grad ? &da : nullptr);
      }
      if (i == 0) {
        for (std::size_t j = 0; j < da.numel(); ++j) g.input[j] += da[j];
      } else {
        ds = std::move(da);  // shape reinterpretation covers the flatten
      }
    }
  }
  return g;
}

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                         Reduction reduction) {
  const std::size_t B = logits.dim(0);
  const std::size_t C = logits.dim(1);
  if (labels.size() != B) {
    throw ShapeMismatch("cross_entropy: labels size does not match batch");
  }
  LossResult r;
  r.dlogits = Tensor(logits.shape());
  const float scale =
      reduction == Reduction::Mean ? 1.0f / static_cast<float>(B) : 1.0f;
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const float* row = logits.data() + b * C;
    float mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(double(row[c] - mx));
    const int y = labels[b];
    loss += (std::log(z) - double(row[y] - mx));
    float* drow = r.dlogits.data() + b * C;
    for (std::size_t c = 0; c < C; ++c) {
      const float p = static_cast<float>(std::exp(double(row[c] - mx)) / z);
      drow[c] = (p - (static_cast<int>(c) == y ? 1.0f : 0.0f)) * scale;
    }
  }
  r.loss = static_cast<float>(loss * (reduction == Reduction::Mean
                                          ? 1.0 / static_cast<double>(B)
                                          : 1.0));
  return r;
}

std::vector<int> predict(const Tensor& logits) {
  const std::size_t B = logits.dim(0);
  const std::size_t C = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const float* row = logits.data() + b * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const auto pred = predict(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == labels[i]) ++hit;
  }
  return pred.empty() ? 0.0
                      : static_cast<double>(hit) /
                            static_cast<double>(pred.size());
}

}  // namespace ccsrp
