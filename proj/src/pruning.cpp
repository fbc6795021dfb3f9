#include "ccsrp/pruning.hpp"

#include <sstream>

namespace ccsrp {

std::string FilterMask::to_text() const {
  std::string out;
  for (const auto& seg : segments) {
    for (std::uint8_t b : seg) out += b ? '1' : '0';
    out += '\n';
  }
  return out;
}

FilterMask FilterMask::from_text(const std::string& text,
                                 std::vector<std::size_t> fingerprint) {
  FilterMask m;
  m.fingerprint = std::move(fingerprint);
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::uint8_t> seg;
    seg.reserve(line.size());
    for (char c : line) {
      if (c != '0' && c != '1') {
        throw MaskMismatch("invalid character in mask text");
      }
      seg.push_back(c == '1' ? 1 : 0);
    }
    m.segments.push_back(std::move(seg));
  }
  if (m.segments.size() != m.fingerprint.size()) {
    throw MaskMismatch("mask text has wrong number of segments");
  }
  for (std::size_t i = 0; i < m.segments.size(); ++i) {
    if (m.segments[i].size() != m.fingerprint[i]) {
      throw MaskMismatch("mask segment " + std::to_string(i) +
                         " has wrong length");
    }
  }
  return m;
}

FilterMask all_ones_mask(const Network& net) {
  FilterMask m;
  m.fingerprint = net.filter_fingerprint();
  for (std::size_t n : m.fingerprint) {
    m.segments.emplace_back(n, std::uint8_t{1});
  }
  return m;
}

MaskedView apply_mask(const Network& net, const FilterMask& mask) {
  if (!mask.bound_to(net)) {
    throw MaskMismatch("mask fingerprint does not match network");
  }
  return MaskedView{&net, &mask};
}

Network materialize(const Network& net, const FilterMask& mask) {
  if (!mask.bound_to(net)) {
    throw MaskMismatch("mask fingerprint does not match network");
  }
  mask.check_nonempty();

  Network out;
  out.lif = net.lif;
  out.seed_tag = net.seed_tag;

  std::size_t conv_i = 0;
  // Retained output channels of the most recent conv layer; empty means the
  // upstream channel count is untouched.
  std::vector<std::size_t> prev_keep;
  bool prev_was_conv = false;
  bool first_dense_done = false;

  for (const Layer& layer : net.layers) {
    const LayerSpec& s = layer.spec;
    Layer nl;
    if (s.kind == LayerKind::Conv2D) {
      const auto& seg = mask.segments[conv_i++];
      std::vector<std::size_t> keep;
      for (std::size_t j = 0; j < seg.size(); ++j) {
        if (seg[j]) keep.push_back(j);
      }
      std::vector<std::size_t> in_keep;
      if (prev_was_conv) {
        in_keep = prev_keep;
      } else {
        for (std::size_t c = 0; c < s.in_channels; ++c) in_keep.push_back(c);
      }
      nl.spec = s;
      nl.spec.in_channels = in_keep.size();
      nl.spec.out_channels = keep.size();
      const std::size_t ksize = s.kernel_h * s.kernel_w;
      nl.weight = Tensor({keep.size(), in_keep.size(), s.kernel_h, s.kernel_w});
      nl.bias = Tensor({keep.size()});
      for (std::size_t o = 0; o < keep.size(); ++o) {
        nl.bias[o] = layer.bias[keep[o]];
        for (std::size_t c = 0; c < in_keep.size(); ++c) {
          const float* src = layer.weight.data() +
                             (keep[o] * s.in_channels + in_keep[c]) * ksize;
          float* dst =
              nl.weight.data() + (o * in_keep.size() + c) * ksize;
          std::copy(src, src + ksize, dst);
        }
      }
      prev_keep = keep;
      prev_was_conv = true;
    } else {
      nl.spec = s;
      if (!first_dense_done && prev_was_conv) {
        // Channel-major flatten: column index = channel*(H*W) + position.
        const std::size_t prev_full =
            mask.segments.empty() ? 0 : mask.fingerprint[conv_i - 1];
        const std::size_t hw = s.in_features / prev_full;
        if (hw * prev_full != s.in_features) {
          throw MaskMismatch("dense in_features not divisible by channels");
        }
        std::vector<std::size_t> cols;
        cols.reserve(prev_keep.size() * hw);
        for (std::size_t c : prev_keep) {
          for (std::size_t p = 0; p < hw; ++p) cols.push_back(c * hw + p);
        }
        nl.spec.in_features = cols.size();
        nl.weight = Tensor({s.out_features, cols.size()});
        nl.bias = layer.bias;
        for (std::size_t o = 0; o < s.out_features; ++o) {
          const float* src = layer.weight.data() + o * s.in_features;
          float* dst = nl.weight.data() + o * cols.size();
          for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
        }
      } else {
        nl.weight = layer.weight;
        nl.bias = layer.bias;
      }
      first_dense_done = true;
      prev_was_conv = false;
    }
    out.layers.push_back(std::move(nl));
  }
  return out;
}

FlopsReport count_flops(const Network& net, std::size_t input_h,
                        std::size_t input_w, const FilterMask* mask,
                        std::uint64_t reference_total_flops) {
  if (mask && !mask->bound_to(net)) {
    throw MaskMismatch("mask fingerprint does not match network");
  }
  FlopsReport r;
  std::size_t h = input_h, w = input_w;
  std::size_t in_ch = net.layers.empty()
                          ? 0
                          : net.layers.front().spec.in_channels;
  std::size_t conv_i = 0;
  std::size_t prev_retained = in_ch;
  bool prev_was_conv = false;
  std::size_t prev_full_out = 0;
  bool first_dense_done = false;
  for (const Layer& layer : net.layers) {
    const LayerSpec& s = layer.spec;
    std::uint64_t macs = 0;
    if (s.kind == LayerKind::Conv2D) {
      std::size_t out_ret = s.out_channels;
      if (mask) {
        out_ret = 0;
        for (std::uint8_t b : mask->segments[conv_i]) out_ret += b;
      }
      const std::size_t oh = conv_out_size(h, s.kernel_h, s.stride, s.padding);
      const std::size_t ow = conv_out_size(w, s.kernel_w, s.stride, s.padding);
      macs = std::uint64_t(out_ret) * prev_retained * s.kernel_h * s.kernel_w *
             oh * ow;
      h = oh;
      w = ow;
      prev_retained = out_ret;
      prev_full_out = s.out_channels;
      prev_was_conv = true;
      ++conv_i;
    } else {
      std::size_t in_f = s.in_features;
      if (!first_dense_done && prev_was_conv && mask) {
        const std::size_t hw = s.in_features / prev_full_out;
        in_f = prev_retained * hw;
      }
      macs = std::uint64_t(in_f) * s.out_features;
      first_dense_done = true;
      prev_was_conv = false;
    }
    r.per_layer_macs.push_back(macs);
    r.total_macs += macs;
  }
  r.total_flops = 2 * r.total_macs;
  if (reference_total_flops > 0) {
    r.ratio_vs = static_cast<double>(r.total_flops) /
                 static_cast<double>(reference_total_flops);
  }
  return r;
}

}  // namespace ccsrp
