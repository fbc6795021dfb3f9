#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccsrp/network.hpp"

namespace ccsrp {

struct MaskMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyLayer : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-layer filter retention bits, one segment per prunable conv layer.
// Bound to the filter counts of the network it was created for.
struct FilterMask {
  std::vector<std::vector<std::uint8_t>> segments;
  std::vector<std::size_t> fingerprint;  // per-conv-layer filter counts

  bool bound_to(const Network& net) const {
    return fingerprint == net.filter_fingerprint();
  }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (const auto& seg : segments)
      for (std::uint8_t b : seg) n += b;
    return n;
  }

  std::size_t total_bits() const {
    std::size_t n = 0;
    for (const auto& seg : segments) n += seg.size();
    return n;
  }

  bool all_ones() const { return popcount() == total_bits(); }

  void check_nonempty() const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
      bool any = false;
      for (std::uint8_t b : segments[i]) any = any || b;
      if (!any) {
        throw EmptyLayer("mask segment " + std::to_string(i) + " is all-zero");
      }
    }
  }

  // One line per layer, characters '0'/'1'.
  std::string to_text() const;
  static FilterMask from_text(const std::string& text,
                              std::vector<std::size_t> fingerprint);
};

struct FlopsReport {
  std::vector<std::uint64_t> per_layer_macs;
  std::uint64_t total_macs = 0;
  std::uint64_t total_flops = 0;  // 2 * total_macs
  double ratio_vs = 0.0;          // fraction of reference total, if given
};

FilterMask all_ones_mask(const Network& net);

// A non-owning pruned view: forward zeroes the output channels of pruned
// filters, weights untouched.
struct MaskedView {
  const Network* net = nullptr;
  const FilterMask* mask = nullptr;
};

MaskedView apply_mask(const Network& net, const FilterMask& mask);

// Physically smaller network: pruned filter rows removed, downstream input
// slices removed (conv kernels, or Dense columns through the channel-major
// flatten layout).
Network materialize(const Network& net, const FilterMask& mask);

// MACs per layer for one simulated timestep; FLOPs = 2*MACs. For a masked
// view, channel counts are the retained counts. input_h/input_w are the
// spatial dims of the network input.
FlopsReport count_flops(const Network& net, std::size_t input_h,
                        std::size_t input_w, const FilterMask* mask = nullptr,
                        std::uint64_t reference_total_flops = 0);

inline FlopsReport count_flops(const MaskedView& view, std::size_t input_h,
                               std::size_t input_w,
                               std::uint64_t reference_total_flops = 0) {
  return count_flops(*view.net, input_h, input_w, view.mask,
                     reference_total_flops);
}

}  // namespace ccsrp
