#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ccsrp/rng.hpp"
#include "ccsrp/tensor.hpp"

namespace ccsrp {

struct BadMagic : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CountMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncatedFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor images;  // [N,C,H,W], values in [0,1]
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  // Single-image view copied out as a [1,C,H,W] batch.
  Tensor batch_of(const std::vector<std::size_t>& indices) const;
  std::vector<int> labels_of(const std::vector<std::size_t>& indices) const;

  void validate() const;
};

// IDX-format loader (big-endian; magics 0x803 for images, 0x801 for labels).
// Pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int num_classes = 10);

// Writers used for fixtures and round-trip checks.
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

// Synthetic classification set: each class is a fixed Gaussian bump at a
// class-specific position plus pixel noise, clipped to [0,1].
Dataset synth_blobs(int num_classes, std::size_t per_class,
                    std::size_t img_size, double noise_std, std::uint64_t seed,
                    double amplitude = 1.0);

// Stratified subsample: ceil(fraction * count) per class, without
// replacement. uniform=true draws plain-uniform instead.
Dataset sample_subset(const Dataset& ds, double fraction, std::uint64_t seed,
                      bool uniform = false);

}  // namespace ccsrp
