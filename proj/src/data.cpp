#include "ccsrp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace ccsrp {

namespace {

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw TruncatedFile("unexpected end of file reading header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Tensor Dataset::batch_of(const std::vector<std::size_t>& indices) const {
  const std::size_t c = channels(), h = height(), w = width();
  const std::size_t plane = c * h * w;
  Tensor out({indices.size(), c, h, w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* src = images.data() + indices[i] * plane;
    std::copy(src, src + plane, out.data() + i * plane);
  }
  return out;
}

std::vector<int> Dataset::labels_of(
    const std::vector<std::size_t>& indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw EmptyDataset("dataset has no examples");
  if (images.dim(0) != labels.size()) {
    throw CountMismatch("image and label counts differ");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw CountMismatch("label out of range");
    }
  }
  for (std::size_t i = 0; i < images.numel(); ++i) {
    const float v = images[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw CountMismatch("pixel outside [0,1]");
    }
  }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int num_classes) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw TruncatedFile("cannot open " + images_path);
  const std::uint32_t magic_i = read_be32(img);
  if (magic_i != 0x00000803u) {
    throw BadMagic("bad image magic in " + images_path);
  }
  const std::uint32_t n = read_be32(img);
  const std::uint32_t h = read_be32(img);
  const std::uint32_t w = read_be32(img);
  std::vector<unsigned char> raw(std::size_t(n) * h * w);
  img.read(reinterpret_cast<char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(img.gcount()) != raw.size()) {
    throw TruncatedFile("truncated image data in " + images_path);
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw TruncatedFile("cannot open " + labels_path);
  const std::uint32_t magic_l = read_be32(lab);
  if (magic_l != 0x00000801u) {
    throw BadMagic("bad label magic in " + labels_path);
  }
  const std::uint32_t nl = read_be32(lab);
  if (nl != n) throw CountMismatch("image/label count mismatch");
  std::vector<unsigned char> lraw(nl);
  lab.read(reinterpret_cast<char*>(lraw.data()),
           static_cast<std::streamsize>(lraw.size()));
  if (static_cast<std::size_t>(lab.gcount()) != lraw.size()) {
    throw TruncatedFile("truncated label data in " + labels_path);
  }

  Dataset ds;
  ds.images = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < raw.size(); ++i) {
    ds.images[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  ds.labels.assign(lraw.begin(), lraw.end());
  ds.num_classes = num_classes;
  ds.name = images_path;
  ds.validate();
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  write_be32(img, 0x00000803u);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, static_cast<std::uint32_t>(ds.height()));
  write_be32(img, static_cast<std::uint32_t>(ds.width()));
  for (std::size_t i = 0; i < ds.images.numel(); ++i) {
    const float v = ds.images[i] * 255.0f;
    const unsigned char b =
        static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 255.0f)));
    img.put(static_cast<char>(b));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  write_be32(lab, 0x00000801u);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.put(static_cast<char>(y));
}

Dataset synth_blobs(int num_classes, std::size_t per_class,
                    std::size_t img_size, double noise_std, std::uint64_t seed,
                    double amplitude) {
  if (num_classes < 1 || per_class < 1 || img_size < 2) {
    throw std::invalid_argument("synth_blobs: arguments must be positive");
  }
  const std::size_t n = std::size_t(num_classes) * per_class;
  Dataset ds;
  ds.images = Tensor({n, 1, img_size, img_size});
  ds.labels.resize(n);
  ds.num_classes = num_classes;
  ds.name = "synth_blobs";

  const double cx0 = (img_size - 1) / 2.0;
  const double radius = img_size / 4.0;
  const double sigma = img_size / 6.0;
  Rng rng(seed);
  std::size_t idx = 0;
  for (int c = 0; c < num_classes; ++c) {
    // Class-specific bump position on a circle around the image center.
    const double ang = 2.0 * M_PI * c / num_classes;
    const double cy = cx0 + radius * std::sin(ang);
    const double cx = cx0 + radius * std::cos(ang);
    Rng crng = rng.child({0x626c6f62ull, static_cast<std::uint64_t>(c)});
    for (std::size_t e = 0; e < per_class; ++e) {
      float* px = ds.images.data() + idx * img_size * img_size;
      for (std::size_t y = 0; y < img_size; ++y) {
        for (std::size_t x = 0; x < img_size; ++x) {
          const double dy = y - cy, dx = x - cx;
          double v = amplitude * std::exp(-(dy * dy + dx * dx) /
                                          (2.0 * sigma * sigma));
          if (noise_std > 0.0) v += noise_std * crng.normal();
          px[y * img_size + x] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
      ds.labels[idx] = c;
      ++idx;
    }
  }
  return ds;
}

Dataset sample_subset(const Dataset& ds, double fraction, std::uint64_t seed,
                      bool uniform) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("fraction must be in (0,1]");
  }
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  if (uniform) {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    // Fisher-Yates prefix shuffle.
    const std::size_t want = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(all.size())));
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + rng.uniform_int(all.size() - i);
      std::swap(all[i], all[j]);
      chosen.push_back(all[i]);
    }
  } else {
    for (int c = 0; c < ds.num_classes; ++c) {
      std::vector<std::size_t> cls;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] == c) cls.push_back(i);
      }
      if (cls.empty()) continue;
      const std::size_t want = static_cast<std::size_t>(
          std::ceil(fraction * static_cast<double>(cls.size())));
      Rng crng = rng.child({0x7374726174ull, static_cast<std::uint64_t>(c)});
      for (std::size_t i = 0; i < want && i < cls.size(); ++i) {
        const std::size_t j = i + crng.uniform_int(cls.size() - i);
        std::swap(cls[i], cls[j]);
        chosen.push_back(cls[i]);
      }
    }
  }
  Dataset out;
  out.images = ds.batch_of(chosen);
  out.labels = ds.labels_of(chosen);
  out.num_classes = ds.num_classes;
  out.name = ds.name + "/subset";
  return out;
}

}  // namespace ccsrp
