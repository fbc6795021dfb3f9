#pragma once

#include <string>
#include <vector>

#include "ccsrp/data.hpp"
#include "ccsrp/evolution.hpp"
#include "ccsrp/network.hpp"

namespace ccsrp {

struct DatasetConfig {
  std::string type = "synth_blobs";  // "synth_blobs" or "idx"
  // synth_blobs
  int num_classes = 4;
  std::size_t per_class = 250;
  std::size_t img_size = 12;
  double noise_std = 0.3;
  double amplitude = 0.3;
  // idx
  std::string images_path;
  std::string labels_path;

  Dataset load(std::uint64_t seed) const;
};

// Union of all module configs, serialized as one JSON document. Unknown
// keys are rejected.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  DatasetConfig dataset;
  std::vector<LayerSpec> arch;
  LifConfig lif;
  TrainConfig pretrain;
  CcsrpConfig ccsrp;

  void validate() const;

  std::string to_json_string() const;
  static RunConfig from_json_string(const std::string& text);
  static RunConfig from_file(const std::string& path);

  // Named presets: "paper" carries the published hyperparameters, "desk"
  // is a minutes-scale profile on synthetic data.
  static RunConfig preset(const std::string& name);
};

}  // namespace ccsrp
