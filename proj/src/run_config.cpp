#include "ccsrp/run_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace ccsrp {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigInvalid("unknown key '" + it.key() + "' in " + where);
    }
  }
}

json attack_to_json(const AttackConfig& a) {
  return json{{"epsilon", a.epsilon},
              {"alpha", a.alpha},
              {"steps", a.steps},
              {"random_start", a.random_start}};
}

AttackConfig attack_from_json(const json& j, const std::string& where) {
  check_keys(j, {"epsilon", "alpha", "steps", "random_start"}, where);
  AttackConfig a;
  a.epsilon = j.value("epsilon", a.epsilon);
  a.alpha = j.value("alpha", a.alpha);
  a.steps = j.value("steps", a.steps);
  a.random_start = j.value("random_start", a.random_start);
  return a;
}

json train_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr0", t.lr0},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"schedule", "cosine_annealing"},
              {"trades_beta", t.trades_beta},
              {"adversarial", t.adversarial},
              {"attack", attack_to_json(t.attack)}};
}

TrainConfig train_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"epochs", "batch_size", "lr0", "momentum", "weight_decay",
              "schedule", "trades_beta", "adversarial", "attack"},
             where);
  if (j.contains("schedule") && j["schedule"] != "cosine_annealing") {
    throw ConfigInvalid("unsupported schedule in " + where);
  }
  TrainConfig t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr0 = j.value("lr0", t.lr0);
  t.momentum = j.value("momentum", t.momentum);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.trades_beta = j.value("trades_beta", t.trades_beta);
  t.adversarial = j.value("adversarial", t.adversarial);
  if (j.contains("attack")) t.attack = attack_from_json(j["attack"], where + ".attack");
  return t;
}

json arch_to_json(const std::vector<LayerSpec>& arch) {
  json out = json::array();
  for (const LayerSpec& s : arch) {
    json l;
    if (s.kind == LayerKind::Conv2D) {
      l["kind"] = "conv2d";
      l["in_channels"] = s.in_channels;
      l["out_channels"] = s.out_channels;
      l["kernel"] = s.kernel_h;
      l["stride"] = s.stride;
      l["padding"] = s.padding;
    } else {
      l["kind"] = "dense";
      l["in_features"] = s.in_features;
      l["out_features"] = s.out_features;
    }
    l["spiking"] = s.spiking;
    out.push_back(l);
  }
  return out;
}

std::vector<LayerSpec> arch_from_json(const json& j) {
  std::vector<LayerSpec> arch;
  for (const json& l : j) {
    const std::string kind = l.at("kind");
    if (kind == "conv2d") {
      check_keys(l, {"kind", "in_channels", "out_channels", "kernel", "stride",
                     "padding", "spiking"},
                 "arch.conv2d");
      arch.push_back(LayerSpec::conv(l.at("in_channels"), l.at("out_channels"),
                                     l.at("kernel"), l.value("stride", 1),
                                     l.value("padding", 0),
                                     l.value("spiking", true)));
    } else if (kind == "dense") {
      check_keys(l, {"kind", "in_features", "out_features", "spiking"},
                 "arch.dense");
      arch.push_back(LayerSpec::dense(l.at("in_features"), l.at("out_features"),
                                      l.value("spiking", false)));
    } else {
      throw ConfigInvalid("unknown layer kind in arch: " + kind);
    }
  }
  return arch;
}

}  // namespace

Dataset DatasetConfig::load(std::uint64_t seed) const {
  if (type == "synth_blobs") {
    return synth_blobs(num_classes, per_class, img_size, noise_std, seed,
                       amplitude);
  }
  if (type == "idx") {
    return load_idx(images_path, labels_path, num_classes);
  }
  throw ConfigInvalid("unknown dataset type: " + type);
}

void RunConfig::validate() const {
  pretrain.validate();
  ccsrp.validate();
  lif.validate();
  validate_specs(arch);
  if (dataset.type == "idx" &&
      (dataset.images_path.empty() || dataset.labels_path.empty())) {
    throw ConfigInvalid("idx dataset requires images_path and labels_path");
  }
}

std::string RunConfig::to_json_string() const {
  json j;
  j["profile"] = profile;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  json ds;
  ds["type"] = dataset.type;
  if (dataset.type == "synth_blobs") {
    ds["num_classes"] = dataset.num_classes;
    ds["per_class"] = dataset.per_class;
    ds["img_size"] = dataset.img_size;
    ds["noise_std"] = dataset.noise_std;
    ds["amplitude"] = dataset.amplitude;
  } else {
    ds["num_classes"] = dataset.num_classes;
    ds["images_path"] = dataset.images_path;
    ds["labels_path"] = dataset.labels_path;
  }
  j["dataset"] = ds;
  j["arch"] = arch_to_json(arch);
  j["lif"] = {{"decay", lif.decay},
              {"threshold", lif.threshold},
              {"timesteps", lif.timesteps},
              {"surrogate_width", lif.surrogate_width}};
  j["pretrain"] = train_to_json(pretrain);
  json cc;
  cc["iterations"] = ccsrp.iterations;
  cc["subnets"] = ccsrp.subnets;
  cc["sample_fraction"] = ccsrp.sample_fraction;
  cc["resample_ds"] = ccsrp.resample_ds;
  cc["ea"] = {{"d", ccsrp.ea.d},
              {"p1", ccsrp.ea.p1},
              {"p2", ccsrp.ea.p2},
              {"r", ccsrp.ea.r},
              {"generations", ccsrp.ea.generations}};
  cc["finetune"] = train_to_json(ccsrp.finetune);
  cc["eval_attack"] = attack_to_json(ccsrp.eval_attack);
  j["ccsrp"] = cc;
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_string(const std::string& text) {
  const json j = json::parse(text);
  check_keys(j,
             {"profile", "seed", "out_dir", "dataset", "arch", "lif",
              "pretrain", "ccsrp"},
             "config");
  RunConfig c = preset(j.value("profile", "desk"));
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("dataset")) {
    const json& ds = j["dataset"];
    check_keys(ds,
               {"type", "num_classes", "per_class", "img_size", "noise_std",
                "amplitude", "images_path", "labels_path"},
               "dataset");
    c.dataset.type = ds.value("type", c.dataset.type);
    c.dataset.num_classes = ds.value("num_classes", c.dataset.num_classes);
    c.dataset.per_class = ds.value("per_class", c.dataset.per_class);
    c.dataset.img_size = ds.value("img_size", c.dataset.img_size);
    c.dataset.noise_std = ds.value("noise_std", c.dataset.noise_std);
    c.dataset.amplitude = ds.value("amplitude", c.dataset.amplitude);
    c.dataset.images_path = ds.value("images_path", c.dataset.images_path);
    c.dataset.labels_path = ds.value("labels_path", c.dataset.labels_path);
  }
  if (j.contains("arch")) c.arch = arch_from_json(j["arch"]);
  if (j.contains("lif")) {
    const json& l = j["lif"];
    check_keys(l, {"decay", "threshold", "timesteps", "surrogate_width"},
               "lif");
    c.lif.decay = l.value("decay", c.lif.decay);
    c.lif.threshold = l.value("threshold", c.lif.threshold);
    c.lif.timesteps = l.value("timesteps", c.lif.timesteps);
    c.lif.surrogate_width = l.value("surrogate_width", c.lif.surrogate_width);
  }
  if (j.contains("pretrain")) {
    c.pretrain = train_from_json(j["pretrain"], "pretrain");
  }
  if (j.contains("ccsrp")) {
    const json& cc = j["ccsrp"];
    check_keys(cc,
               {"iterations", "subnets", "sample_fraction", "resample_ds",
                "ea", "finetune", "eval_attack"},
               "ccsrp");
    c.ccsrp.iterations = cc.value("iterations", c.ccsrp.iterations);
    c.ccsrp.subnets = cc.value("subnets", c.ccsrp.subnets);
    c.ccsrp.sample_fraction =
        cc.value("sample_fraction", c.ccsrp.sample_fraction);
    c.ccsrp.resample_ds = cc.value("resample_ds", c.ccsrp.resample_ds);
    if (cc.contains("ea")) {
      const json& ea = cc["ea"];
      check_keys(ea, {"d", "p1", "p2", "r", "generations"}, "ccsrp.ea");
      c.ccsrp.ea.d = ea.value("d", c.ccsrp.ea.d);
      c.ccsrp.ea.p1 = ea.value("p1", c.ccsrp.ea.p1);
      c.ccsrp.ea.p2 = ea.value("p2", c.ccsrp.ea.p2);
      c.ccsrp.ea.r = ea.value("r", c.ccsrp.ea.r);
      c.ccsrp.ea.generations = ea.value("generations", c.ccsrp.ea.generations);
    }
    if (cc.contains("finetune")) {
      c.ccsrp.finetune = train_from_json(cc["finetune"], "ccsrp.finetune");
    }
    if (cc.contains("eval_attack")) {
      c.ccsrp.eval_attack =
          attack_from_json(cc["eval_attack"], "ccsrp.eval_attack");
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json_string(text);
}

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  if (name == "paper") {
    c.profile = "paper";
    c.ccsrp.iterations = 16;
    c.ccsrp.subnets = 5;
    c.ccsrp.sample_fraction = 0.10;
    c.ccsrp.ea = EaConfig{5, 0.05, 0.1, 0.1, 10};
    c.pretrain = TrainConfig{};  // 30 epochs, batch 128, lr 0.1
    c.ccsrp.finetune = TrainConfig{};
    c.ccsrp.eval_attack = AttackConfig::evaluation();
    c.dataset.type = "idx";
    c.dataset.num_classes = 10;
    c.dataset.img_size = 32;
    c.arch = {LayerSpec::conv(1, 16, 3, 1, 1), LayerSpec::conv(16, 16, 3, 1, 1),
              LayerSpec::conv(16, 32, 3, 2, 1), LayerSpec::conv(32, 32, 3, 1, 1),
              LayerSpec::dense(32 * 16 * 16, 10)};
  } else if (name == "desk") {
    c.profile = "desk";
    c.ccsrp.iterations = 4;
    c.ccsrp.subnets = 5;
    c.ccsrp.sample_fraction = 0.10;
    c.ccsrp.ea = EaConfig{5, 0.05, 0.1, 0.1, 5};
    c.pretrain.epochs = 3;
    c.pretrain.batch_size = 32;
    c.ccsrp.finetune.epochs = 3;
    c.ccsrp.finetune.batch_size = 32;
    c.dataset = DatasetConfig{};  // 4-class synthetic blobs, 12x12
    c.arch = {LayerSpec::conv(1, 8, 3, 1, 1), LayerSpec::conv(8, 8, 3, 1, 1),
              LayerSpec::dense(8 * 12 * 12, 4)};
  } else {
    throw ConfigInvalid("unknown profile: " + name);
  }
  return c;
}

}  // namespace ccsrp
