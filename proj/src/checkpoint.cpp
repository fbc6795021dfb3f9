#include "ccsrp/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace ccsrp {

using nlohmann::json;

namespace {

json spec_to_json(const LayerSpec& s) {
  json j;
  if (s.kind == LayerKind::Conv2D) {
    j["kind"] = "conv2d";
    j["in_channels"] = s.in_channels;
    j["out_channels"] = s.out_channels;
    j["kernel_h"] = s.kernel_h;
    j["kernel_w"] = s.kernel_w;
    j["stride"] = s.stride;
    j["padding"] = s.padding;
  } else {
    j["kind"] = "dense";
    j["in_features"] = s.in_features;
    j["out_features"] = s.out_features;
  }
  j["spiking"] = s.spiking;
  return j;
}

LayerSpec spec_from_json(const json& j) {
  LayerSpec s;
  const std::string kind = j.at("kind");
  if (kind == "conv2d") {
    s.kind = LayerKind::Conv2D;
    s.in_channels = j.at("in_channels");
    s.out_channels = j.at("out_channels");
    s.kernel_h = j.at("kernel_h");
    s.kernel_w = j.at("kernel_w");
    s.stride = j.at("stride");
    s.padding = j.at("padding");
  } else if (kind == "dense") {
    s.kind = LayerKind::Dense;
    s.in_features = j.at("in_features");
    s.out_features = j.at("out_features");
  } else {
    throw CheckpointError("unknown layer kind: " + kind);
  }
  s.spiking = j.at("spiking");
  return s;
}

json lif_to_json(const LifConfig& c) {
  return json{{"decay", c.decay},
              {"threshold", c.threshold},
              {"timesteps", c.timesteps},
              {"reset", "hard_zero"},
              {"surrogate_width", c.surrogate_width}};
}

LifConfig lif_from_json(const json& j) {
  LifConfig c;
  c.decay = j.at("decay");
  c.threshold = j.at("threshold");
  c.timesteps = j.at("timesteps");
  c.surrogate_width = j.at("surrogate_width");
  return c;
}

void append_block(std::string& blocks, const Tensor& t, json& offsets) {
  json entry;
  entry["offset"] = blocks.size();
  entry["count"] = t.numel();
  entry["shape"] = t.shape();
  offsets.push_back(entry);
  static_assert(sizeof(float) == 4);
  const std::size_t bytes = t.numel() * 4;
  const std::size_t pos = blocks.size();
  blocks.resize(pos + bytes);
  // Host is little-endian; stored format is little-endian float32.
  std::memcpy(blocks.data() + pos, t.data(), bytes);
}

Tensor read_block(const std::string& blocks, const json& entry) {
  const std::size_t offset = entry.at("offset");
  const std::size_t count = entry.at("count");
  std::vector<std::size_t> shape = entry.at("shape");
  if (offset + count * 4 > blocks.size()) {
    throw CheckpointError("weight block out of range");
  }
  Tensor t(shape);
  if (t.numel() != count) throw CheckpointError("block shape/count mismatch");
  std::memcpy(t.data(), blocks.data() + offset, count * 4);
  return t;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

// Splits a manifest+NUL+blocks file.
void read_split(const std::string& path, json& manifest, std::string& blocks) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const std::size_t nul = bytes.find('\0');
  if (nul == std::string::npos) {
    throw CheckpointError("missing manifest terminator in " + path);
  }
  manifest = json::parse(bytes.substr(0, nul));
  blocks = bytes.substr(nul + 1);
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  json manifest;
  manifest["format"] = "ccsrp-checkpoint-v1";
  manifest["lif"] = lif_to_json(net.lif);
  manifest["seed_tag"] = net.seed_tag;
  json layers = json::array();
  json blocks_meta = json::array();
  std::string blocks;
  for (const Layer& l : net.layers) {
    layers.push_back(spec_to_json(l.spec));
    append_block(blocks, l.weight, blocks_meta);
    append_block(blocks, l.bias, blocks_meta);
  }
  manifest["layers"] = layers;
  manifest["blocks"] = blocks_meta;
  std::string bytes = manifest.dump();
  bytes.push_back('\0');
  bytes += blocks;
  write_file_atomic(path, bytes);
}

Network load_checkpoint(const std::string& path) {
  json manifest;
  std::string blocks;
  read_split(path, manifest, blocks);
  if (manifest.value("format", "") != "ccsrp-checkpoint-v1") {
    throw CheckpointError("not a ccsrp checkpoint: " + path);
  }
  Network net;
  net.lif = lif_from_json(manifest.at("lif"));
  net.seed_tag = manifest.at("seed_tag");
  const json& layers = manifest.at("layers");
  const json& blocks_meta = manifest.at("blocks");
  if (blocks_meta.size() != layers.size() * 2) {
    throw CheckpointError("block count does not match layer count");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Layer l;
    l.spec = spec_from_json(layers[i]);
    l.weight = read_block(blocks, blocks_meta[2 * i]);
    l.bias = read_block(blocks, blocks_meta[2 * i + 1]);
    net.layers.push_back(std::move(l));
  }
  return net;
}

void save_adv_dataset(const AdvDataset& da, const AttackConfig& cfg,
                      const std::string& path) {
  json manifest;
  manifest["format"] = "ccsrp-advset-v1";
  manifest["labels"] = da.labels;
  json prov = json::array();
  for (const auto& p : da.provenance) {
    prov.push_back({{"subnet", p.subnet_id}, {"source", p.source_index}});
  }
  manifest["provenance"] = prov;
  manifest["attack"] = {{"epsilon", cfg.epsilon},
                        {"alpha", cfg.alpha},
                        {"steps", cfg.steps},
                        {"random_start", cfg.random_start}};
  json blocks_meta = json::array();
  std::string blocks;
  append_block(blocks, da.examples, blocks_meta);
  manifest["blocks"] = blocks_meta;
  std::string bytes = manifest.dump();
  bytes.push_back('\0');
  bytes += blocks;
  write_file_atomic(path, bytes);
}

AdvDataset load_adv_dataset(const std::string& path, AttackConfig* cfg_out) {
  json manifest;
  std::string blocks;
  read_split(path, manifest, blocks);
  if (manifest.value("format", "") != "ccsrp-advset-v1") {
    throw CheckpointError("not a ccsrp adversarial set: " + path);
  }
  AdvDataset da;
  da.labels = manifest.at("labels").get<std::vector<int>>();
  for (const auto& p : manifest.at("provenance")) {
    da.provenance.push_back({p.at("subnet"), p.at("source")});
  }
  da.examples = read_block(blocks, manifest.at("blocks").at(0));
  if (cfg_out) {
    const json& a = manifest.at("attack");
    cfg_out->epsilon = a.at("epsilon");
    cfg_out->alpha = a.at("alpha");
    cfg_out->steps = a.at("steps");
    cfg_out->random_start = a.at("random_start");
  }
  return da;
}

void atomic_write_text(const std::string& path, const std::string& content) {
  write_file_atomic(path, content);
}

}  // namespace ccsrp
