#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccsrp/checkpoint.hpp"
#include "ccsrp/evolution.hpp"
#include "ccsrp/run_config.hpp"
#include "ccsrp/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ccsrp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

RunConfig resolve_config(const std::string& config_path,
                         const std::string& profile, std::uint64_t seed,
                         bool seed_set, const std::string& out,
                         const std::string& used_subcommand) {
  RunConfig cfg = config_path.empty() ? RunConfig::preset(profile)
                                      : RunConfig::from_file(config_path);
  (void)used_subcommand;
  if (seed_set) cfg.seed = seed;
  if (!out.empty()) cfg.out_dir = out;
  cfg.validate();
  return cfg;
}

std::string iter_dir(const std::string& archive_dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "iter_%03zu", i);
  return archive_dir + "/" + buf;
}

bool iteration_complete(const std::string& dir) {
  return fs::exists(dir + "/checkpoint.ckpt") && fs::exists(dir + "/mask.txt") &&
         fs::exists(dir + "/fitness.json");
}

struct EvalReport {
  double acc = 0.0;
  double accr = 0.0;
  std::uint64_t flops = 0;
};

EvalReport evaluate_network(const Network& net, const Dataset& ds,
                            const AttackConfig* attack, Rng rng) {
  EvalReport rep;
  std::size_t hit = 0;
  const std::size_t bs = 64;
  for (std::size_t start = 0; start < ds.size(); start += bs) {
    const std::size_t len = std::min(bs, ds.size() - start);
    std::vector<std::size_t> idx(len);
    for (std::size_t i = 0; i < len; ++i) idx[i] = start + i;
    const auto pred = predict(forward(net, ds.batch_of(idx)).logits);
    const auto labels = ds.labels_of(idx);
    for (std::size_t i = 0; i < len; ++i) {
      if (pred[i] == labels[i]) ++hit;
    }
  }
  rep.acc = static_cast<double>(hit) / static_cast<double>(ds.size());
  if (attack) {
    AdvDataset da = generate_adv_dataset(net, ds, 1, 0.0, 1.0, *attack, rng);
    rep.accr = robust_accuracy(net, nullptr, da);
  } else {
    rep.accr = rep.acc;
  }
  rep.flops = count_flops(net, ds.height(), ds.width()).total_flops;
  return rep;
}

void write_summary_csv(const std::string& archive_dir, bool aborted) {
  std::ostringstream csv;
  csv << "iteration,acc,accr,flops,flops_pct\n";
  for (std::size_t i = 0;; ++i) {
    const std::string dir = iter_dir(archive_dir, i);
    if (!iteration_complete(dir)) break;
    std::ifstream in(dir + "/fitness.json");
    json f = json::parse(in);
    csv << f.at("iteration").get<std::size_t>() << ","
        << f.at("acc").get<double>() << "," << f.at("accr").get<double>()
        << "," << f.at("flops").get<std::uint64_t>() << ","
        << f.at("flops_pct").get<double>() << "\n";
  }
  if (aborted) csv << "# aborted: run ended before completing all iterations\n";
  atomic_write_text(archive_dir + "/summary.csv", csv.str());
}

int cmd_pretrain(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  Rng master(cfg.seed);
  Dataset dt = cfg.dataset.load(master.child(0x64617461ull).next_u64());

  std::ostringstream csv;
  csv << "step,lr,loss,acc,accr\n";
  auto sink = [&](const TrainLogRow& row) {
    csv << row.step << "," << row.lr << "," << row.loss << ",";
    if (row.acc >= 0) csv << row.acc;
    csv << ",";
    if (row.accr >= 0) csv << row.accr;
    csv << "\n";
  };
  Network net = pretrain(cfg.arch, cfg.lif, dt, cfg.pretrain,
                         master.child(0x7072657472ull), sink);
  save_checkpoint(net, cfg.out_dir + "/pretrained.ckpt");
  atomic_write_text(cfg.out_dir + "/pretrain_log.csv", csv.str());
  atomic_write_text(cfg.out_dir + "/config.json", cfg.to_json_string());
  std::cout << "pretrained checkpoint: " << cfg.out_dir << "/pretrained.ckpt\n";
  return kExitOk;
}

int cmd_prune(const RunConfig& cfg, const std::string& checkpoint_path) {
  const std::string archive_dir = cfg.out_dir + "/archive";
  fs::create_directories(archive_dir);
  Rng master(cfg.seed);
  Dataset dt = cfg.dataset.load(master.child(0x64617461ull).next_u64());

  // Resume: skip iterations already completed on disk.
  std::size_t start = 0;
  while (iteration_complete(iter_dir(archive_dir, start))) ++start;
  Network base;
  if (start == 0) {
    base = load_checkpoint(checkpoint_path);
    Rng brng = master.child(0x62617365ull);
    EvalReport rep = evaluate_network(base, sample_subset(dt, 0.2, brng.next_u64()),
                                      &cfg.ccsrp.eval_attack, brng);
    json bj{{"acc", rep.acc}, {"accr", rep.accr}, {"flops", rep.flops}};
    atomic_write_text(archive_dir + "/base.json", bj.dump(2) + "\n");
  } else {
    base = load_checkpoint(iter_dir(archive_dir, start - 1) + "/checkpoint.ckpt");
    std::cout << "resuming from iteration " << start << "\n";
  }

  auto on_entry = [&](const IterationRecord& rec) {
    const std::string dir = iter_dir(archive_dir, rec.iteration);
    fs::create_directories(dir);
    save_checkpoint(rec.network, dir + "/checkpoint.ckpt");
    atomic_write_text(dir + "/mask.txt", rec.mask.to_text());
    const double pct =
        100.0 * (1.0 - static_cast<double>(rec.fit.flops) /
                           static_cast<double>(rec.base_flops));
    json f{{"iteration", rec.iteration}, {"acc", rec.fit.acc},
           {"accr", rec.fit.accr},       {"flops", rec.fit.flops},
           {"base_flops", rec.base_flops}, {"flops_pct", pct}};
    atomic_write_text(dir + "/fitness.json", f.dump(2) + "\n");
  };

  Archive archive =
      ccsrp_run(base, dt, cfg.ccsrp, master.child(0x6363737270ull), start,
                on_entry);
  write_summary_csv(archive_dir, archive.aborted);
  atomic_write_text(cfg.out_dir + "/config.json", cfg.to_json_string());
  if (archive.aborted) {
    std::cerr << "prune aborted with a partial archive\n";
    return kExitRuntime;
  }
  std::cout << "archive: " << archive_dir << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& attack_profile, const std::string& report_path) {
  Network net = load_checkpoint(checkpoint_path);
  Rng master(cfg.seed);
  Dataset ds = cfg.dataset.load(master.child(0x64617461ull).next_u64());

  const AttackConfig* attack = nullptr;
  AttackConfig ac;
  if (attack_profile == "eval") {
    ac = cfg.ccsrp.eval_attack;
    attack = &ac;
  } else if (attack_profile == "train") {
    ac = cfg.pretrain.attack;
    attack = &ac;
  } else if (attack_profile != "none") {
    throw ConfigInvalid("attack profile must be eval, train, or none");
  }
  EvalReport rep =
      evaluate_network(net, ds, attack, master.child(0x6576616cull));
  json out{{"acc", rep.acc}, {"accr", rep.accr}, {"flops", rep.flops}};
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  if (!report_path.empty()) atomic_write_text(report_path, text);
  return kExitOk;
}

int cmd_report(const std::string& archive_dir) {
  if (!fs::exists(archive_dir + "/base.json")) {
    throw CheckpointError("MissingEntry: no base.json in " + archive_dir);
  }
  std::ifstream bin(archive_dir + "/base.json");
  json base = json::parse(bin);
  const double base_acc = base.at("acc");
  const double base_accr = base.at("accr");
  const double base_flops = base.at("flops");

  std::ostringstream csv;
  csv << "iteration,acc,accr,flops,acc_drop,accr_drop,flops_reduction_pct\n";
  std::size_t count = 0;
  for (std::size_t i = 0;; ++i) {
    const std::string dir = iter_dir(archive_dir, i);
    if (!iteration_complete(dir)) break;
    std::ifstream in(dir + "/fitness.json");
    json f = json::parse(in);
    const double acc = f.at("acc");
    const double accr = f.at("accr");
    const double flops = f.at("flops");
    csv << i << "," << acc << "," << accr << ","
        << static_cast<std::uint64_t>(flops) << "," << (base_acc - acc) << ","
        << (base_accr - accr) << "," << 100.0 * (1.0 - flops / base_flops)
        << "\n";
    std::ifstream min(dir + "/mask.txt");
    std::string mask((std::istreambuf_iterator<char>(min)),
                     std::istreambuf_iterator<char>());
    std::cout << "iteration " << i << " mask:\n" << mask;
    ++count;
  }
  if (count == 0) {
    throw CheckpointError("MissingEntry: archive has no completed iterations");
  }
  atomic_write_text(archive_dir + "/report.csv", csv.str());
  std::cout << "report: " << archive_dir << "/report.csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CCSRP: cooperative-coevolutionary robust pruning of spiking networks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, profile = "desk";
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--profile", profile, "preset when no --config: paper|desk");
  app.add_option("--out", out_dir, "output directory override");
  auto* seed_opt = app.add_option("--seed", seed, "master seed override");

  auto* pre = app.add_subcommand("pretrain", "adversarially pretrain a network");

  auto* prune = app.add_subcommand("prune", "run the pruning loop");
  std::string checkpoint_path;
  prune->add_option("--checkpoint", checkpoint_path, "pretrained checkpoint")
      ->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint, attack_profile = "eval", report_path;
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")
      ->required();
  eval->add_option("--attack", attack_profile, "attack profile: eval|train|none");
  eval->add_option("--report", report_path, "write the JSON report here");

  auto* report = app.add_subcommand("report", "consolidate an archive");
  std::string archive_dir;
  report->add_option("--archive", archive_dir, "archive directory")->required();

  CLI11_PARSE(app, argc, argv);
  seed_set = seed_opt->count() > 0;

  try {
    if (report->parsed()) return cmd_report(archive_dir);
    RunConfig cfg =
        resolve_config(config_path, profile, seed, seed_set, out_dir, "");
    if (pre->parsed()) return cmd_pretrain(cfg);
    if (prune->parsed()) return cmd_prune(cfg, checkpoint_path);
    if (eval->parsed())
      return cmd_eval(cfg, eval_checkpoint, attack_profile, report_path);
  } catch (const ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
