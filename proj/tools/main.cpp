#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "cmn/config.hpp"
#include "cmn/errors.hpp"
#include "cmn/eval.hpp"
#include "cmn/training.hpp"

namespace fs = std::filesystem;
using namespace cmn;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // "--a.b=v" tokens CLI11 left over
};

nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read config " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + p.string() + ": " + e.what());
  }
}

RunConfig load_config(const Common& c) {
  nlohmann::json doc = c.config_path.empty() ? nlohmann::json::object() : read_json_file(c.config_path);
  for (const auto& token : c.overrides) {
    if (token.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + token + "'");
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + token + "' needs the form --section.key=value");
    apply_override(doc, token.substr(2, eq - 2), token.substr(eq + 1));
  }
  RunConfig cfg = run_config_from_json(doc);
  cfg.apply_seed(resolve_seed(c.seed, std::getenv("CMN_SEED"), cfg.seed));
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create " + p.string() + ": " + ec.message());
}

Dataset load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory '" + dir + "' does not exist");
  return read_dataset(dir);
}

int cmd_gen(const Common& c, const std::string& out) {
  const RunConfig cfg = load_config(c);
  const auto echo = to_json(cfg);
  const Dataset data = build_dataset(cfg.data);
  write_dataset(data, out, echo);
  write_text(fs::path(out) / "config.json", echo.dump(2) + "\n");
  for (Split s : kAllSplits) std::cout << split_name(s) << ": " << data.split(s).size() << " instances\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& out) {
  const RunConfig cfg = load_config(c);
  const Dataset data = load_data(data_dir);
  make_dir(out);
  write_text(fs::path(out) / "config.json", to_json(cfg).dump(2) + "\n");
  auto result = train(data, cfg.model, cfg.train, [](const MetricsRow& r) {
    std::cout << "iter " << r.iteration << " loss " << r.train_loss << " " << split_name(r.split) << " GP "
              << r.report.GP << " SR " << r.report.SR << "\n";
  });
  save_checkpoint(result.best, fs::path(out) / "best.ckpt.json");
  save_checkpoint(result.final, fs::path(out) / "final.ckpt.json");
  write_text(fs::path(out) / "metrics.csv", metrics_csv(result.log));
  std::cout << "best iteration " << result.best_iteration << " GP " << result.best_gp << "\n";
  return 0;
}

std::string report_line(const std::string& label, const MetricReport& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%zu", label.c_str(), r.GP, r.SR, r.OSR, r.OPSR, r.n);
  return buf;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& supervision, const std::string& baseline, double threshold, std::uint64_t seed,
             const std::string& csv_out) {
  const Dataset data = load_data(data_dir);
  const Split s = parse_split(split);
  RolloutOptions opts;
  opts.supervision = parse_supervision(supervision);
  const auto& instances = data.split(s);
  if (instances.empty()) throw ConfigError("split " + split + " is empty");

  std::optional<Model> model;
  if (!checkpoint.empty()) model = load_checkpoint(checkpoint);
  Environment env(data.houses, model ? model->config.F : kDefaultFeatureDim);

  MetricReport report;
  std::string label;
  if (!baseline.empty()) {
    const Baseline kind = parse_baseline(baseline);
    if ((kind == Baseline::VisionOnly || kind == Baseline::DialogOnly) && !model) {
      throw ConfigError("--baseline " + baseline + " needs --checkpoint");
    }
    report = run_baseline(kind, instances, env, opts, model ? &*model : nullptr, seed, threshold);
    label = baseline;
  } else {
    if (!model) throw ConfigError("eval needs --checkpoint or --baseline");
    report = evaluate_model(*model, instances, env, opts, threshold);
    label = mode_name(model->config.mode);
  }
  const std::string header = "agent,GP,SR,OSR,OPSR,n\n";
  const std::string line = report_line(label, report) + "\n";
  std::printf("%s on %s (%s supervision, n=%zu)\n  GP %.3f m  SR %.3f  OSR %.3f  OPSR %.3f\n", label.c_str(),
              split.c_str(), supervision.c_str(), report.n, report.GP, report.SR, report.OSR, report.OPSR);
  if (!csv_out.empty()) write_text(csv_out, header + line);
  return 0;
}

int cmd_ablate(const Common& c, const std::string& data_dir, const std::string& out) {
  const RunConfig cfg = load_config(c);
  const Dataset data = load_data(data_dir);
  make_dir(out);
  write_text(fs::path(out) / "config.json", to_json(cfg).dump(2) + "\n");
  std::map<Mode, Model> models;
  for (Mode m : kAllModes) {
    ModelConfig mc = cfg.model;
    mc.mode = m;
    std::cout << "training " << mode_name(m) << "\n" << std::flush;
    auto result = train(data, mc, cfg.train);
    const fs::path dir = fs::path(out) / mode_name(m);
    make_dir(dir);
    save_checkpoint(result.best, dir / "best.ckpt.json");
    write_text(dir / "metrics.csv", metrics_csv(result.log));
    models.emplace(m, std::move(result.best));
  }
  Environment env(data.houses, cfg.model.F);
  const std::vector<Split> splits = {Split::ValSeen, Split::ValUnseen, Split::TestUnseen};
  const auto table = ablation_report(models, data, env, splits, cfg.train.rollout_options(), cfg.threshold_m);
  write_text(fs::path(out) / "ablation.csv", table.to_csv());
  write_text(fs::path(out) / "ablation.txt", table.to_text());
  std::cout << table.to_text();
  return 0;
}

nlohmann::json trace_json(const StepTrace& s) {
  return {{"round", s.round},       {"step", s.step},     {"node", s.node},   {"candidates", s.candidates},
          {"logits", s.logits},     {"action", s.action}, {"stop", s.action == s.candidates.size()},
          {"vmem_weights", s.vmem}, {"lmem_weights", s.lmem}, {"l2v_weights", s.l2v}, {"v2l_weights", s.v2l}};
}

int cmd_trace(const std::string& checkpoint, const std::string& data_dir, const std::string& split, long instance_id,
              const std::string& supervision, const std::string& out) {
  const Dataset data = load_data(data_dir);
  const auto& instances = data.split(parse_split(split));
  if (instance_id < 0 || static_cast<std::size_t>(instance_id) >= instances.size()) {
    throw ConfigError("--instance-id " + std::to_string(instance_id) + " outside split " + split + " (" +
                      std::to_string(instances.size()) + " instances)");
  }
  const Model model = load_checkpoint(checkpoint);
  Environment env(data.houses, model.config.F);
  RolloutOptions opts;
  opts.supervision = parse_supervision(supervision);
  opts.record_trace = true;
  const auto traj = run_agent(instances[static_cast<std::size_t>(instance_id)], env, model, opts);
  std::ostringstream lines;
  for (const auto& s : traj.steps) lines << trace_json(s).dump() << "\n";
  if (out.empty()) {
    std::cout << lines.str();
  } else {
    write_text(out, lines.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal memory navigation agent: data generation, training and evaluation"};
  app.require_subcommand(1);

  Common common;
  std::string out, data_dir, checkpoint, split = "val_unseen", supervision = "mixed", baseline, csv_out;
  double threshold = kSuccessThreshold;
  std::uint64_t eval_seed = 0;
  long instance_id = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run configuration");
    sub->add_option("--seed", common.seed, "overrides CMN_SEED and the config seed");
    sub->allow_extras();
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or a baseline");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--split", split, "train, val_seen, val_unseen or test_unseen");
  ev->add_option("--supervision", supervision, "oracle, navigator or mixed");
  ev->add_option("--baseline", baseline, "shortest_path, random, vision_only or dialog_only");
  ev->add_option("--threshold", threshold, "success radius in meters");
  ev->add_option("--seed", eval_seed, "seed for the random baseline");
  ev->add_option("--out", csv_out, "CSV report file");

  auto* ab = app.add_subcommand("ablate", "train every memory ablation and compare them");
  add_common(ab);
  ab->add_option("--data", data_dir, "dataset directory")->required();
  ab->add_option("--out", out, "output directory")->required();

  auto* trc = app.add_subcommand("trace", "per-step JSON-lines trace of one episode");
  trc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  trc->add_option("--data", data_dir, "dataset directory")->required();
  trc->add_option("--split", split, "dataset split");
  trc->add_option("--instance-id", instance_id, "index into the split")->required();
  trc->add_option("--supervision", supervision, "oracle, navigator or mixed");
  trc->add_option("--out", csv_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    for (auto* sub : {gen, tr, ab}) {
      if (sub->parsed()) common.overrides = sub->remaining();
    }
    if (gen->parsed()) return cmd_gen(common, out);
    if (tr->parsed()) return cmd_train(common, data_dir, out);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, split, supervision, baseline, threshold, eval_seed, csv_out);
    if (ab->parsed()) return cmd_ablate(common, data_dir, out);
    if (trc->parsed()) return cmd_trace(checkpoint, data_dir, split, instance_id, supervision, csv_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
