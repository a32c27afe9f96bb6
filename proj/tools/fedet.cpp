// fedet: desk-scale federated class-incremental learning simulator.
//
// Verbs:
//   run       end-to-end FedET experiment from a config file
//   baseline  naive fine-tuning baseline on the same pipeline
//   gradcheck finite-difference audit of enhancer/head gradients
//   cost      updated-parameter and FLOP accounting tables
//   replay    re-run an experiment from a recorded summary.json

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fedet/fedet.hpp"

namespace {

using namespace fedet;

std::string with_thousands(int64_t v) {
  std::string raw = std::to_string(v);
  std::string out;
  int count = 0;
  for (auto it = raw.rbegin(); it != raw.rend(); ++it) {
    if (count && count % 3 == 0) out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  return {out.rbegin(), out.rend()};
}

void apply_overrides(ExperimentConfig& cfg, std::optional<uint64_t> seed,
                     std::optional<int64_t> threads) {
  if (seed) cfg.seed = *seed;
  if (threads) {
    cfg.threaded = *threads > 0;
    cfg.threads = *threads;
  }
}

void print_report(const MetricsReport& report) {
  std::printf("mode: %s\n", report.mode.c_str());
  std::printf("average_accuracy: %.4f\n", report.average_accuracy);
  std::printf("old_class_accuracy: %.4f\n", report.old_class_accuracy);
  std::printf("total_comm_bytes: %" PRId64 "\n", report.total_comm_bytes);
  std::printf("per_upload_params_config: %" PRId64 "\n",
              report.per_upload_params_config);
  std::printf("per_upload_params_measured: %" PRId64 "\n",
              report.per_upload_params_measured);
  std::printf("comm_ratio_config: %.6f\n", report.comm_ratio_config);
  std::printf("comm_ratio_measured: %.6f\n", report.comm_ratio_measured);
  std::printf("wall_seconds: %.2f\n", report.wall_seconds);
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<uint64_t> seed, std::optional<int64_t> threads,
            bool baseline) {
  auto cfg = load_config(config_path);
  apply_overrides(cfg, seed, threads);
  auto report = baseline ? run_finetune_baseline(cfg) : run_fedet(cfg);
  write_report(report, out_dir);
  print_report(report);
  std::printf("outputs: %s/{metrics.csv,summary.json,events.csv}\n",
              out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& config_path, double step, double tol,
                  std::optional<uint64_t> seed) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;

  FrozenBackbone backbone(cfg.backbone);
  Rng rng(derive_seed(cfg.seed, 0x6c));

  // a group with every parameter family non-trivial, so no gradient path is
  // silently zero
  EnhancerGroup group;
  group.group_id = 0;
  const int64_t d = cfg.backbone.hidden, b = cfg.bottleneck;
  auto rand_tensor = [&](Shape shape, double scale) {
    std::vector<double> v(static_cast<size_t>(numel_of(shape)));
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return Tensor::from_data(std::move(shape), std::move(v), true);
  };
  for (int64_t i = 0; i < cfg.backbone.depth; ++i) {
    EnhancerParams e;
    e.w_down = rand_tensor({d, b}, 0.4);
    e.beta_down = rand_tensor({b}, 0.2);
    e.w_up = rand_tensor({b, d}, 0.4);
    e.beta_up = rand_tensor({d}, 0.2);
    group.enhancers.push_back(std::move(e));
  }
  group.domain = {0, 1, 2, 3};
  group.head = rand_tensor({d, 4}, 0.5);

  const int64_t batch = 2;
  std::vector<Sample> samples;
  std::vector<std::vector<double>> targets;
  for (int64_t i = 0; i < batch; ++i) {
    std::vector<double> feat(static_cast<size_t>(cfg.stream.seq_len *
                                                 cfg.backbone.feature_dim));
    for (auto& v : feat) v = rng.gaussian();
    samples.push_back(
        {Tensor::from_data({cfg.stream.seq_len, cfg.backbone.feature_dim},
                           std::move(feat)),
         0});
    std::vector<double> t(4);
    for (auto& v : t) v = rng.uniform(-1.0, 1.0);
    targets.push_back(std::move(t));
  }

  auto params = group.parameters();
  auto f = [&]() -> Tensor {
    std::vector<Tensor> losses;
    for (size_t i = 0; i < samples.size(); ++i)
      losses.push_back(double_distill_loss(
          group_forward(samples[i], group, backbone, cfg.activation),
          targets[i]));
    Tensor loss = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
    return scale(loss, 1.0 / static_cast<double>(losses.size()));
  };

  int64_t total = 0;
  for (const auto& p : params) total += p.numel();
  std::printf("auditing %" PRId64 " parameters (depth=%" PRId64 ", d=%" PRId64
              ", b=%" PRId64 ", |domain|=4), step=%g\n",
              total, cfg.backbone.depth, d, b, step);

  auto report = grad_check(f, params, step);
  std::printf("max_relative_error: %.3e (param %zu entry %" PRId64 ")\n",
              report.max_rel_err, report.worst_param, report.worst_entry);
  bool ok = report.max_rel_err < tol;
  std::printf("gradcheck: %s (tolerance %g)\n", ok ? "PASS" : "FAIL", tol);
  return ok ? 0 : 1;
}

int cmd_cost(const std::string& config_path, std::optional<int64_t> depth,
             std::optional<int64_t> hidden, std::optional<int64_t> bottleneck,
             std::optional<int64_t> labels, std::optional<int64_t> seq_len) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  const int64_t dep = depth.value_or(cfg.backbone.depth);
  const int64_t d = hidden.value_or(cfg.backbone.hidden);
  const int64_t b = bottleneck.value_or(cfg.bottleneck);
  const int64_t lab = labels.value_or(cfg.total_classes());
  const int64_t seq = seq_len.value_or(cfg.stream.seq_len);

  const int64_t per_enhancer = comm_cost(1, d, b, 0);
  const int64_t group_params = comm_cost(dep, d, b, lab);
  const int64_t flops = enhancer_flops(d, b, seq);

  std::printf("cost model (depth=%" PRId64 ", hidden=%" PRId64
              ", bottleneck=%" PRId64 ", labels=%" PRId64 ")\n",
              dep, d, b, lab);
  std::printf("per_enhancer_params: %" PRId64 " (%s)\n", per_enhancer,
              with_thousands(per_enhancer).c_str());
  std::printf("updated_params: %" PRId64 " (%s)\n", group_params,
              with_thousands(group_params).c_str());
  std::printf("enhancer_flops(seq_len=%" PRId64 "): %" PRId64 " (%s)\n", seq,
              flops, with_thousands(flops).c_str());
  std::printf("wire_bytes_per_group: %" PRId64 "\n",
              serialized_group_size(dep, d, b, lab > 0 ? lab : 1));
  return 0;
}

int cmd_replay(const std::string& summary_path, const std::string& out_dir,
               std::optional<int64_t> threads) {
  std::ifstream in(summary_path);
  FEDET_CHECK(in.good(), "cannot open summary file " << summary_path);
  json recorded;
  in >> recorded;
  FEDET_CHECK(recorded.contains("config"),
              "summary has no embedded config; cannot replay");
  auto cfg = ExperimentConfig::from_json(recorded.at("config"));
  apply_overrides(cfg, std::nullopt, threads);
  const bool baseline = recorded.value("mode", std::string("fedet")) == "finetune";

  auto report = baseline ? run_finetune_baseline(cfg) : run_fedet(cfg);
  write_report(report, out_dir);
  print_report(report);

  auto replayed = report.summary_json();
  auto original = recorded;
  original.erase("config");
  auto stripped = replayed;
  stripped.erase("config");
  bool match = true;
  for (auto it = original.begin(); it != original.end(); ++it)
    match = match && stripped.contains(it.key()) && stripped.at(it.key()) == it.value();
  std::printf("replay_matches_recorded_metrics: %s\n", match ? "yes" : "no");
  return match ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedET: federated class-incremental learning with enhancer groups"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", summary_path;
  std::optional<uint64_t> seed;
  std::optional<int64_t> threads;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config_path, "config file (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--threads", threads,
                    "run clients on threads (0 = reference mode)");
  };

  auto* run = app.add_subcommand("run", "run a FedET experiment");
  add_common(run, true);
  auto* baseline = app.add_subcommand("baseline", "run the fine-tuning baseline");
  add_common(baseline, true);

  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "audit gradients by central differences");
  gradcheck->add_option("--config", config_path, "config file (JSON)");
  double gc_step = 1e-5, gc_tol = 1e-4;
  gradcheck->add_option("--step", gc_step, "finite-difference step");
  gradcheck->add_option("--tol", gc_tol, "pass threshold on max relative error");
  gradcheck->add_option("--seed", seed, "override the config seed");

  auto* cost = app.add_subcommand("cost", "print the communication/compute cost tables");
  cost->add_option("--config", config_path, "config file (JSON)");
  std::optional<int64_t> c_depth, c_hidden, c_bottleneck, c_labels, c_seq;
  cost->add_option("--depth", c_depth, "enhancers per group (D)");
  cost->add_option("--hidden", c_hidden, "hidden width (d)");
  cost->add_option("--bottleneck", c_bottleneck, "bottleneck width (b)");
  cost->add_option("--labels", c_labels, "head label count");
  cost->add_option("--seq-len", c_seq, "sequence length for the FLOP table");

  auto* replay = app.add_subcommand("replay", "re-run from a recorded summary.json");
  replay->add_option("--summary", summary_path, "summary.json from a previous run")
      ->required();
  replay->add_option("--out", out_dir, "output directory");
  replay->add_option("--threads", threads, "run clients on threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, seed, threads, false);
    if (baseline->parsed()) return cmd_run(config_path, out_dir, seed, threads, true);
    if (gradcheck->parsed()) return cmd_gradcheck(config_path, gc_step, gc_tol, seed);
    if (cost->parsed())
      return cmd_cost(config_path, c_depth, c_hidden, c_bottleneck, c_labels, c_seq);
    if (replay->parsed()) return cmd_replay(summary_path, out_dir, threads);
  } catch (const fedet::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
