#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <thread>

#include <json.hpp>

#include "fedet/federation.hpp"

namespace fedet {

using json = nlohmann::ordered_json;

// --- experiment configuration -------------------------------------------------

struct StreamConfig {
  int64_t seq_len = 6;
  int64_t samples_per_class_per_client = 12;
  int64_t validation_per_class = 24;
  int64_t public_per_class = 12;
  int64_t class_budget = 64;       // generator-supported classes
  double cluster_separation = 4.0; // scale of the class means
  double cluster_sigma = 0.3;      // within-class feature noise
};

struct ExperimentConfig {
  BackboneConfig backbone;
  int64_t groups = 2;            // J
  int64_t clients = 4;           // K
  int64_t bottleneck = 4;        // b
  int64_t memory_capacity = 16;  // |S|
  double store_ratio = 1.0;      // gamma
  Tick window = 3;               // W, logical ticks
  int64_t rounds_per_task = 3;
  int64_t clients_per_round = 2;
  double class_visibility = 1.0;  // fraction of a task's classes per client
  int64_t classes_per_task = 2;
  int64_t task_count = 3;
  int64_t distill_size = 32;
  int64_t aux_size = 32;
  double aug_sigma = 0.1;
  OptimizerSettings temp_opt;
  OptimizerSettings local_opt;
  OptimizerSettings global_opt;
  Activation activation = Activation::kGelu;
  uint64_t seed = 1;
  bool threaded = false;
  int64_t threads = 0;  // 0: hardware concurrency
  StreamConfig stream;

  void validate() const {
    backbone.validate();
    FEDET_CHECK(groups >= 1, "config: groups must be >= 1");
    FEDET_CHECK(clients >= 1, "config: clients must be >= 1");
    FEDET_CHECK(bottleneck >= 1 && bottleneck < backbone.hidden,
                "config: bottleneck must be in [1, hidden)");
    FEDET_CHECK(clients_per_round >= 1 && clients_per_round <= clients,
                "config: clients_per_round must be in [1, clients]");
    FEDET_CHECK(class_visibility > 0.0 && class_visibility <= 1.0,
                "config: class_visibility must be in (0, 1]");
    FEDET_CHECK(store_ratio > 0.0 && store_ratio <= 1.0,
                "config: store_ratio must be in (0, 1]");
    FEDET_CHECK(classes_per_task >= 1 && task_count >= 1,
                "config: schedule must contain work");
    FEDET_CHECK(classes_per_task * task_count <= stream.class_budget,
                "config: schedule wants " << classes_per_task * task_count
                                          << " classes, generator budget is "
                                          << stream.class_budget);
    FEDET_CHECK(memory_capacity >= classes_per_task * task_count,
                "config: memory capacity " << memory_capacity
                                           << " below total class count");
    FEDET_CHECK(window >= 1, "config: window must be >= 1 tick");
    FEDET_CHECK(stream.seq_len >= 1 && stream.seq_len <= backbone.max_seq_len,
                "config: stream seq_len must fit the backbone");
  }

  int64_t total_classes() const { return classes_per_task * task_count; }

  json to_json() const;
  static ExperimentConfig from_json(const json& j);
};

namespace detail {

inline json opt_to_json(const OptimizerSettings& o) {
  return json{{"learning_rate", o.learning_rate},
              {"max_steps", o.max_steps},
              {"batch_size", o.batch_size},
              {"stop_delta", o.stop_delta},
              {"stop_window", o.stop_window}};
}

inline OptimizerSettings opt_from_json(const json& j) {
  OptimizerSettings o;
  o.learning_rate = j.at("learning_rate").get<double>();
  o.max_steps = j.at("max_steps").get<int64_t>();
  o.batch_size = j.at("batch_size").get<int64_t>();
  o.stop_delta = j.value("stop_delta", 0.0);
  o.stop_window = j.value("stop_window", static_cast<int64_t>(0));
  return o;
}

}  // namespace detail

inline json ExperimentConfig::to_json() const {
  return json{
      {"backbone",
       {{"depth", backbone.depth},
        {"hidden", backbone.hidden},
        {"heads", backbone.heads},
        {"ff_width", backbone.ff_width},
        {"max_seq_len", backbone.max_seq_len},
        {"feature_dim", backbone.feature_dim},
        {"seed", backbone.seed}}},
      {"groups", groups},
      {"clients", clients},
      {"bottleneck", bottleneck},
      {"memory_capacity", memory_capacity},
      {"store_ratio", store_ratio},
      {"window", window},
      {"rounds_per_task", rounds_per_task},
      {"clients_per_round", clients_per_round},
      {"class_visibility", class_visibility},
      {"classes_per_task", classes_per_task},
      {"task_count", task_count},
      {"distill_size", distill_size},
      {"aux_size", aux_size},
      {"aug_sigma", aug_sigma},
      {"temp_opt", detail::opt_to_json(temp_opt)},
      {"local_opt", detail::opt_to_json(local_opt)},
      {"global_opt", detail::opt_to_json(global_opt)},
      {"activation", activation == Activation::kGelu ? "gelu" : "relu"},
      {"seed", seed},
      {"threaded", threaded},
      {"threads", threads},
      {"stream",
       {{"seq_len", stream.seq_len},
        {"samples_per_class_per_client", stream.samples_per_class_per_client},
        {"validation_per_class", stream.validation_per_class},
        {"public_per_class", stream.public_per_class},
        {"class_budget", stream.class_budget},
        {"cluster_separation", stream.cluster_separation},
        {"cluster_sigma", stream.cluster_sigma}}}};
}

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  const auto& b = j.at("backbone");
  c.backbone.depth = b.at("depth").get<int64_t>();
  c.backbone.hidden = b.at("hidden").get<int64_t>();
  c.backbone.heads = b.at("heads").get<int64_t>();
  c.backbone.ff_width = b.at("ff_width").get<int64_t>();
  c.backbone.max_seq_len = b.at("max_seq_len").get<int64_t>();
  c.backbone.feature_dim = b.at("feature_dim").get<int64_t>();
  c.backbone.seed = b.at("seed").get<uint64_t>();
  c.groups = j.at("groups").get<int64_t>();
  c.clients = j.at("clients").get<int64_t>();
  c.bottleneck = j.at("bottleneck").get<int64_t>();
  c.memory_capacity = j.at("memory_capacity").get<int64_t>();
  c.store_ratio = j.value("store_ratio", 1.0);
  c.window = j.at("window").get<int64_t>();
  c.rounds_per_task = j.at("rounds_per_task").get<int64_t>();
  c.clients_per_round = j.at("clients_per_round").get<int64_t>();
  c.class_visibility = j.value("class_visibility", 1.0);
  c.classes_per_task = j.at("classes_per_task").get<int64_t>();
  c.task_count = j.at("task_count").get<int64_t>();
  c.distill_size = j.value("distill_size", static_cast<int64_t>(32));
  c.aux_size = j.value("aux_size", static_cast<int64_t>(32));
  c.aug_sigma = j.value("aug_sigma", 0.1);
  if (j.contains("temp_opt")) c.temp_opt = detail::opt_from_json(j.at("temp_opt"));
  if (j.contains("local_opt")) c.local_opt = detail::opt_from_json(j.at("local_opt"));
  if (j.contains("global_opt"))
    c.global_opt = detail::opt_from_json(j.at("global_opt"));
  std::string act = j.value("activation", std::string("gelu"));
  FEDET_CHECK(act == "gelu" || act == "relu",
              "config: unknown activation '" << act << "'");
  c.activation = act == "gelu" ? Activation::kGelu : Activation::kRelu;
  c.seed = j.at("seed").get<uint64_t>();
  c.threaded = j.value("threaded", false);
  c.threads = j.value("threads", static_cast<int64_t>(0));
  if (j.contains("stream")) {
    const auto& s = j.at("stream");
    c.stream.seq_len = s.value("seq_len", c.stream.seq_len);
    c.stream.samples_per_class_per_client =
        s.value("samples_per_class_per_client", c.stream.samples_per_class_per_client);
    c.stream.validation_per_class =
        s.value("validation_per_class", c.stream.validation_per_class);
    c.stream.public_per_class = s.value("public_per_class", c.stream.public_per_class);
    c.stream.class_budget = s.value("class_budget", c.stream.class_budget);
    c.stream.cluster_separation =
        s.value("cluster_separation", c.stream.cluster_separation);
    c.stream.cluster_sigma = s.value("cluster_sigma", c.stream.cluster_sigma);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  FEDET_CHECK(in.good(), "cannot open config file " << path.string());
  json j;
  in >> j;
  return ExperimentConfig::from_json(j);
}

// --- synthetic class-incremental stream ----------------------------------------

// Task t introduces classes [t*classes_per_task, (t+1)*classes_per_task).
// Each class is a seeded Gaussian cluster in feature space, lifted to a
// seq_len x feature_dim matrix (per-position noise around the class mean).
// Client shards draw the configured fraction of the task's classes, per
// client per task, which makes the per-client label distributions non-i.i.d.
class SyntheticStream {
public:
  SyntheticStream(const ExperimentConfig& cfg) : cfg_(cfg) {}

  std::vector<ClassId> task_classes(int64_t t) const {
    std::vector<ClassId> out;
    for (int64_t i = 0; i < cfg_.classes_per_task; ++i)
      out.push_back(static_cast<ClassId>(t * cfg_.classes_per_task + i));
    return out;
  }

  // visible classes for one client in one task (drawn per client per task)
  std::vector<ClassId> client_classes(int64_t t, uint32_t client) const {
    auto all = task_classes(t);
    auto visible = static_cast<size_t>(
        cfg_.class_visibility * static_cast<double>(all.size()));
    if (visible < 1) visible = 1;
    if (visible >= all.size()) return all;
    Rng rng(derive_seed(cfg_.seed, 0x515, derive_seed(static_cast<uint64_t>(t), client)));
    rng.shuffle(all);
    all.resize(visible);
    std::sort(all.begin(), all.end());
    return all;
  }

  std::vector<Sample> client_task_samples(int64_t t, uint32_t client) const {
    std::vector<Sample> out;
    for (ClassId c : client_classes(t, client)) {
      Rng rng(derive_seed(cfg_.seed, 0xda7a, derive_seed(c, client)));
      for (int64_t i = 0; i < cfg_.stream.samples_per_class_per_client; ++i)
        out.push_back(draw(c, rng));
    }
    return out;
  }

  // fixed balanced validation split, generated once per class, never trained on
  std::vector<Sample> validation(ClassId c) const {
    Rng rng(derive_seed(cfg_.seed, 0x7e57, c));
    std::vector<Sample> out;
    for (int64_t i = 0; i < cfg_.stream.validation_per_class; ++i)
      out.push_back(draw(c, rng));
    return out;
  }

  // the server's "similar domain" public data
  std::vector<Sample> public_samples(ClassId c) const {
    Rng rng(derive_seed(cfg_.seed, 0x9b1c, c));
    std::vector<Sample> out;
    for (int64_t i = 0; i < cfg_.stream.public_per_class; ++i)
      out.push_back(draw(c, rng));
    return out;
  }

private:
  std::vector<double> class_mean(ClassId c) const {
    Rng rng(derive_seed(cfg_.seed, 0xc1a5, c));
    std::vector<double> mean(static_cast<size_t>(cfg_.backbone.feature_dim));
    for (auto& v : mean) v = rng.gaussian(0.0, cfg_.stream.cluster_separation);
    return mean;
  }

  Sample draw(ClassId c, Rng& rng) const {
    auto mean = class_mean(c);
    const int64_t seq = cfg_.stream.seq_len;
    const int64_t feat = cfg_.backbone.feature_dim;
    std::vector<double> d(static_cast<size_t>(seq * feat));
    for (int64_t p = 0; p < seq; ++p)
      for (int64_t f = 0; f < feat; ++f)
        d[static_cast<size_t>(p * feat + f)] =
            mean[static_cast<size_t>(f)] + rng.gaussian(0.0, cfg_.stream.cluster_sigma);
    return {Tensor::from_data({seq, feat}, std::move(d)), c};
  }

  ExperimentConfig cfg_;
};

// --- metrics --------------------------------------------------------------------

struct MetricsReport {
  std::string mode;  // "fedet" or "finetune"
  std::vector<std::vector<double>> accuracy_matrix;  // [after_task][eval_task]
  std::vector<double> pre_task_accuracy;  // on each task before learning it
  double old_class_accuracy = 0.0;        // first task's classes, after the last task
  double average_accuracy = 0.0;          // all seen classes, after the last task
  int64_t upload_bytes = 0;
  int64_t broadcast_bytes = 0;
  int64_t total_comm_bytes = 0;
  int64_t per_upload_params_config = 0;    // cost formula at the full class count
  int64_t per_upload_params_measured = 0;  // max float payload actually sent
  int64_t backbone_params = 0;
  int64_t pool_params = 0;
  double comm_ratio_config = 0.0;
  double comm_ratio_measured = 0.0;
  double wall_seconds = 0.0;  // console only, never serialized
  EventLog events;
  ExperimentConfig config;

  json summary_json() const {
    json j;
    j["mode"] = mode;
    j["average_accuracy"] = average_accuracy;
    j["old_class_accuracy"] = old_class_accuracy;
    j["pre_task_accuracy"] = pre_task_accuracy;
    j["accuracy_matrix"] = accuracy_matrix;
    j["upload_bytes"] = upload_bytes;
    j["broadcast_bytes"] = broadcast_bytes;
    j["total_comm_bytes"] = total_comm_bytes;
    j["per_upload_params_config"] = per_upload_params_config;
    j["per_upload_params_measured"] = per_upload_params_measured;
    j["backbone_params"] = backbone_params;
    j["pool_params"] = pool_params;
    j["comm_ratio_config"] = comm_ratio_config;
    j["comm_ratio_measured"] = comm_ratio_measured;
    j["config"] = config.to_json();
    return j;
  }
};

// --- experiment runner ------------------------------------------------------------

namespace detail {

struct RoundResult {
  uint32_t client_id;
  std::vector<GroupUpload> uploads;
  EventLog log;
};

}  // namespace detail

class ExperimentRunner {
public:
  ExperimentRunner(const ExperimentConfig& cfg, bool finetune_baseline)
      : cfg_(cfg),
        baseline_(finetune_baseline),
        backbone_(cfg.backbone),
        stream_(cfg) {
    cfg_.validate();

    auto pool = EnhancerPool::fresh(cfg_.groups, backbone_, cfg_.bottleneck,
                                    derive_seed(cfg_.seed, 0x9001));
    ServerConfig scfg;
    scfg.window = cfg_.window;
    scfg.aux_size = cfg_.aux_size;
    scfg.global_opt = cfg_.global_opt;
    scfg.activation = cfg_.activation;
    scfg.finetune_baseline = baseline_;
    scfg.seed = derive_seed(cfg_.seed, 0x5e4);
    server_ = std::make_unique<Server>(backbone_, pool, scfg);

    for (int64_t k = 0; k < cfg_.clients; ++k) {
      ClientConfig ccfg;
      ccfg.bottleneck = cfg_.bottleneck;
      ccfg.memory_capacity = cfg_.memory_capacity;
      ccfg.store_ratio = cfg_.store_ratio;
      ccfg.aug_sigma = cfg_.aug_sigma;
      ccfg.distill_size = cfg_.distill_size;
      ccfg.temp_opt = cfg_.temp_opt;
      ccfg.consolidate_opt = cfg_.local_opt;
      ccfg.activation = cfg_.activation;
      ccfg.finetune_baseline = baseline_;
      ccfg.seed = derive_seed(cfg_.seed, 0xc11e7, static_cast<uint64_t>(k));
      clients_.push_back(std::make_unique<Client>(static_cast<uint32_t>(k),
                                                  backbone_, pool, ccfg));
    }
  }

  MetricsReport run() {
    auto started = std::chrono::steady_clock::now();
    MetricsReport report;
    report.mode = baseline_ ? "finetune" : "fedet";
    report.config = cfg_;

    for (int64_t t = 0; t < cfg_.task_count; ++t) {
      auto classes = stream_.task_classes(t);
      for (ClassId c : classes)
        server_->register_public_class(c, stream_.public_samples(c));

      report.pre_task_accuracy.push_back(evaluate_task(t));

      for (int64_t r = 0; r < cfg_.rounds_per_task; ++r) {
        run_round(t, r);
        for (const auto& msg : server_->advance_to(now_, log_)) deliver(msg);
        ++now_;
      }
      while (server_->has_pending()) {
        for (const auto& msg : server_->advance_to(now_, log_)) deliver(msg);
        ++now_;
      }

      std::vector<double> row;
      for (int64_t t2 = 0; t2 <= t; ++t2) row.push_back(evaluate_task(t2));
      report.accuracy_matrix.push_back(std::move(row));
    }

    const auto& last = report.accuracy_matrix.back();
    report.old_class_accuracy = last.front();
    double sum = 0.0;
    for (double a : last) sum += a;
    report.average_accuracy = sum / static_cast<double>(last.size());

    report.upload_bytes = log_.bytes_for("upload");
    report.broadcast_bytes = log_.bytes_for("broadcast_install") +
                             log_.bytes_for("broadcast_queue");
    report.total_comm_bytes = report.upload_bytes + report.broadcast_bytes;
    report.per_upload_params_config =
        comm_cost(cfg_.backbone.depth, cfg_.backbone.hidden, cfg_.bottleneck,
                  cfg_.total_classes());
    report.per_upload_params_measured = max_upload_params_;
    report.backbone_params = FrozenBackbone::expected_parameter_count(cfg_.backbone);
    report.pool_params =
        cfg_.groups * comm_cost(cfg_.backbone.depth, cfg_.backbone.hidden,
                                cfg_.bottleneck, 0) +
        cfg_.backbone.hidden * cfg_.total_classes();
    const double total_params =
        static_cast<double>(report.backbone_params + report.pool_params);
    report.comm_ratio_config =
        static_cast<double>(report.per_upload_params_config) / total_params;
    report.comm_ratio_measured =
        static_cast<double>(report.per_upload_params_measured) / total_params;
    report.events = log_;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    return report;
  }

  const Server& server() const { return *server_; }

private:
  void run_round(int64_t task, int64_t round) {
    // seeded client selection, recorded for replay
    std::vector<uint32_t> ids(static_cast<size_t>(cfg_.clients));
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<uint32_t>(i);
    Rng rng(derive_seed(cfg_.seed, 0x5e1ec7,
                        derive_seed(static_cast<uint64_t>(task),
                                    static_cast<uint64_t>(round))));
    rng.shuffle(ids);
    ids.resize(static_cast<size_t>(cfg_.clients_per_round));
    std::sort(ids.begin(), ids.end());
    {
      std::string detail = "clients=";
      for (size_t i = 0; i < ids.size(); ++i) {
        if (i) detail += '|';
        detail += std::to_string(ids[i]);
      }
      log_.push(now_, "select", -1, -1, 0, detail);
    }

    auto classes = stream_.task_classes(task);
    std::vector<detail::RoundResult> results(ids.size());

    auto work = [&](size_t slot) {
      auto& res = results[slot];
      res.client_id = ids[slot];
      auto shard = stream_.client_task_samples(task, ids[slot]);
      res.uploads = clients_[ids[slot]]->run_task(
          shard, classes, static_cast<uint32_t>(task), now_, res.log);
    };

    if (cfg_.threaded) {
      std::vector<std::thread> threads;
      threads.reserve(ids.size());
      for (size_t i = 0; i < ids.size(); ++i) threads.emplace_back(work, i);
      for (auto& th : threads) th.join();
    } else {
      for (size_t i = 0; i < ids.size(); ++i) work(i);
    }

    // merge in client-id order: threaded and reference runs coincide
    for (auto& res : results) {
      log_.append(res.log);
      for (auto& up : res.uploads) {
        auto dg = deserialize_group(up.group_bytes);
        max_upload_params_ =
            std::max(max_upload_params_, dg.group.trainable_parameter_count());
        server_->ingest(std::move(up), now_, log_);
      }
    }
  }

  void deliver(const BroadcastMessage& msg) {
    for (auto& cl : clients_) {
      if (cl->online)
        cl->receive_broadcast(msg, now_, log_);
      else
        log_.push(now_, "broadcast_queue", static_cast<int64_t>(cl->id()),
                  msg.group_id, msg.wire_size(), "offline");
    }
  }

  // accuracy over the validation split of one task's classes, predicted by
  // the server's model: route through the selector, then the group head
  double evaluate_task(int64_t t) {
    int64_t hits = 0, total = 0;
    for (ClassId c : stream_.task_classes(t)) {
      for (const auto& s : stream_.validation(c)) {
        ++total;
        if (server_->selector().prototypes().empty()) continue;
        uint32_t g = server_->selector().select_group(s.features, server_->pool());
        const auto& group = server_->pool().group(g);
        if (group.empty()) continue;
        auto logits = group_forward(s, group, backbone_, cfg_.activation);
        int64_t best = 0;
        for (int64_t i = 1; i < logits.numel(); ++i)
          if (logits.at(i) > logits.at(best)) best = i;
        if (group.domain[static_cast<size_t>(best)] == s.label) ++hits;
      }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  }

  ExperimentConfig cfg_;
  bool baseline_;
  FrozenBackbone backbone_;
  SyntheticStream stream_;
  std::unique_ptr<Server> server_;
  std::vector<std::unique_ptr<Client>> clients_;
  EventLog log_;
  Tick now_ = 0;
  int64_t max_upload_params_ = 0;
};

inline MetricsReport run_fedet(const ExperimentConfig& cfg) {
  return ExperimentRunner(cfg, /*finetune_baseline=*/false).run();
}

inline MetricsReport run_finetune_baseline(const ExperimentConfig& cfg) {
  return ExperimentRunner(cfg, /*finetune_baseline=*/true).run();
}

// --- report files -----------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Writes metrics.csv (the accuracy matrix), summary.json and events.csv.
inline void write_report(const MetricsReport& report,
                         const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  {
    std::ofstream os(out_dir / "metrics.csv");
    FEDET_CHECK(os.good(), "cannot write " << (out_dir / "metrics.csv").string());
    os << "after_task";
    for (size_t t = 0; t < report.accuracy_matrix.size(); ++t)
      os << ",task_" << t;
    os << '\n';
    for (size_t row = 0; row < report.accuracy_matrix.size(); ++row) {
      os << row;
      for (size_t col = 0; col < report.accuracy_matrix.size(); ++col) {
        os << ',';
        if (col < report.accuracy_matrix[row].size())
          os << detail::format_double(report.accuracy_matrix[row][col]);
      }
      os << '\n';
    }
  }
  {
    std::ofstream os(out_dir / "summary.json");
    FEDET_CHECK(os.good(), "cannot write " << (out_dir / "summary.json").string());
    os << report.summary_json().dump(2) << '\n';
  }
  {
    std::ofstream os(out_dir / "events.csv");
    FEDET_CHECK(os.good(), "cannot write " << (out_dir / "events.csv").string());
    report.events.write_csv(os);
  }
}

}  // namespace fedet
