#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fedet/distill.hpp"
#include "fedet/memory.hpp"
#include "fedet/wire.hpp"

namespace fedet {

// Logical time: one tick per federation round; the waiting window W is
// measured in ticks.
using Tick = int64_t;

// --- event log ------------------------------------------------------------------

struct EventRow {
  Tick tick = 0;
  std::string event;
  int64_t client_id = -1;  // -1: not applicable
  int64_t group_id = -1;
  int64_t bytes = 0;
  std::string detail;
};

class EventLog {
public:
  void push(Tick tick, std::string event, int64_t client_id, int64_t group_id,
            int64_t bytes, std::string detail = {}) {
    rows_.push_back({tick, std::move(event), client_id, group_id, bytes,
                     std::move(detail)});
  }

  void append(const EventLog& other) {
    rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
  }

  const std::vector<EventRow>& rows() const { return rows_; }

  int64_t total_bytes() const {
    int64_t n = 0;
    for (const auto& r : rows_) n += r.bytes;
    return n;
  }

  int64_t bytes_for(std::string_view event) const {
    int64_t n = 0;
    for (const auto& r : rows_)
      if (r.event == event) n += r.bytes;
    return n;
  }

  void write_csv(std::ostream& os) const {
    os << "tick,event,client_id,group_id,bytes,detail\n";
    for (const auto& r : rows_)
      os << r.tick << ',' << r.event << ',' << r.client_id << ',' << r.group_id
         << ',' << r.bytes << ',' << r.detail << '\n';
  }

private:
  std::vector<EventRow> rows_;
};

// --- wire envelopes ----------------------------------------------------------

// Client -> server message: the serialized group plus the task entropy and
// the label distribution of the client's private data for this group.
struct GroupUpload {
  uint32_t client_id = 0;
  uint32_t task_id = 0;
  uint32_t group_id = 0;
  std::vector<uint8_t> group_bytes;
  double entropy = 0.0;
  LabelDistribution p_y;

  // Envelope: "FETU", version u16, client u32, task u32, group u32,
  // entropy f64, |P_y| u32, (class u32, prob f64)*, group length u32,
  // group bytes, crc32 u32.
  std::vector<uint8_t> encode() const {
    detail::WireWriter w;
    w.bytes("FETU", 4);
    w.u16(kWireVersion);
    w.u32(client_id);
    w.u32(task_id);
    w.u32(group_id);
    w.u32(static_cast<uint32_t>(std::bit_cast<uint64_t>(entropy)));
    w.u32(static_cast<uint32_t>(std::bit_cast<uint64_t>(entropy) >> 32));
    w.u32(static_cast<uint32_t>(p_y.probs().size()));
    for (const auto& [c, p] : p_y.probs()) {
      w.u32(c);
      uint64_t bits = std::bit_cast<uint64_t>(p);
      w.u32(static_cast<uint32_t>(bits));
      w.u32(static_cast<uint32_t>(bits >> 32));
    }
    w.u32(static_cast<uint32_t>(group_bytes.size()));
    w.buf.insert(w.buf.end(), group_bytes.begin(), group_bytes.end());
    w.u32(crc32(w.buf));
    return std::move(w.buf);
  }

  static GroupUpload decode(std::span<const uint8_t> bytes) {
    FEDET_CHECK(bytes.size() >= 8 && std::memcmp(bytes.data(), "FETU", 4) == 0,
                "upload: bad magic");
    FEDET_CHECK(bytes.size() >= 4,
                "upload: truncated");
    const uint32_t stored = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
    FEDET_CHECK(stored == crc32(bytes.subspan(0, bytes.size() - 4)),
                "upload: CRC mismatch");

    detail::WireReader r{bytes, 4};
    GroupUpload out;
    FEDET_CHECK(r.u16("version") == kWireVersion, "upload: unsupported version");
    out.client_id = r.u32("client id");
    out.task_id = r.u32("task id");
    out.group_id = r.u32("group id");
    uint64_t ebits = r.u32("entropy lo");
    ebits |= static_cast<uint64_t>(r.u32("entropy hi")) << 32;
    out.entropy = std::bit_cast<double>(ebits);
    uint32_t n_py = r.u32("label distribution size");
    std::map<ClassId, double> probs;
    for (uint32_t i = 0; i < n_py; ++i) {
      ClassId c = r.u32("class id");
      uint64_t bits = r.u32("prob lo");
      bits |= static_cast<uint64_t>(r.u32("prob hi")) << 32;
      probs[c] = std::bit_cast<double>(bits);
    }
    out.p_y = LabelDistribution::from_probs(std::move(probs));
    uint32_t glen = r.u32("group length");
    r.need(glen, "group bytes");
    out.group_bytes.assign(bytes.begin() + static_cast<int64_t>(r.pos),
                           bytes.begin() + static_cast<int64_t>(r.pos + glen));
    return out;
  }

  int64_t wire_size() const { return static_cast<int64_t>(encode().size()); }
};

// Server -> clients message: the consolidated group plus the server's
// prototypes for the group's domain, so every client can route the classes
// it never observed locally.
struct BroadcastMessage {
  uint32_t group_id = 0;
  std::vector<uint8_t> group_bytes;
  std::vector<std::pair<ClassId, std::vector<double>>> prototypes;

  std::vector<uint8_t> encode() const {
    detail::WireWriter w;
    w.bytes("FETB", 4);
    w.u16(kWireVersion);
    w.u32(group_id);
    w.u32(static_cast<uint32_t>(group_bytes.size()));
    w.buf.insert(w.buf.end(), group_bytes.begin(), group_bytes.end());
    w.u32(static_cast<uint32_t>(prototypes.size()));
    for (const auto& [c, proto] : prototypes) {
      w.u32(c);
      w.u32(static_cast<uint32_t>(proto.size()));
      for (double v : proto) w.f32(v);
    }
    w.u32(crc32(w.buf));
    return std::move(w.buf);
  }

  int64_t wire_size() const { return static_cast<int64_t>(encode().size()); }
};

// --- client ---------------------------------------------------------------------

struct ClientConfig {
  int64_t bottleneck = 4;
  int64_t memory_capacity = 16;
  double store_ratio = 1.0;
  double aug_sigma = 0.1;
  int64_t distill_size = 32;
  OptimizerSettings temp_opt;
  OptimizerSettings consolidate_opt;
  Activation activation = Activation::kGelu;
  bool finetune_baseline = false;  // no memory, no distillation
  uint64_t seed = 0;
};

// One federated participant: its pool replica, selector, memory and the
// Local_ICL procedure. Clients are independent; distinct clients may run on
// distinct threads.
class Client {
public:
  Client(uint32_t id, const FrozenBackbone& backbone, EnhancerPool pool,
         ClientConfig config)
      : id_(id),
        backbone_(&backbone),
        pool_(std::move(pool)),
        selector_(backbone),
        memory_(config.memory_capacity, config.store_ratio),
        config_(std::move(config)) {}

  uint32_t id() const { return id_; }
  const EnhancerPool& pool() const { return pool_; }
  SelectModule& selector() { return selector_; }
  SampleMemory& memory() { return memory_; }

  // Local_ICL for one round of task `task_id`. `task_classes` is M^t, the
  // task's class set, stable across the task's rounds; labels outside it
  // must already be known to the selector. Returns one upload per touched
  // group (consolidated groups carry their new state, groups touched only
  // by already-learned classes re-upload their current state).
  std::vector<GroupUpload> run_task(std::span<const Sample> task,
                                    const std::vector<ClassId>& task_classes,
                                    uint32_t task_id, Tick now, EventLog& log) {
    if (task.empty()) return {};
    for (const auto& s : task) {
      bool in_task = std::find(task_classes.begin(), task_classes.end(),
                               s.label) != task_classes.end();
      FEDET_CHECK(in_task || selector_.knows(s.label),
                  "client " << id_ << ": class " << s.label
                            << " is neither known nor declared new");
    }

    // assign genuinely new classes (first round of the task) to one group
    std::vector<ClassId> locally_new;
    for (ClassId c : task_classes)
      if (!selector_.knows(c) &&
          std::find(locally_new.begin(), locally_new.end(), c) == locally_new.end())
        locally_new.push_back(c);
    std::sort(locally_new.begin(), locally_new.end());
    if (!locally_new.empty()) {
      uint32_t g = selector_.assign_new_classes(task, locally_new, pool_);
      log.push(now, "assign", id_, g, 0, detail_classes(locally_new));
    }

    // route every sample; task-class samples follow their assigned group
    std::map<uint32_t, std::vector<const Sample*>> lists;
    for (const auto& s : task) {
      bool in_task = std::find(task_classes.begin(), task_classes.end(),
                               s.label) != task_classes.end();
      uint32_t g;
      if (in_task) {
        g = selector_.group_of(s.label).value();
      } else {
        g = selector_.select_group(s.features, pool_);
        const auto& dom = pool_.group(g).domain;
        if (std::find(dom.begin(), dom.end(), s.label) == dom.end()) {
          log.push(now, "misroute", id_, g, 0, "class=" + std::to_string(s.label));
        }
      }
      lists[g].push_back(&s);
    }

    std::vector<GroupUpload> uploads;
    for (auto& [gid, list] : lists) {
      std::vector<Sample> task_samples;  // samples of M^t owned by this group
      std::vector<ClassId> t_classes;
      std::map<ClassId, int64_t> label_counts;
      for (const Sample* s : list) {
        label_counts[s->label]++;
        bool in_task = std::find(task_classes.begin(), task_classes.end(),
                                 s->label) != task_classes.end();
        if (in_task && selector_.group_of(s->label) == gid) {
          task_samples.push_back(*s);
          if (std::find(t_classes.begin(), t_classes.end(), s->label) ==
              t_classes.end())
            t_classes.push_back(s->label);
        }
      }
      std::sort(t_classes.begin(), t_classes.end());

      if (!task_samples.empty()) {
        if (config_.finetune_baseline)
          finetune_step(gid, task_samples, t_classes, task_id);
        else
          learn_and_consolidate(gid, task_samples, t_classes, task_id, now, log);
      }

      uploads.push_back(
          make_upload(gid, task_id, t_classes, label_counts, now, log));
    }
    return uploads;
  }

  void receive_broadcast(const BroadcastMessage& msg, Tick now, EventLog& log) {
    if (!online) {
      pending_.push_back(msg);
      return;
    }
    install_broadcast(msg, now, log);
  }

  // delivers broadcasts queued while offline
  void come_online(Tick now, EventLog& log) {
    online = true;
    for (const auto& msg : pending_) install_broadcast(msg, now, log);
    pending_.clear();
  }

  // Resolution for a sync_request: the server's full canonical state
  // replaces the local pool and selector mapping.
  void full_sync(const std::vector<BroadcastMessage>& all_groups, Tick now,
                 EventLog& log) {
    for (const auto& msg : all_groups) install_broadcast(msg, now, log);
    log.push(now, "full_sync", id_, -1, 0, "");
  }

  bool online = true;

private:
  static std::string detail_classes(const std::vector<ClassId>& cs) {
    std::string out = "classes=";
    for (size_t i = 0; i < cs.size(); ++i) {
      if (i) out += '|';
      out += std::to_string(cs[i]);
    }
    return out;
  }

  void learn_and_consolidate(uint32_t gid, std::span<const Sample> task_samples,
                             const std::vector<ClassId>& t_classes,
                             uint32_t task_id, Tick now, EventLog& log) {
    OptimizerSettings temp_opt = config_.temp_opt;
    temp_opt.seed = derive_seed(config_.seed, task_id * 8 + 1, gid);
    auto temp = train_temp_group(task_samples, t_classes, *backbone_,
                                 config_.bottleneck,
                                 derive_seed(config_.seed, task_id * 8 + 2, gid),
                                 temp_opt, config_.activation);

    memory_.store_exemplars(task_samples, *backbone_);

    // distillation set over the consolidated domain, restricted to classes
    // this client holds exemplars for (classes learned only via broadcasts
    // are left to the server's auxiliary distillation)
    std::vector<ClassId> cover;
    size_t domain_size = 0;
    for (ClassId c : pool_.group(gid).domain) {
      ++domain_size;
      if (memory_.has_class(c)) cover.push_back(c);
    }
    for (ClassId c : t_classes)
      if (std::find(cover.begin(), cover.end(), c) == cover.end()) {
        cover.push_back(c);
        ++domain_size;
      }
    if (cover.size() < domain_size)
      log.push(now, "partial_distill_cover", id_, gid, 0,
               "covered=" + std::to_string(cover.size()) + "/" +
                   std::to_string(domain_size));
    auto distill_set = memory_.build_distill_set(
        cover, config_.distill_size, config_.aug_sigma,
        derive_seed(config_.seed, task_id * 8 + 3, gid));

    OptimizerSettings copt = config_.consolidate_opt;
    copt.seed = derive_seed(config_.seed, task_id * 8 + 4, gid);
    auto merged = consolidate_local(pool_.group(gid), temp, distill_set,
                                    *backbone_, copt, config_.activation,
                                    nullptr, &cover);
    pool_.group(gid) = merged.clone(/*trainable=*/false);
    log.push(now, "consolidate_local", id_, gid, 0,
             "domain_size=" + std::to_string(merged.domain.size()));
  }

  void finetune_step(uint32_t gid, std::span<const Sample> task_samples,
                     const std::vector<ClassId>& t_classes, uint32_t task_id) {
    auto& group = pool_.group(gid);
    std::vector<ClassId> to_add;
    for (ClassId c : t_classes)
      if (std::find(group.domain.begin(), group.domain.end(), c) ==
          group.domain.end())
        to_add.push_back(c);
    EnhancerGroup work = to_add.empty() ? group.clone(true)
                                        : widen_group(group, to_add, true);
    if (work.empty()) return;
    OptimizerSettings opt = config_.temp_opt;
    opt.seed = derive_seed(config_.seed, task_id * 8 + 5, gid);
    train_cross_entropy(work, task_samples, *backbone_, opt, config_.activation);
    pool_.group(gid) = work.clone(false);
  }

  GroupUpload make_upload(uint32_t gid, uint32_t task_id,
                          const std::vector<ClassId>& t_classes,
                          const std::map<ClassId, int64_t>& label_counts,
                          Tick now, EventLog& log) {
    GroupUpload up;
    up.client_id = id_;
    up.task_id = task_id;
    up.group_id = gid;
    up.group_bytes = serialize_group(pool_.group(gid), task_id);

    // H(M^t): entropy of the task-class label distribution in this list;
    // a list with no task classes falls back to its full label distribution
    std::map<ClassId, int64_t> h_counts;
    for (ClassId c : t_classes) {
      auto it = label_counts.find(c);
      if (it != label_counts.end()) h_counts[c] = it->second;
    }
    if (h_counts.empty()) h_counts = label_counts;
    up.entropy = entropy(LabelDistribution::from_counts(h_counts));

    // P_y: the client's private data relevant to this group, i.e. this
    // round's samples plus its stored exemplars for the group's domain (so
    // the server's auxiliary data can cover the old classes)
    std::map<ClassId, int64_t> py_counts = label_counts;
    for (ClassId c : pool_.group(gid).domain)
      if (memory_.has_class(c)) py_counts[c] += memory_.stored_for(c);
    up.p_y = LabelDistribution::from_counts(py_counts);

    log.push(now, "upload", id_, gid, up.wire_size(),
             "H=" + std::to_string(up.entropy));
    return up;
  }

  void install_broadcast(const BroadcastMessage& msg, Tick now, EventLog& log) {
    DeserializedGroup dg;
    try {
      dg = deserialize_group(msg.group_bytes);
    } catch (const Error&) {
      log.push(now, "broadcast_reject", id_, msg.group_id, 0, "bad_payload");
      return;
    }
    if (dg.group.group_id >= pool_.groups.size() ||
        dg.group.depth() != backbone_->depth() ||
        dg.group.hidden() != backbone_->hidden()) {
      // shape disagreement with the local pool: ask for a full sync
      log.push(now, "sync_request", id_, msg.group_id, 0, "shape_mismatch");
      return;
    }
    // the broadcast group is the canonical owner of its domain: strip those
    // classes from any other local group that claimed them meanwhile
    for (auto& other : pool_.groups) {
      if (other.group_id == dg.group.group_id || other.empty()) continue;
      bool claims = false;
      for (ClassId c : dg.group.domain)
        claims = claims ||
                 std::find(other.domain.begin(), other.domain.end(), c) !=
                     other.domain.end();
      if (claims) {
        other = other.without_classes(dg.group.domain);
        log.push(now, "domain_shrink", id_, other.group_id, 0, "");
      }
    }
    pool_.group(dg.group.group_id) = std::move(dg.group);
    const auto& installed = pool_.group(msg.group_id);
    for (const auto& [c, proto] : msg.prototypes)
      selector_.register_class(c, proto, msg.group_id);
    log.push(now, "broadcast_install", id_, msg.group_id,
             msg.wire_size(),
             "domain_size=" + std::to_string(installed.domain.size()));
  }

  uint32_t id_;
  const FrozenBackbone* backbone_;
  EnhancerPool pool_;
  SelectModule selector_;
  SampleMemory memory_;
  ClientConfig config_;
  std::vector<BroadcastMessage> pending_;
};

// --- server ---------------------------------------------------------------------

struct ServerConfig {
  Tick window = 3;  // W, in ticks
  int64_t aux_size = 32;
  OptimizerSettings global_opt;
  Activation activation = Activation::kGelu;
  bool finetune_baseline = false;  // aggregate by parameter averaging instead
  uint64_t seed = 0;
};

class Server {
public:
  Server(const FrozenBackbone& backbone, EnhancerPool pool,
         ServerConfig config)
      : backbone_(&backbone),
        pool_(std::move(pool)),
        selector_(backbone),
        config_(std::move(config)) {}

  const EnhancerPool& pool() const { return pool_; }
  SelectModule& selector() { return selector_; }
  const PublicPool& public_pool() const { return public_pool_; }

  // Registers public data for a class (available before any client uploads
  // it); the embedding mean becomes the server's prototype once the class
  // joins a group.
  void register_public_class(ClassId c, std::vector<Sample> samples) {
    FEDET_CHECK(!samples.empty(), "server: no public samples for class " << c);
    std::vector<double> mean;
    for (const auto& s : samples) {
      auto emb = selector_.embed_pooled(s.features);
      if (mean.empty()) mean.assign(emb.size(), 0.0);
      for (size_t i = 0; i < emb.size(); ++i) mean[i] += emb[i];
      public_pool_.add(s);
    }
    for (auto& v : mean) v /= static_cast<double>(samples.size());
    staged_prototypes_[c] = std::move(mean);
  }

  // Buffers an upload; the first upload for a group opens its waiting
  // window, closing `window` ticks later.
  void ingest(GroupUpload upload, Tick now, EventLog& log) {
    if (upload.group_id >= pool_.groups.size()) {
      log.push(now, "upload_reject", upload.client_id, upload.group_id, 0,
               "unknown_group");
      return;
    }
    auto& win = windows_[upload.group_id];
    if (win.uploads.empty()) {
      win.deadline = now + config_.window;
      log.push(now, "window_open", -1, upload.group_id, 0,
               "deadline=" + std::to_string(win.deadline));
    }
    win.uploads.push_back(std::move(upload));
  }

  bool has_pending() const { return !windows_.empty(); }

  // Closes every window whose deadline has been reached; returns the
  // broadcasts produced by the resulting consolidations.
  std::vector<BroadcastMessage> advance_to(Tick now, EventLog& log) {
    std::vector<BroadcastMessage> out;
    std::vector<uint32_t> due;
    for (const auto& [gid, win] : windows_)
      if (win.deadline <= now) due.push_back(gid);
    for (uint32_t gid : due) {
      auto uploads = std::move(windows_[gid].uploads);
      windows_.erase(gid);
      auto msg = close_window(gid, std::move(uploads), now, log);
      if (msg.has_value()) out.push_back(std::move(*msg));
    }
    return out;
  }

private:
  struct Window {
    Tick deadline = 0;
    std::vector<GroupUpload> uploads;
  };

  std::optional<BroadcastMessage> close_window(uint32_t gid,
                                               std::vector<GroupUpload> uploads,
                                               Tick now, EventLog& log) {
    auto& server_group = pool_.group(gid);

    // decode everything; the first well-formed upload fixes the canonical
    // domain, later conflicting uploads are rejected and logged
    std::vector<TeacherUpload> teachers;
    std::vector<const GroupUpload*> accepted;
    std::vector<ClassId> canonical;
    for (const auto& up : uploads) {
      DeserializedGroup dg;
      try {
        dg = deserialize_group(up.group_bytes);
      } catch (const Error&) {
        log.push(now, "upload_reject", up.client_id, gid, 0, "bad_payload");
        continue;
      }
      if (canonical.empty()) canonical = dg.group.domain;
      if (dg.group.domain != canonical) {
        log.push(now, "upload_reject", up.client_id, gid, 0, "domain_mismatch");
        continue;
      }
      teachers.push_back({std::move(dg.group), up.entropy});
      accepted.push_back(&up);
    }
    if (teachers.empty()) {
      log.push(now, "window_drop", -1, gid, 0, "no_usable_uploads");
      return std::nullopt;
    }

    // which classes is this window learning?
    std::vector<ClassId> new_classes;
    for (ClassId c : canonical)
      if (std::find(server_group.domain.begin(), server_group.domain.end(), c) ==
          server_group.domain.end())
        new_classes.push_back(c);
    // a class already owned by another group cannot join this one
    for (ClassId c : new_classes) {
      auto owner = selector_.group_of(c);
      if (owner.has_value() && *owner != gid) {
        log.push(now, "window_drop", -1, gid, 0,
                 "class_conflict=" + std::to_string(c));
        return std::nullopt;
      }
    }
    const uint32_t window_task = accepted.front()->task_id;
    if (new_classes.empty()) {
      // same canonical domain: a refinement window if it continues the task
      // that introduced the tail classes, otherwise a state refresh
      auto it = last_added_.find(gid);
      if (it != last_added_.end() && it->second.first == window_task)
        new_classes = it->second.second;
      if (new_classes.empty()) {
        log.push(now, "window_refresh", -1, gid, 0,
                 "uploads=" + std::to_string(teachers.size()));
        return std::nullopt;
      }
    } else {
      last_added_[gid] = {window_task, new_classes};
    }

    if (config_.finetune_baseline) {
      install(gid, federated_average(teachers), now, log);
      log.push(now, "fedavg", -1, gid, 0,
               "q=" + std::to_string(teachers.size()) +
                   ";task=" + std::to_string(window_task));
    } else {
      auto aux_target = combined_p_y(uploads, canonical, now, gid, log);
      AuxiliaryDataset aux(aux_target, public_pool_, config_.aux_size,
                           derive_seed(config_.seed, static_cast<uint64_t>(now), gid));
      OptimizerSettings opt = config_.global_opt;
      opt.seed = derive_seed(config_.seed, static_cast<uint64_t>(now) * 4 + 1, gid);
      auto merged = consolidate_global(server_group, teachers, new_classes, aux,
                                       *backbone_, opt, config_.activation);
      install(gid, std::move(merged), now, log);
      log.push(now, "consolidate_global", -1, gid, 0,
               "q=" + std::to_string(teachers.size()) +
                   ";task=" + std::to_string(window_task));
    }

    // broadcast the new canonical state with the domain's prototypes
    BroadcastMessage msg;
    msg.group_id = gid;
    msg.group_bytes = serialize_group(pool_.group(gid), window_task);
    for (ClassId c : pool_.group(gid).domain) {
      auto proto = selector_.prototypes().find(c);
      if (proto != selector_.prototypes().end())
        msg.prototypes.emplace_back(c, proto->second);
    }
    return msg;
  }

  void install(uint32_t gid, EnhancerGroup group, Tick now, EventLog& log) {
    // adopt prototypes for classes newly covered by this group
    for (ClassId c : group.domain) {
      if (selector_.group_of(c).has_value()) continue;
      auto it = staged_prototypes_.find(c);
      FEDET_CHECK(it != staged_prototypes_.end(),
                  "server: no public data registered for class " << c);
      selector_.register_class(c, it->second, gid);
    }
    pool_.group(gid) = group.clone(/*trainable=*/false);
    pool_.group(gid).group_id = gid;
    log.push(now, "install", -1, gid, 0,
             "domain_size=" + std::to_string(group.domain.size()));
  }

  // Renormalized element-wise mean of the uploaded label distributions; any
  // domain class left without mass gets the smallest observed probability so
  // the auxiliary data can cover the whole domain.
  LabelDistribution combined_p_y(const std::vector<GroupUpload>& uploads,
                                 const std::vector<ClassId>& domain, Tick now,
                                 uint32_t gid, EventLog& log) {
    std::map<ClassId, double> acc;
    for (const auto& up : uploads)
      for (const auto& [c, p] : up.p_y.probs()) acc[c] += p;
    double total = 0.0;
    for (auto& [c, p] : acc) {
      p /= static_cast<double>(uploads.size());
      total += p;
    }
    double min_p = total;
    for (const auto& [c, p] : acc) min_p = std::min(min_p, p);
    bool patched = false;
    for (ClassId c : domain)
      if (!acc.count(c) || acc[c] <= 0.0) {
        acc[c] = min_p;
        total += min_p;
        patched = true;
      }
    if (patched)
      log.push(now, "aux_coverage_fill", -1, gid, 0, "");
    for (auto& [c, p] : acc) p /= total;
    // absorb rounding into the largest entry so the distribution validates
    double sum = 0.0;
    for (const auto& [c, p] : acc) sum += p;
    auto largest = acc.begin();
    for (auto it = acc.begin(); it != acc.end(); ++it)
      if (it->second > largest->second) largest = it;
    largest->second += 1.0 - sum;
    return LabelDistribution::from_probs(std::move(acc));
  }

  EnhancerGroup federated_average(const std::vector<TeacherUpload>& teachers) {
    EnhancerGroup avg = teachers[0].group.clone(false);
    if (teachers.size() == 1) return avg;
    auto params = avg.parameters();
    for (size_t pi = 0; pi < params.size(); ++pi) {
      std::vector<double> mean(params[pi].data().size(), 0.0);
      for (const auto& t : teachers) {
        const auto& d = t.group.parameters()[pi].data();
        for (size_t i = 0; i < d.size(); ++i) mean[i] += d[i];
      }
      for (auto& v : mean) v /= static_cast<double>(teachers.size());
      params[pi].set_data(std::move(mean));
    }
    return avg;
  }

  const FrozenBackbone* backbone_;
  EnhancerPool pool_;
  SelectModule selector_;
  PublicPool public_pool_;
  ServerConfig config_;
  std::map<uint32_t, Window> windows_;
  std::map<ClassId, std::vector<double>> staged_prototypes_;
  std::map<uint32_t, std::pair<uint32_t, std::vector<ClassId>>> last_added_;
};

}  // namespace fedet
