#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "setchain/bytes.hpp"
#include "setchain/types.hpp"

namespace setchain::netsim {

using TimerTag = std::uint64_t;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown by the run loops when the configured event budget is exhausted.
class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Partial synchrony. Delays are drawn uniformly from [1, pre_gst_max] for
/// messages sent before `gst` and from [1, post_gst_max] afterwards. A
/// message sent before GST is still delivered no later than
/// gst + post_gst_max.
struct DelayModel {
  SimTime gst = 0;
  SimTime pre_gst_max = 1;
  SimTime post_gst_max = 1;
};

/// Receive-side processing capacity. Each node handles inbound messages one
/// at a time; a message occupies the node for per_message + per_byte * size
/// work units, with units_per_tick units available per tick. All-zero costs
/// disable the model (infinite capacity).
struct CostModel {
  std::uint64_t units_per_tick = 1'000'000;
  std::uint64_t per_message = 0;
  std::uint64_t per_byte = 0;

  bool enabled() const { return per_message != 0 || per_byte != 0; }
};

class Process;
class Context;

enum class ByzantineMode : std::uint8_t { correct, silent, equivocate_brb, forge_history, arbitrary_script };

std::string_view to_string(ByzantineMode mode);
/// Accepts the names produced by to_string plus the short CLI spellings
/// "equivocate" and "forge". Throws ConfigError otherwise.
ByzantineMode parse_byzantine_mode(std::string_view name);

/// Per-recipient rewrite of an outbound message; nullopt keeps the original.
using MessageRewrite =
    std::function<std::optional<Bytes>(NodeId self, NodeId to, const Bytes& body)>;
/// Replaces a node's process, optionally keeping the original inside.
using ProcessWrap = std::function<std::unique_ptr<Process>(std::unique_ptr<Process>)>;

struct ByzantineBehavior {
  ByzantineMode mode = ByzantineMode::correct;
  /// Used by equivocate_brb.
  MessageRewrite rewrite;
  /// Used by forge_history and arbitrary_script.
  ProcessWrap wrap;

  static ByzantineBehavior silent() { return {ByzantineMode::silent, {}, {}}; }
};

struct SimConfig {
  std::size_t n = 4;
  std::size_t f = 1;
  std::uint64_t seed = 0;
  DelayModel delays;
  CostModel costs;
  std::map<NodeId, ByzantineBehavior> behaviors;
  std::uint64_t max_events = 200'000'000;
};

/// Throws ConfigError when n < 3f+1 or more than f nodes are non-correct.
void validate_config(const SimConfig& cfg);

/// An authenticated message in flight.
struct Envelope {
  NodeId from = 0;
  NodeId to = 0;
  std::shared_ptr<const Bytes> body;
  SimTime send_time = 0;
  SimTime deliver_time = 0;
  std::uint64_t seq = 0;
};

enum class EventKind : std::uint8_t { action = 0, message = 1, timer = 2 };

struct TraceRecord {
  SimTime time = 0;
  EventKind kind = EventKind::message;
  NodeId from = 0;
  NodeId to = 0;
  std::uint8_t channel = 0;
  TimerTag tag = 0;
};

struct SimStats {
  std::uint64_t events = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_delivered = 0;
  std::uint64_t bytes_sent = 0;
  /// Sends keyed by the first byte of the body.
  std::array<std::uint64_t, 256> sent_by_channel{};
  /// Largest observed deliver_time - send_time among messages sent at or
  /// after GST.
  SimTime max_post_gst_delay = 0;
  /// FNV-1a over every processed event; equal configs yield equal values.
  std::uint64_t trace_hash = 0xcbf29ce484222325ULL;
};

/// Node-side protocol logic. Handlers run one at a time and must not assume
/// reentrancy.
class Process {
 public:
  virtual ~Process() = default;
  virtual void on_start(Context&) {}
  virtual void on_message(Context& ctx, NodeId from, const Bytes& body) = 0;
  virtual void on_timer(Context&, TimerTag) {}
};

class Simulator;

/// Handle through which a process talks to the network during one handler.
class Context {
 public:
  NodeId self() const { return self_; }
  SimTime now() const;
  /// Number of servers (ids 0..n-1). Clients have ids >= n.
  std::size_t n() const;
  std::size_t f() const;

  void send(NodeId to, Bytes body);
  void send(NodeId to, std::shared_ptr<const Bytes> body);
  /// Sends to every server, including self when self is a server.
  void broadcast(Bytes body);

  void set_timer(SimTime delay, TimerTag tag);
  void cancel_timer(TimerTag tag);

 private:
  friend class Simulator;
  Context(Simulator& sim, NodeId self) : sim_(sim), self_(self) {}
  Simulator& sim_;
  NodeId self_;
};

class Simulator {
 public:
  using Factory = std::function<std::unique_ptr<Process>(NodeId)>;

  /// Builds n server processes via `factory` and applies cfg.behaviors.
  Simulator(SimConfig cfg, const Factory& factory);

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  /// Registers an extra (always correct) process, e.g. a client.
  NodeId add_client(std::unique_ptr<Process> process);

  /// Throws ConfigError if it would exceed f non-correct servers.
  void inject_behavior(NodeId node, ByzantineBehavior behavior);

  /// Enqueues a message as if `from` sent it now.
  void send(NodeId from, NodeId to, Bytes body);
  void set_timer(NodeId node, SimTime delay, TimerTag tag);
  void cancel_timer(NodeId node, TimerTag tag);

  /// Runs `action` inside `target`'s context at time `at` (>= now).
  void schedule(SimTime at, NodeId target, std::function<void(Context&)> action);
  /// Runs `action` inside `target`'s context immediately.
  void with_context(NodeId target, const std::function<void(Context&)>& action);

  /// Processes every event with time <= t; afterwards now() == t.
  SimTime run_until(SimTime t);
  /// Processes events until none remain; returns the time of the last one.
  SimTime run_until_quiescent();
  bool quiescent() const { return queue_.empty(); }

  SimTime now() const { return now_; }
  const SimConfig& config() const { return cfg_; }
  std::size_t n() const { return cfg_.n; }
  std::size_t f() const { return cfg_.f; }
  std::size_t process_count() const { return processes_.size(); }

  Process& process(NodeId id);
  template <class T>
  T* process_as(NodeId id) {
    return dynamic_cast<T*>(&process(id));
  }
  ByzantineMode mode(NodeId id) const;
  bool is_correct(NodeId id) const { return mode(id) == ByzantineMode::correct; }
  std::vector<NodeId> correct_servers() const;

  const SimStats& stats() const { return stats_; }

  /// One JSON object per line: {"time","kind","from","to","type"}.
  void set_trace(std::ostream* out) { trace_ = out; }
  void set_channel_names(std::map<std::uint8_t, std::string> names) { channel_names_ = std::move(names); }
  /// Called for every envelope handed to a correct or Byzantine process.
  void set_delivery_observer(std::function<void(const Envelope&)> obs) { on_deliver_ = std::move(obs); }
  void set_send_observer(std::function<void(const Envelope&)> obs) { on_send_ = std::move(obs); }

 private:
  friend class Context;

  struct Event {
    SimTime time = 0;
    EventKind kind = EventKind::message;
    std::uint64_t a = 0;  // sender / timer node / action target
    std::uint64_t b = 0;  // seq / timer tag / action seq
    bool processing = false;  // message already queued behind the node's capacity
    Envelope env;
    std::uint64_t generation = 0;
    std::shared_ptr<std::function<void(Context&)>> action;

    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      if (kind != o.kind) return kind > o.kind;
      if (a != o.a) return a > o.a;
      return b > o.b;
    }
  };

  void check_node(NodeId id) const;
  void enqueue_send(NodeId from, NodeId to, std::shared_ptr<const Bytes> body);
  void dispatch(Event& ev);
  void deliver(const Envelope& env);
  void record(const TraceRecord& rec);
  SimTime draw_delay(SimTime send_time);
  bool step(SimTime limit);

  SimConfig cfg_;
  std::vector<std::unique_ptr<Process>> processes_;
  std::vector<ByzantineBehavior> behaviors_;
  std::vector<std::uint64_t> busy_until_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::map<std::pair<NodeId, TimerTag>, std::uint64_t> live_timers_;
  std::mt19937_64 rng_;
  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_generation_ = 0;
  SimStats stats_;
  std::ostream* trace_ = nullptr;
  std::map<std::uint8_t, std::string> channel_names_;
  std::function<void(const Envelope&)> on_deliver_;
  std::function<void(const Envelope&)> on_send_;
};

}  // namespace setchain::netsim
