#include "setchain/netsim.hpp"

#include <algorithm>
#include <sstream>

namespace setchain::netsim {
namespace {

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xFF;
    h *= kFnvPrime;
  }
}

std::string_view kind_name(EventKind k) {
  switch (k) {
    case EventKind::action: return "action";
    case EventKind::message: return "msg";
    case EventKind::timer: return "timer";
  }
  return "?";
}

}  // namespace

std::string_view to_string(ByzantineMode mode) {
  switch (mode) {
    case ByzantineMode::correct: return "none";
    case ByzantineMode::silent: return "silent";
    case ByzantineMode::equivocate_brb: return "equivocate";
    case ByzantineMode::forge_history: return "forge";
    case ByzantineMode::arbitrary_script: return "script";
  }
  return "?";
}

ByzantineMode parse_byzantine_mode(std::string_view name) {
  if (name == "none" || name == "correct") return ByzantineMode::correct;
  if (name == "silent") return ByzantineMode::silent;
  if (name == "equivocate" || name == "equivocate_brb") return ByzantineMode::equivocate_brb;
  if (name == "forge" || name == "forge_history") return ByzantineMode::forge_history;
  if (name == "script" || name == "arbitrary_script") return ByzantineMode::arbitrary_script;
  throw ConfigError("unknown byzantine mode: " + std::string(name));
}

void validate_config(const SimConfig& cfg) {
  if (cfg.n < 3 * cfg.f + 1) {
    throw ConfigError("n=" + std::to_string(cfg.n) + " violates n >= 3f+1 for f=" + std::to_string(cfg.f));
  }
  std::size_t faulty = 0;
  for (const auto& [id, b] : cfg.behaviors) {
    if (id >= cfg.n) throw ConfigError("behavior for unknown server " + std::to_string(id));
    if (b.mode != ByzantineMode::correct) ++faulty;
  }
  if (faulty > cfg.f) throw ConfigError("more than f byzantine servers configured");
  if (cfg.delays.pre_gst_max == 0 || cfg.delays.post_gst_max == 0) {
    throw ConfigError("delay bounds must be >= 1");
  }
  if (cfg.costs.enabled() && cfg.costs.units_per_tick == 0) throw ConfigError("units_per_tick must be > 0");
}

// ---------------------------------------------------------------------------

SimTime Context::now() const { return sim_.now_; }
std::size_t Context::n() const { return sim_.cfg_.n; }
std::size_t Context::f() const { return sim_.cfg_.f; }

void Context::send(NodeId to, Bytes body) { send(to, std::make_shared<const Bytes>(std::move(body))); }

void Context::send(NodeId to, std::shared_ptr<const Bytes> body) {
  const ByzantineBehavior& b = sim_.behaviors_[self_];
  if (b.mode == ByzantineMode::silent) return;
  if (b.rewrite) {
    if (auto replaced = b.rewrite(self_, to, *body)) {
      body = std::make_shared<const Bytes>(std::move(*replaced));
    }
  }
  sim_.enqueue_send(self_, to, std::move(body));
}

void Context::broadcast(Bytes body) {
  auto shared = std::make_shared<const Bytes>(std::move(body));
  for (NodeId to = 0; to < sim_.cfg_.n; ++to) send(to, shared);
}

void Context::set_timer(SimTime delay, TimerTag tag) { sim_.set_timer(self_, delay, tag); }
void Context::cancel_timer(TimerTag tag) { sim_.cancel_timer(self_, tag); }

// ---------------------------------------------------------------------------

Simulator::Simulator(SimConfig cfg, const Factory& factory) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  validate_config(cfg_);
  processes_.reserve(cfg_.n);
  for (NodeId id = 0; id < cfg_.n; ++id) {
    processes_.push_back(factory(id));
    if (!processes_.back()) throw ConfigError("factory returned no process");
    behaviors_.emplace_back();
    busy_until_.push_back(0);
  }
  auto behaviors = std::move(cfg_.behaviors);
  cfg_.behaviors.clear();
  for (auto& [id, b] : behaviors) inject_behavior(id, std::move(b));
  for (NodeId id = 0; id < cfg_.n; ++id) {
    schedule(0, id, [this, id](Context& ctx) { processes_[id]->on_start(ctx); });
  }
}

NodeId Simulator::add_client(std::unique_ptr<Process> process) {
  if (!process) throw ConfigError("null client process");
  NodeId id = static_cast<NodeId>(processes_.size());
  processes_.push_back(std::move(process));
  behaviors_.emplace_back();
  busy_until_.push_back(0);
  schedule(now_, id, [this, id](Context& ctx) { processes_[id]->on_start(ctx); });
  return id;
}

void Simulator::inject_behavior(NodeId node, ByzantineBehavior behavior) {
  if (node >= cfg_.n) throw ConfigError("behaviors apply to servers only");
  std::size_t faulty = 0;
  for (NodeId id = 0; id < cfg_.n; ++id) {
    if (id != node && behaviors_[id].mode != ByzantineMode::correct) ++faulty;
  }
  if (behavior.mode != ByzantineMode::correct && faulty + 1 > cfg_.f) {
    throw ConfigError("injecting behavior would exceed f byzantine servers");
  }
  if ((behavior.mode == ByzantineMode::forge_history || behavior.mode == ByzantineMode::arbitrary_script) &&
      !behavior.wrap) {
    throw ConfigError("behavior mode requires a process wrapper");
  }
  if (behavior.mode == ByzantineMode::equivocate_brb && !behavior.rewrite) {
    throw ConfigError("equivocation requires a message rewrite");
  }
  if (behavior.wrap) processes_[node] = behavior.wrap(std::move(processes_[node]));
  behaviors_[node] = std::move(behavior);
  cfg_.behaviors[node] = behaviors_[node];
}

void Simulator::check_node(NodeId id) const {
  if (id >= processes_.size()) throw std::out_of_range("unknown node id " + std::to_string(id));
}

Process& Simulator::process(NodeId id) {
  check_node(id);
  return *processes_[id];
}

ByzantineMode Simulator::mode(NodeId id) const {
  check_node(id);
  return behaviors_[id].mode;
}

std::vector<NodeId> Simulator::correct_servers() const {
  std::vector<NodeId> out;
  for (NodeId id = 0; id < cfg_.n; ++id) {
    if (behaviors_[id].mode == ByzantineMode::correct) out.push_back(id);
  }
  return out;
}

SimTime Simulator::draw_delay(SimTime send_time) {
  const DelayModel& d = cfg_.delays;
  if (send_time >= d.gst) {
    return std::uniform_int_distribution<SimTime>(1, d.post_gst_max)(rng_);
  }
  SimTime delay = std::uniform_int_distribution<SimTime>(1, d.pre_gst_max)(rng_);
  SimTime cap = d.gst + d.post_gst_max - send_time;
  return std::min(delay, cap);
}

void Simulator::send(NodeId from, NodeId to, Bytes body) {
  check_node(from);
  Context ctx(*this, from);
  ctx.send(to, std::move(body));
}

void Simulator::enqueue_send(NodeId from, NodeId to, std::shared_ptr<const Bytes> body) {
  check_node(from);
  check_node(to);
  Event ev;
  ev.kind = EventKind::message;
  ev.env.from = from;
  ev.env.to = to;
  ev.env.send_time = now_;
  ev.env.deliver_time = now_ + draw_delay(now_);
  ev.env.seq = next_seq_++;
  ev.time = ev.env.deliver_time;
  ev.a = from;
  ev.b = ev.env.seq;

  ++stats_.messages_sent;
  stats_.bytes_sent += body->size();
  stats_.sent_by_channel[body->empty() ? 0 : (*body)[0]]++;
  if (now_ >= cfg_.delays.gst) {
    stats_.max_post_gst_delay = std::max(stats_.max_post_gst_delay, ev.env.deliver_time - now_);
  }
  ev.env.body = std::move(body);
  if (on_send_) on_send_(ev.env);
  queue_.push(std::move(ev));
}

void Simulator::set_timer(NodeId node, SimTime delay, TimerTag tag) {
  check_node(node);
  if (delay < 1) throw std::invalid_argument("timer delay must be >= 1");
  // A live timer with the same tag is replaced.
  std::uint64_t gen = ++next_generation_;
  live_timers_[{node, tag}] = gen;
  Event ev;
  ev.kind = EventKind::timer;
  ev.time = now_ + delay;
  ev.a = node;
  ev.b = tag;
  ev.generation = gen;
  queue_.push(std::move(ev));
}

void Simulator::cancel_timer(NodeId node, TimerTag tag) {
  check_node(node);
  live_timers_.erase({node, tag});
}

void Simulator::schedule(SimTime at, NodeId target, std::function<void(Context&)> action) {
  check_node(target);
  if (at < now_) throw std::invalid_argument("cannot schedule in the past");
  Event ev;
  ev.kind = EventKind::action;
  ev.time = at;
  ev.a = target;
  ev.b = next_seq_++;
  ev.action = std::make_shared<std::function<void(Context&)>>(std::move(action));
  queue_.push(std::move(ev));
}

void Simulator::with_context(NodeId target, const std::function<void(Context&)>& action) {
  check_node(target);
  if (behaviors_[target].mode == ByzantineMode::silent) return;
  Context ctx(*this, target);
  action(ctx);
}

void Simulator::record(const TraceRecord& rec) {
  std::uint64_t& h = stats_.trace_hash;
  fnv_mix(h, rec.time);
  fnv_mix(h, static_cast<std::uint64_t>(rec.kind));
  fnv_mix(h, rec.from);
  fnv_mix(h, rec.to);
  fnv_mix(h, rec.channel);
  fnv_mix(h, rec.tag);
  if (trace_ != nullptr) {
    std::string type;
    if (rec.kind == EventKind::message) {
      auto it = channel_names_.find(rec.channel);
      if (it != channel_names_.end()) {
        type = it->second;
      } else {
        static constexpr char kHex[] = "0123456789abcdef";
        type = {'0', 'x', kHex[rec.channel >> 4], kHex[rec.channel & 0xF]};
      }
    } else if (rec.kind == EventKind::timer) {
      type = "timer:" + std::to_string(rec.tag);
    } else {
      type = "action";
    }
    *trace_ << "{\"time\":" << rec.time << ",\"kind\":\"" << kind_name(rec.kind) << "\",\"from\":" << rec.from
            << ",\"to\":" << rec.to << ",\"type\":\"" << type << "\"}\n";
  }
}

void Simulator::deliver(const Envelope& env) {
  ++stats_.messages_delivered;
  TraceRecord rec{now_, EventKind::message, env.from, env.to, env.body->empty() ? std::uint8_t{0} : (*env.body)[0], 0};
  record(rec);
  if (behaviors_[env.to].mode == ByzantineMode::silent) return;
  if (on_deliver_) on_deliver_(env);
  Context ctx(*this, env.to);
  processes_[env.to]->on_message(ctx, env.from, *env.body);
}

void Simulator::dispatch(Event& ev) {
  switch (ev.kind) {
    case EventKind::action: {
      record({now_, EventKind::action, static_cast<NodeId>(ev.a), static_cast<NodeId>(ev.a), 0, 0});
      with_context(static_cast<NodeId>(ev.a), *ev.action);
      break;
    }
    case EventKind::timer: {
      auto it = live_timers_.find({static_cast<NodeId>(ev.a), ev.b});
      if (it == live_timers_.end() || it->second != ev.generation) return;
      live_timers_.erase(it);
      NodeId node = static_cast<NodeId>(ev.a);
      record({now_, EventKind::timer, node, node, 0, ev.b});
      if (behaviors_[node].mode == ByzantineMode::silent) return;
      Context ctx(*this, node);
      processes_[node]->on_timer(ctx, ev.b);
      break;
    }
    case EventKind::message: {
      if (!ev.processing && cfg_.costs.enabled()) {
        const CostModel& c = cfg_.costs;
        std::uint64_t cost = c.per_message + c.per_byte * ev.env.body->size();
        std::uint64_t& busy = busy_until_[ev.env.to];
        busy = std::max(busy, now_ * c.units_per_tick) + cost;
        SimTime done = (busy + c.units_per_tick - 1) / c.units_per_tick;
        if (done > now_) {
          ev.processing = true;
          ev.time = done;
          queue_.push(std::move(ev));
          return;
        }
      }
      deliver(ev.env);
      break;
    }
  }
}

bool Simulator::step(SimTime limit) {
  if (queue_.empty() || queue_.top().time > limit) return false;
  Event ev = queue_.top();
  queue_.pop();
  now_ = ev.time;
  if (++stats_.events > cfg_.max_events) {
    std::ostringstream msg;
    msg << "event budget of " << cfg_.max_events << " exceeded at t=" << now_ << " with " << queue_.size()
        << " events pending";
    throw BudgetExceeded(msg.str());
  }
  dispatch(ev);
  return true;
}

SimTime Simulator::run_until(SimTime t) {
  while (step(t)) {
  }
  now_ = std::max(now_, t);
  return now_;
}

SimTime Simulator::run_until_quiescent() {
  while (step(std::numeric_limits<SimTime>::max())) {
  }
  return now_;
}

}  // namespace setchain::netsim
