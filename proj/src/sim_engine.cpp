#include "hca/sim/engine.hpp"

#include <cmath>

#include "hca/wire/registry.hpp"

namespace hca::sim {

using nlohmann::json;

json TraceRecord::to_json() const {
    json j = json::object();
    j["t"] = time;
    j["src"] = source;
    j["dst"] = destination;
    j["kind"] = kind;
    j["type"] = type;
    if (prefix) j["prefix"] = std::to_string(*prefix);
    if (socket_id) j["socket"] = *socket_id;
    if (kind == "frame") {
        j["journey"] = journey;
        j["hop"] = hop;
        j["latency"] = latency;
        j["size"] = size;
    }
    j["outcome"] = outcome;
    if (!detail.is_null()) j["detail"] = detail;
    return j;
}

std::mt19937_64& Context::rng() { return engine_.rng(); }

void Context::send(MachineId to, Bytes bytes, FrameMeta meta) {
    if (meta.journey == 0) {
        meta.journey = journey_ == 0 ? engine_.next_journey() : journey_;
        meta.hop = hop_ + 1;
    }
    engine_.do_send(self_, to, std::move(bytes), std::move(meta), now_);
}

uint64_t Context::fresh_journey() { return engine_.next_journey(); }

void Context::set_timer(SimTime delay, uint64_t id, std::string tag) {
    engine_.do_set_timer(self_, now_ + delay, id, std::move(tag));
}

void Context::note(const std::string& kind, json detail) {
    engine_.do_note(self_, kind, std::move(detail));
}

SimTime LinkModel::latency(MachineId a, MachineId b) const {
    return static_cast<SimTime>(std::llround(distance(a, b) * ms_per_unit + hop_cost_ms));
}

double LinkModel::distance(MachineId a, MachineId b) const {
    auto xa = coord_x.find(a), xb = coord_x.find(b);
    double dx = (xa == coord_x.end() ? 0.0 : xa->second) -
                (xb == coord_x.end() ? 0.0 : xb->second);
    double dy = 0.0;
    if (!coord_y.empty()) {
        auto ya = coord_y.find(a), yb = coord_y.find(b);
        dy = (ya == coord_y.end() ? 0.0 : ya->second) -
             (yb == coord_y.end() ? 0.0 : yb->second);
    }
    return std::sqrt(dx * dx + dy * dy);
}

Engine::Engine(uint64_t seed) : rng_(seed) {}

void Engine::add_machine(MachineId id, std::shared_ptr<Machine> machine) {
    machines_[id] = std::move(machine);
    queue_.push({now_, ++seq_counter_, id, StartEvent{}, 0});
}

Machine* Engine::machine(MachineId id) {
    auto it = machines_.find(id);
    return it == machines_.end() ? nullptr : it->second.get();
}

void Engine::schedule_gift(SimTime at, MachineId to, std::string tag, Bytes payload) {
    queue_.push({at, ++seq_counter_, to, GiftEvent{std::move(tag), std::move(payload)}, 0});
}

void Engine::do_send(MachineId from, MachineId to, Bytes bytes, FrameMeta meta, SimTime at) {
    SimTime arrival = at + link_.latency(from, to);
    FrameEvent ev{from, std::move(bytes), std::move(meta)};
    queue_.push({arrival, ++seq_counter_, to, std::move(ev), from});
}

void Engine::do_set_timer(MachineId machine, SimTime at, uint64_t id, std::string tag) {
    uint64_t seq = ++seq_counter_;
    timer_epoch_[seq] = crash_epoch_[machine];
    queue_.push({at, seq, machine, TimerEvent{id, std::move(tag)}, machine});
}

void Engine::do_note(MachineId machine, const std::string& kind, json detail) {
    TraceRecord r;
    r.time = now_;
    r.source = machine;
    r.destination = machine;
    r.kind = "note";
    r.type = kind;
    r.outcome = "note";
    r.detail = std::move(detail);
    trace_.push_back(std::move(r));
}

bool Engine::blocked(MachineId a, MachineId b) const {
    for (const auto& side_a : partitions_) {
        bool a_in = side_a.count(a) != 0;
        bool b_in = side_a.count(b) != 0;
        if (a_in != b_in) return true;
    }
    return false;
}

void Engine::apply_fault(const FaultAction& f) {
    switch (f.kind) {
        case FaultAction::Crash: {
            crashed_.insert(f.machine);
            ++crash_epoch_[f.machine];
            auto it = machines_.find(f.machine);
            if (it != machines_.end()) it->second->on_crash();
            do_note(f.machine, "fault_crash", json::object());
            break;
        }
        case FaultAction::Restore: {
            crashed_.erase(f.machine);
            auto it = machines_.find(f.machine);
            if (it != machines_.end()) {
                Context ctx(*this, f.machine, now_, 0, 0);
                it->second->on_restore(ctx);
            }
            do_note(f.machine, "fault_restore", json::object());
            break;
        }
        case FaultAction::Partition:
            partitions_.push_back(f.side_a);
            do_note(0, "fault_partition", json::object());
            break;
        case FaultAction::Heal:
            partitions_.clear();
            lossy_links_.clear();
            do_note(0, "fault_heal", json::object());
            break;
        case FaultAction::Drop:
            lossy_links_[{f.link_a, f.link_b}] = f.drop_probability;
            lossy_links_[{f.link_b, f.link_a}] = f.drop_probability;
            break;
    }
}

void Engine::dispatch(const Scheduled& ev) {
    auto it = machines_.find(ev.target);
    if (it == machines_.end()) return;
    Machine& m = *it->second;

    if (const auto* frame = std::get_if<FrameEvent>(&ev.payload)) {
        TraceRecord r;
        r.time = now_;
        r.source = frame->from;
        r.destination = ev.target;
        r.kind = "frame";
        const auto* d = wire::MessageRegistry::instance().by_id(frame->meta.type_id);
        r.type = d ? d->name : "type" + std::to_string(frame->meta.type_id);
        r.prefix = frame->meta.prefix;
        r.socket_id = frame->meta.socket_id;
        r.journey = frame->meta.journey;
        r.hop = frame->meta.hop;
        r.latency = link_.latency(frame->from, ev.target);
        r.size = frame->bytes.size();

        // a frame already in flight still arrives even if its sender crashed
        if (crashed_.count(ev.target)) {
            r.outcome = "crashed";
            trace_.push_back(std::move(r));
            return;
        }
        if (blocked(frame->from, ev.target)) {
            r.outcome = "partitioned";
            trace_.push_back(std::move(r));
            return;
        }
        auto lossy = lossy_links_.find({frame->from, ev.target});
        if (lossy != lossy_links_.end()) {
            double roll = static_cast<double>(rng_()) / static_cast<double>(UINT64_MAX);
            if (roll < lossy->second) {
                r.outcome = "dropped";
                trace_.push_back(std::move(r));
                return;
            }
        }
        r.outcome = "delivered";
        trace_.push_back(std::move(r));
        Context ctx(*this, ev.target, now_, frame->meta.journey, frame->meta.hop);
        m.on_frame(ctx, *frame);
        return;
    }
    if (const auto* timer = std::get_if<TimerEvent>(&ev.payload)) {
        if (crashed_.count(ev.target)) return;
        auto epoch = timer_epoch_.find(ev.seq);
        if (epoch != timer_epoch_.end()) {
            bool stale = epoch->second != crash_epoch_[ev.target];
            timer_epoch_.erase(epoch);
            if (stale) return;  // timer was armed before a crash
        }
        Context ctx(*this, ev.target, now_, 0, 0);
        m.on_timer(ctx, *timer);
        return;
    }
    if (std::holds_alternative<StartEvent>(ev.payload)) {
        Context ctx(*this, ev.target, now_, 0, 0);
        m.on_start(ctx);
        return;
    }
    if (std::holds_alternative<RestoreEvent>(ev.payload)) {
        Context ctx(*this, ev.target, now_, 0, 0);
        m.on_restore(ctx);
        return;
    }
    if (const auto* gift = std::get_if<GiftEvent>(&ev.payload)) {
        if (crashed_.count(ev.target)) return;
        Context ctx(*this, ev.target, now_, 0, 0);
        m.on_gift(ctx, *gift);
        return;
    }
}

void Engine::run(SimTime horizon) {
    // fault actions become queue entries so ordering with frames is exact
    std::sort(faults_.begin(), faults_.end(),
              [](const FaultAction& a, const FaultAction& b) { return a.at < b.at; });
    size_t fault_index = 0;

    while (true) {
        SimTime next_fault =
            fault_index < faults_.size() ? faults_[fault_index].at : INT64_MAX;
        SimTime next_event = queue_.empty() ? INT64_MAX : queue_.top().time;
        SimTime next = std::min(next_fault, next_event);
        if (next == INT64_MAX || next > horizon) break;
        now_ = next;
        if (next_fault <= next_event) {
            apply_fault(faults_[fault_index++]);
            continue;
        }
        Scheduled ev = queue_.top();
        queue_.pop();
        dispatch(ev);
    }
    if (horizon != INT64_MAX && now_ < horizon) now_ = horizon;
}

}  // namespace hca::sim
