#include "tracerace/detector.hpp"

#include <algorithm>
#include <optional>

namespace tracerace {

std::uint64_t VectorClock::get(std::uint32_t tid) const {
  auto it = c_.find(tid);
  return it == c_.end() ? 0 : it->second;
}

void VectorClock::set(std::uint32_t tid, std::uint64_t c) {
  if (c == 0)
    c_.erase(tid);
  else
    c_[tid] = c;
}

void VectorClock::join(const VectorClock& o) {
  for (const auto& [t, c] : o.c_)
    if (c > get(t)) c_[t] = c;
}

bool VectorClock::leq(const VectorClock& o) const {
  for (const auto& [t, c] : c_)
    if (c > o.get(t)) return false;
  return true;
}

std::tuple<std::uint64_t, std::string, std::string> RaceReport::key() const {
  return {address, std::min(first.origin, second.origin), std::max(first.origin, second.origin)};
}

std::set<std::tuple<std::uint64_t, std::string, std::string>> race_keys(
    const std::vector<RaceReport>& reports) {
  std::set<std::tuple<std::uint64_t, std::string, std::string>> out;
  for (const auto& r : reports) out.insert(r.key());
  return out;
}

namespace {

void check_order(std::map<std::uint32_t, std::uint64_t>& last, const MemoryEvent& e) {
  auto [it, fresh] = last.emplace(e.tid, e.ts);
  if (!fresh) {
    if (e.ts < it->second)
      throw DetectError("events of thread " + std::to_string(e.tid) + " go back in time at " +
                        std::to_string(e.ts));
    it->second = e.ts;
  }
}

class Reporter {
 public:
  explicit Reporter(Detector d) : d_(d) {}
  void add(std::uint64_t address, RaceAccess first, RaceAccess second) {
    RaceReport r{address, std::move(first), std::move(second), d_};
    if (seen_.insert(r.key()).second) out_.push_back(std::move(r));
  }
  std::vector<RaceReport> take() { return std::move(out_); }

 private:
  Detector d_;
  std::set<std::tuple<std::uint64_t, std::string, std::string>> seen_;
  std::vector<RaceReport> out_;
};

RaceAccess access_of(const MemoryEvent& e) { return {e.tid, e.origin, e.kind, e.ts}; }

}  // namespace

// Vector-clock detector that keeps, per address, the latest epoch of every
// (thread, origin) pair, so every racing origin pair is found rather than
// only the pairs involving the last write.
std::vector<RaceReport> detect_hb(const std::vector<MemoryEvent>& events) {
  struct Seen {
    std::uint64_t clock = 0;
    RaceAccess access;
  };
  using Key = std::pair<std::uint32_t, std::string>;
  struct VarState {
    std::map<Key, Seen> reads, writes;
  };

  std::map<std::uint32_t, VectorClock> clocks;
  std::map<std::uint64_t, VectorClock> lock_clocks;
  std::map<std::uint64_t, VarState> vars;
  std::map<std::uint32_t, std::uint64_t> last_ts;
  Reporter rep(Detector::HappensBefore);

  auto clock_of = [&](std::uint32_t t) -> VectorClock& {
    auto [it, fresh] = clocks.try_emplace(t);
    if (fresh) it->second.set(t, 1);
    return it->second;
  };

  for (const auto& e : events) {
    check_order(last_ts, e);
    VectorClock& c = clock_of(e.tid);
    switch (e.kind) {
      case EventKind::LockAcq:
        c.join(lock_clocks[e.address]);
        break;
      case EventKind::LockRel:
        lock_clocks[e.address] = c;
        c.tick(e.tid);
        break;
      case EventKind::Fork: {
        const auto child = static_cast<std::uint32_t>(e.address);
        VectorClock& cc = clock_of(child);
        cc.join(clocks.at(e.tid));
        clocks.at(e.tid).tick(e.tid);
        break;
      }
      case EventKind::Join: {
        const VectorClock child = clock_of(static_cast<std::uint32_t>(e.address));
        clocks.at(e.tid).join(child);
        break;
      }
      case EventKind::Gap: {
        const std::uint64_t own = c.get(e.tid);
        c = VectorClock();
        c.set(e.tid, own + 1);
        break;
      }
      case EventKind::Read:
      case EventKind::Write: {
        VarState& v = vars[e.address];
        auto check = [&](const std::map<Key, Seen>& m) {
          for (const auto& [k, s] : m)
            if (k.first != e.tid && s.clock > c.get(k.first))
              rep.add(e.address, s.access, access_of(e));
        };
        check(v.writes);
        if (e.kind == EventKind::Write) check(v.reads);
        auto& slot = (e.kind == EventKind::Write ? v.writes : v.reads)[{e.tid, e.origin}];
        slot = {c.get(e.tid), access_of(e)};
        break;
      }
    }
  }
  return rep.take();
}

// Eraser: virgin -> exclusive -> shared -> shared-modified, refining each
// address's candidate lockset once a second thread touches it.
std::vector<RaceReport> detect_lockset(const std::vector<MemoryEvent>& events) {
  enum class State { Exclusive, Shared, SharedModified };
  struct VarState {
    State state = State::Exclusive;
    std::uint32_t owner = 0;
    std::optional<std::set<std::uint64_t>> candidates;  // empty optional = all locks
    std::map<std::uint32_t, RaceAccess> last_read, last_write;
  };

  std::map<std::uint32_t, std::set<std::uint64_t>> held;
  std::map<std::uint64_t, VarState> vars;
  std::map<std::uint32_t, std::uint64_t> last_ts;
  Reporter rep(Detector::Lockset);

  for (const auto& e : events) {
    check_order(last_ts, e);
    auto& locks = held[e.tid];
    if (e.kind == EventKind::LockAcq) locks.insert(e.address);
    if (e.kind == EventKind::LockRel) locks.erase(e.address);
    if (!is_access(e.kind)) continue;

    const bool write = e.kind == EventKind::Write;
    auto [it, fresh] = vars.try_emplace(e.address);
    VarState& v = it->second;
    if (fresh) v.owner = e.tid;
    auto refine = [&] {
      if (!v.candidates) {
        v.candidates = locks;
        return;
      }
      std::set<std::uint64_t> next;
      std::set_intersection(v.candidates->begin(), v.candidates->end(), locks.begin(),
                            locks.end(), std::inserter(next, next.begin()));
      v.candidates = std::move(next);
    };
    // Candidates are refined from the first access on, so locks held by the
    // exclusive owner still count once the address becomes shared.
    refine();
    if (v.state == State::Exclusive && e.tid != v.owner)
      v.state = write ? State::SharedModified : State::Shared;
    else if (v.state == State::Shared && write)
      v.state = State::SharedModified;
    if (v.state == State::SharedModified && v.candidates && v.candidates->empty()) {
      // Pair with the latest conflicting access of another thread.
      const RaceAccess* other = nullptr;
      auto consider = [&](const std::map<std::uint32_t, RaceAccess>& m) {
        for (const auto& [t, a] : m)
          if (t != e.tid && (!other || a.ts > other->ts)) other = &a;
      };
      consider(v.last_write);
      if (write) consider(v.last_read);
      if (other) rep.add(e.address, *other, access_of(e));
    }
    (write ? v.last_write : v.last_read)[e.tid] = access_of(e);
  }
  return rep.take();
}

nlohmann::json report_to_json(const RaceReport& r) {
  auto acc = [](const RaceAccess& a) {
    return nlohmann::json{{"tid", a.tid}, {"origin", a.origin},
                          {"kind", event_kind_name(a.kind)}, {"ts", a.ts}};
  };
  return {{"address", r.address},
          {"first", acc(r.first)},
          {"second", acc(r.second)},
          {"detector", r.detector == Detector::HappensBefore ? "happens-before" : "lockset"}};
}

RaceReport report_from_json(const nlohmann::json& j) {
  auto acc = [](const nlohmann::json& a) {
    RaceAccess r;
    r.tid = a.at("tid").get<std::uint32_t>();
    r.origin = a.at("origin").get<std::string>();
    r.kind = a.at("kind").get<std::string>() == "write" ? EventKind::Write : EventKind::Read;
    r.ts = a.at("ts").get<std::uint64_t>();
    return r;
  };
  RaceReport r;
  r.address = j.at("address").get<std::uint64_t>();
  r.first = acc(j.at("first"));
  r.second = acc(j.at("second"));
  r.detector = j.at("detector").get<std::string>() == "lockset" ? Detector::Lockset
                                                                : Detector::HappensBefore;
  return r;
}

nlohmann::json reports_to_json(const std::vector<RaceReport>& rs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rs) a.push_back(report_to_json(r));
  return a;
}

}  // namespace tracerace
