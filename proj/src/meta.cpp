#include "spear/meta.hpp"

#include <algorithm>
#include <sstream>

#include "spear/algebra.hpp"

namespace spear::meta {

Value RefinerStats::to_json() const {
  Value v = Value::object();
  v["mean_confidence_delta"] = mean_confidence_delta;
  v["mean_latency_s"] = mean_latency_s;
  v["mean_token_delta"] = mean_token_delta;
  v["n_applied"] = n_applied;
  v["refiner_id"] = refiner_id;
  v["retry_follow_rate"] = retry_follow_rate;
  v["trigger"] = trigger;
  return v;
}

RefinerStats RefinerStats::from_json(const Value& v) {
  RefinerStats r;
  r.refiner_id = v.value("refiner_id", "");
  r.trigger = v.value("trigger", "");
  r.n_applied = v.value("n_applied", 0);
  r.mean_confidence_delta = v.value("mean_confidence_delta", 0.0);
  r.mean_token_delta = v.value("mean_token_delta", 0.0);
  r.mean_latency_s = v.value("mean_latency_s", 0.0);
  r.retry_follow_rate = v.value("retry_follow_rate", 0.0);
  return r;
}

Value StatsTable::to_json() const {
  Value v = Value::object();
  Value arr = Value::array();
  for (const auto& row : rows) arr.push_back(row.to_json());
  v["rows"] = arr;
  v["unmeasured_applications"] = unmeasured_applications;
  return v;
}

std::string StatsTable::to_csv() const {
  std::ostringstream os;
  os << "refiner_id,trigger,n_applied,mean_confidence_delta,mean_token_delta,mean_latency_s,"
        "retry_follow_rate\n";
  for (const auto& row : rows) {
    std::string trigger = row.trigger;
    std::replace(trigger.begin(), trigger.end(), ',', ';');
    os << row.refiner_id << "," << trigger << "," << row.n_applied << ","
       << row.mean_confidence_delta << "," << row.mean_token_delta << "," << row.mean_latency_s
       << "," << row.retry_follow_rate << "\n";
  }
  return os.str();
}

namespace {

bool is_gen_event(const RunEvent& e) {
  return (e.kind == OpKind::Gen || e.kind == OpKind::FusedGen) && e.confidence >= 0.0;
}

struct Accum {
  std::size_t n = 0;
  double confidence_delta_sum = 0.0;
  double token_delta_sum = 0.0;
  double latency_sum = 0.0;
  std::size_t followed = 0;
};

}  // namespace

StatsTable refiner_stats(const std::vector<std::vector<RunEvent>>& runs) {
  StatsTable table;
  std::map<std::pair<std::string, std::string>, Accum> buckets;

  for (const auto& events : runs) {
    for (std::size_t i = 0; i < events.size(); ++i) {
      const RunEvent& e = events[i];
      if (e.kind != OpKind::Ref || e.refiner_id.empty()) continue;

      // Bracketing GENs on the same prompt key.
      const RunEvent* before = nullptr;
      const RunEvent* after = nullptr;
      for (std::size_t j = i; j-- > 0;) {
        if (is_gen_event(events[j]) && events[j].prompt_key == e.prompt_key) {
          before = &events[j];
          break;
        }
      }
      bool followed = false;
      for (std::size_t j = i + 1; j < events.size(); ++j) {
        if (after == nullptr && is_gen_event(events[j]) && events[j].prompt_key == e.prompt_key) {
          after = &events[j];
        }
        if (events[j].kind == OpKind::Ref && events[j].prompt_key == e.prompt_key) {
          followed = true;
        }
      }

      if (before == nullptr || after == nullptr) {
        ++table.unmeasured_applications;
        continue;
      }
      Accum& acc = buckets[{e.refiner_id, e.trigger}];
      ++acc.n;
      acc.confidence_delta_sum += after->confidence - before->confidence;
      acc.token_delta_sum += static_cast<double>(after->usage.prompt_tokens) -
                             static_cast<double>(before->usage.prompt_tokens);
      acc.latency_sum += e.duration_s;
      if (followed) ++acc.followed;
    }
  }

  for (const auto& [key, acc] : buckets) {
    RefinerStats row;
    row.refiner_id = key.first;
    row.trigger = key.second;
    row.n_applied = acc.n;
    row.mean_confidence_delta = acc.confidence_delta_sum / static_cast<double>(acc.n);
    row.mean_token_delta = acc.token_delta_sum / static_cast<double>(acc.n);
    row.mean_latency_s = acc.latency_sum / static_cast<double>(acc.n);
    row.retry_follow_rate = static_cast<double>(acc.followed) / static_cast<double>(acc.n);
    table.rows.push_back(std::move(row));
  }

  std::sort(table.rows.begin(), table.rows.end(), [](const RefinerStats& a, const RefinerStats& b) {
    if (a.mean_confidence_delta != b.mean_confidence_delta) {
      return a.mean_confidence_delta > b.mean_confidence_delta;
    }
    if (a.refiner_id != b.refiner_id) return a.refiner_id < b.refiner_id;
    return a.trigger < b.trigger;
  });
  return table;
}

std::optional<std::string> recommend_refiner(const StatsTable& stats, const ConditionExpr& trigger,
                                             std::size_t support) {
  std::string canon = to_string(trigger);
  for (const auto& row : stats.rows) {  // rows sorted by delta descending
    if (row.trigger == canon && row.n_applied >= support) return row.refiner_id;
  }
  return std::nullopt;
}

Value TraceRow::to_json() const {
  Value v = Value::object();
  v["action"] = action;
  v["index"] = index;
  Value m = Value::object();
  for (const auto& [k, val] : metrics) m[k] = val;
  v["metrics"] = m;
  v["mode"] = mode;
  v["refiner_id"] = refiner_id;
  v["text_size_delta"] = text_size_delta;
  v["trigger"] = trigger;
  return v;
}

std::vector<TraceRow> history_trace(const PromptEntry& entry) {
  std::vector<TraceRow> rows;
  std::string prev_text;
  for (std::size_t i = 0; i < entry.ref_log.size(); ++i) {
    std::vector<RefLogRecord> prefix(entry.ref_log.begin(),
                                     entry.ref_log.begin() + static_cast<long>(i) + 1);
    PromptEntry replayed = replay_log(entry.key, prefix);
    const RefLogRecord& rec = entry.ref_log[i];
    TraceRow row;
    row.index = i;
    row.action = to_string(rec.action);
    row.mode = to_string(rec.mode);
    row.refiner_id = rec.refiner_id;
    row.trigger = rec.trigger;
    row.text_size_delta = static_cast<long long>(replayed.text.size()) -
                          static_cast<long long>(prev_text.size());
    row.metrics = rec.metrics_snapshot;
    rows.push_back(std::move(row));
    prev_text = replayed.text;
  }
  return rows;
}

}  // namespace spear::meta
