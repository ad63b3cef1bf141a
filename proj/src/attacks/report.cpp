#include "naslab/attacks/report.hpp"

#include <cmath>

#include "naslab/core/error.hpp"

namespace naslab {

double success_rate(const std::vector<AttackRecord>& records, const std::string& group) {
  double hit = 0.0, total = 0.0;
  for (const AttackRecord& r : records) {
    if (!group.empty() && r.group != group) continue;
    total += 1.0;
    hit += r.success ? 1.0 : 0.0;
  }
  return total > 0.0 ? hit / total : 0.0;
}

double mann_whitney_auc(const std::vector<double>& members, const std::vector<double>& nonmembers) {
  if (members.empty() || nonmembers.empty()) throw InputError("AUC needs members and nonmembers");
  double wins = 0.0;
  for (double a : members)
    for (double b : nonmembers) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return wins / (static_cast<double>(members.size()) * static_cast<double>(nonmembers.size()));
}

nlohmann::json compute_aggregates(const std::string& attack, const std::vector<AttackRecord>& records) {
  nlohmann::json agg = nlohmann::json::object();
  agg["count"] = records.size();
  if (attack == "evasion" || attack == "nes") {
    agg["asr"] = success_rate(records);
  } else if (attack == "backdoor" || attack == "poisoning") {
    double before = 0.0, after = 0.0, n = 0.0;
    for (const AttackRecord& r : records) {
      if (r.group != "clean") continue;
      n += 1.0;
      before += r.aux;
      after += r.success ? 1.0 : 0.0;
    }
    if (attack == "backdoor") agg["asr"] = success_rate(records, "trigger");
    if (n > 0.0) {
      agg["clean_accuracy_before"] = before / n;
      agg["clean_accuracy_after"] = after / n;
      agg["cad"] = before / n - after / n;
    }
  } else if (attack == "membership") {
    std::vector<double> mem, non;
    int excluded = 0;
    for (const AttackRecord& r : records) {
      if (!std::isfinite(r.aux)) {
        ++excluded;
        continue;
      }
      (r.group == "member" ? mem : non).push_back(r.aux);
    }
    agg["excluded_infinite"] = excluded;
    if (!mem.empty() && !non.empty()) agg["auc"] = mann_whitney_auc(mem, non);
  } else if (attack == "knockoff") {
    double s = 0.0;
    for (const AttackRecord& r : records) s += r.aux;
    agg["ace"] = records.empty() ? 0.0 : s / static_cast<double>(records.size());
  } else {
    throw ConfigError("no aggregate rule for attack '" + attack + "'");
  }
  return agg;
}

void to_json(nlohmann::json& j, const AttackRecord& r) {
  j = {{"id", r.input_id}, {"success", r.success}, {"group", r.group}};
  // JSON has no infinity; keep the sentinel as a string.
  if (std::isfinite(r.aux))
    j["aux"] = r.aux;
  else
    j["aux"] = r.aux > 0 ? "inf" : (r.aux < 0 ? "-inf" : "nan");
}

void from_json(const nlohmann::json& j, AttackRecord& r) {
  r.input_id = j.at("id").get<int>();
  r.success = j.at("success").get<bool>();
  r.group = j.value("group", std::string());
  const auto& a = j.at("aux");
  if (a.is_string()) {
    const std::string s = a.get<std::string>();
    r.aux = s == "inf" ? INFINITY : (s == "-inf" ? -INFINITY : NAN);
  } else {
    r.aux = a.get<double>();
  }
}

void to_json(nlohmann::json& j, const AttackReport& r) {
  j = {{"attack", r.attack}, {"model_id", r.model_id}, {"config", r.config}, {"records", r.records},
       {"aggregates", r.aggregates}};
}

void from_json(const nlohmann::json& j, AttackReport& r) {
  r.attack = j.at("attack").get<std::string>();
  r.model_id = j.value("model_id", std::string());
  r.config = j.value("config", nlohmann::json::object());
  r.records = j.at("records").get<std::vector<AttackRecord>>();
  r.aggregates = j.value("aggregates", nlohmann::json::object());
}

}  // namespace naslab
