#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace naslab {

/// One attacked input. `group` separates record families within a report
/// (e.g. "trigger" and "clean" for backdoors, "member" and "nonmember" for membership).
struct AttackRecord {
  int input_id = 0;
  bool success = false;
  double aux = 0.0;
  std::string group;
};

struct AttackReport {
  std::string attack;
  std::string model_id;
  nlohmann::json config = nlohmann::json::object();
  std::vector<AttackRecord> records;
  nlohmann::json aggregates = nlohmann::json::object();
};

/// Aggregates of `report.attack` derived from its records:
///   evasion / nes: asr; backdoor / poisoning: asr (trigger group) and cad (clean group,
///   aux = clean-model correctness, success = attacked-model correctness);
///   membership: auc over finite distances in aux; knockoff: ace = mean aux.
nlohmann::json compute_aggregates(const std::string& attack, const std::vector<AttackRecord>& records);

/// Fraction of successful records in `group` ("" matches every record).
double success_rate(const std::vector<AttackRecord>& records, const std::string& group = "");

/// Probability that a random member score exceeds a random nonmember score, ties counting one half.
double mann_whitney_auc(const std::vector<double>& members, const std::vector<double>& nonmembers);

void to_json(nlohmann::json& j, const AttackRecord& r);
void from_json(const nlohmann::json& j, AttackRecord& r);
void to_json(nlohmann::json& j, const AttackReport& r);
void from_json(const nlohmann::json& j, AttackReport& r);

}  // namespace naslab
