#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace fds::selftest {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast closed-form and internal-consistency checks across the modules:
/// ZOH values, scan equivalences, cross-scan algebra, the FFSS scan count,
/// loss identities, the metric dominance chain, kNN and aggregation worked
/// examples, accumulation equivalence and checkpoint round trip. Exceptions
/// inside a check mark it failed.
std::vector<Check> run();

bool all_passed(const std::vector<Check>& checks);
nlohmann::json to_json(const std::vector<Check>& checks);

}  // namespace fds::selftest
