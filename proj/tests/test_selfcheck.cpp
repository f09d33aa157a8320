#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <string>

#include "kwd/selfcheck.hpp"

// The self-check suites are oracle-driven property tests; every check in
// every suite must hold.
TEST_CASE("all self-check suites pass") {
  const auto scratch = std::filesystem::temp_directory_path() / "kwd-selfcheck-unit";
  const auto suites = kwd::run_all_checks(scratch.string());
  REQUIRE(!suites.empty());
  for (const auto& s : suites) {
    CAPTURE(s.name);
    INFO("suite " << s.name << ": " << s.checks << " checks");
    for (const auto& f : s.failures) MESSAGE("failure: " << f);
    CHECK(s.passed());
    CHECK(s.checks > 0);
  }
}
