// Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any
// criterion fails.

#include <cstdio>

#include "satt/testing/checks.hpp"

int main() {
  int failed = 0;
  for (const auto& spec : satt::testing::all_checks(true)) {
    const auto r = satt::testing::timed(spec);
    std::printf("%s\n", satt::testing::result_line(r).c_str());
    std::fflush(stdout);
    if (!r.pass) ++failed;
  }
  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
