#include <doctest.h>

#include "c5cc/gradcheck.hpp"

using namespace c5cc;

TEST_CASE("gradient check suite passes") {
  GradCheckOptions opt;
  opt.e2e_base_channels = 2;
  const auto cases = run_gradcheck_suite(opt);
  CHECK(cases.size() > 30);
  CHECK(cases.back().name == "end-to-end loss");
  for (const GradCheckCase& c : cases) {
    INFO(c.name << " worst " << c.worst);
    CHECK(c.passed);
  }
}
