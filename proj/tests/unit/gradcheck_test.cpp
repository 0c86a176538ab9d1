#include <doctest.h>

#include "ace/tensor/gradcheck.hpp"

TEST_SUITE("gradient_suite") {
  TEST_CASE("every differentiable op matches central differences") {
    ace::gradcheck::SuiteOptions options;
    options.trials = 20;
    const auto result = ace::gradcheck::run_gradient_suite(7, options);
    CHECK(result.ops.size() >= 25);
    for (const auto& op : result.ops) {
      INFO(op.name << " max relative error " << op.max_rel_error);
      CHECK(op.trials == 20);
      CHECK(op.max_rel_error < 1e-4);
    }
    CHECK(result.passed);
  }
}
