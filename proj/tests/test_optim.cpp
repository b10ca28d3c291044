#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "carpe/optim.hpp"
#include "carpe/tensor.hpp"

using Catch::Matchers::WithinAbs;

namespace {

using T = carpe::Tensor<double>;

std::vector<T> one_param(std::vector<double> values, std::vector<double> grads) {
  const int n = static_cast<int>(values.size());
  T p({n}, std::move(values));
  p.set_requires_grad(true);
  auto g = p.grad();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    g[i] = grads[i];
  }
  return {p};
}

}  // namespace

TEST_CASE("clip_global_norm") {
  SECTION("scales an oversized gradient to the threshold") {
    auto params = one_param({0, 0}, {6.0, 8.0});  // norm 10
    const double factor = carpe::clip_global_norm(std::span<T>(params), 5.0);
    CHECK(factor == 0.5);
    CHECK(params[0].grad()[0] == 3.0);
    CHECK(params[0].grad()[1] == 4.0);
  }

  SECTION("leaves a gradient at or under the threshold untouched") {
    auto params = one_param({0, 0}, {3.0, 4.0});  // norm 5
    CHECK(carpe::clip_global_norm(std::span<T>(params), 5.0) == 1.0);
    CHECK(params[0].grad()[0] == 3.0);
  }

  SECTION("is idempotent") {
    auto params = one_param({0, 0, 0}, {17.3, -42.9, 5.77});
    carpe::clip_global_norm(std::span<T>(params), 5.0);
    const std::vector<double> once(params[0].grad().begin(), params[0].grad().end());
    const double second = carpe::clip_global_norm(std::span<T>(params), 5.0);
    CHECK(second == 1.0);
    CHECK(std::vector<double>(params[0].grad().begin(), params[0].grad().end()) == once);
  }

  SECTION("norm spans all parameters") {
    auto a = one_param({0}, {6.0});
    auto b = one_param({0}, {8.0});
    std::vector<T> params{a[0], b[0]};
    CHECK(carpe::clip_global_norm(std::span<T>(params), 5.0) == 0.5);
    CHECK(a[0].grad()[0] == 3.0);
    CHECK(b[0].grad()[0] == 4.0);
  }

  SECTION("zero gradients stay put") {
    auto params = one_param({1.0}, {0.0});
    CHECK(carpe::clip_global_norm(std::span<T>(params), 5.0) == 1.0);
  }

  SECTION("rejects a non-positive threshold") {
    auto params = one_param({0}, {1.0});
    CHECK_THROWS_AS(carpe::clip_global_norm(std::span<T>(params), 0.0), std::invalid_argument);
  }
}

TEST_CASE("adam_step") {
  SECTION("first step moves by about lr against the gradient") {
    // With m_hat = v_hat = g on step one, the update is lr * g / (|g| + eps).
    auto params = one_param({0.0}, {1.0});
    carpe::AdamState<double> state(std::span<const T>(params), 0.01);
    carpe::adam_step(std::span<T>(params), state);
    CHECK_THAT(params[0].values()[0], WithinAbs(-0.01, 1e-9));
    CHECK(state.step_count == 1);
  }

  SECTION("identical parameters get identical updates") {
    auto params = one_param({0.3, 0.3}, {-0.7, -0.7});
    carpe::AdamState<double> state(std::span<const T>(params), 0.01);
    for (int i = 0; i < 5; ++i) {
      carpe::adam_step(std::span<T>(params), state);
    }
    CHECK(params[0].values()[0] == params[0].values()[1]);
  }

  SECTION("bias correction matches the closed form over several steps") {
    // Constant gradient g keeps m_hat = g and v_hat = g^2 exactly, so every
    // step must move by lr * g / (|g| + eps), independent of step count.
    auto params = one_param({0.0}, {2.0});
    carpe::AdamState<double> state(std::span<const T>(params), 0.01);
    double prev = 0.0;
    for (int i = 0; i < 4; ++i) {
      carpe::adam_step(std::span<T>(params), state);
      const double moved = params[0].values()[0] - prev;
      prev = params[0].values()[0];
      CHECK_THAT(moved, WithinAbs(-0.01, 1e-8));
    }
  }

  SECTION("a parameter without gradients is a contract violation") {
    std::vector<T> params{T({2})};
    carpe::AdamState<double> state(std::span<const T>(params), 0.01);
    CHECK_THROWS_AS(carpe::adam_step(std::span<T>(params), state), std::logic_error);
  }

  SECTION("state built for a different parameter list is rejected") {
    auto params = one_param({0.0}, {1.0});
    auto other = one_param({0.0, 0.0}, {1.0, 1.0});
    carpe::AdamState<double> state(std::span<const T>(params), 0.01);
    std::vector<T> two{params[0], other[0]};
    CHECK_THROWS_AS(carpe::adam_step(std::span<T>(two), state), std::logic_error);
  }
}
