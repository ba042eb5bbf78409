#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "doctest.h"
#include "fepn/errors.hpp"
#include "fepn/special_math.hpp"

using namespace fepn;
using boost::multiprecision::cpp_bin_float_50;

namespace {

double ref_lgamma(double x) { return static_cast<double>(boost::math::lgamma(cpp_bin_float_50(x))); }
double ref_digamma(double x) { return static_cast<double>(boost::math::digamma(cpp_bin_float_50(x))); }
double ref_log_beta(double a, double b) {
  const cpp_bin_float_50 A(a), B(b);
  return static_cast<double>(boost::math::lgamma(A) + boost::math::lgamma(B) - boost::math::lgamma(A + B));
}

// 1000 log-spaced points on [1e-3, 1e6].
std::vector<double> log_grid() {
  std::vector<double> xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(std::pow(10.0, -3.0 + 9.0 * i / 999.0));
  return xs;
}

}  // namespace

TEST_CASE("log_gamma examples") {
  CHECK(special::log_gamma(1.0) == 0.0);
  CHECK(special::log_gamma(2.0) == 0.0);
  CHECK(special::log_gamma(0.5) == doctest::Approx(0.5 * std::log(std::numbers::pi)).epsilon(1e-14));
  CHECK(special::log_gamma(0.5) == doctest::Approx(0.5723649429).epsilon(1e-10));
}

TEST_CASE("digamma examples") {
  CHECK(special::digamma(2.0) - special::digamma(1.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(special::digamma(1.0) == doctest::Approx(-0.5772156649015329).epsilon(1e-14));
  CHECK(special::digamma(10.0) == doctest::Approx(2.2517525890667211).epsilon(1e-14));
}

TEST_CASE("log_beta examples") {
  CHECK(special::log_beta(1.0, 1.0) == doctest::Approx(0.0));
  CHECK(special::log_beta(2.0, 2.0) == doctest::Approx(std::log(1.0 / 6.0)).epsilon(1e-14));
  CHECK(special::log_beta(3.0, 1.0) == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-14));
}

TEST_CASE("softplus examples and stability") {
  CHECK(special::softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(special::softplus(-100.0) == doctest::Approx(3.720075976020836e-44).epsilon(1e-12));
  CHECK(std::abs(special::softplus(100.0) - 100.0) <= 1e-12);
  CHECK(std::isfinite(special::softplus(1000.0)));
  CHECK(special::softplus(-1000.0) >= 0.0);
  double prev = special::softplus(-50.0);
  for (double x = -49.5; x <= 50.0; x += 0.5) {
    const double y = special::softplus(x);
    CHECK(y > prev);
    prev = y;
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(special::log_gamma(0.0), DomainError);
  CHECK_THROWS_AS(special::log_gamma(-1.5), DomainError);
  CHECK_THROWS_AS(special::digamma(0.0), DomainError);
  CHECK_THROWS_AS(special::trigamma(-2.0), DomainError);
  CHECK_THROWS_AS(special::log_beta(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(special::log_beta(1.0, -1.0), DomainError);
  CHECK_THROWS_AS(special::softplus(std::numeric_limits<double>::infinity()), DomainError);
  CHECK_THROWS_AS(special::softplus(std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST_CASE("log_gamma matches the 50-digit oracle on [1e-3, 1e6]") {
  double worst = 0.0;
  for (double x : log_grid()) {
    const double ref = ref_lgamma(x);
    worst = std::max(worst, std::abs(special::log_gamma(x) - ref) / std::max(1.0, std::abs(ref)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("digamma matches the 50-digit oracle on [1e-3, 1e6]") {
  double worst = 0.0;
  for (double x : log_grid()) worst = std::max(worst, std::abs(special::digamma(x) - ref_digamma(x)));
  CHECK(worst <= 1e-10);
}

TEST_CASE("log_beta matches the 50-digit oracle") {
  const auto xs = log_grid();
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double a = xs[i];
    const double b = xs[(i * 37 + 11) % xs.size()];
    const double ref = ref_log_beta(a, b);
    worst = std::max(worst, std::abs(special::log_beta(a, b) - ref) / std::max(1.0, std::abs(ref)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("trigamma matches the derivative of the digamma oracle") {
  for (double x : {0.01, 0.3, 1.0, 2.5, 7.0, 40.0, 1e3}) {
    const double ref = static_cast<double>(boost::math::trigamma(cpp_bin_float_50(x)));
    CHECK(special::trigamma(x) == doctest::Approx(ref).epsilon(1e-11));
  }
}

TEST_CASE("digamma recurrence") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 100.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    worst = std::max(worst, std::abs(special::digamma(x + 1.0) - special::digamma(x) - 1.0 / x));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("log_beta is symmetric bit for bit") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(1e-3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    REQUIRE(special::log_beta(a, b) == special::log_beta(b, a));
  }
}

TEST_CASE("digamma is the derivative of log_gamma") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.05, 50.0);
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng);
    const double fd = (special::log_gamma(x + h) - special::log_gamma(x - h)) / (2.0 * h);
    CHECK(std::abs(fd - special::digamma(x)) <= 1e-6);
  }
}

TEST_CASE("sigmoid is the derivative of softplus") {
  for (double x : {-30.0, -3.0, -0.5, 0.0, 0.7, 4.0, 25.0}) {
    const double h = 1e-6;
    const double fd = (special::softplus(x + h) - special::softplus(x - h)) / (2.0 * h);
    CHECK(special::sigmoid(x) == doctest::Approx(fd).epsilon(1e-7));
  }
}
