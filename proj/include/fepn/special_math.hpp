#pragma once

// Scalar special functions used by the Beta entropy and uncertainty losses.
// All functions are pure and throw fepn::DomainError outside their domain.

namespace fepn::special {

/// ln Gamma(x) for x > 0 (Lanczos, g = 7).
double log_gamma(double x);

/// psi(x) = d/dx ln Gamma(x) for x > 0.
double digamma(double x);

/// psi'(x) for x > 0. Needed for gradients of digamma-based losses.
double trigamma(double x);

/// ln B(a, b) = ln Gamma(a) + ln Gamma(b) - ln Gamma(a + b).
double log_beta(double a, double b);

/// log(1 + e^x), stable for large |x|.
double softplus(double x);

/// d softplus / dx = 1 / (1 + e^-x).
double sigmoid(double x);

}  // namespace fepn::special
