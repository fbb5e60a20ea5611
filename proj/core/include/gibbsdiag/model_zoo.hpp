#pragma once

#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/gaussian_lab.hpp"
#include "gibbsdiag/rng.hpp"
#include "gibbsdiag/types.hpp"

#include <cstddef>
#include <functional>
#include <optional>

namespace gibbsdiag::zoo {

// ---------------------------------------------------------------------------
// Sum of log-normals
// ---------------------------------------------------------------------------

/// Latent (mu, sigma^2) with mu ~ N(0, 1), sigma^2 ~ Exp(1); the observation
/// is the sum of `terms` i.i.d. LogNormal(mu, sigma^2) draws.
struct LogNormalSumModel {
  int terms = 10;

  void validate() const;
  Vector sample_prior(Rng& rng) const;
  /// Log prior density of (mu, sigma^2); -inf outside sigma^2 > 0.
  double log_prior(double mu, double sigma2) const;
};

double lognormal_sum_sample(double mu, double sigma2, int terms, Rng& rng);

/// LogNormal(alpha, beta2) matching the first two moments of the L-fold sum.
struct FWParams {
  double alpha;
  double beta2;
};

FWParams fenton_wilkinson(double mu, double sigma2, int terms);

/// Coordinates the Laplace Gaussian lives in.
///  - Natural: (mu, sigma^2) directly; draws with sigma^2 <= 0 are rejected.
///  - LogVariance: (mu, log sigma^2); draws are mapped back with exp.
enum class LaplaceCoordinates { Natural, LogVariance };

struct LaplaceApprox {
  gaussian::GaussianDist dist;
  LaplaceCoordinates coordinates;
  std::size_t newton_iterations = 0;
  double gradient_norm = 0.0;
};

struct LaplaceOptions {
  std::size_t max_iterations = 200;
  std::size_t restarts = 5;
  double gradient_tol = 1e-9;
  double fd_relative_step = 1e-5;
};

/// Objective for a generic Laplace fit: value and gradient of a log density.
struct LogDensity {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
};

/// Damped Newton ascent (backtracking, up to 30 halvings) from each start in
/// turn, Hessian by central differences of the gradient. Returns mode and
/// covariance -H^-1. Throws NumericalError on non-convergence or a
/// non-negative-definite Hessian at the mode.
struct LaplaceFit {
  Vector mode;
  Matrix covariance;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

LaplaceFit laplace_fit(const LogDensity& target, const std::vector<Vector>& starts,
                       const LaplaceOptions& options = {});

/// log pi(mu, sigma^2) + log f~(y | mu, sigma^2) in the chosen coordinates
/// (LogVariance includes the log-Jacobian of sigma^2 = exp(u)).
LogDensity lognormal_surrogate_posterior(double y, const LogNormalSumModel& model,
                                         LaplaceCoordinates coordinates);

/// Fenton-Wilkinson likelihood followed by a Laplace approximation. The
/// surrogate posterior has no interior mode in (mu, sigma^2) (it is unbounded
/// as sigma^2 -> 0), so the fit is done in LogVariance coordinates.
LaplaceApprox laplace_approx(double y, const LogNormalSumModel& model,
                             const LaplaceOptions& options = {});

struct LaplaceDraw {
  Vector theta;  // (mu, sigma^2), sigma^2 > 0
  std::size_t rejections = 0;
};

/// Draws (mu, sigma^2) from the Laplace approximation; Natural coordinates
/// rejection-resample until sigma^2 > 0 and throw NumericalError when the
/// acceptance rate falls below 1e-3 over 1e4 attempts.
LaplaceDraw laplace_sample(const LaplaceApprox& approx, Rng& rng);
LaplaceDraw laplace_sample(const gaussian::GaussianDist& dist, LaplaceCoordinates coordinates,
                           Rng& rng);

ConditionalPair lognormal_pair(const LogNormalSumModel& model, const LaplaceOptions& options = {});

// ---------------------------------------------------------------------------
// Stochastic volatility (generative model only)
// ---------------------------------------------------------------------------

struct StochVolModel {
  int length = 100;
  double sigma = 0.09;
  double nu = 12.0;
  double theta0 = 0.0;

  void validate() const;
};

/// Gaussian random walk from theta0 with step standard deviation sigma.
Vector stochvol_sample_prior(const StochVolModel& model, Rng& rng);

/// y_i ~ StudentT(nu, 0, exp(theta_i)), via normal / sqrt(chi2 / nu).
Vector stochvol_sample_obs(const Vector& theta, double nu, Rng& rng);

/// Likelihood half of a ConditionalPair; pair it with an external approximator.
ConditionalPair stochvol_likelihood_pair(const StochVolModel& model);

// ---------------------------------------------------------------------------
// Gaussian conditional pairs with known (in)compatibility
// ---------------------------------------------------------------------------

enum class ArnoldVariant { Compatible, Incompatible };

/// Compatible:   f(y|t) = N(4/(1+t^2), 1/(1+t^2)), q(t|y) = N(4/(1+y^2), 1/(1+y^2)).
/// Incompatible: f(y|t) = N(t/2, 1/(1+t^2)),       q(t|y) = N(y/2, 1/(1+y^2)).
ConditionalPair arnold_pair(ArnoldVariant variant);

/// Unnormalised log joint of the compatible variant,
/// 4y + 4t - t^2/2 - y^2/2 - t^2 y^2 / 2.
double arnold_compatible_log_joint(double theta, double y);

}  // namespace gibbsdiag::zoo
