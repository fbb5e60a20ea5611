#pragma once

#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/rng.hpp"
#include "gibbsdiag/types.hpp"

#include <variant>

namespace gibbsdiag::gaussian {

/// Multivariate normal with validated SPD covariance.
class GaussianDist {
 public:
  /// Throws InvalidArgument if the covariance is not symmetric (1e-10) or
  /// not positive definite.
  GaussianDist(Vector mean, Matrix covariance);

  const Vector& mean() const noexcept { return mean_; }
  const Matrix& covariance() const noexcept { return cov_; }
  Eigen::Index dim() const noexcept { return mean_.size(); }

  Vector sample(Rng& rng) const;
  double log_density(const Vector& x) const;

 private:
  Vector mean_;
  Matrix cov_;
  Matrix chol_;  // lower Cholesky factor
};

/// Symmetric positive definite within the relative eigenvalue tolerance.
bool is_spd(const Matrix& m, double rel_tol = 1e-10);

/// theta ~ N(prior), y_i | theta ~ N(theta, likelihood_cov), i = 1..n_obs.
struct GaussianToyModel {
  GaussianDist prior;
  Matrix likelihood_cov;
  int n_obs = 1;

  GaussianToyModel(GaussianDist prior, Matrix likelihood_cov, int n_obs = 1);
  Eigen::Index dim() const { return prior.dim(); }

  /// Posterior covariance (prior^-1 + n likelihood^-1)^-1; independent of Y.
  Matrix posterior_covariance() const;
};

enum class DivergenceKind { ReverseKL, ForwardKL };

const char* to_string(DivergenceKind kind);

/// How q(.|Y) is produced inside the Gaussian lab.
struct MeanField {
  DivergenceKind kind;
};
struct ExactPosterior {};
using Approximation = std::variant<MeanField, ExactPosterior>;

GaussianDist exact_posterior(const GaussianToyModel& model, const Matrix& observations);

/// Mean-field approximation of a Gaussian posterior: covariance
/// diag(S^-1)^-1 under reverse KL and diag(S) under forward KL.
GaussianDist mean_field_approx(const GaussianDist& posterior, DivergenceKind kind);

/// Covariance of q(.|Y) for the chosen approximation (independent of Y).
Matrix approximation_covariance(const GaussianToyModel& model, const Approximation& approx);

struct ProperPrior {
  GaussianDist dist;
};
struct ImproperPrior {
  double eigenvalue;  // <= tolerance
  Vector eigenvector;
};
using PointwisePriorResult = std::variant<ProperPrior, ImproperPrior>;

inline bool is_proper(const PointwisePriorResult& r) {
  return std::holds_alternative<ProperPrior>(r);
}

/// pi_Y(theta) ~ q(theta|Y) / f(Y|theta). Proper iff S = Sigma_q^-1 - n Sigma_l^-1
/// has smallest eigenvalue above 1e-10 * max|eig(S)|.
PointwisePriorResult pointwise_prior(const GaussianToyModel& model, const Matrix& observations,
                                     const Approximation& approx);

/// theta' | theta ~ N(offset + gain * theta, noise_cov).
struct GibbsTransition {
  Vector offset;
  Matrix gain;
  Matrix noise_cov;
};

GibbsTransition gibbs_transition(const GaussianToyModel& model, const Approximation& approx);

/// Solves gain X gain^T - X + noise = 0 through the Kronecker-vectorised
/// linear system. Throws NumericalError when the spectral radius of `a` is >= 1.
Matrix solve_discrete_lyapunov(const Matrix& a, const Matrix& b);

double spectral_radius(const Matrix& a);

/// Stationary law of the Gibbs chain: N(mu_p, Sigma_G).
GaussianDist gibbs_prior_analytic(const GaussianToyModel& model, const Approximation& approx);

/// d/2 (1 + ln 2 pi) + 1/2 ln det Sigma.
double gaussian_entropy(const GaussianDist& g);

/// ConditionalPair over latent theta (d) and observation vec(Y) (n*d, row-major by observation).
ConditionalPair make_conditional_pair(const GaussianToyModel& model, const Approximation& approx);

/// Observation vector -> n x d matrix.
Matrix unpack_observations(const Vector& y, Eigen::Index n_obs, Eigen::Index dim);

/// Canonical demo covariance, correlated along (1, 1).
Matrix canonical_correlated_cov();

/// "Setting prior": correlated prior, isotropic likelihood.
GaussianToyModel setting_prior_model(int n_obs = 1);
/// "Setting like": isotropic prior, correlated likelihood.
GaussianToyModel setting_like_model(int n_obs = 1);

}  // namespace gibbsdiag::gaussian
