#pragma once

#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

namespace gibbsdiag::finite {

/// Likelihood F (n x m, rows f(.|theta)) and approximation Q (m x n, rows q(.|y)).
class FiniteModel {
 public:
  /// Throws InvalidArgument unless both are row-stochastic (1e-12) with
  /// matching shapes.
  FiniteModel(Matrix likelihood, Matrix approximation);

  const Matrix& likelihood() const noexcept { return f_; }
  const Matrix& approximation() const noexcept { return q_; }
  Eigen::Index latent_states() const noexcept { return f_.rows(); }
  Eigen::Index observation_states() const noexcept { return f_.cols(); }

 private:
  Matrix f_;
  Matrix q_;
};

bool is_row_stochastic(const Matrix& m, double tol = 1e-12);

/// P = F Q.
Matrix transition_matrix(const FiniteModel& model);

struct StationaryOptions {
  double tol = 1e-12;
  std::size_t max_iterations = 1'000'000;
};

/// Left fixed point of a row-stochastic matrix. Throws NumericalError with
/// "non-unique" when the chain is reducible (the fixed point is not unique)
/// and "non-convergent" when neither power iteration nor Cesaro averaging
/// reaches the tolerance.
Vector stationary_distribution(const Matrix& p, const StationaryOptions& options = {});

struct StationaryResult {
  Vector pi_g;  // over theta
  Vector p_g;   // over y
  double residual = 0.0;  // |pi P - pi|_1
};

StationaryResult gibbs_stationary(const FiniteModel& model, const StationaryOptions& options = {});

struct ImproperFlag {};
using PointwisePrior = std::variant<Vector, ImproperFlag>;

/// Normalised Q[y, .] / F[., y]; improper when F[theta, y] = 0 < Q[y, theta].
PointwisePrior pointwise_prior_exact(const FiniteModel& model, Eigen::Index y_index);

struct MixtureGaps {
  double stationarity_gap = 0.0;               // pi_G = sum_y g(y) q(.|y)
  std::optional<double> pointwise_mixture_gap; // pi_G = sum_y g~(y) pi_y; empty if any pi_y improper
};

MixtureGaps verify_mixture_identities(const FiniteModel& model);

struct PerturbOptions {
  double margin = 1e-6;
  double kernel_rel_tol = 1e-10;
};

/// Returns Q~ = Q + eps x0 w^T with x0 in ker F and w orthogonal to 1, so
/// F Q~ = F Q while Q~ != Q. Throws InvalidArgument when ker F is trivial.
FiniteModel perturb_approximation(const FiniteModel& model, std::uint64_t seed,
                                  const PerturbOptions& options = {});

/// max |F Q - F Q_G| where Q_G holds the exact posteriors under pi_G.
double weak_compatibility_gap(const FiniteModel& model);

/// Joint distribution (n x m, sums to one) -> its two conditionals.
FiniteModel model_from_joint(const Matrix& joint);

/// ConditionalPair whose latent and observation are one-element vectors
/// holding a state index.
ConditionalPair make_conditional_pair(const FiniteModel& model);

/// {"F": [[...]], "Q": [[...]]}
FiniteModel model_from_json(const std::string& text);
std::string model_to_json(const FiniteModel& model);
FiniteModel load_model(const std::string& path);

/// The 2 x 3 example with known P = [[.43,.57],[.39,.61]].
FiniteModel reference_example();
/// The alternative Q~ published alongside the reference example.
Matrix reference_example_alternative_q();

}  // namespace gibbsdiag::finite
