#pragma once

#include "gibbsdiag/rng.hpp"
#include "gibbsdiag/types.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gibbsdiag::diag {

// ---------------------------------------------------------------------------
// Convergence monitoring
// ---------------------------------------------------------------------------

enum class RhatVariant { Classic, Split };

/// Gelman-Rubin potential scale reduction, one value per column. Every chain
/// is an (n x d) matrix of draws; all chains must share shape.
Vector gelman_rubin(std::span<const Matrix> chains, RhatVariant variant = RhatVariant::Classic);

/// Scalar convenience overload.
double gelman_rubin(const std::vector<std::vector<double>>& chains,
                    RhatVariant variant = RhatVariant::Classic);

/// Sample correlation between x_t and x_{t+k}.
double autocorrelation(std::span<const double> chain, std::size_t lag);

/// Standard error of the mean of a correlated sequence from non-overlapping
/// batch means; `batches` = 0 picks floor(sqrt(n)) batches.
double batch_means_standard_error(std::span<const double> chain, std::size_t batches = 0);

// ---------------------------------------------------------------------------
// Two-sample discrepancies
// ---------------------------------------------------------------------------

/// Unbiased U-statistic estimate of MMD^2 with kernel
/// exp(-|x - y|^2 / (2 bandwidth^2)). Rows are samples.
double mmd2(const Matrix& a, const Matrix& b, double bandwidth = 1.0);

/// Median pairwise distance of the pooled rows (capped subsample).
double median_heuristic_bandwidth(const Matrix& a, const Matrix& b);

struct PermutationTest {
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<double> null_samples;  // sorted ascending

  /// Empirical quantile of the permutation null.
  double null_quantile(double level) const;
};

/// MMD^2 of `a` vs `b` and its permutation null under label exchange.
PermutationTest mmd_permutation_test(const Matrix& a, const Matrix& b, double bandwidth,
                                     std::size_t permutations, Rng& rng);

/// Frobenius norm of the unbiased sample covariance.
double compactness(const Matrix& samples);

/// Unbiased sample covariance of the rows.
Matrix sample_covariance(const Matrix& samples);

// ---------------------------------------------------------------------------
// Simulation-based calibration
// ---------------------------------------------------------------------------

struct RankHistogram {
  std::vector<std::size_t> counts;
  std::size_t draws = 0;           // N
  std::size_t posterior_draws = 0; // L
  /// Pointwise 99% binomial band per bin: [0.5%, 99.5%] quantiles.
  std::pair<double, double> band_99{0.0, 0.0};

  std::size_t bins() const { return counts.size(); }

  /// Merge adjacent pairs of bins; the band is recomputed for the merged
  /// bin probability. Throws InvalidArgument on an odd bin count.
  RankHistogram rebinned() const;

  bool above_band(std::size_t bin) const { return static_cast<double>(counts.at(bin)) > band_99.second; }
  bool below_band(std::size_t bin) const { return static_cast<double>(counts.at(bin)) < band_99.first; }
};

/// Pointwise central band for a bin count ~ Binomial(N, p).
std::pair<double, double> binomial_band(std::size_t trials, double p, double coverage = 0.99);

struct ChiSquareResult {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

/// Pearson chi-square test of the counts against the uniform distribution.
ChiSquareResult chi_square_uniformity(const RankHistogram& hist);

struct SbcProblem {
  std::function<Vector(Rng&)> sample_prior;
  std::function<Vector(const Vector& theta, Rng&)> sample_likelihood;
  /// Fit q(.|y) once; the returned sampler is called L times.
  std::function<std::function<Vector(Rng&)>(const Vector& y)> fit_approximation;
  /// Scalar test statistic f(theta).
  std::function<double(const Vector&)> statistic;
};

/// Raised when the approximation fails during a repetition.
class SbcError : public Error {
 public:
  SbcError(std::size_t repetition, const std::string& what);
  std::size_t repetition() const noexcept { return repetition_; }

 private:
  std::size_t repetition_;
};

/// N repetitions of theta~ ~ prior, y~ ~ f(.|theta~), theta_1..L ~ q(.|y~);
/// rank = #{l : f(theta_l) < f(theta~)} with uniform tie-breaking.
RankHistogram sbc_ranks(const SbcProblem& problem, std::size_t n_draws,
                        std::size_t posterior_draws, Rng& rng);

/// Plain SVG bar chart with the band shaded behind the bars.
std::string rank_histogram_svg(const RankHistogram& hist, const std::string& title);
std::string rank_histogram_to_json(const RankHistogram& hist);

}  // namespace gibbsdiag::diag
