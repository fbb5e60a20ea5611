#pragma once

#include "gibbsdiag/rng.hpp"
#include "gibbsdiag/types.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace gibbsdiag {

/// Draws one latent vector from an already fitted approximation q(.|y).
using ThetaSampler = std::function<Vector(Rng&)>;

/// Likelihood family f(.|theta) paired with a posterior-approximation method
/// q(.|y). Both callables must be pure given the Rng they receive. Instances
/// are shared read-only across chains unless they hold external state; see
/// PairFactory for the stateful case.
struct ConditionalPair {
  std::size_t latent_dim = 0;
  std::size_t observation_dim = 0;

  /// y ~ f(.|theta)
  std::function<Vector(const Vector& theta, Rng& rng)> sample_likelihood;

  /// Fits q(.|y) and returns a sampler for it. Throws on fit failure.
  std::function<ThetaSampler(const Vector& y)> fit_approximation;

  /// Optional; required only when a chain is initialised from the prior.
  std::function<Vector(Rng& rng)> sample_prior;

  void validate() const;
};

/// Builds one ConditionalPair per chain (for pairs owning a subprocess etc.).
using PairFactory = std::function<ConditionalPair(std::size_t chain_index)>;

struct SampleFromPrior {};

struct ChainConfig {
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::variant<SampleFromPrior, Vector> init = SampleFromPrior{};
  /// Defaults to steps / 10 when unset.
  std::optional<std::size_t> burn_in;
  std::size_t thinning = 1;

  std::size_t effective_burn_in() const { return burn_in.value_or(steps / 10); }
  void validate() const;
};

/// theta_0..theta_T as rows of `thetas`, y_0..y_{T-1} as rows of `ys`.
struct ChainTrace {
  Matrix thetas;
  Matrix ys;
  ChainConfig config;

  std::size_t steps() const { return static_cast<std::size_t>(ys.rows()); }
  std::size_t latent_dim() const { return static_cast<std::size_t>(thetas.cols()); }
  std::size_t observation_dim() const { return static_cast<std::size_t>(ys.cols()); }

  /// Step indices t = burn_in, burn_in + thinning, ... that are <= last.
  std::vector<std::size_t> retained_steps(std::size_t last) const;

  /// Post-burn-in, thinned theta draws (approximate Gibbs prior samples).
  Matrix gibbs_prior_samples() const;
};

/// Raised when a chain cannot continue: the approximation failed to fit or a
/// sampler produced a non-finite value.
class ChainError : public Error {
 public:
  ChainError(std::size_t step, Vector y, const std::string& what);

  std::size_t step() const noexcept { return step_; }
  const Vector& observation() const noexcept { return y_; }

 private:
  std::size_t step_;
  Vector y_;
};

/// Alternates y_t ~ f(.|theta_t) and theta_{t+1} ~ q(.|y_t) for cfg.steps steps.
ChainTrace simulate_gibbs_chain(const ConditionalPair& pair, const ChainConfig& cfg);

/// Runs `n_chains` independent chains with child seeds derived from cfg.seed.
/// At most `max_threads` chains run concurrently (0 = hardware concurrency).
std::vector<ChainTrace> simulate_chains(const PairFactory& factory, const ChainConfig& cfg,
                                        std::size_t n_chains, std::size_t max_threads = 0);

/// Samples of the two joint distributions a Gibbs chain visits. Row t of
/// `gibbs_joint` is (theta_t, y_t); row t of `evidence_joint` is
/// (theta_{t+1}, y_t). Both use the post-burn-in, thinned step indices.
struct JointSamples {
  Matrix gibbs_joint;
  Matrix evidence_joint;
};

JointSamples paired_joint_samples(const ChainTrace& trace);

enum class BandwidthRule { Fixed, MedianHeuristic };

struct CompatibilityOptions {
  double bandwidth = 1.0;
  BandwidthRule bandwidth_rule = BandwidthRule::Fixed;
  std::size_t permutations = 200;
  /// Pairs beyond this count are evenly subsampled; the permutation test is
  /// quadratic in time.
  std::size_t max_pairs = 10'000;
  std::uint64_t seed = 0;
};

struct CompatibilityScore {
  double score = 0.0;
  double bandwidth = 1.0;
  double p_value = 1.0;
  std::size_t pairs_used = 0;
  /// Permutation-null quantiles at `null_levels`.
  std::vector<double> null_levels;
  std::vector<double> null_quantiles;

  double null_quantile(double level) const;
};

/// Squared MMD between the Gibbs-joint and evidence-joint pair sets with a
/// permutation null built from the pooled pairs.
CompatibilityScore compatibility_score(const ChainTrace& trace,
                                       const CompatibilityOptions& options = {});

/// CSV with header step,theta_0..,y_0..; the y columns of the final row are empty.
void write_trace_csv(const ChainTrace& trace, std::ostream& out);
std::string chain_config_to_json(const ChainConfig& cfg);
ChainConfig chain_config_from_json(const std::string& text);

}  // namespace gibbsdiag
