#include "gibbsdiag/core_engine.hpp"

#include "gibbsdiag/diagnostics.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace gibbsdiag {

namespace {

std::string describe(const Vector& v) {
  std::ostringstream os;
  os << '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) os << ", ";
    os << v[i];
  }
  os << ']';
  return os.str();
}

void check_draw(const Vector& v, std::size_t expected_dim, const char* what) {
  if (static_cast<std::size_t>(v.size()) != expected_dim) {
    throw InvalidArgument(std::string(what) + " returned a vector of dimension " +
                          std::to_string(v.size()) + ", expected " +
                          std::to_string(expected_dim));
  }
  if (!v.allFinite()) throw NumericalError(std::string(what) + " produced a non-finite draw");
}

}  // namespace

void ConditionalPair::validate() const {
  if (latent_dim == 0 || observation_dim == 0) {
    throw InvalidArgument("ConditionalPair dimensions must be positive");
  }
  if (!sample_likelihood || !fit_approximation) {
    throw InvalidArgument("ConditionalPair needs both a likelihood sampler and an approximator");
  }
}

void ChainConfig::validate() const {
  if (steps == 0) throw InvalidArgument("ChainConfig.steps must be positive");
  if (thinning == 0) throw InvalidArgument("ChainConfig.thinning must be at least 1");
  if (effective_burn_in() + 1 > steps) {
    throw InvalidArgument("ChainConfig.burn_in must be smaller than steps");
  }
}

ChainError::ChainError(std::size_t step, Vector y, const std::string& what)
    : Error("chain failed at step " + std::to_string(step) + " (y = " + describe(y) +
            "): " + what),
      step_(step),
      y_(std::move(y)) {}

std::vector<std::size_t> ChainTrace::retained_steps(std::size_t last) const {
  std::vector<std::size_t> out;
  const std::size_t thin = std::max<std::size_t>(config.thinning, 1);
  for (std::size_t t = config.effective_burn_in(); t <= last; t += thin) out.push_back(t);
  return out;
}

Matrix ChainTrace::gibbs_prior_samples() const {
  const auto idx = retained_steps(steps());
  Matrix out(static_cast<Eigen::Index>(idx.size()), thetas.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = thetas.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

ChainTrace simulate_gibbs_chain(const ConditionalPair& pair, const ChainConfig& cfg) {
  pair.validate();
  cfg.validate();

  Rng rng(cfg.seed);
  Vector theta;
  if (const auto* init = std::get_if<Vector>(&cfg.init)) {
    theta = *init;
  } else {
    if (!pair.sample_prior) {
      throw InvalidArgument("chain initialised from the prior but the pair has no prior sampler");
    }
    theta = pair.sample_prior(rng);
  }
  if (static_cast<std::size_t>(theta.size()) != pair.latent_dim) {
    throw InvalidArgument("initial latent has dimension " + std::to_string(theta.size()) +
                          ", expected " + std::to_string(pair.latent_dim));
  }
  if (!theta.allFinite()) throw InvalidArgument("initial latent is not finite");

  const auto steps = static_cast<Eigen::Index>(cfg.steps);
  ChainTrace trace;
  trace.config = cfg;
  trace.thetas.resize(steps + 1, static_cast<Eigen::Index>(pair.latent_dim));
  trace.ys.resize(steps, static_cast<Eigen::Index>(pair.observation_dim));
  trace.thetas.row(0) = theta.transpose();

  Vector y;
  for (Eigen::Index t = 0; t < steps; ++t) {
    const auto step = static_cast<std::size_t>(t);
    try {
      y = pair.sample_likelihood(theta, rng);
      check_draw(y, pair.observation_dim, "likelihood sampler");
    } catch (const ChainError&) {
      throw;
    } catch (const std::exception& e) {
      throw ChainError(step, Vector(), std::string("likelihood sampler: ") + e.what());
    }
    try {
      const ThetaSampler q = pair.fit_approximation(y);
      theta = q(rng);
      check_draw(theta, pair.latent_dim, "approximation sampler");
    } catch (const ChainError&) {
      throw;
    } catch (const std::exception& e) {
      throw ChainError(step, y, e.what());
    }
    trace.ys.row(t) = y.transpose();
    trace.thetas.row(t + 1) = theta.transpose();
  }
  return trace;
}

std::vector<ChainTrace> simulate_chains(const PairFactory& factory, const ChainConfig& cfg,
                                        std::size_t n_chains, std::size_t max_threads) {
  if (n_chains == 0) throw InvalidArgument("simulate_chains needs at least one chain");
  if (max_threads == 0) max_threads = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(max_threads, n_chains);

  std::vector<ChainTrace> traces(n_chains);
  std::vector<std::exception_ptr> errors(n_chains);
  const Rng root(cfg.seed);

  auto run_one = [&](std::size_t i) {
    try {
      ChainConfig child = cfg;
      child.seed = root.split(i).seed();
      traces[i] = simulate_gibbs_chain(factory(i), child);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (workers <= 1) {
    for (std::size_t i = 0; i < n_chains; ++i) run_one(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= n_chains) return;
            i = next++;
          }
          run_one(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return traces;
}

JointSamples paired_joint_samples(const ChainTrace& trace) {
  if (trace.steps() == 0) throw InvalidArgument("empty trace");
  const auto idx = trace.retained_steps(trace.steps() - 1);
  if (idx.empty()) throw InvalidArgument("no post-burn-in pairs in trace");

  const Eigen::Index d = trace.thetas.cols();
  const Eigen::Index m = trace.ys.cols();
  const auto n = static_cast<Eigen::Index>(idx.size());
  JointSamples out{Matrix(n, d + m), Matrix(n, d + m)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto t = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]);
    out.gibbs_joint.row(i) << trace.thetas.row(t), trace.ys.row(t);
    out.evidence_joint.row(i) << trace.thetas.row(t + 1), trace.ys.row(t);
  }
  return out;
}

double CompatibilityScore::null_quantile(double level) const {
  for (std::size_t i = 0; i < null_levels.size(); ++i) {
    if (std::abs(null_levels[i] - level) < 1e-12) return null_quantiles[i];
  }
  throw InvalidArgument("null quantile level not computed");
}

namespace {

Matrix evenly_subsample(const Matrix& rows, std::size_t cap) {
  const auto n = static_cast<std::size_t>(rows.rows());
  if (n <= cap) return rows;
  Matrix out(static_cast<Eigen::Index>(cap), rows.cols());
  for (std::size_t i = 0; i < cap; ++i) {
    out.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(i * n / cap));
  }
  return out;
}

}  // namespace

CompatibilityScore compatibility_score(const ChainTrace& trace, const CompatibilityOptions& options) {
  const JointSamples joint = paired_joint_samples(trace);
  if (joint.gibbs_joint.rows() < 10) {
    throw InvalidArgument("compatibility_score needs at least 10 post-burn-in pairs, got " +
                          std::to_string(joint.gibbs_joint.rows()));
  }
  if (options.permutations == 0) throw InvalidArgument("permutations must be positive");

  const Matrix a = evenly_subsample(joint.gibbs_joint, options.max_pairs);
  const Matrix b = evenly_subsample(joint.evidence_joint, options.max_pairs);

  double bandwidth = options.bandwidth;
  if (options.bandwidth_rule == BandwidthRule::MedianHeuristic) {
    bandwidth = diag::median_heuristic_bandwidth(a, b);
  }
  if (!(bandwidth > 0.0)) throw InvalidArgument("bandwidth must be positive");

  Rng rng(options.seed);
  const diag::PermutationTest test =
      diag::mmd_permutation_test(a, b, bandwidth, options.permutations, rng);

  CompatibilityScore out;
  out.score = std::max(0.0, test.statistic);
  out.bandwidth = bandwidth;
  out.p_value = test.p_value;
  out.pairs_used = static_cast<std::size_t>(a.rows());
  out.null_levels = {0.5, 0.9, 0.95, 0.99};
  for (double level : out.null_levels) out.null_quantiles.push_back(test.null_quantile(level));
  return out;
}

void write_trace_csv(const ChainTrace& trace, std::ostream& out) {
  const Eigen::Index d = trace.thetas.cols();
  const Eigen::Index m = trace.ys.cols();
  out << "step";
  for (Eigen::Index j = 0; j < d; ++j) out << ",theta_" << j;
  for (Eigen::Index j = 0; j < m; ++j) out << ",y_" << j;
  out << '\n';

  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (Eigen::Index t = 0; t < trace.thetas.rows(); ++t) {
    out << t;
    for (Eigen::Index j = 0; j < d; ++j) put(trace.thetas(t, j));
    if (t < trace.ys.rows()) {
      for (Eigen::Index j = 0; j < m; ++j) put(trace.ys(t, j));
    } else {
      for (Eigen::Index j = 0; j < m; ++j) out << ',';
    }
    out << '\n';
  }
}

std::string chain_config_to_json(const ChainConfig& cfg) {
  nlohmann::json j;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["burn_in"] = cfg.effective_burn_in();
  j["thinning"] = cfg.thinning;
  if (const auto* init = std::get_if<Vector>(&cfg.init)) {
    j["init"] = std::vector<double>(init->data(), init->data() + init->size());
  } else {
    j["init"] = "sample-from-prior";
  }
  return j.dump(2);
}

ChainConfig chain_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ChainConfig cfg;
  cfg.steps = j.at("steps").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("burn_in")) cfg.burn_in = j.at("burn_in").get<std::size_t>();
  if (j.contains("thinning")) cfg.thinning = j.at("thinning").get<std::size_t>();
  if (j.contains("init") && j.at("init").is_array()) {
    const auto v = j.at("init").get<std::vector<double>>();
    cfg.init = Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return cfg;
}

}  // namespace gibbsdiag
