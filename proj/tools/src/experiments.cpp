#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/diagnostics.hpp"
#include "gibbsdiag/external_approximator.hpp"
#include "gibbsdiag/finite_lab.hpp"
#include "gibbsdiag/gaussian_lab.hpp"
#include "gibbsdiag/model_zoo.hpp"
#include "gibbsdiag_cli/cli.hpp"
#include "gibbsdiag_cli/svg.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <sstream>

namespace gibbsdiag::cli {

namespace {

using nlohmann::json;

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vector(m.row(i).transpose())));
  return rows;
}

json to_json(const gaussian::GaussianDist& g) {
  return {{"mean", to_json(g.mean())}, {"cov", to_json(g.covariance())}};
}

/// Typed access to the "model" object; every key must be consumed.
class ModelReader {
 public:
  explicit ModelReader(const json& j) : j_(j) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    if (!j_[key].is_number()) fail(key, "must be a number");
    return j_[key].get<double>();
  }

  std::size_t count(const std::string& key, std::size_t fallback, bool allow_zero = false) {
    if (!has(key)) return fallback;
    const auto& v = j_[key];
    if (!v.is_number_integer() || v.get<std::int64_t>() < (allow_zero ? 0 : 1)) {
      fail(key, allow_zero ? "must be a nonnegative integer" : "must be a positive integer");
    }
    return v.get<std::size_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    if (!j_[key].is_boolean()) fail(key, "must be true or false");
    return j_[key].get<bool>();
  }

  std::string choice(const std::string& key, const std::string& fallback,
                     const std::set<std::string>& allowed) {
    std::string value = fallback;
    if (has(key)) {
      if (!j_[key].is_string()) fail(key, "must be a string");
      value = j_[key].get<std::string>();
    }
    if (!allowed.count(value)) {
      std::string options;
      for (const auto& a : allowed) options += (options.empty() ? "" : ", ") + a;
      fail(key, "must be one of: " + options);
    }
    return value;
  }

  std::string string(const std::string& key) {
    if (!has(key) || !j_[key].is_string()) fail(key, "is required and must be a string");
    return j_[key].get<std::string>();
  }

  Vector vector(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    const auto& v = j_[key];
    if (!v.is_array() || v.empty()) fail(key, "must be a nonempty number array");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(key, "must be a nonempty number array");
      out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
  }

  Matrix matrix(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    const auto& v = j_[key];
    if (!v.is_array() || v.empty() || !v[0].is_array() || v[0].empty()) {
      fail(key, "must be a nonempty array of rows");
    }
    Matrix out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v[0].size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_array() || v[i].size() != v[0].size()) fail(key, "rows differ in length");
      for (std::size_t k = 0; k < v[i].size(); ++k) {
        if (!v[i][k].is_number()) fail(key, "entries must be numbers");
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[i][k].get<double>();
      }
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown model key \"" + key + "\"");
    }
  }

  [[noreturn]] static void fail(const std::string& key, const std::string& what) {
    throw ConfigError("model." + key + " " + what);
  }

 private:
  const json& j_;
  std::set<std::string> seen_;
};

/// Turns library precondition failures raised while building models into
/// configuration errors.
template <class F>
auto as_config(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, c);
  return out;
}

Matrix pooled_gibbs_samples(const std::vector<ChainTrace>& traces) {
  std::vector<Matrix> parts;
  Eigen::Index rows = 0;
  for (const auto& t : traces) {
    parts.push_back(t.gibbs_prior_samples());
    rows += parts.back().rows();
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

/// Evenly spaced rows, at most `cap` of them.
Matrix thin_rows(const Matrix& m, std::size_t cap) {
  if (static_cast<std::size_t>(m.rows()) <= cap) return m;
  Matrix out(static_cast<Eigen::Index>(cap), m.cols());
  for (std::size_t i = 0; i < cap; ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        m.row(static_cast<Eigen::Index>(i * static_cast<std::size_t>(m.rows()) / cap));
  }
  return out;
}

/// R-hat curve over growing prefixes and lag autocorrelations per coordinate.
json monitoring(const std::vector<ChainTrace>& traces) {
  json out;
  const Eigen::Index d = traces.front().thetas.cols();
  const std::vector<std::size_t> lags = {1, 5, 10, 50};
  json ac = json::object();
  const Matrix first = traces.front().gibbs_prior_samples();
  for (std::size_t lag : lags) {
    json per_dim = json::array();
    for (Eigen::Index c = 0; c < d; ++c) {
      const auto x = column(first, c);
      try {
        per_dim.push_back(diag::autocorrelation(x, lag));
      } catch (const Error&) {
        per_dim.push_back(nullptr);
      }
    }
    ac[std::to_string(lag)] = per_dim;
  }
  out["autocorrelation"] = ac;

  if (traces.size() < 2) {
    out["rhat"] = nullptr;
    return out;
  }
  std::vector<Matrix> chains;
  for (const auto& t : traces) chains.push_back(t.gibbs_prior_samples());
  const auto n = static_cast<std::size_t>(chains.front().rows());
  json curve = json::array();
  for (int k = 1; k <= 10; ++k) {
    const std::size_t len = n * static_cast<std::size_t>(k) / 10;
    if (len < 4) continue;
    std::vector<Matrix> prefix;
    for (const auto& c : chains) prefix.push_back(c.topRows(static_cast<Eigen::Index>(len)));
    try {
      curve.push_back({{"length", len}, {"rhat", to_json(diag::gelman_rubin(prefix))}});
    } catch (const Error&) {
      curve.push_back({{"length", len}, {"rhat", nullptr}});
    }
  }
  out["rhat_curve"] = curve;
  out["rhat"] = curve.empty() ? json(nullptr) : curve.back()["rhat"];
  return out;
}

void add_rhat_plot(const json& mon, Artifacts& files) {
  if (!mon.contains("rhat_curve") || mon["rhat_curve"].empty()) return;
  std::vector<double> x;
  std::vector<std::vector<double>> series;
  for (const auto& point : mon["rhat_curve"]) {
    if (point["rhat"].is_null()) return;
    x.push_back(point["length"].get<double>());
    const auto values = point["rhat"].get<std::vector<double>>();
    if (series.empty()) series.resize(std::min<std::size_t>(values.size(), 6));
    for (std::size_t k = 0; k < series.size(); ++k) series[k].push_back(values[k]);
  }
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) names.push_back("theta_" + std::to_string(k));
  files["rhat.svg"] = line_chart_svg(x, series, names, "R-hat by retained chain length", 1.0);
}

void add_traces(const std::vector<ChainTrace>& traces, Artifacts& files) {
  for (std::size_t k = 0; k < traces.size(); ++k) {
    std::ostringstream csv;
    write_trace_csv(traces[k], csv);
    files[k == 0 ? "trace.csv" : "trace_chain" + std::to_string(k) + ".csv"] = csv.str();
  }
  files["chain_config.json"] = chain_config_to_json(traces.front().config) + "\n";
}

json base_report(const RunConfig& cfg) {
  json r;
  r["experiment"] = cfg.experiment;
  r["seed"] = cfg.seed;
  return r;
}

std::string dump(const json& report) { return report.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Gaussian toy model
// ---------------------------------------------------------------------------

struct ToySetup {
  std::string setting;
  gaussian::GaussianToyModel model;
};

ToySetup read_toy_model(ModelReader& r, json& resolved) {
  const std::string setting = r.choice("setting", "prior", {"prior", "like", "custom"});
  const auto n_obs = r.count("n_obs", 1);
  return as_config([&] {
    if (setting == "custom") {
      const Matrix prior_cov = r.matrix("prior_cov");
      const Vector prior_mean =
          r.has("prior_mean") ? r.vector("prior_mean") : Vector(Vector::Zero(prior_cov.rows()));
      const Matrix like_cov = r.matrix("likelihood_cov");
      gaussian::GaussianToyModel m(gaussian::GaussianDist(prior_mean, prior_cov), like_cov,
                                   static_cast<int>(n_obs));
      resolved["setting"] = setting;
      resolved["n_obs"] = n_obs;
      resolved["prior_mean"] = to_json(prior_mean);
      resolved["prior_cov"] = to_json(prior_cov);
      resolved["likelihood_cov"] = to_json(like_cov);
      return ToySetup{setting, m};
    }
    auto m = setting == "prior" ? gaussian::setting_prior_model(static_cast<int>(n_obs))
                                : gaussian::setting_like_model(static_cast<int>(n_obs));
    resolved["setting"] = setting;
    resolved["n_obs"] = n_obs;
    return ToySetup{setting, m};
  });
}

gaussian::Approximation read_divergence(ModelReader& r, json& resolved, std::string& name) {
  name = r.choice("divergence", "reverse-kl", {"reverse-kl", "forward-kl", "exact"});
  resolved["divergence"] = name;
  if (name == "exact") return gaussian::ExactPosterior{};
  return gaussian::MeanField{name == "reverse-kl" ? gaussian::DivergenceKind::ReverseKL
                                                  : gaussian::DivergenceKind::ForwardKL};
}

double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

std::function<Artifacts()> prepare_toy(const RunConfig& cfg, std::size_t threads,
                                       json& resolved) {
  ModelReader r(cfg.model);
  ToySetup setup = read_toy_model(r, resolved);
  std::string divergence;
  const auto approx = read_divergence(r, resolved, divergence);
  r.finish();
  const auto d = setup.model.dim();
  if (cfg.init && cfg.init->size() != d) throw ConfigError("\"init\" has the wrong dimension");
  as_config([&] { cfg.chain_config().validate(); });

  return [cfg, threads, setup, approx, divergence, d] {
    const auto& model = setup.model;
    const Matrix reference_y = Matrix::Zero(model.n_obs, d);
    const auto posterior = gaussian::exact_posterior(model, reference_y);
    const gaussian::GaussianDist approx_dist(posterior.mean(),
                                             gaussian::approximation_covariance(model, approx));
    const auto transition = gaussian::gibbs_transition(model, approx);
    const auto gibbs = gaussian::gibbs_prior_analytic(model, approx);
    const auto pointwise = gaussian::pointwise_prior(model, reference_y, approx);

    const auto pair = gaussian::make_conditional_pair(model, approx);
    const auto traces = simulate_chains([&](std::size_t) { return pair; }, cfg.chain_config(),
                                        cfg.chains, threads);
    const Matrix samples = pooled_gibbs_samples(traces);
    const Vector emp_mean = samples.colwise().mean().transpose();
    const Matrix emp_cov = diag::sample_covariance(samples);

    json report = base_report(cfg);
    report["setting"] = setup.setting;
    report["divergence"] = divergence;
    report["n_obs"] = model.n_obs;
    report["reference_observations"] = "zeros";
    report["prior"] = to_json(model.prior);
    report["likelihood_cov"] = to_json(model.likelihood_cov);
    report["posterior"] = to_json(posterior);
    report["approximation"] = to_json(approx_dist);
    report["gibbs_prior"] = to_json(gibbs);
    report["transition"] = {{"offset", to_json(transition.offset)},
                            {"gain", to_json(transition.gain)},
                            {"noise_cov", to_json(transition.noise_cov)},
                            {"spectral_radius", gaussian::spectral_radius(transition.gain)}};
    json entropies = {{"prior", gaussian::gaussian_entropy(model.prior)},
                      {"posterior", gaussian::gaussian_entropy(posterior)},
                      {"approximation", gaussian::gaussian_entropy(approx_dist)},
                      {"gibbs_prior", gaussian::gaussian_entropy(gibbs)}};
    if (gaussian::is_spd(emp_cov)) {
      entropies["empirical_gibbs_prior"] =
          gaussian::gaussian_entropy(gaussian::GaussianDist(emp_mean, emp_cov));
    }
    report["entropies"] = entropies;
    if (const auto* proper = std::get_if<gaussian::ProperPrior>(&pointwise)) {
      report["pointwise_prior_status"] = "proper";
      report["pointwise_prior"] = to_json(proper->dist);
    } else {
      const auto& improper = std::get<gaussian::ImproperPrior>(pointwise);
      report["pointwise_prior_status"] = "improper";
      report["pointwise_prior"] = {{"eigenvalue", improper.eigenvalue},
                                   {"eigenvector", to_json(improper.eigenvector)}};
    }
    report["empirical_gibbs_prior"] = {
        {"mean", to_json(emp_mean)},
        {"cov", to_json(emp_cov)},
        {"samples", samples.rows()},
        {"relative_frobenius_error",
         (emp_cov - gibbs.covariance()).norm() / gibbs.covariance().norm()},
        {"max_abs_mean_error", (emp_mean - gibbs.mean()).cwiseAbs().maxCoeff()},
        {"compactness", diag::compactness(samples)}};
    const json mon = monitoring(traces);
    report["monitoring"] = mon;

    Artifacts files;
    add_traces(traces, files);
    for (Eigen::Index c = 0; c < d; ++c) {
      HistogramPlot plot;
      plot.title = "Gibbs prior, theta_" + std::to_string(c) + " (" + divergence + ")";
      plot.x_label = "theta_" + std::to_string(c);
      const double m = gibbs.mean()[c];
      const double v = gibbs.covariance()(c, c);
      plot.reference_density = [m, v](double x) { return normal_pdf(x, m, v); };
      files["gibbs_prior_theta" + std::to_string(c) + ".svg"] = histogram_svg(column(samples, c), plot);
    }
    add_rhat_plot(mon, files);
    files["report.json"] = dump(report);
    return files;
  };
}

// ---------------------------------------------------------------------------
// Finite spaces
// ---------------------------------------------------------------------------

std::function<Artifacts()> prepare_finite(const RunConfig& cfg, std::size_t threads,
                                          const std::string& config_dir, json& resolved) {
  ModelReader r(cfg.model);
  const bool has_fixture = r.has("fixture");
  const bool has_inline = r.has("F") || r.has("Q");
  if (has_fixture == has_inline) {
    throw ConfigError("finite: give either model.fixture or both model.F and model.Q");
  }
  finite::FiniteModel model = as_config([&] {
    if (has_fixture) {
      std::filesystem::path path = r.string("fixture");
      if (path.is_relative()) path = std::filesystem::path(config_dir) / path;
      return finite::load_model(path.string());
    }
    return finite::FiniteModel(r.matrix("F"), r.matrix("Q"));
  });
  r.finish();
  resolved["F"] = to_json(model.likelihood());
  resolved["Q"] = to_json(model.approximation());
  if (cfg.init && cfg.init->size() != 1) throw ConfigError("\"init\" must hold one state index");
  as_config([&] { cfg.chain_config().validate(); });

  return [cfg, threads, model] {
    const auto st = finite::gibbs_stationary(model);
    const auto gaps = finite::verify_mixture_identities(model);
    json report = base_report(cfg);
    report["F"] = to_json(model.likelihood());
    report["Q"] = to_json(model.approximation());
    report["transition_matrix"] = to_json(finite::transition_matrix(model));
    report["gibbs_prior"] = to_json(st.pi_g);
    report["evidence"] = to_json(st.p_g);
    report["stationarity_residual"] = st.residual;
    report["mixture_identities"] = {
        {"stationarity_gap", gaps.stationarity_gap},
        {"pointwise_mixture_gap",
         gaps.pointwise_mixture_gap ? json(*gaps.pointwise_mixture_gap) : json(nullptr)}};
    try {
      report["weak_compatibility_gap"] = finite::weak_compatibility_gap(model);
    } catch (const NumericalError& e) {
      report["weak_compatibility_gap"] = nullptr;
      report["weak_compatibility_error"] = e.what();
    }
    json priors = json::array();
    for (Eigen::Index y = 0; y < model.observation_states(); ++y) {
      const auto p = finite::pointwise_prior_exact(model, y);
      if (const auto* v = std::get_if<Vector>(&p)) {
        priors.push_back(to_json(*v));
      } else {
        priors.push_back("improper");
      }
    }
    report["pointwise_priors"] = priors;

    const auto pair = finite::make_conditional_pair(model);
    const auto traces = simulate_chains([&](std::size_t) { return pair; }, cfg.chain_config(),
                                        cfg.chains, threads);
    const Matrix samples = pooled_gibbs_samples(traces);
    Vector freq = Vector::Zero(model.latent_states());
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      freq[static_cast<Eigen::Index>(std::llround(samples(i, 0)))] += 1.0;
    }
    freq /= static_cast<double>(samples.rows());
    report["empirical_gibbs_prior"] = to_json(freq);
    report["total_variation"] = 0.5 * (freq - st.pi_g).lpNorm<1>();
    const json mon = monitoring(traces);
    report["monitoring"] = mon;

    Artifacts files;
    add_traces(traces, files);
    add_rhat_plot(mon, files);
    files["report.json"] = dump(report);
    return files;
  };
}

// ---------------------------------------------------------------------------
// Sum of log-normals
// ---------------------------------------------------------------------------

json compare_with_prior(const Matrix& gibbs, const Matrix& prior) {
  const Matrix a = thin_rows(gibbs, 2000);
  const Matrix b = thin_rows(prior, 2000);
  return {{"compactness_gibbs", diag::compactness(gibbs)},
          {"compactness_prior", diag::compactness(prior)},
          {"mmd2_gibbs_vs_prior", diag::mmd2(a, b, 1.0)},
          {"mmd2_samples", {a.rows(), b.rows()}}};
}

std::function<Artifacts()> prepare_lognormal(const RunConfig& cfg, std::size_t threads,
                                             json& resolved) {
  ModelReader r(cfg.model);
  zoo::LogNormalSumModel model;
  model.terms = static_cast<int>(r.count("terms", 10));
  const std::size_t prior_draws = r.count("prior_draws", 0, true);
  r.finish();
  as_config([&] { model.validate(); });
  resolved["terms"] = model.terms;
  resolved["prior_draws"] = prior_draws;
  if (cfg.init && cfg.init->size() != 2) throw ConfigError("\"init\" must be (mu, sigma^2)");
  as_config([&] { cfg.chain_config().validate(); });

  return [cfg, threads, model, prior_draws] {
    const auto pair = zoo::lognormal_pair(model);
    const auto traces = simulate_chains([&](std::size_t) { return pair; }, cfg.chain_config(),
                                        cfg.chains, threads);
    const Matrix samples = pooled_gibbs_samples(traces);
    const std::size_t n_prior = prior_draws > 0 ? prior_draws : static_cast<std::size_t>(samples.rows());
    Rng prior_rng = Rng(cfg.seed).split(0x5052494f52ULL);
    Matrix prior(static_cast<Eigen::Index>(n_prior), 2);
    for (Eigen::Index i = 0; i < prior.rows(); ++i) prior.row(i) = model.sample_prior(prior_rng).transpose();

    const auto mu = column(samples, 0);
    const auto s2 = column(samples, 1);
    const double mu_mean = std::accumulate(mu.begin(), mu.end(), 0.0) / static_cast<double>(mu.size());
    double ss = 0.0;
    for (double v : mu) ss += (v - mu_mean) * (v - mu_mean);
    const double mu_sd = std::sqrt(ss / static_cast<double>(mu.size() - 1));
    const double naive_se = mu_sd / std::sqrt(static_cast<double>(mu.size()));
    // Chains are independent and equally long: combine per-chain batch-means errors.
    double var_sum = 0.0;
    for (const auto& t : traces) {
      const double se = diag::batch_means_standard_error(column(t.gibbs_prior_samples(), 0));
      var_sum += se * se;
    }
    const double batch_se = std::sqrt(var_sum) / static_cast<double>(traces.size());

    json report = base_report(cfg);
    report["terms"] = model.terms;
    report["gibbs_samples"] = samples.rows();
    report["prior_samples"] = prior.rows();
    report["mu"] = {{"mean", mu_mean},
                    {"sd", mu_sd},
                    {"naive_se", naive_se},
                    {"batch_means_se", batch_se},
                    {"z_naive", mu_mean / naive_se},
                    {"z_batch_means", mu_mean / batch_se},
                    {"prior_mean", 0.0}};
    const auto prior_s2 = column(prior, 1);
    report["sigma2"] = {{"gibbs_mean", std::accumulate(s2.begin(), s2.end(), 0.0) / static_cast<double>(s2.size())},
                        {"gibbs_q99", quantile(s2, 0.99)},
                        {"prior_q99", quantile(prior_s2, 0.99)},
                        {"gibbs_q50", quantile(s2, 0.5)},
                        {"prior_q50", quantile(prior_s2, 0.5)}};
    report["versus_prior"] = compare_with_prior(samples, prior);
    const json mon = monitoring(traces);
    report["monitoring"] = mon;

    Artifacts files;
    add_traces(traces, files);
    HistogramPlot mu_plot{"Gibbs prior, mu", "mu", 40, [](double x) { return normal_pdf(x, 0.0, 1.0); }, {}};
    files["gibbs_prior_mu.svg"] = histogram_svg(mu, mu_plot);
    HistogramPlot s2_plot{"Gibbs prior, sigma^2", "sigma^2", 60,
                          [](double x) { return x > 0.0 ? std::exp(-x) : 0.0; }, {}};
    files["gibbs_prior_sigma2.svg"] = histogram_svg(s2, s2_plot);
    add_rhat_plot(mon, files);
    files["report.json"] = dump(report);
    return files;
  };
}

// ---------------------------------------------------------------------------
// Stochastic volatility with an external approximator
// ---------------------------------------------------------------------------

std::function<Artifacts()> prepare_stochvol(const RunConfig& cfg, std::size_t threads,
                                            json& resolved) {
  ModelReader r(cfg.model);
  zoo::StochVolModel model;
  const std::string command = r.string("command");
  model.length = static_cast<int>(r.count("length", 100));
  model.sigma = r.number("sigma", 0.09);
  model.nu = r.number("nu", 12.0);
  ext::ExternalOptions opts;
  opts.timeout = std::chrono::milliseconds(r.count("timeout_ms", 60'000));
  const std::size_t prior_draws = r.count("prior_draws", 0, true);
  r.finish();
  as_config([&] { model.validate(); });
  resolved = {{"command", command},   {"length", model.length},
              {"sigma", model.sigma}, {"nu", model.nu},
              {"timeout_ms", opts.timeout.count()}, {"prior_draws", prior_draws}};
  if (cfg.init && cfg.init->size() != model.length) throw ConfigError("\"init\" has the wrong length");
  as_config([&] { cfg.chain_config().validate(); });

  return [cfg, threads, model, command, opts, prior_draws] {
    const auto factory = [&](std::size_t) {
      return ext::combine(zoo::stochvol_likelihood_pair(model),
                          ext::external_approximator(command, static_cast<std::size_t>(model.length),
                                                     static_cast<std::size_t>(model.length), opts));
    };
    const auto traces = simulate_chains(factory, cfg.chain_config(), cfg.chains, threads);
    const Matrix samples = pooled_gibbs_samples(traces);
    const std::size_t n_prior = prior_draws > 0 ? prior_draws : static_cast<std::size_t>(samples.rows());
    Rng prior_rng = Rng(cfg.seed).split(0x5052494f52ULL);
    Matrix prior(static_cast<Eigen::Index>(n_prior), model.length);
    for (Eigen::Index i = 0; i < prior.rows(); ++i) {
      prior.row(i) = zoo::stochvol_sample_prior(model, prior_rng).transpose();
    }

    json report = base_report(cfg);
    report["command"] = command;
    report["model"] = {{"length", model.length}, {"sigma", model.sigma}, {"nu", model.nu}, {"theta0", model.theta0}};
    report["gibbs_samples"] = samples.rows();
    report["gibbs_mean_path"] = to_json(Vector(samples.colwise().mean().transpose()));
    report["gibbs_sd_path"] = to_json(Vector(diag::sample_covariance(samples).diagonal().cwiseSqrt()));
    report["versus_prior"] = compare_with_prior(samples, prior);
    const json mon = monitoring(traces);
    report["monitoring"] = mon;

    Artifacts files;
    add_traces(traces, files);
    std::vector<double> x;
    for (int i = 1; i <= model.length; ++i) x.push_back(i);
    const auto mean = report["gibbs_mean_path"].get<std::vector<double>>();
    const auto sd = report["gibbs_sd_path"].get<std::vector<double>>();
    std::vector<double> lo;
    std::vector<double> hi;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      lo.push_back(mean[i] - 2.0 * sd[i]);
      hi.push_back(mean[i] + 2.0 * sd[i]);
    }
    files["gibbs_prior_path.svg"] =
        line_chart_svg(x, {mean, lo, hi}, {"mean", "-2 sd", "+2 sd"}, "Gibbs prior over theta_1..T", 0.0);
    add_rhat_plot(mon, files);
    files["report.json"] = dump(report);
    return files;
  };
}

// ---------------------------------------------------------------------------
// Simulation-based calibration
// ---------------------------------------------------------------------------

std::function<Artifacts()> prepare_sbc(const RunConfig& cfg, json& resolved) {
  ModelReader r(cfg.model);
  const std::string family = r.choice("family", "gaussian", {"gaussian", "lognormal"});
  const std::size_t n = r.count("N", 323);
  const std::size_t l = r.count("L", 31);
  const bool rebin = r.boolean("rebin", true);
  const std::size_t stat_index = r.count("statistic_index", 0, true);
  resolved = {{"family", family}, {"N", n}, {"L", l}, {"rebin", rebin}, {"statistic_index", stat_index}};
  if (rebin && (l + 1) % 2 != 0) throw ConfigError("rebinning needs L + 1 to be even");

  diag::SbcProblem problem;
  std::string approximator;
  if (family == "gaussian") {
    ToySetup setup = read_toy_model(r, resolved);
    approximator = r.choice("approximator", "exact", {"exact", "halved-variance", "shifted"});
    const double shift_sd = r.number("shift_sd", 2.0);
    resolved["approximator"] = approximator;
    resolved["shift_sd"] = shift_sd;
    if (static_cast<Eigen::Index>(stat_index) >= setup.model.dim()) {
      throw ConfigError("model.statistic_index is out of range");
    }
    const auto model = setup.model;
    const auto pair = gaussian::make_conditional_pair(model, gaussian::ExactPosterior{});
    problem.sample_prior = [model](Rng& rng) { return model.prior.sample(rng); };
    problem.sample_likelihood = pair.sample_likelihood;
    problem.fit_approximation = [model, approximator, shift_sd](const Vector& y) {
      const auto post = gaussian::exact_posterior(
          model, gaussian::unpack_observations(y, model.n_obs, model.dim()));
      Vector mean = post.mean();
      Matrix cov = post.covariance();
      if (approximator == "halved-variance") cov *= 0.5;
      if (approximator == "shifted") mean += shift_sd * cov.diagonal().cwiseSqrt();
      auto q = std::make_shared<const gaussian::GaussianDist>(mean, cov);
      return std::function<Vector(Rng&)>([q](Rng& rng) { return q->sample(rng); });
    };
  } else {
    zoo::LogNormalSumModel model;
    model.terms = static_cast<int>(r.count("terms", 10));
    as_config([&] { model.validate(); });
    approximator = r.choice("approximator", "laplace", {"laplace"});
    resolved["terms"] = model.terms;
    resolved["approximator"] = approximator;
    if (stat_index >= 2) throw ConfigError("model.statistic_index must be 0 (mu) or 1 (sigma^2)");
    const auto pair = zoo::lognormal_pair(model);
    problem.sample_prior = pair.sample_prior;
    problem.sample_likelihood = pair.sample_likelihood;
    problem.fit_approximation = pair.fit_approximation;
  }
  r.finish();
  problem.statistic = [stat_index](const Vector& theta) {
    return theta[static_cast<Eigen::Index>(stat_index)];
  };

  return [cfg, problem, n, l, rebin, family, approximator, stat_index] {
    Rng rng(cfg.seed);
    const auto hist = diag::sbc_ranks(problem, n, l, rng);
    const auto used = rebin ? hist.rebinned() : hist;
    const auto chi = diag::chi_square_uniformity(used);
    json report = base_report(cfg);
    report["family"] = family;
    report["approximator"] = approximator;
    report["statistic_index"] = stat_index;
    report["histogram"] = json::parse(diag::rank_histogram_to_json(hist));
    report["rebinned"] = rebin ? json::parse(diag::rank_histogram_to_json(used)) : json(nullptr);
    report["chi_square"] = {{"statistic", chi.statistic}, {"dof", chi.dof}, {"p_value", chi.p_value},
                            {"on", rebin ? "rebinned" : "raw"}};
    std::vector<std::size_t> above;
    std::vector<std::size_t> below;
    for (std::size_t b = 0; b < used.bins(); ++b) {
      if (used.above_band(b)) above.push_back(b);
      if (used.below_band(b)) below.push_back(b);
    }
    report["bins_above_band"] = above;
    report["bins_below_band"] = below;
    report["extremes_above_band"] = used.above_band(0) && used.above_band(used.bins() - 1);

    Artifacts files;
    files["rank_histogram.svg"] = diag::rank_histogram_svg(used, "SBC ranks (" + approximator + ")");
    if (rebin) files["rank_histogram_raw.svg"] = diag::rank_histogram_svg(hist, "SBC ranks, raw bins");
    files["report.json"] = dump(report);
    return files;
  };
}

// ---------------------------------------------------------------------------
// Compatibility of conditional pairs
// ---------------------------------------------------------------------------

std::function<Artifacts()> prepare_compat(const RunConfig& cfg, std::size_t threads,
                                          json& resolved) {
  ModelReader r(cfg.model);
  const std::string pair_name =
      r.choice("pair", "arnold-compatible", {"arnold-compatible", "arnold-incompatible"});
  CompatibilityOptions opts;
  opts.bandwidth = r.number("bandwidth", 1.0);
  const std::string rule = r.choice("bandwidth_rule", "fixed", {"fixed", "median"});
  opts.bandwidth_rule = rule == "fixed" ? BandwidthRule::Fixed : BandwidthRule::MedianHeuristic;
  opts.permutations = r.count("permutations", 200);
  opts.max_pairs = r.count("max_pairs", 10'000);
  r.finish();
  if (!(opts.bandwidth > 0.0)) throw ConfigError("model.bandwidth must be positive");
  resolved = {{"pair", pair_name},
              {"bandwidth", opts.bandwidth},
              {"bandwidth_rule", rule},
              {"permutations", opts.permutations},
              {"max_pairs", opts.max_pairs}};
  RunConfig run_cfg = cfg;
  if (!run_cfg.init) run_cfg.init = Vector::Zero(1);
  if (run_cfg.init->size() != 1) throw ConfigError("\"init\" must hold one value");
  as_config([&] { run_cfg.chain_config().validate(); });

  return [run_cfg, threads, pair_name, opts] {
    const auto pair = zoo::arnold_pair(pair_name == "arnold-compatible"
                                           ? zoo::ArnoldVariant::Compatible
                                           : zoo::ArnoldVariant::Incompatible);
    const auto traces = simulate_chains([&](std::size_t) { return pair; }, run_cfg.chain_config(),
                                        run_cfg.chains, threads);
    json report = base_report(run_cfg);
    report["pair"] = pair_name;
    json per_chain = json::array();
    for (std::size_t k = 0; k < traces.size(); ++k) {
      CompatibilityOptions o = opts;
      o.seed = Rng(run_cfg.seed).split(1000 + k).seed();
      const auto score = compatibility_score(traces[k], o);
      json q = json::object();
      for (std::size_t i = 0; i < score.null_levels.size(); ++i) {
        std::ostringstream level;
        level << score.null_levels[i];
        q[level.str()] = score.null_quantiles[i];
      }
      per_chain.push_back({{"score", score.score},
                           {"p_value", score.p_value},
                           {"bandwidth", score.bandwidth},
                           {"pairs_used", score.pairs_used},
                           {"null_quantiles", q},
                           {"rejects_same_distribution_at_1pct", score.p_value <= 0.01}});
    }
    report["chains"] = per_chain;
    report["monitoring"] = monitoring(traces);

    Artifacts files;
    add_traces(traces, files);
    const auto joint = paired_joint_samples(traces.front());
    HistogramPlot theta_plot{"theta marginal of the Gibbs-joint pairs", "theta", 50, {}, {}};
    files["gibbs_joint_theta.svg"] = histogram_svg(column(joint.gibbs_joint, 0), theta_plot);
    files["report.json"] = dump(report);
    return files;
  };
}

}  // namespace

std::function<Artifacts()> prepare_experiment(const RunConfig& cfg, std::size_t max_threads,
                                              const std::string& config_dir,
                                              nlohmann::json& resolved_model) {
  resolved_model = json::object();
  if (cfg.experiment == "toy-gaussian") return prepare_toy(cfg, max_threads, resolved_model);
  if (cfg.experiment == "finite") return prepare_finite(cfg, max_threads, config_dir, resolved_model);
  if (cfg.experiment == "lognormal") return prepare_lognormal(cfg, max_threads, resolved_model);
  if (cfg.experiment == "stochvol-external") return prepare_stochvol(cfg, max_threads, resolved_model);
  if (cfg.experiment == "sbc") return prepare_sbc(cfg, resolved_model);
  if (cfg.experiment == "compat") return prepare_compat(cfg, max_threads, resolved_model);
  throw ConfigError("unknown experiment \"" + cfg.experiment + "\"");
}

}  // namespace gibbsdiag::cli
