// One pass/fail line per acceptance criterion. `--only N` runs a single one.
#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/diagnostics.hpp"
#include "gibbsdiag/finite_lab.hpp"
#include "gibbsdiag/gaussian_lab.hpp"
#include "gibbsdiag/model_zoo.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace gibbsdiag;
namespace ga = gibbsdiag::gaussian;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> check;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

long ulps(double a, double b) {
  long n = 0;
  for (double x = std::min(a, b); x < std::max(a, b); x = std::nextafter(x, 2.0)) ++n;
  return n;
}

Outcome finite_exactness() {
  const auto model = finite::reference_example();
  const Matrix p = finite::transition_matrix(model);
  Matrix expected(2, 2);
  expected << .43, .57, .39, .61;
  long worst = 0;
  for (Eigen::Index i = 0; i < 4; ++i) worst = std::max(worst, ulps(p.data()[i], expected.data()[i]));
  const finite::FiniteModel alt(model.likelihood(), finite::reference_example_alternative_q());
  const double alt_gap = (finite::transition_matrix(alt) - p).cwiseAbs().maxCoeff();
  const Vector pi = finite::stationary_distribution(p);
  const double pi_err = std::max(std::abs(pi[0] - 0.40625), std::abs(pi[1] - 0.59375));
  return {worst <= 1 && alt_gap <= 1e-12 && pi_err <= 1e-10,
          fmt("P max distance %ld ulp; |FQ~ - FQ| = %.2e; |pi - (0.40625, 0.59375)| = %.2e", worst,
              alt_gap, pi_err)};
}

Outcome exactness_recovers_prior() {
  Rng rng(2);
  double finite_worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto m = static_cast<Eigen::Index>(1 + rng.below(8));
    const Matrix joint = oracle::random_joint(n, m, rng);
    const auto model = finite::model_from_joint(joint);
    const Vector pi = finite::stationary_distribution(finite::transition_matrix(model));
    finite_worst = std::max(finite_worst, (pi - Vector(joint.rowwise().sum())).cwiseAbs().maxCoeff());
  }
  double gauss_worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(4));
    Vector mean(d);
    for (Eigen::Index i = 0; i < d; ++i) mean[i] = rng.normal();
    const ga::GaussianToyModel model(ga::GaussianDist(mean, oracle::random_spd(d, rng)),
                                     oracle::random_spd(d, rng), 1 + static_cast<int>(rng.below(5)));
    const auto g = ga::gibbs_prior_analytic(model, ga::ExactPosterior{});
    gauss_worst = std::max({gauss_worst, (g.mean() - model.prior.mean()).cwiseAbs().maxCoeff(),
                            (g.covariance() - model.prior.covariance()).cwiseAbs().maxCoeff()});
  }
  return {finite_worst <= 1e-10 && gauss_worst <= 1e-8,
          fmt("finite max error %.2e (100 joints); Gaussian max error %.2e (100 models)", finite_worst,
              gauss_worst)};
}

Outcome analytic_simulation_agreement() {
  bool pass = true;
  std::ostringstream os;
  std::uint64_t seed = 30;
  for (const auto& [name, model] : {std::pair{"prior", ga::setting_prior_model()},
                                    std::pair{"like", ga::setting_like_model()}}) {
    for (auto kind : {ga::DivergenceKind::ReverseKL, ga::DivergenceKind::ForwardKL}) {
      const ga::MeanField approx{kind};
      ChainConfig cfg;
      cfg.steps = 100'000;
      cfg.seed = seed++;
      const auto trace = simulate_gibbs_chain(ga::make_conditional_pair(model, approx), cfg);
      const Matrix s = trace.gibbs_prior_samples();
      const auto analytic = ga::gibbs_prior_analytic(model, approx);
      const double rel = (diag::sample_covariance(s) - analytic.covariance()).norm() /
                         analytic.covariance().norm();
      const double mean_err = (s.colwise().mean().transpose() - model.prior.mean()).cwiseAbs().maxCoeff();
      pass = pass && rel < 0.05 && mean_err < 0.05;
      os << name << "/" << ga::to_string(kind) << ": cov " << fmt("%.4f", rel) << ", mean "
         << fmt("%.4f", mean_err) << "; ";
    }
  }
  return {pass, os.str()};
}

Outcome entropy_patterns() {
  bool pass = true;
  std::ostringstream os;
  for (const auto& [name, model] : {std::pair{"prior", ga::setting_prior_model()},
                                    std::pair{"like", ga::setting_like_model()}}) {
    const double h_prior = ga::gaussian_entropy(model.prior);
    const double h_rev = ga::gaussian_entropy(ga::gibbs_prior_analytic(model, ga::MeanField{ga::DivergenceKind::ReverseKL}));
    const double h_fwd = ga::gaussian_entropy(ga::gibbs_prior_analytic(model, ga::MeanField{ga::DivergenceKind::ForwardKL}));
    const Vector zero = Vector::Zero(model.dim());
    const double h_post = ga::gaussian_entropy(ga::GaussianDist(zero, model.posterior_covariance()));
    const double h_qrev = ga::gaussian_entropy(ga::GaussianDist(
        zero, ga::approximation_covariance(model, ga::MeanField{ga::DivergenceKind::ReverseKL})));
    const double h_qfwd = ga::gaussian_entropy(ga::GaussianDist(
        zero, ga::approximation_covariance(model, ga::MeanField{ga::DivergenceKind::ForwardKL})));
    pass = pass && h_rev < h_prior && h_prior < h_fwd && h_qrev < h_post && h_post < h_qfwd;
    os << name << ": H(G,rev) " << fmt("%.3f", h_rev) << " < H(prior) " << fmt("%.3f", h_prior)
       << " < H(G,fwd) " << fmt("%.3f", h_fwd) << ", H(q,rev) " << fmt("%.3f", h_qrev) << " < H(post) "
       << fmt("%.3f", h_post) << " < H(q,fwd) " << fmt("%.3f", h_qfwd) << "; ";
  }
  const auto prior_model = ga::setting_prior_model();
  const double prior_offdiag = prior_model.prior.covariance()(0, 1);
  for (auto kind : {ga::DivergenceKind::ReverseKL, ga::DivergenceKind::ForwardKL}) {
    const double c = ga::gibbs_prior_analytic(prior_model, ga::MeanField{kind}).covariance()(0, 1);
    const double l = ga::gibbs_prior_analytic(ga::setting_like_model(), ga::MeanField{kind}).covariance()(0, 1);
    pass = pass && c > 0.0 && c < prior_offdiag && l < 0.0;
    os << ga::to_string(kind) << " off-diagonals: prior setting " << fmt("%.3f", c) << ", like setting "
       << fmt("%.3f", l) << "; ";
  }
  return {pass, os.str()};
}

Matrix json_matrix(const nlohmann::json& j) {
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.at(0).size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = j.at(i).at(k).get<double>();
  }
  return m;
}

Outcome pointwise_propriety() {
  Rng rng(5);
  int proper = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const ga::GaussianToyModel model(ga::GaussianDist(Vector::Zero(2), oracle::random_correlated_spd(2, rng)),
                                     Matrix::Identity(2, 2), 1);
    Matrix y(1, 2);
    y << rng.normal(), rng.normal();
    const auto kind = rep % 2 == 0 ? ga::DivergenceKind::ReverseKL : ga::DivergenceKind::ForwardKL;
    if (ga::is_proper(ga::pointwise_prior(model, y, ga::MeanField{kind}))) ++proper;
  }
  std::ifstream in(std::string(GIBBSDIAG_SOURCE_DIR) + "/data/fixtures/setting_like_improper.json");
  const auto fx = nlohmann::json::parse(in);
  const auto mean = fx.at("prior").at("mean").get<std::vector<double>>();
  const ga::GaussianToyModel model(
      ga::GaussianDist(Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                       json_matrix(fx.at("prior").at("cov"))),
      json_matrix(fx.at("likelihood_cov")), fx.at("n_obs").get<int>());
  const auto kind = fx.at("divergence") == "reverse-kl" ? ga::DivergenceKind::ReverseKL : ga::DivergenceKind::ForwardKL;
  const ga::MeanField approx{kind};
  const auto result = ga::pointwise_prior(model, json_matrix(fx.at("observations")), approx);
  bool witness_ok = false;
  std::string witness;
  if (!ga::is_proper(result)) {
    const auto& w = std::get<ga::ImproperPrior>(result);
    const Matrix s = ga::approximation_covariance(model, approx).inverse() -
                     model.n_obs * model.likelihood_cov.inverse();
    const double residual = (s * w.eigenvector - w.eigenvalue * w.eigenvector).norm();
    witness_ok = w.eigenvalue <= 0.0 && residual < 1e-10 && std::abs(w.eigenvector.norm() - 1.0) < 1e-12;
    witness = fmt("eigenvalue %.4f along (%.3f, %.3f), residual %.1e", w.eigenvalue, w.eigenvector[0],
                  w.eigenvector[1], residual);
  }
  return {proper == 100 && witness_ok,
          fmt("%d/100 proper in the prior setting; stored like-setting fixture improper: %s", proper,
              witness.empty() ? "no" : witness.c_str())};
}

Outcome compatibility_detection() {
  auto score = [](zoo::ArnoldVariant v) {
    ChainConfig cfg;
    cfg.steps = 11'000;
    cfg.burn_in = 1000;
    cfg.seed = 61;
    cfg.init = Vector::Zero(1);
    CompatibilityOptions opts;
    opts.permutations = 200;
    opts.seed = 62;
    return compatibility_score(simulate_gibbs_chain(zoo::arnold_pair(v), cfg), opts);
  };
  const auto c = score(zoo::ArnoldVariant::Compatible);
  const auto i = score(zoo::ArnoldVariant::Incompatible);
  return {c.p_value > 0.01 && i.p_value < 0.01 && c.pairs_used == 10'000 && i.pairs_used == 10'000,
          fmt("compatible MMD^2 %.2e (q99 %.2e, p = %.3f); incompatible MMD^2 %.2e (q99 %.2e, p = %.3f); %zu pairs",
              c.score, c.null_quantile(0.99), c.p_value, i.score, i.null_quantile(0.99), i.p_value,
              c.pairs_used)};
}

diag::SbcProblem toy_sbc(double variance_factor) {
  const auto model = ga::setting_prior_model();
  const auto pair = ga::make_conditional_pair(model, ga::ExactPosterior{});
  diag::SbcProblem p;
  p.sample_prior = [model](Rng& rng) { return model.prior.sample(rng); };
  p.sample_likelihood = pair.sample_likelihood;
  p.fit_approximation = [model, variance_factor](const Vector& y) {
    const auto post = ga::exact_posterior(model, ga::unpack_observations(y, model.n_obs, model.dim()));
    auto q = std::make_shared<const ga::GaussianDist>(post.mean(), variance_factor * post.covariance());
    return std::function<Vector(Rng&)>([q](Rng& rng) { return q->sample(rng); });
  };
  p.statistic = [](const Vector& theta) { return theta[0]; };
  return p;
}

Outcome sbc_calibration() {
  Rng rng(7);
  int exact_pass = 0;
  int halved_flagged = 0;
  const auto exact = toy_sbc(1.0);
  const auto halved = toy_sbc(0.5);
  for (int rep = 0; rep < 100; ++rep) {
    const auto h = diag::sbc_ranks(exact, 323, 31, rng).rebinned();
    if (diag::chi_square_uniformity(h).p_value > 0.01) ++exact_pass;
    const auto u = diag::sbc_ranks(halved, 323, 31, rng).rebinned();
    if (u.above_band(0) && u.above_band(u.bins() - 1)) ++halved_flagged;
  }
  return {exact_pass >= 96 && halved_flagged >= 90,
          fmt("exact: %d/100 pass chi-square at 1%%; halved variance: both extreme bins above the band in %d/100",
              exact_pass, halved_flagged)};
}

Outcome lognormal_bias() {
  const zoo::LogNormalSumModel model;
  ChainConfig cfg;
  cfg.steps = 11'000;
  cfg.burn_in = 1000;
  cfg.seed = 81;
  const auto trace = simulate_gibbs_chain(zoo::lognormal_pair(model), cfg);
  const Matrix s = trace.gibbs_prior_samples();
  const Vector mu = s.col(0);
  const double mean = mu.mean();
  const double se = diag::batch_means_standard_error(std::span<const double>(mu.data(), static_cast<std::size_t>(mu.size())));
  const double z = mean / se;
  Rng rng(82);
  std::vector<double> gibbs_s2(s.col(1).data(), s.col(1).data() + s.rows());
  std::vector<double> prior_s2;
  for (Eigen::Index i = 0; i < s.rows(); ++i) prior_s2.push_back(model.sample_prior(rng)[1]);
  auto q99 = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[static_cast<std::size_t>(0.99 * static_cast<double>(v.size() - 1))];
  };
  const double g99 = q99(gibbs_s2);
  const double p99 = q99(prior_s2);
  return {mean > 0.0 && z > 3.0 && g99 > p99,
          fmt("mu mean %.4f, batch-means SE %.4f, z = %.1f over %zu samples; sigma^2 q99 Gibbs %.3f vs prior %.3f",
              mean, se, z, static_cast<std::size_t>(s.rows()), g99, p99)};
}

Outcome fenton_wilkinson_moments() {
  Rng rng(9);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const double mu = -2.0 + 4.0 * rng.uniform();
    const double s2 = 0.01 + 3.0 * rng.uniform();
    const int terms = 1 + static_cast<int>(rng.below(50));
    const auto p = zoo::fenton_wilkinson(mu, s2, terms);
    const auto [m1, m2] = oracle::lognormal_moments(p.alpha, p.beta2);
    const auto [e1, e2] = oracle::lognormal_sum_moments(mu, s2, terms);
    worst = std::max({worst, std::abs(m1 - e1) / e1, std::abs(m2 - e2) / e2});
  }
  return {worst <= 1e-10, fmt("max relative moment error %.2e over 1000 parameter draws", worst)};
}

Outcome numerical_hygiene() {
  Rng rng(10);
  double worst_lyap = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(6));
    const Matrix a = oracle::random_stable(d, 0.99 * rng.uniform(), rng);
    const Matrix b = oracle::random_spd(d, rng);
    const Matrix x = ga::solve_discrete_lyapunov(a, b);
    worst_lyap = std::max(worst_lyap, (a * x * a.transpose() - x + b).norm() / b.norm());
  }
  const zoo::LogNormalSumModel model;
  double worst_grad = 0.0;
  double worst_cells = 0.0;
  for (double y : {1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 35.0, 60.0, 100.0}) {
    const auto approx = zoo::laplace_approx(y, model);
    const auto grid = oracle::lognormal_grid_mode(y, model.terms);
    const auto target = zoo::lognormal_surrogate_posterior(y, model, zoo::LaplaceCoordinates::LogVariance);
    worst_grad = std::max(worst_grad, target.gradient(approx.dist.mean()).norm());
    worst_cells = std::max({worst_cells, std::abs(approx.dist.mean()[0] - grid.mu) / grid.cell_mu,
                            std::abs(std::exp(approx.dist.mean()[1]) - grid.s2) / grid.cell_s2});
  }
  return {worst_lyap <= 1e-10 && worst_grad <= 1e-6 && worst_cells <= 1.0,
          fmt("Lyapunov residual %.2e x |B|; Laplace gradient %.2e; mode within %.2f grid cells", worst_lyap,
              worst_grad, worst_cells)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--only", only, "Run a single criterion")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "finite-example exactness", 1.0, finite_exactness},
      {2, "exact approximation recovers the prior", 10.0, exactness_recovers_prior},
      {3, "analytic vs simulated Gibbs prior", 120.0, analytic_simulation_agreement},
      {4, "entropy and correlation patterns", 1.0, entropy_patterns},
      {5, "pointwise-prior propriety", 5.0, pointwise_propriety},
      {6, "compatibility detection", 60.0, compatibility_detection},
      {7, "SBC calibration", 120.0, sbc_calibration},
      {8, "log-normal Gibbs-prior bias", 900.0, lognormal_bias},
      {9, "Fenton-Wilkinson moment matching", 1.0, fenton_wilkinson_moments},
      {10, "numerical hygiene", 60.0, numerical_hygiene},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.check();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = out.pass && in_time;
    if (!pass) ++failures;
    std::printf("criterion %2d %s  %s: %s [%.2f s of %.0f s]\n", c.id, pass ? "PASS" : "FAIL", c.name,
                out.detail.c_str(), secs, c.budget_seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
