#include "gibbsdiag/model_zoo.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

namespace gibbsdiag::zoo {

namespace {

void require_positive_variance(double sigma2, const char* where) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw InvalidArgument(std::string(where) + ": sigma^2 must be positive and finite");
  }
}

/// log((e^s - 1)/L + 1) and its derivative in s, stable for small and large s.
std::pair<double, double> fw_beta2(double s, int terms) {
  const double l = terms;
  if (s > 1.0) {
    const double tail = (l - 1.0) * std::exp(-s);
    return {s - std::log(l) + std::log1p(tail), 1.0 / (1.0 + tail)};
  }
  const double e = std::expm1(s);
  return {std::log1p(e / l), (e + 1.0) / (l + e)};
}

}  // namespace

void LogNormalSumModel::validate() const {
  if (terms < 1) throw InvalidArgument("LogNormalSumModel: terms must be >= 1");
}

Vector LogNormalSumModel::sample_prior(Rng& rng) const {
  Vector theta(2);
  theta[0] = rng.normal();
  theta[1] = rng.exponential(1.0);
  return theta;
}

double LogNormalSumModel::log_prior(double mu, double sigma2) const {
  if (!(sigma2 > 0.0)) return -std::numeric_limits<double>::infinity();
  return -0.5 * mu * mu - 0.5 * std::log(2.0 * std::numbers::pi) - sigma2;
}

double lognormal_sum_sample(double mu, double sigma2, int terms, Rng& rng) {
  require_positive_variance(sigma2, "lognormal_sum_sample");
  if (terms < 1) throw InvalidArgument("lognormal_sum_sample: terms must be >= 1");
  const double sd = std::sqrt(sigma2);
  double y = 0.0;
  for (int l = 0; l < terms; ++l) y += std::exp(mu + sd * rng.normal());
  return y;
}

FWParams fenton_wilkinson(double mu, double sigma2, int terms) {
  require_positive_variance(sigma2, "fenton_wilkinson");
  if (terms < 1) throw InvalidArgument("fenton_wilkinson: terms must be >= 1");
  const double beta2 = fw_beta2(sigma2, terms).first;
  return {mu + std::log(static_cast<double>(terms)) + 0.5 * (sigma2 - beta2), beta2};
}

LaplaceFit laplace_fit(const LogDensity& target, const std::vector<Vector>& starts,
                       const LaplaceOptions& options) {
  if (starts.empty()) throw InvalidArgument("laplace_fit: no starting points");

  auto hessian = [&](const Vector& x) {
    const Eigen::Index d = x.size();
    Matrix h(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double step = options.fd_relative_step * std::max(1.0, std::abs(x[i]));
      Vector up = x;
      Vector down = x;
      up[i] += step;
      down[i] -= step;
      h.col(i) = (target.gradient(up) - target.gradient(down)) / (2.0 * step);
    }
    return Matrix(0.5 * (h + h.transpose()));
  };

  std::string last_failure = "no start converged";
  const std::size_t attempts = std::min(starts.size(), std::max<std::size_t>(options.restarts, 1));
  for (std::size_t s = 0; s < attempts; ++s) {
    Vector x = starts[s];
    double value = target.value(x);
    if (!std::isfinite(value)) {
      last_failure = "non-finite log density at start " + std::to_string(s);
      continue;
    }
    Vector grad = target.gradient(x);
    bool stalled = false;
    std::size_t it = 0;
    for (; it < options.max_iterations && grad.norm() > options.gradient_tol; ++it) {
      const Matrix h = hessian(x);
      Vector direction;
      Eigen::LLT<Matrix> neg(-h);
      if (neg.info() == Eigen::Success) {
        direction = neg.solve(grad);
      } else {
        direction = grad;  // not concave here: fall back to steepest ascent
      }
      double t = 1.0;
      bool accepted = false;
      for (int halving = 0; halving <= 30; ++halving, t *= 0.5) {
        const Vector candidate = x + t * direction;
        const double v = target.value(candidate);
        if (!std::isfinite(v)) continue;
        const Vector g = target.gradient(candidate);
        const bool better = v > value;
        const bool flat_but_closer =
            v >= value - 1e-14 * (1.0 + std::abs(value)) && g.norm() < grad.norm();
        if (better || flat_but_closer) {
          x = candidate;
          value = v;
          grad = g;
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        stalled = true;
        break;
      }
    }
    if (grad.norm() > options.gradient_tol && !(stalled && grad.norm() <= 1e-6)) {
      last_failure = "Newton did not converge from start " + std::to_string(s) +
                     " (gradient norm " + std::to_string(grad.norm()) + ")";
      continue;
    }
    const Matrix h = hessian(x);
    Matrix cov = -h.inverse();
    cov = 0.5 * (cov + cov.transpose());
    if (!gaussian::is_spd(cov)) {
      throw NumericalError("laplace_fit: Hessian at the mode is not negative definite");
    }
    return LaplaceFit{x, cov, it, grad.norm()};
  }
  throw NumericalError("laplace_fit: " + last_failure);
}

LogDensity lognormal_surrogate_posterior(double y, const LogNormalSumModel& model,
                                         LaplaceCoordinates coordinates) {
  model.validate();
  if (!(y > 0.0) || !std::isfinite(y)) {
    throw InvalidArgument("lognormal_surrogate_posterior: y must be positive");
  }
  const int terms = model.terms;
  const double z = std::log(y);
  const double log_l = std::log(static_cast<double>(terms));
  const bool log_var = coordinates == LaplaceCoordinates::LogVariance;

  struct Eval {
    double value;
    double d_mu;
    double d_s;
  };
  const double constant = -z - std::log(2.0 * std::numbers::pi);
  // Density in (mu, s = sigma^2).
  auto natural = [terms, z, log_l, constant](double mu, double s) -> Eval {
    const auto [beta2, dbeta2] = fw_beta2(s, terms);
    const double alpha = mu + log_l + 0.5 * (s - beta2);
    const double r = z - alpha;
    const double value =
        constant - 0.5 * mu * mu - s - 0.5 * std::log(beta2) - r * r / (2.0 * beta2);
    const double dl_dalpha = r / beta2;
    const double dl_dbeta2 = -0.5 / beta2 + r * r / (2.0 * beta2 * beta2);
    const double dalpha_ds = 0.5 * (1.0 - dbeta2);
    return {value, dl_dalpha - mu, dl_dalpha * dalpha_ds + dl_dbeta2 * dbeta2 - 1.0};
  };

  auto eval = [natural, log_var](const Vector& x) -> Eval {
    if (x.size() != 2) throw InvalidArgument("lognormal surrogate posterior is 2-dimensional");
    if (log_var) {
      if (x[1] > 700.0) {
        return {-std::numeric_limits<double>::infinity(), 0.0, 0.0};
      }
      const double s = std::exp(x[1]);
      Eval e = natural(x[0], s);
      // sigma^2 = exp(u): add log|ds/du| = u.
      return {e.value + x[1], e.d_mu, e.d_s * s + 1.0};
    }
    if (!(x[1] > 0.0)) return {-std::numeric_limits<double>::infinity(), 0.0, 0.0};
    return natural(x[0], x[1]);
  };

  LogDensity out;
  out.value = [eval](const Vector& x) { return eval(x).value; };
  out.gradient = [eval](const Vector& x) {
    const Eval e = eval(x);
    Vector g(2);
    g << e.d_mu, e.d_s;
    return g;
  };
  return out;
}

LaplaceApprox laplace_approx(double y, const LogNormalSumModel& model,
                             const LaplaceOptions& options) {
  const LogDensity target =
      lognormal_surrogate_posterior(y, model, LaplaceCoordinates::LogVariance);
  const double z = std::log(y);
  const double log_l = std::log(static_cast<double>(model.terms));
  std::vector<Vector> starts;
  for (double s : {0.5, 1.0, 0.1, 2.0, 0.02}) {
    const double beta2 = fw_beta2(s, model.terms).first;
    Vector x(2);
    x << z - log_l - 0.5 * (s - beta2), std::log(s);
    starts.push_back(x);
  }
  const LaplaceFit fit = laplace_fit(target, starts, options);
  return LaplaceApprox{gaussian::GaussianDist(fit.mode, fit.covariance),
                       LaplaceCoordinates::LogVariance, fit.iterations, fit.gradient_norm};
}

LaplaceDraw laplace_sample(const gaussian::GaussianDist& dist, LaplaceCoordinates coordinates,
                           Rng& rng) {
  if (dist.dim() != 2) throw InvalidArgument("laplace_sample: expected a 2-dimensional Gaussian");
  if (coordinates == LaplaceCoordinates::LogVariance) {
    Vector x = dist.sample(rng);
    x[1] = std::exp(x[1]);
    return {x, 0};
  }
  const double sd = std::sqrt(dist.covariance()(1, 1));
  const double acceptance = boost::math::cdf(boost::math::normal(0.0, 1.0), dist.mean()[1] / sd);
  if (acceptance < 1e-3) {
    throw NumericalError("laplace_sample: acceptance rate " + std::to_string(acceptance) +
                         " for sigma^2 > 0 is below 1e-3");
  }
  constexpr std::size_t max_attempts = 10'000;
  for (std::size_t rejected = 0; rejected < max_attempts; ++rejected) {
    Vector x = dist.sample(rng);
    if (x[1] > 0.0) return {x, rejected};
  }
  throw NumericalError("laplace_sample: no draw with sigma^2 > 0 in 10000 attempts");
}

LaplaceDraw laplace_sample(const LaplaceApprox& approx, Rng& rng) {
  return laplace_sample(approx.dist, approx.coordinates, rng);
}

ConditionalPair lognormal_pair(const LogNormalSumModel& model, const LaplaceOptions& options) {
  model.validate();
  ConditionalPair pair;
  pair.latent_dim = 2;
  pair.observation_dim = 1;
  pair.sample_likelihood = [model](const Vector& theta, Rng& rng) {
    return Vector::Constant(1, lognormal_sum_sample(theta[0], theta[1], model.terms, rng));
  };
  pair.fit_approximation = [model, options](const Vector& y) -> ThetaSampler {
    auto approx = std::make_shared<const LaplaceApprox>(laplace_approx(y[0], model, options));
    return [approx](Rng& rng) { return laplace_sample(*approx, rng).theta; };
  };
  pair.sample_prior = [model](Rng& rng) { return model.sample_prior(rng); };
  return pair;
}

void StochVolModel::validate() const {
  if (length < 1) throw InvalidArgument("StochVolModel: length must be >= 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("StochVolModel: sigma must be nonnegative");
  }
  if (!(nu > 0.0) || !std::isfinite(nu)) throw InvalidArgument("StochVolModel: nu must be positive");
  if (!std::isfinite(theta0)) throw InvalidArgument("StochVolModel: theta0 must be finite");
}

Vector stochvol_sample_prior(const StochVolModel& model, Rng& rng) {
  model.validate();
  Vector theta(model.length);
  double current = model.theta0;
  for (int i = 0; i < model.length; ++i) {
    current += model.sigma * rng.normal();
    theta[i] = current;
  }
  return theta;
}

Vector stochvol_sample_obs(const Vector& theta, double nu, Rng& rng) {
  if (!(nu > 0.0)) throw InvalidArgument("stochvol_sample_obs: nu must be positive");
  Vector y(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double z = rng.normal();
    const double w = rng.chi_squared(nu);
    y[i] = std::exp(theta[i]) * z / std::sqrt(w / nu);
  }
  return y;
}

ConditionalPair stochvol_likelihood_pair(const StochVolModel& model) {
  model.validate();
  ConditionalPair pair;
  pair.latent_dim = static_cast<std::size_t>(model.length);
  pair.observation_dim = static_cast<std::size_t>(model.length);
  pair.sample_likelihood = [nu = model.nu](const Vector& theta, Rng& rng) {
    return stochvol_sample_obs(theta, nu, rng);
  };
  pair.sample_prior = [model](Rng& rng) { return stochvol_sample_prior(model, rng); };
  return pair;
}

ConditionalPair arnold_pair(ArnoldVariant variant) {
  // Both conditionals share one shape: N(location(x), 1 / (1 + x^2)).
  auto location = variant == ArnoldVariant::Compatible
                      ? +[](double x) { return 4.0 / (1.0 + x * x); }
                      : +[](double x) { return 0.5 * x; };
  auto draw = [location](double x, Rng& rng) {
    return location(x) + rng.normal() / std::sqrt(1.0 + x * x);
  };
  ConditionalPair pair;
  pair.latent_dim = 1;
  pair.observation_dim = 1;
  pair.sample_likelihood = [draw](const Vector& theta, Rng& rng) {
    return Vector::Constant(1, draw(theta[0], rng));
  };
  pair.fit_approximation = [draw](const Vector& y) -> ThetaSampler {
    const double obs = y[0];
    return [draw, obs](Rng& rng) { return Vector::Constant(1, draw(obs, rng)); };
  };
  return pair;
}

double arnold_compatible_log_joint(double theta, double y) {
  return 4.0 * y + 4.0 * theta - 0.5 * theta * theta - 0.5 * y * y - 0.5 * theta * theta * y * y;
}

}  // namespace gibbsdiag::zoo
