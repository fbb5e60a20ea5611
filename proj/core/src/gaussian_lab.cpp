#include "gibbsdiag/gaussian_lab.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <memory>
#include <numbers>

namespace gibbsdiag::gaussian {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kSpdRelTol = 1e-10;

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix spd_inverse(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("matrix is not positive definite");
  return symmetrized(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

void require_square(const Matrix& m, Eigen::Index d, const char* what) {
  if (m.rows() != d || m.cols() != d) {
    throw InvalidArgument(std::string(what) + " must be " + std::to_string(d) + "x" +
                          std::to_string(d));
  }
}

}  // namespace

bool is_spd(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) return false;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(m), Eigen::EigenvaluesOnly);
  const Vector& ev = eig.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  return ev.minCoeff() > rel_tol * largest;
}

GaussianDist::GaussianDist(Vector mean, Matrix covariance) : mean_(std::move(mean)) {
  if (mean_.size() == 0) throw InvalidArgument("GaussianDist: empty mean");
  require_square(covariance, mean_.size(), "GaussianDist covariance");
  if (!mean_.allFinite()) throw InvalidArgument("GaussianDist: non-finite mean");
  if (!is_spd(covariance, kSpdRelTol)) {
    throw InvalidArgument("GaussianDist: covariance is not symmetric positive definite");
  }
  cov_ = symmetrized(covariance);
  Eigen::LLT<Matrix> llt(cov_);
  if (llt.info() != Eigen::Success) {
    throw InvalidArgument("GaussianDist: Cholesky factorisation failed");
  }
  chol_ = llt.matrixL();
}

Vector GaussianDist::sample(Rng& rng) const {
  Vector z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean_ + chol_ * z;
}

double GaussianDist::log_density(const Vector& x) const {
  const Vector white = chol_.triangularView<Eigen::Lower>().solve(x - mean_);
  const double log_det = 2.0 * chol_.diagonal().array().log().sum();
  const auto d = static_cast<double>(mean_.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + white.squaredNorm());
}

GaussianToyModel::GaussianToyModel(GaussianDist prior_, Matrix likelihood_cov_, int n_obs_)
    : prior(std::move(prior_)), likelihood_cov(std::move(likelihood_cov_)), n_obs(n_obs_) {
  if (n_obs < 1) throw InvalidArgument("GaussianToyModel: n_obs must be positive");
  require_square(likelihood_cov, prior.dim(), "likelihood covariance");
  if (!is_spd(likelihood_cov, kSpdRelTol)) {
    throw InvalidArgument("GaussianToyModel: likelihood covariance is not SPD");
  }
  likelihood_cov = symmetrized(likelihood_cov);
}

Matrix GaussianToyModel::posterior_covariance() const {
  const Matrix precision =
      spd_inverse(prior.covariance()) + static_cast<double>(n_obs) * spd_inverse(likelihood_cov);
  return spd_inverse(precision);
}

const char* to_string(DivergenceKind kind) {
  return kind == DivergenceKind::ReverseKL ? "reverse-kl" : "forward-kl";
}

namespace {

Vector observation_mean(const GaussianToyModel& model, const Matrix& observations) {
  if (observations.cols() != model.dim() || observations.rows() != model.n_obs) {
    throw InvalidArgument("observations must be " + std::to_string(model.n_obs) + "x" +
                          std::to_string(model.dim()) + ", got " +
                          std::to_string(observations.rows()) + "x" +
                          std::to_string(observations.cols()));
  }
  return observations.colwise().mean().transpose();
}

Vector posterior_mean(const GaussianToyModel& model, const Matrix& post_cov, const Vector& ybar) {
  const double n = model.n_obs;
  return post_cov * (model.prior.covariance().llt().solve(model.prior.mean()) +
                     n * model.likelihood_cov.llt().solve(ybar));
}

}  // namespace

GaussianDist exact_posterior(const GaussianToyModel& model, const Matrix& observations) {
  const Vector ybar = observation_mean(model, observations);
  const Matrix cov = model.posterior_covariance();
  return GaussianDist(posterior_mean(model, cov, ybar), cov);
}

GaussianDist mean_field_approx(const GaussianDist& posterior, DivergenceKind kind) {
  const Matrix& cov = posterior.covariance();
  Vector variances;
  if (kind == DivergenceKind::ReverseKL) {
    variances = spd_inverse(cov).diagonal().cwiseInverse();
  } else {
    variances = cov.diagonal();
  }
  return GaussianDist(posterior.mean(), variances.asDiagonal());
}

Matrix approximation_covariance(const GaussianToyModel& model, const Approximation& approx) {
  const Matrix post_cov = model.posterior_covariance();
  if (const auto* mf = std::get_if<MeanField>(&approx)) {
    return mean_field_approx(GaussianDist(Vector::Zero(model.dim()), post_cov), mf->kind)
        .covariance();
  }
  return post_cov;
}

PointwisePriorResult pointwise_prior(const GaussianToyModel& model, const Matrix& observations,
                                     const Approximation& approx) {
  const Vector ybar = observation_mean(model, observations);
  const double n = model.n_obs;
  const Matrix post_cov = model.posterior_covariance();
  const Vector post_mean = posterior_mean(model, post_cov, ybar);
  const Matrix q_precision = spd_inverse(approximation_covariance(model, approx));
  const Matrix lik_precision = spd_inverse(model.likelihood_cov);

  const Matrix s = symmetrized(q_precision - n * lik_precision);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  const Vector& ev = eig.eigenvalues();  // ascending
  const double tol = kSpdRelTol * ev.cwiseAbs().maxCoeff();
  if (ev[0] <= tol) {
    return ImproperPrior{ev[0], eig.eigenvectors().col(0)};
  }
  const Matrix cov = spd_inverse(s);
  const Vector mean = cov * (q_precision * post_mean - n * lik_precision * ybar);
  return ProperPrior{GaussianDist(mean, cov)};
}

GibbsTransition gibbs_transition(const GaussianToyModel& model, const Approximation& approx) {
  const double n = model.n_obs;
  const Matrix post_cov = model.posterior_covariance();
  const Matrix lik_precision = spd_inverse(model.likelihood_cov);
  GibbsTransition out;
  out.offset = post_cov * model.prior.covariance().llt().solve(model.prior.mean());
  out.gain = n * post_cov * lik_precision;
  out.noise_cov =
      symmetrized(approximation_covariance(model, approx) + n * post_cov * lik_precision * post_cov);
  return out;
}

double spectral_radius(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("spectral_radius: matrix must be square");
  const Eigen::EigenSolver<Matrix> eig(a, false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix solve_discrete_lyapunov(const Matrix& a, const Matrix& b) {
  const Eigen::Index d = a.rows();
  require_square(a, d, "Lyapunov gain");
  require_square(b, d, "Lyapunov noise");
  if (!is_spd(b, kSpdRelTol)) throw InvalidArgument("Lyapunov noise matrix must be SPD");
  const double rho = spectral_radius(a);
  if (!(rho < 1.0)) {
    throw NumericalError("spectral radius " + std::to_string(rho) +
                         " >= 1: the chain has no stationary covariance");
  }

  // vec(A X A^T) = (A kron A) vec(X) for column-major vec.
  const Eigen::Index dd = d * d;
  Matrix system = Matrix::Identity(dd, dd);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      system.block(i * d, j * d, d, d) -= a(i, j) * a;
    }
  }
  const Eigen::PartialPivLU<Matrix> lu(system);
  auto solve = [&](const Matrix& rhs) {
    const Vector v = lu.solve(Eigen::Map<const Vector>(rhs.data(), dd));
    return Matrix(Eigen::Map<const Matrix>(v.data(), d, d));
  };

  Matrix x = solve(b);
  // One step of iterative refinement.
  const Matrix residual = b - (x - a * x * a.transpose());
  x += solve(residual);
  return symmetrized(x);
}

GaussianDist gibbs_prior_analytic(const GaussianToyModel& model, const Approximation& approx) {
  const GibbsTransition tr = gibbs_transition(model, approx);
  return GaussianDist(model.prior.mean(), solve_discrete_lyapunov(tr.gain, tr.noise_cov));
}

double gaussian_entropy(const GaussianDist& g) {
  const Eigen::LLT<Matrix> llt(g.covariance());
  const double log_det = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  const auto d = static_cast<double>(g.dim());
  return 0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi)) + 0.5 * log_det;
}

Matrix unpack_observations(const Vector& y, Eigen::Index n_obs, Eigen::Index dim) {
  if (y.size() != n_obs * dim) throw InvalidArgument("observation vector has wrong length");
  Matrix out(n_obs, dim);
  for (Eigen::Index i = 0; i < n_obs; ++i) out.row(i) = y.segment(i * dim, dim).transpose();
  return out;
}

namespace {

struct ToyPairState {
  Eigen::Index dim;
  int n_obs;
  Matrix lik_chol;
  Matrix post_cov;
  Vector prior_term;     // Sigma_p^-1 mu_p
  Matrix n_lik_precision;
  Matrix q_chol;
};

}  // namespace

ConditionalPair make_conditional_pair(const GaussianToyModel& model, const Approximation& approx) {
  auto state = std::make_shared<ToyPairState>();
  state->dim = model.dim();
  state->n_obs = model.n_obs;
  state->lik_chol = model.likelihood_cov.llt().matrixL();
  state->post_cov = model.posterior_covariance();
  state->prior_term = model.prior.covariance().llt().solve(model.prior.mean());
  state->n_lik_precision = static_cast<double>(model.n_obs) * spd_inverse(model.likelihood_cov);
  state->q_chol = approximation_covariance(model, approx).llt().matrixL();

  ConditionalPair pair;
  pair.latent_dim = static_cast<std::size_t>(model.dim());
  pair.observation_dim = static_cast<std::size_t>(model.dim() * model.n_obs);
  pair.sample_likelihood = [state](const Vector& theta, Rng& rng) {
    Vector y(state->dim * state->n_obs);
    Vector z(state->dim);
    for (int i = 0; i < state->n_obs; ++i) {
      for (Eigen::Index k = 0; k < state->dim; ++k) z[k] = rng.normal();
      y.segment(i * state->dim, state->dim) = theta + state->lik_chol * z;
    }
    return y;
  };
  pair.fit_approximation = [state](const Vector& y) -> ThetaSampler {
    const Matrix obs = unpack_observations(y, state->n_obs, state->dim);
    const Vector ybar = obs.colwise().mean().transpose();
    Vector mean = state->post_cov * (state->prior_term + state->n_lik_precision * ybar);
    return [state, mean = std::move(mean)](Rng& rng) {
      Vector z(state->dim);
      for (Eigen::Index k = 0; k < state->dim; ++k) z[k] = rng.normal();
      return Vector(mean + state->q_chol * z);
    };
  };
  GaussianDist prior = model.prior;
  pair.sample_prior = [prior](Rng& rng) { return prior.sample(rng); };
  return pair;
}

Matrix canonical_correlated_cov() {
  Matrix c(2, 2);
  c << 1.7, 1.45, 1.45, 1.7;
  return c;
}

GaussianToyModel setting_prior_model(int n_obs) {
  return GaussianToyModel(GaussianDist(Vector::Zero(2), canonical_correlated_cov()),
                          Matrix::Identity(2, 2), n_obs);
}

GaussianToyModel setting_like_model(int n_obs) {
  return GaussianToyModel(GaussianDist(Vector::Zero(2), Matrix::Identity(2, 2)),
                          canonical_correlated_cov(), n_obs);
}

}  // namespace gibbsdiag::gaussian
