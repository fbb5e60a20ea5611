#include "gibbsdiag/finite_lab.hpp"

#include <Eigen/SVD>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>

namespace gibbsdiag::finite {

bool is_row_stochastic(const Matrix& m, double tol) {
  if (m.rows() == 0 || m.cols() == 0 || !m.allFinite()) return false;
  if (m.minCoeff() < 0.0) return false;
  return ((m.rowwise().sum().array() - 1.0).abs() <= tol).all();
}

FiniteModel::FiniteModel(Matrix likelihood, Matrix approximation)
    : f_(std::move(likelihood)), q_(std::move(approximation)) {
  if (q_.rows() != f_.cols() || q_.cols() != f_.rows()) {
    throw InvalidArgument("FiniteModel: F is n x m, so Q must be m x n");
  }
  if (!is_row_stochastic(f_)) throw InvalidArgument("FiniteModel: F is not row-stochastic");
  if (!is_row_stochastic(q_)) throw InvalidArgument("FiniteModel: Q is not row-stochastic");
}

Matrix transition_matrix(const FiniteModel& model) {
  // Extended-precision accumulation, rounded once per entry.
  const Matrix& f = model.likelihood();
  const Matrix& q = model.approximation();
  Matrix p(f.rows(), q.cols());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      long double acc = 0.0L;
      for (Eigen::Index k = 0; k < f.cols(); ++k) {
        acc += static_cast<long double>(f(i, k)) * static_cast<long double>(q(k, j));
      }
      p(i, j) = static_cast<double>(acc);
    }
  }
  return p;
}

namespace {

/// Number of closed communicating classes of the support graph of P.
/// A unique stationary distribution exists iff this is exactly one.
std::size_t closed_class_count(const Matrix& p) {
  const auto n = static_cast<std::size_t>(p.rows());
  // reach[i][j]: j reachable from i (transitive closure, Warshall).
  std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    reach[i][i] = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0) reach[i][j] = 1;
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!reach[i][k]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (reach[k][j]) reach[i][j] = 1;
      }
    }
  }
  // A state is in a closed class iff everything it reaches reaches it back.
  std::vector<char> counted(n, 0);
  std::size_t classes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counted[i]) continue;
    bool closed = true;
    for (std::size_t j = 0; j < n && closed; ++j) {
      if (reach[i][j] && !reach[j][i]) closed = false;
    }
    if (!closed) continue;
    ++classes;
    for (std::size_t j = 0; j < n; ++j) {
      if (reach[i][j]) counted[j] = 1;
    }
  }
  return classes;
}

double stationarity_residual(const Vector& pi, const Matrix& p) {
  return (p.transpose() * pi - pi).lpNorm<1>();
}

bool iterate(const Matrix& kernel, const Matrix& p, Vector& pi, std::size_t max_iterations,
             double tol) {
  const Matrix kt = kernel.transpose();
  for (std::size_t it = 0; it < max_iterations; ++it) {
    Vector next = kt * pi;
    next = next.cwiseMax(0.0);
    next /= next.sum();
    pi.swap(next);
    if ((it % 16 == 15 || it < 64) && stationarity_residual(pi, p) <= tol) return true;
  }
  return stationarity_residual(pi, p) <= tol;
}

}  // namespace

Vector stationary_distribution(const Matrix& p, const StationaryOptions& options) {
  if (p.rows() != p.cols()) throw InvalidArgument("stationary_distribution: P must be square");
  if (!is_row_stochastic(p, 1e-10)) {
    throw InvalidArgument("stationary_distribution: P is not row-stochastic");
  }
  if (closed_class_count(p) != 1) {
    throw NumericalError("stationary distribution is non-unique: the chain is reducible");
  }

  const Eigen::Index n = p.rows();
  Vector pi = Vector::Constant(n, 1.0 / static_cast<double>(n));
  // Plain power iteration first; a periodic chain never settles, so the
  // remaining budget goes to the lazy kernel (I + P) / 2, whose iterates are
  // the Cesaro-type averages of the original chain and share its fixed point.
  const std::size_t plain_budget = std::min<std::size_t>(options.max_iterations, 10'000);
  if (iterate(p, p, pi, plain_budget, options.tol)) return pi;

  const Matrix lazy = 0.5 * (Matrix::Identity(n, n) + p);
  pi = Vector::Constant(n, 1.0 / static_cast<double>(n));
  if (iterate(lazy, p, pi, options.max_iterations - plain_budget, options.tol)) return pi;

  throw NumericalError("stationary distribution is non-convergent within " +
                       std::to_string(options.max_iterations) + " iterations (residual " +
                       std::to_string(stationarity_residual(pi, p)) + ")");
}

StationaryResult gibbs_stationary(const FiniteModel& model, const StationaryOptions& options) {
  const Matrix p = transition_matrix(model);
  StationaryResult out;
  out.pi_g = stationary_distribution(p, options);
  out.p_g = model.likelihood().transpose() * out.pi_g;
  out.residual = stationarity_residual(out.pi_g, p);
  return out;
}

PointwisePrior pointwise_prior_exact(const FiniteModel& model, Eigen::Index y_index) {
  if (y_index < 0 || y_index >= model.observation_states()) {
    throw InvalidArgument("pointwise_prior_exact: observation index out of range");
  }
  const Matrix& f = model.likelihood();
  const Matrix& q = model.approximation();
  Vector v(model.latent_states());
  for (Eigen::Index t = 0; t < v.size(); ++t) {
    const double lik = f(t, y_index);
    const double approx = q(y_index, t);
    if (lik == 0.0) {
      if (approx > 0.0) return ImproperFlag{};
      v[t] = 0.0;
    } else {
      v[t] = approx / lik;
    }
  }
  const double total = v.sum();
  if (!(total > 0.0)) return ImproperFlag{};
  return Vector(v / total);
}

MixtureGaps verify_mixture_identities(const FiniteModel& model) {
  const Matrix& f = model.likelihood();
  const Matrix& q = model.approximation();
  const StationaryResult st = gibbs_stationary(model);
  const Vector& pi = st.pi_g;
  const Vector g = f.transpose() * pi;  // g(y) = sum_theta pi(theta) f(y|theta)

  MixtureGaps out;
  out.stationarity_gap = (q.transpose() * g - pi).cwiseAbs().maxCoeff();

  Vector mixture = Vector::Zero(pi.size());
  for (Eigen::Index y = 0; y < f.cols(); ++y) {
    const PointwisePrior prior = pointwise_prior_exact(model, y);
    const auto* py = std::get_if<Vector>(&prior);
    if (py == nullptr) return out;  // some pi_y improper
    const double norm = py->dot(f.col(y));
    const double weight = g[y] / norm;
    mixture += weight * f.col(y).cwiseProduct(*py);
  }
  out.pointwise_mixture_gap = (mixture - pi).cwiseAbs().maxCoeff();
  return out;
}

FiniteModel perturb_approximation(const FiniteModel& model, std::uint64_t seed,
                                  const PerturbOptions& options) {
  const Matrix& f = model.likelihood();
  const Matrix& q = model.approximation();
  const Eigen::Index n = f.rows();
  const Eigen::Index m = f.cols();
  if (n < 2) throw InvalidArgument("perturb_approximation needs at least two latent states");
  if (!((q.array() > 0.0).all() && (q.array() < 1.0).all())) {
    throw InvalidArgument("perturb_approximation needs every entry of Q in (0, 1)");
  }

  const Eigen::JacobiSVD<Matrix> svd(f, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double threshold = options.kernel_rel_tol * sv.maxCoeff();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > threshold) ++rank;
  }
  if (rank >= m) throw InvalidArgument("perturb_approximation: ker F is trivial");
  const Matrix kernel = svd.matrixV().rightCols(m - rank);

  Rng rng(seed);
  Vector coeffs(kernel.cols());
  for (Eigen::Index i = 0; i < coeffs.size(); ++i) coeffs[i] = rng.normal();
  Vector x0 = kernel * coeffs;
  x0.normalize();

  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = rng.normal();
  w.array() -= w.mean();
  if (w.norm() == 0.0) w[0] = 1.0, w[1] = -1.0;
  w.normalize();

  const Matrix direction = x0 * w.transpose();
  // Largest step keeping every entry in [margin, 1 - margin]; each entry is
  // affine in the step, so the bound is exact.
  double step = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dir = direction(i, j);
      if (dir > 0.0) step = std::min(step, (1.0 - options.margin - q(i, j)) / dir);
      if (dir < 0.0) step = std::min(step, (q(i, j) - options.margin) / -dir);
    }
  }
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw InvalidArgument("perturb_approximation: Q has no room inside the margin");
  }

  Matrix q_tilde = q + step * direction;
  // Rows already sum to one analytically; clean up round-off.
  q_tilde = q_tilde.cwiseMax(0.0);
  for (Eigen::Index i = 0; i < m; ++i) q_tilde.row(i) /= q_tilde.row(i).sum();
  return FiniteModel(f, q_tilde);
}

double weak_compatibility_gap(const FiniteModel& model) {
  const Matrix& f = model.likelihood();
  const Vector pi = gibbs_stationary(model).pi_g;
  const Vector evidence = f.transpose() * pi;
  Matrix q_gibbs(f.cols(), f.rows());
  for (Eigen::Index y = 0; y < f.cols(); ++y) {
    if (!(evidence[y] > 0.0)) {
      throw NumericalError("observation " + std::to_string(y) +
                           " has zero mass under the Gibbs prior");
    }
    q_gibbs.row(y) = (pi.cwiseProduct(f.col(y)) / evidence[y]).transpose();
  }
  return (f * model.approximation() - f * q_gibbs).cwiseAbs().maxCoeff();
}

FiniteModel model_from_joint(const Matrix& joint) {
  if (joint.minCoeff() < 0.0 || std::abs(joint.sum() - 1.0) > 1e-10) {
    throw InvalidArgument("model_from_joint: joint must be a probability table");
  }
  const Vector row = joint.rowwise().sum();
  const Vector col = joint.colwise().sum().transpose();
  if (row.minCoeff() <= 0.0 || col.minCoeff() <= 0.0) {
    throw InvalidArgument("model_from_joint: every marginal entry must be positive");
  }
  Matrix f = row.cwiseInverse().asDiagonal() * joint;
  Matrix q = col.cwiseInverse().asDiagonal() * joint.transpose();
  return FiniteModel(std::move(f), std::move(q));
}

namespace {

Eigen::Index sample_row(const Matrix& m, Eigen::Index row, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  const Eigen::Index cols = m.cols();
  for (Eigen::Index j = 0; j < cols; ++j) {
    acc += m(row, j);
    if (u < acc) return j;
  }
  // Round-off: fall back to the last state with positive mass.
  for (Eigen::Index j = cols - 1; j >= 0; --j) {
    if (m(row, j) > 0.0) return j;
  }
  return cols - 1;
}

Eigen::Index state_index(const Vector& v, Eigen::Index states, const char* what) {
  const double raw = v[0];
  const auto idx = static_cast<Eigen::Index>(std::llround(raw));
  if (idx < 0 || idx >= states || std::abs(raw - static_cast<double>(idx)) > 1e-9) {
    throw InvalidArgument(std::string(what) + " is not a valid state index");
  }
  return idx;
}

}  // namespace

ConditionalPair make_conditional_pair(const FiniteModel& model) {
  auto shared = std::make_shared<const FiniteModel>(model);
  ConditionalPair pair;
  pair.latent_dim = 1;
  pair.observation_dim = 1;
  pair.sample_likelihood = [shared](const Vector& theta, Rng& rng) {
    const Eigen::Index t = state_index(theta, shared->latent_states(), "latent");
    return Vector::Constant(1, static_cast<double>(sample_row(shared->likelihood(), t, rng)));
  };
  pair.fit_approximation = [shared](const Vector& y) -> ThetaSampler {
    const Eigen::Index obs = state_index(y, shared->observation_states(), "observation");
    return [shared, obs](Rng& rng) {
      return Vector::Constant(1,
                              static_cast<double>(sample_row(shared->approximation(), obs, rng)));
    };
  };
  pair.sample_prior = [shared](Rng& rng) {
    return Vector::Constant(1, static_cast<double>(rng.below(
                                   static_cast<std::uint64_t>(shared->latent_states()))));
  };
  return pair;
}

namespace {

Matrix matrix_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array() || j.at(key).empty()) {
    throw InvalidArgument(std::string("finite model JSON: missing matrix \"") + key + "\"");
  }
  const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) {
      throw InvalidArgument(std::string("finite model JSON: ragged matrix \"") + key + "\"");
    }
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  return m;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  auto out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) row[static_cast<std::size_t>(k)] = m(i, k);
    out.push_back(row);
  }
  return out;
}

}  // namespace

FiniteModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("finite model JSON: ") + e.what());
  }
  return FiniteModel(matrix_from_json(j, "F"), matrix_from_json(j, "Q"));
}

std::string model_to_json(const FiniteModel& model) {
  nlohmann::json j;
  j["F"] = matrix_to_json(model.likelihood());
  j["Q"] = matrix_to_json(model.approximation());
  return j.dump(2);
}

FiniteModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open finite model file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

FiniteModel reference_example() {
  Matrix f(2, 3);
  f << .1, .4, .5,  //
      .3, .2, .5;
  Matrix q(3, 2);
  q << .2, .8,  //
      .4, .6,   //
      .5, .5;
  return FiniteModel(f, q);
}

Matrix reference_example_alternative_q() {
  Matrix q(3, 2);
  q << .1, .9,  //
      .3, .7,   //
      .6, .4;
  return q;
}

}  // namespace gibbsdiag::finite
