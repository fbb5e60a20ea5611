#include "gibbsdiag/diagnostics.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace gibbsdiag::diag {

// ---------------------------------------------------------------------------
// Gelman-Rubin
// ---------------------------------------------------------------------------

namespace {

Vector classic_rhat(const std::vector<Matrix>& chains) {
  const auto m = static_cast<double>(chains.size());
  const Eigen::Index len = chains.front().rows();
  const auto n = static_cast<double>(len);
  const Eigen::Index d = chains.front().cols();

  Matrix means(static_cast<Eigen::Index>(chains.size()), d);
  Vector within = Vector::Zero(d);
  for (std::size_t j = 0; j < chains.size(); ++j) {
    const Matrix& c = chains[j];
    const Eigen::RowVectorXd mu = c.colwise().mean();
    means.row(static_cast<Eigen::Index>(j)) = mu;
    within += ((c.rowwise() - mu).array().square().colwise().sum() / (n - 1.0)).matrix().transpose();
  }
  within /= m;

  const Eigen::RowVectorXd grand = means.colwise().mean();
  const Vector between =
      (n / (m - 1.0)) * ((means.rowwise() - grand).array().square().colwise().sum()).matrix().transpose();

  Vector rhat(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    if (!(within[k] > 0.0)) {
      throw InvalidArgument("gelman_rubin: zero within-chain variance in dimension " +
                            std::to_string(k));
    }
    const double pooled = (n - 1.0) / n * within[k] + between[k] / n;
    rhat[k] = std::sqrt(pooled / within[k]);
  }
  return rhat;
}

}  // namespace

Vector gelman_rubin(std::span<const Matrix> chains, RhatVariant variant) {
  if (chains.size() < 2) throw InvalidArgument("gelman_rubin needs at least two chains");
  const Eigen::Index len = chains.front().rows();
  const Eigen::Index d = chains.front().cols();
  if (len < 4) throw InvalidArgument("gelman_rubin needs chains of length >= 4");
  for (const auto& c : chains) {
    if (c.rows() != len || c.cols() != d) {
      throw InvalidArgument("gelman_rubin: chains must share length and dimension");
    }
  }

  std::vector<Matrix> parts;
  if (variant == RhatVariant::Split) {
    const Eigen::Index half = len / 2;
    for (const auto& c : chains) {
      parts.emplace_back(c.topRows(half));
      parts.emplace_back(c.bottomRows(half));
    }
  } else {
    parts.assign(chains.begin(), chains.end());
  }
  return classic_rhat(parts);
}

double gelman_rubin(const std::vector<std::vector<double>>& chains, RhatVariant variant) {
  std::vector<Matrix> mats;
  mats.reserve(chains.size());
  for (const auto& c : chains) {
    mats.emplace_back(Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size())));
  }
  return gelman_rubin(std::span<const Matrix>(mats), variant)[0];
}

double autocorrelation(std::span<const double> chain, std::size_t lag) {
  if (chain.size() <= lag + 1) {
    throw InvalidArgument("autocorrelation: sequence must be longer than lag + 1");
  }
  const std::size_t n = chain.size() - lag;
  double mean_a = 0.0;
  double mean_b = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    mean_a += chain[t];
    mean_b += chain[t + lag];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);

  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double a = chain[t] - mean_a;
    const double b = chain[t + lag] - mean_b;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) {
    throw InvalidArgument("autocorrelation: sequence has zero variance");
  }
  if (lag == 0) return 1.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

namespace {

void check_two_sample(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("two-sample inputs differ in dimension");
  if (a.rows() < 2 || b.rows() < 2) {
    throw InvalidArgument("two-sample inputs need at least two samples each");
  }
}

double kernel_sum(const Matrix& x, const Matrix& y, double inv_two_bw2, bool skip_diagonal) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      if (skip_diagonal && i == j) continue;
      total += std::exp(-(x.row(i) - y.row(j)).squaredNorm() * inv_two_bw2);
    }
  }
  return total;
}

}  // namespace

double batch_means_standard_error(std::span<const double> chain, std::size_t batches) {
  const std::size_t n = chain.size();
  if (batches == 0) batches = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  if (batches < 2 || n / batches < 1) {
    throw InvalidArgument("batch_means_standard_error needs at least two nonempty batches");
  }
  const std::size_t size = n / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) sum += chain[b * size + i];
    means[b] = sum / static_cast<double>(size);
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(batches);
  double ss = 0.0;
  for (double m : means) ss += (m - grand) * (m - grand);
  const double batch_var = ss / static_cast<double>(batches - 1);
  return std::sqrt(batch_var / static_cast<double>(batches));
}

double mmd2(const Matrix& a, const Matrix& b, double bandwidth) {
  check_two_sample(a, b);
  if (!(bandwidth > 0.0)) throw InvalidArgument("mmd2: bandwidth must be positive");
  const double g = 1.0 / (2.0 * bandwidth * bandwidth);
  const auto n = static_cast<double>(a.rows());
  const auto m = static_cast<double>(b.rows());
  return kernel_sum(a, a, g, true) / (n * (n - 1.0)) + kernel_sum(b, b, g, true) / (m * (m - 1.0)) -
         2.0 * kernel_sum(a, b, g, false) / (n * m);
}

double median_heuristic_bandwidth(const Matrix& a, const Matrix& b) {
  check_two_sample(a, b);
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  const Eigen::Index cap = 1000;
  const Eigen::Index n = std::min(cap, pooled.rows());
  const Eigen::Index stride = std::max<Eigen::Index>(1, pooled.rows() / n);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dists.push_back((pooled.row(i * stride) - pooled.row(j * stride)).norm());
    }
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  const double med = *mid;
  return med > 0.0 ? med : 1.0;
}

double PermutationTest::null_quantile(double level) const {
  if (null_samples.empty()) throw InvalidArgument("empty permutation null");
  const double pos = std::clamp(level, 0.0, 1.0) * static_cast<double>(null_samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * null_samples[lo] + w * null_samples[hi];
}

PermutationTest mmd_permutation_test(const Matrix& a, const Matrix& b, double bandwidth,
                                     std::size_t permutations, Rng& rng) {
  check_two_sample(a, b);
  if (!(bandwidth > 0.0)) throw InvalidArgument("mmd_permutation_test: bandwidth must be positive");

  const Eigen::Index na = a.rows();
  const Eigen::Index nb = b.rows();
  const Eigen::Index total = na + nb;
  Matrix pooled(total, a.cols());
  pooled << a, b;

  // Column 0 is all ones (kernel row sums), column 1 marks the observed
  // split, the rest mark random relabelings of the pooled sample.
  const auto columns = static_cast<Eigen::Index>(permutations) + 2;
  Matrix labels = Matrix::Zero(total, columns);
  labels.col(0).setOnes();
  labels.col(1).head(na).setOnes();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(total));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  for (Eigen::Index c = 2; c < columns; ++c) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (Eigen::Index i = 0; i < na; ++i) labels(perm[static_cast<std::size_t>(i)], c) = 1.0;
  }

  // R = K * labels, with K formed tile by tile and never stored whole.
  const double g = 1.0 / (2.0 * bandwidth * bandwidth);
  const Vector sq = pooled.rowwise().squaredNorm();
  constexpr Eigen::Index tile = 256;
  Matrix r = Matrix::Zero(total, columns);
  Matrix k;
  for (Eigen::Index i0 = 0; i0 < total; i0 += tile) {
    const Eigen::Index ni = std::min(tile, total - i0);
    for (Eigen::Index j0 = 0; j0 <= i0; j0 += tile) {
      const Eigen::Index nj = std::min(tile, total - j0);
      k.noalias() = -2.0 * pooled.middleRows(i0, ni) * pooled.middleRows(j0, nj).transpose();
      k.colwise() += sq.segment(i0, ni);
      k.rowwise() += sq.segment(j0, nj).transpose();
      k = (k.array().max(0.0) * -g).exp().matrix();
      r.middleRows(i0, ni).noalias() += k * labels.middleRows(j0, nj);
      if (j0 != i0) r.middleRows(j0, nj).noalias() += k.transpose() * labels.middleRows(i0, ni);
    }
  }

  const double size_a = static_cast<double>(na);
  const double size_b = static_cast<double>(nb);
  const double total_sum = r.col(0).sum();  // 1'K1, diagonal included
  auto statistic = [&](Eigen::Index c) {
    const double a_k_a = labels.col(c).dot(r.col(c));
    const double a_k_1 = labels.col(c).dot(r.col(0));
    const double s_aa = a_k_a - size_a;
    const double s_ab = a_k_1 - a_k_a;
    const double s_bb = total_sum - 2.0 * a_k_1 + a_k_a - size_b;
    return s_aa / (size_a * (size_a - 1.0)) + s_bb / (size_b * (size_b - 1.0)) -
           2.0 * s_ab / (size_a * size_b);
  };

  PermutationTest out;
  out.statistic = statistic(1);
  out.null_samples.reserve(permutations);
  std::size_t at_least = 0;
  for (Eigen::Index c = 2; c < columns; ++c) {
    const double s = statistic(c);
    if (s >= out.statistic) ++at_least;
    out.null_samples.push_back(s);
  }
  std::sort(out.null_samples.begin(), out.null_samples.end());
  out.p_value = static_cast<double>(1 + at_least) / static_cast<double>(1 + permutations);
  return out;
}

Matrix sample_covariance(const Matrix& samples) {
  if (samples.rows() < 2) throw InvalidArgument("sample covariance needs at least two samples");
  const Matrix centered = samples.rowwise() - samples.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
}

double compactness(const Matrix& samples) { return sample_covariance(samples).norm(); }

// ---------------------------------------------------------------------------
// SBC
// ---------------------------------------------------------------------------

std::pair<double, double> binomial_band(std::size_t trials, double p, double coverage) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("binomial_band: p must lie in (0, 1)");
  const boost::math::binomial_distribution<double> dist(static_cast<double>(trials), p);
  const double tail = 0.5 * (1.0 - coverage);
  // Smallest k with CDF(k) >= q.
  auto quantile = [&](double q) {
    for (std::size_t k = 0; k <= trials; ++k) {
      if (boost::math::cdf(dist, static_cast<double>(k)) >= q) return static_cast<double>(k);
    }
    return static_cast<double>(trials);
  };
  return {quantile(tail), quantile(1.0 - tail)};
}

RankHistogram RankHistogram::rebinned() const {
  if (counts.size() < 2 || counts.size() % 2 != 0) {
    throw InvalidArgument("rebinning needs an even number of bins");
  }
  RankHistogram out;
  out.draws = draws;
  out.posterior_draws = posterior_draws;
  for (std::size_t i = 0; i < counts.size(); i += 2) out.counts.push_back(counts[i] + counts[i + 1]);
  out.band_99 = binomial_band(draws, 1.0 / static_cast<double>(out.counts.size()));
  return out;
}

ChiSquareResult chi_square_uniformity(const RankHistogram& hist) {
  if (hist.counts.size() < 2 || hist.draws == 0) {
    throw InvalidArgument("chi-square test needs at least two bins and one draw");
  }
  const double expected = static_cast<double>(hist.draws) / static_cast<double>(hist.counts.size());
  ChiSquareResult out;
  for (std::size_t c : hist.counts) {
    const double diff = static_cast<double>(c) - expected;
    out.statistic += diff * diff / expected;
  }
  out.dof = static_cast<double>(hist.counts.size() - 1);
  const boost::math::chi_squared_distribution<double> dist(out.dof);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  return out;
}

SbcError::SbcError(std::size_t repetition, const std::string& what)
    : Error("SBC repetition " + std::to_string(repetition) + " failed: " + what),
      repetition_(repetition) {}

RankHistogram sbc_ranks(const SbcProblem& problem, std::size_t n_draws, std::size_t posterior_draws,
                        Rng& rng) {
  if (n_draws == 0 || posterior_draws == 0) throw InvalidArgument("sbc_ranks needs N, L >= 1");
  if (!problem.sample_prior || !problem.sample_likelihood || !problem.fit_approximation ||
      !problem.statistic) {
    throw InvalidArgument("sbc_ranks: incomplete problem definition");
  }

  RankHistogram hist;
  hist.counts.assign(posterior_draws + 1, 0);
  hist.draws = n_draws;
  hist.posterior_draws = posterior_draws;
  hist.band_99 = binomial_band(n_draws, 1.0 / static_cast<double>(posterior_draws + 1));

  for (std::size_t rep = 0; rep < n_draws; ++rep) {
    const Vector theta = problem.sample_prior(rng);
    const Vector y = problem.sample_likelihood(theta, rng);
    const double reference = problem.statistic(theta);
    std::size_t below = 0;
    std::size_t ties = 0;
    try {
      const auto q = problem.fit_approximation(y);
      for (std::size_t l = 0; l < posterior_draws; ++l) {
        const double v = problem.statistic(q(rng));
        if (!std::isfinite(v)) throw NumericalError("non-finite posterior statistic");
        if (v < reference) {
          ++below;
        } else if (v == reference) {
          ++ties;
        }
      }
    } catch (const std::exception& e) {
      throw SbcError(rep, e.what());
    }
    if (ties > 0) below += static_cast<std::size_t>(rng.below(ties + 1));
    ++hist.counts[below];
  }
  return hist;
}

std::string rank_histogram_to_json(const RankHistogram& hist) {
  nlohmann::json j;
  j["counts"] = hist.counts;
  j["N"] = hist.draws;
  j["L"] = hist.posterior_draws;
  j["band_99"] = {hist.band_99.first, hist.band_99.second};
  j["band_kind"] = "pointwise binomial";
  return j.dump();
}

std::string rank_histogram_svg(const RankHistogram& hist, const std::string& title) {
  const double width = 480.0;
  const double height = 240.0;
  const double margin = 30.0;
  const auto bins = static_cast<double>(hist.counts.size());
  double top = hist.band_99.second;
  for (std::size_t c : hist.counts) top = std::max(top, static_cast<double>(c));
  top = std::max(top, 1.0) * 1.1;

  const double plot_w = width - 2.0 * margin;
  const double plot_h = height - 2.0 * margin;
  auto ypix = [&](double v) { return margin + plot_h * (1.0 - v / top); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<text x=\"" << margin << "\" y=\"18\" font-size=\"12\">" << title << "</text>\n";
  os << "<rect x=\"" << margin << "\" y=\"" << ypix(hist.band_99.second) << "\" width=\"" << plot_w
     << "\" height=\"" << ypix(hist.band_99.first) - ypix(hist.band_99.second)
     << "\" fill=\"#cccccc\"/>\n";
  const double bar_w = plot_w / bins;
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    const double v = static_cast<double>(hist.counts[i]);
    os << "<rect x=\"" << margin + bar_w * static_cast<double>(i) << "\" y=\"" << ypix(v)
       << "\" width=\"" << bar_w * 0.9 << "\" height=\"" << margin + plot_h - ypix(v)
       << "\" fill=\"#4a6fa5\" fill-opacity=\"0.8\"/>\n";
  }
  os << "<line x1=\"" << margin << "\" y1=\"" << margin + plot_h << "\" x2=\"" << margin + plot_w
     << "\" y2=\"" << margin + plot_h << "\" stroke=\"black\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace gibbsdiag::diag
