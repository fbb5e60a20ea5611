#include "gibbsdiag/finite_lab.hpp"

#include "gibbsdiag/core_engine.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace {

using namespace gibbsdiag;
using namespace gibbsdiag::finite;

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Conditionals of a joint table, built without the library.
std::pair<Matrix, Matrix> conditionals(const Matrix& joint) {
  Matrix f = joint;
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i) /= joint.row(i).sum();
  Matrix q = joint.transpose();
  for (Eigen::Index j = 0; j < q.rows(); ++j) q.row(j) /= joint.col(j).sum();
  return {f, q};
}

double tv(const Vector& a, const Vector& b) { return 0.5 * (a - b).cwiseAbs().sum(); }

TEST(FiniteModel, RejectsNonStochasticAndMismatchedShapes) {
  EXPECT_THROW(FiniteModel(rows({{0.5, 0.6}}), rows({{1.0}, {1.0}})), InvalidArgument);
  EXPECT_THROW(FiniteModel(rows({{1.2, -0.2}}), rows({{1.0}, {1.0}})), InvalidArgument);
  EXPECT_THROW(FiniteModel(rows({{0.5, 0.5}}), rows({{1.0}, {1.0}, {1.0}})), InvalidArgument);
  EXPECT_THROW(FiniteModel(rows({{0.5, 0.5}}), rows({{0.5, 0.5}, {0.5, 0.5}})), InvalidArgument);
  EXPECT_NO_THROW(FiniteModel(rows({{0.5, 0.5}}), rows({{1.0}, {1.0}})));
}

// Distance in representable doubles.
long ulps(double a, double b) {
  long n = 0;
  for (double x = std::min(a, b); x < std::max(a, b); x = std::nextafter(x, 2.0)) ++n;
  return n;
}

TEST(TransitionMatrix, ReferenceExampleIsExactToInputPrecision) {
  // The stored binary inputs multiply out to 0.5700000000000001 exactly, one
  // ulp above the double nearest 0.57; the other entries round to the decimal.
  const Matrix p = transition_matrix(reference_example());
  EXPECT_EQ(p(0, 0), 0.43);
  EXPECT_LE(ulps(p(0, 1), 0.57), 1);
  EXPECT_EQ(p(1, 0), 0.39);
  EXPECT_EQ(p(1, 1), 0.61);
}

TEST(TransitionMatrix, ExactPosteriorGivesTwoStepKernelOfJoint) {
  Rng rng(1);
  const Matrix joint = oracle::random_joint(4, 5, rng);
  const auto [f, q] = conditionals(joint);
  const Matrix p = transition_matrix(FiniteModel(f, q));
  // P[a, b] = sum_y J(a, y)/J(a, .) * J(b, y)/J(., y)
  for (Eigen::Index a = 0; a < 4; ++a) {
    for (Eigen::Index b = 0; b < 4; ++b) {
      double brute = 0.0;
      for (Eigen::Index y = 0; y < 5; ++y) {
        brute += joint(a, y) / joint.row(a).sum() * joint(b, y) / joint.col(y).sum();
      }
      EXPECT_NEAR(p(a, b), brute, 1e-14);
    }
  }
}

TEST(TransitionMatrix, PermutationLikelihoodPermutesRows) {
  const Matrix f = rows({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  Rng rng(2);
  const Matrix q = oracle::random_stochastic(3, 3, rng);
  const Matrix p = transition_matrix(FiniteModel(f, q));
  EXPECT_EQ(p.row(0), q.row(1));
  EXPECT_EQ(p.row(1), q.row(2));
  EXPECT_EQ(p.row(2), q.row(0));
}

TEST(Stationary, ReferenceExample) {
  const Vector pi = stationary_distribution(rows({{.43, .57}, {.39, .61}}));
  EXPECT_NEAR(pi[0], 0.40625, 1e-10);
  EXPECT_NEAR(pi[1], 0.59375, 1e-10);
}

TEST(Stationary, IdentityIsNonUnique) {
  try {
    stationary_distribution(Matrix::Identity(3, 3));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("non-unique"), std::string::npos);
  }
}

TEST(Stationary, ReducibleBlockChainIsNonUnique) {
  const Matrix p = rows({{.5, .5, 0, 0}, {.5, .5, 0, 0}, {0, 0, .3, .7}, {0, 0, .6, .4}});
  EXPECT_THROW(stationary_distribution(p), NumericalError);
}

TEST(Stationary, PeriodicChainConverges) {
  const Matrix p = rows({{0, 1}, {1, 0}});
  const Vector pi = stationary_distribution(p);
  EXPECT_NEAR(pi[0], 0.5, 1e-10);
  const Matrix cycle = rows({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  EXPECT_NEAR(stationary_distribution(cycle)[2], 1.0 / 3.0, 1e-10);
}

TEST(Stationary, MatchesEigensolverOnRandomPositiveChains) {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix p = oracle::random_stochastic(6, 6, rng);
    const Vector pi = stationary_distribution(p);
    EXPECT_LT((pi - oracle::stationary_by_eigensolver(p)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Stationary, GibbsStationaryResultInvariants) {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(6));
    const auto m = static_cast<Eigen::Index>(2 + rng.below(6));
    const FiniteModel model(oracle::random_stochastic(n, m, rng), oracle::random_stochastic(m, n, rng));
    const auto r = gibbs_stationary(model);
    EXPECT_NEAR(r.pi_g.sum(), 1.0, 1e-12);
    EXPECT_NEAR(r.p_g.sum(), 1.0, 1e-12);
    EXPECT_GE(r.pi_g.minCoeff(), 0.0);
    EXPECT_GE(r.p_g.minCoeff(), 0.0);
    EXPECT_LE(r.residual, 1e-10);
    const Matrix p = transition_matrix(model);
    EXPECT_NEAR((p.transpose() * r.pi_g - r.pi_g).cwiseAbs().sum(), r.residual, 1e-12);
  }
}

TEST(Stationary, CompatibilityRecoversThetaMarginal) {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto m = static_cast<Eigen::Index>(1 + rng.below(8));
    const Matrix joint = oracle::random_joint(n, m, rng);
    const auto [f, q] = conditionals(joint);
    const Vector pi = stationary_distribution(transition_matrix(FiniteModel(f, q)));
    const Vector marginal = joint.rowwise().sum();
    EXPECT_LT((pi - marginal).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Stationary, IndependentOfStartForPositiveChains) {
  // Two positive kernels sharing a fixed point reached from different P powers.
  Rng rng(6);
  const Matrix p = oracle::random_stochastic(5, 5, rng);
  const Vector pi = stationary_distribution(p);
  for (Eigen::Index start = 0; start < 5; ++start) {
    Vector v = Vector::Unit(5, start);
    for (int k = 0; k < 500; ++k) v = p.transpose() * v;
    EXPECT_LT((v - pi).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(PointwisePrior, JointDerivedQGivesThetaMarginalForEveryY) {
  Rng rng(7);
  const Matrix joint = oracle::random_joint(4, 3, rng);
  const auto [f, q] = conditionals(joint);
  const FiniteModel model(f, q);
  const Vector marginal = joint.rowwise().sum();
  for (Eigen::Index y = 0; y < 3; ++y) {
    const auto r = pointwise_prior_exact(model, y);
    ASSERT_TRUE(std::holds_alternative<Vector>(r));
    EXPECT_LT((std::get<Vector>(r) - marginal).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PointwisePrior, IncompatibleModelDependsOnY) {
  const auto model = reference_example();
  double max_tv = 0.0;
  std::vector<Vector> priors;
  for (Eigen::Index y = 0; y < 3; ++y) priors.push_back(std::get<Vector>(pointwise_prior_exact(model, y)));
  for (const auto& a : priors) {
    for (const auto& b : priors) max_tv = std::max(max_tv, tv(a, b));
  }
  EXPECT_GT(max_tv, 0.01);
}

TEST(PointwisePrior, ZeroLikelihoodUnderPositiveApproximationIsImproper) {
  const FiniteModel model(rows({{0.0, 1.0}, {0.5, 0.5}}), rows({{0.5, 0.5}, {0.5, 0.5}}));
  EXPECT_TRUE(std::holds_alternative<ImproperFlag>(pointwise_prior_exact(model, 0)));
  EXPECT_TRUE(std::holds_alternative<Vector>(pointwise_prior_exact(model, 1)));
  EXPECT_THROW(pointwise_prior_exact(model, 2), InvalidArgument);
}

TEST(PointwisePrior, AllEqualIffJointDerived) {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix joint = oracle::random_joint(3, 4, rng);
    const auto [f, q] = conditionals(joint);
    for (bool compatible : {true, false}) {
      const FiniteModel model(f, compatible ? q : oracle::random_stochastic(4, 3, rng));
      double max_tv = 0.0;
      const Vector first = std::get<Vector>(pointwise_prior_exact(model, 0));
      for (Eigen::Index y = 1; y < 4; ++y) {
        max_tv = std::max(max_tv, tv(first, std::get<Vector>(pointwise_prior_exact(model, y))));
      }
      const double gap = weak_compatibility_gap(model);
      if (compatible) {
        EXPECT_LE(max_tv, 1e-12);
        EXPECT_LE(gap, 1e-10);
      } else {
        EXPECT_GT(max_tv, 1e-12);
        EXPECT_GT(gap, 1e-10);
      }
    }
  }
}

TEST(MixtureIdentities, StationarityGapIsTinyForEveryValidModel) {
  Rng rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto m = static_cast<Eigen::Index>(1 + rng.below(8));
    const FiniteModel model(oracle::random_stochastic(n, m, rng), oracle::random_stochastic(m, n, rng));
    const auto gaps = verify_mixture_identities(model);
    EXPECT_LE(gaps.stationarity_gap, 1e-10);
    ASSERT_TRUE(gaps.pointwise_mixture_gap.has_value());
    EXPECT_LE(*gaps.pointwise_mixture_gap, 1e-10);
  }
}

TEST(MixtureIdentities, CompatibleModel) {
  Rng rng(10);
  const auto [f, q] = conditionals(oracle::random_joint(5, 4, rng));
  const auto gaps = verify_mixture_identities(FiniteModel(f, q));
  EXPECT_LE(gaps.stationarity_gap, 1e-10);
  ASSERT_TRUE(gaps.pointwise_mixture_gap.has_value());
  EXPECT_LE(*gaps.pointwise_mixture_gap, 1e-10);
}

TEST(MixtureIdentities, ImproperPointwisePriorGivesNoSecondGap) {
  const FiniteModel model(rows({{0.0, 1.0}, {0.5, 0.5}}), rows({{0.5, 0.5}, {0.5, 0.5}}));
  const auto gaps = verify_mixture_identities(model);
  EXPECT_FALSE(gaps.pointwise_mixture_gap.has_value());
  EXPECT_LE(gaps.stationarity_gap, 1e-10);
}

TEST(Perturb, PublishedAlternativeSatisfiesTheConstruction) {
  const auto model = reference_example();
  const Matrix alt = reference_example_alternative_q();
  const FiniteModel alt_model(model.likelihood(), alt);
  EXPECT_LE((transition_matrix(model) - transition_matrix(alt_model)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((alt - model.approximation()).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Perturb, ReferenceExample) {
  const auto model = reference_example();
  const auto tilde = perturb_approximation(model, 42);
  const Matrix& qt = tilde.approximation();
  EXPECT_TRUE(is_row_stochastic(qt));
  EXPECT_GE(qt.minCoeff(), 0.0);
  EXPECT_LE(qt.maxCoeff(), 1.0);
  EXPECT_GT((qt - model.approximation()).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LE((transition_matrix(model) - transition_matrix(tilde)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Perturb, SquareInvertibleLikelihoodThrows) {
  const FiniteModel model(rows({{.7, .3}, {.2, .8}}), rows({{.6, .4}, {.5, .5}}));
  EXPECT_THROW(perturb_approximation(model, 1), InvalidArgument);
}

TEST(Perturb, PreconditionsEnforced) {
  // Q with a zero entry.
  const FiniteModel zero_q(rows({{.1, .4, .5}, {.3, .2, .5}}), rows({{0, 1}, {.4, .6}, {.5, .5}}));
  EXPECT_THROW(perturb_approximation(zero_q, 1), InvalidArgument);
  const FiniteModel single(rows({{.2, .8}}), rows({{1.0}, {1.0}}));
  EXPECT_THROW(perturb_approximation(single, 1), InvalidArgument);
}

TEST(Perturb, RandomAdmissibleModelsKeepTheStationaryLaw) {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(4));
    const auto m = n + static_cast<Eigen::Index>(1 + rng.below(3));
    const FiniteModel model(oracle::random_stochastic(n, m, rng), oracle::random_stochastic(m, n, rng));
    const auto tilde = perturb_approximation(model, rng.next_u64());
    EXPECT_LE((transition_matrix(model) - transition_matrix(tilde)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT((tilde.approximation() - model.approximation()).cwiseAbs().maxCoeff(), 0.0);
    const Vector a = stationary_distribution(transition_matrix(model));
    const Vector b = stationary_distribution(transition_matrix(tilde));
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Perturb, DeterministicInSeed) {
  const auto model = reference_example();
  EXPECT_EQ(perturb_approximation(model, 5).approximation(),
            perturb_approximation(model, 5).approximation());
}

TEST(WeakCompatibility, ExactPosteriorHasZeroGap) {
  Rng rng(12);
  const auto [f, q] = conditionals(oracle::random_joint(3, 5, rng));
  EXPECT_LE(weak_compatibility_gap(FiniteModel(f, q)), 1e-10);
}

TEST(WeakCompatibility, PerturbedCompatibleQIsWeaklyCompatible) {
  Rng rng(13);
  const auto [f, q] = conditionals(oracle::random_joint(2, 4, rng));
  const FiniteModel model(f, q);
  const auto tilde = perturb_approximation(model, 99);
  EXPECT_GT((tilde.approximation() - q).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LE(weak_compatibility_gap(tilde), 1e-10);
}

TEST(WeakCompatibility, StoredIncompatibleFixture) {
  const auto model = load_model(std::string(GIBBSDIAG_SOURCE_DIR) + "/data/fixtures/arnold_b_example.json");
  EXPECT_GT(weak_compatibility_gap(model), 1e-6);
}

TEST(WeakCompatibility, ZeroEvidenceObservationThrows) {
  const FiniteModel model(rows({{1.0, 0.0}, {1.0, 0.0}}), rows({{.5, .5}, {.5, .5}}));
  EXPECT_THROW(weak_compatibility_gap(model), NumericalError);
}

TEST(ModelFromJoint, MatchesIndependentConditionals) {
  Rng rng(14);
  const Matrix joint = oracle::random_joint(3, 4, rng);
  const auto model = model_from_joint(joint);
  const auto [f, q] = conditionals(joint);
  EXPECT_LT((model.likelihood() - f).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((model.approximation() - q).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Json, RoundTripAndErrors) {
  const auto model = reference_example();
  const auto back = model_from_json(model_to_json(model));
  EXPECT_EQ(back.likelihood(), model.likelihood());
  EXPECT_EQ(back.approximation(), model.approximation());
  EXPECT_THROW(model_from_json("{\"F\": [[1.0]]}"), InvalidArgument);
  EXPECT_THROW(model_from_json("not json"), InvalidArgument);
  EXPECT_THROW(load_model("/nonexistent/model.json"), InvalidArgument);
}

TEST(ConditionalPairAdapter, ChainFrequenciesMatchStationaryVector) {
  const auto model = reference_example();
  ChainConfig cfg;
  cfg.steps = 100'000;
  cfg.seed = 17;
  cfg.burn_in = 0;
  const auto trace = simulate_gibbs_chain(make_conditional_pair(model), cfg);
  Vector freq = Vector::Zero(2);
  for (Eigen::Index t = 0; t < trace.thetas.rows(); ++t) freq[static_cast<Eigen::Index>(trace.thetas(t, 0))] += 1.0;
  freq /= freq.sum();
  EXPECT_LT(tv(freq, gibbs_stationary(model).pi_g), 0.01);
  // Observation frequencies follow p_G.
  Vector yfreq = Vector::Zero(3);
  for (Eigen::Index t = 0; t < trace.ys.rows(); ++t) yfreq[static_cast<Eigen::Index>(trace.ys(t, 0))] += 1.0;
  yfreq /= yfreq.sum();
  EXPECT_LT(tv(yfreq, gibbs_stationary(model).p_g), 0.01);
}

}  // namespace
