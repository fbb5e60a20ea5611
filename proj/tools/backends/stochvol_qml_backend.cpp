// Approximate posterior for the stochastic-volatility model, served over the
// external-approximator protocol.
//
// log(y_i^2) = 2 theta_i + log(eps_i^2) is treated as linear-Gaussian with the
// exact mean and variance of log(eps^2) for eps ~ StudentT(nu), and theta is
// drawn by forward filtering, backward sampling under the random-walk prior.

#include "gibbsdiag/rng.hpp"

#include "json.hpp"

#include <CLI11.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

namespace {

struct Qml {
  double sigma;
  double offset;    // E log eps^2
  double variance;  // Var log eps^2

  Qml(double sigma_, double nu) : sigma(sigma_) {
    using boost::math::digamma;
    using boost::math::trigamma;
    // log eps^2 = log z^2 - log(chi2_nu / nu)
    offset = digamma(0.5) + std::log(2.0) - digamma(0.5 * nu) - std::log(2.0 / nu);
    variance = 0.5 * std::numbers::pi * std::numbers::pi + trigamma(0.5 * nu);
  }

  std::vector<double> sample(const std::vector<double>& y, gibbsdiag::Rng& rng) const {
    const std::size_t n = y.size();
    std::vector<double> theta(n, 0.0);
    if (sigma == 0.0 || n == 0) return theta;
    const double q = sigma * sigma;
    std::vector<double> mean(n);
    std::vector<double> var(n);
    double a = 0.0;
    double p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p += q;
      const double x = std::log(y[i] * y[i] + 1e-300) - offset;
      const double s = 4.0 * p + variance;
      const double gain = 2.0 * p / s;
      a += gain * (x - 2.0 * a);
      p -= 2.0 * gain * p;
      mean[i] = a;
      var[i] = p;
    }
    theta[n - 1] = mean[n - 1] + std::sqrt(var[n - 1]) * rng.normal();
    for (std::size_t i = n - 1; i-- > 0;) {
      const double j = var[i] / (var[i] + q);
      const double m = mean[i] + j * (theta[i + 1] - mean[i]);
      theta[i] = m + std::sqrt(var[i] * q / (var[i] + q)) * rng.normal();
    }
    return theta;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quasi-likelihood stochastic-volatility approximator backend"};
  double sigma = 0.09;
  double nu = 12.0;
  app.add_option("--sigma", sigma, "Random-walk step standard deviation")->check(CLI::NonNegativeNumber);
  app.add_option("--nu", nu, "Student-t degrees of freedom")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const Qml qml(sigma, nu);
  std::size_t dim = 0;
  std::string line;
  while (std::getline(std::cin, line)) {
    nlohmann::json msg;
    try {
      msg = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "backend: bad request: " << e.what() << '\n';
      return 1;
    }
    const std::string type = msg.value("type", "");
    if (type == "hello") {
      dim = msg.value("latent_dim", std::size_t{0});
      if (msg.value("obs_dim", std::size_t{0}) != dim) {
        std::cerr << "backend: latent and observation lengths must agree\n";
        return 1;
      }
      std::cout << R"({"type":"ready","version":1})" << std::endl;
    } else if (type == "approximate") {
      const auto y = msg.at("y").get<std::vector<double>>();
      if (y.size() != dim) {
        std::cerr << "backend: observation has the wrong length\n";
        return 1;
      }
      gibbsdiag::Rng rng(msg.at("seed").get<std::uint64_t>());
      std::cout << nlohmann::json{{"type", "theta"}, {"value", qml.sample(y, rng)}}.dump()
                << std::endl;
    } else if (type == "bye") {
      return 0;
    } else {
      std::cerr << "backend: unknown message type \"" << type << "\"\n";
      return 1;
    }
  }
  return 0;
}
