// Line-protocol backend for tests.
//
//   toy_backend exact-toy [die-after]   exact posterior of the setting-prior toy model
//   toy_backend version <v>             handshake with another protocol version
//   toy_backend malformed | nonfinite | unknown-type | wrong-length | silent
#include "gibbsdiag/gaussian_lab.hpp"

#include "json.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

using nlohmann::json;

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "exact-toy";
  const long arg = argc > 2 ? std::atol(argv[2]) : -1;

  const auto model = gibbsdiag::gaussian::setting_prior_model();
  std::string line;
  long served = 0;
  while (std::getline(std::cin, line)) {
    const json msg = json::parse(line);
    const std::string type = msg.at("type");
    if (type == "hello") {
      const int version = mode == "version" ? static_cast<int>(arg) : 1;
      std::cout << json{{"type", "ready"}, {"version", version}}.dump() << std::endl;
    } else if (type == "approximate") {
      if (mode == "exact-toy" && arg >= 0 && served >= arg) return 3;
      ++served;
      if (mode == "malformed") {
        std::cout << "{\"type\": \"theta\", \"value\": [1.0," << std::endl;
      } else if (mode == "nonfinite") {
        std::cout << "{\"type\":\"theta\",\"value\":[1e999,0.0]}" << std::endl;
      } else if (mode == "unknown-type") {
        std::cout << json{{"type", "sample"}, {"value", {0.0, 0.0}}}.dump() << std::endl;
      } else if (mode == "wrong-length") {
        std::cout << json{{"type", "theta"}, {"value", {0.0}}}.dump() << std::endl;
      } else if (mode == "silent") {
        std::this_thread::sleep_for(std::chrono::seconds(30));
      } else {
        const auto y = msg.at("y").get<std::vector<double>>();
        gibbsdiag::Matrix obs(1, 2);
        obs << y[0], y[1];
        gibbsdiag::Rng rng(msg.at("seed").get<std::uint64_t>());
        const gibbsdiag::Vector theta = gibbsdiag::gaussian::exact_posterior(model, obs).sample(rng);
        std::cout << json{{"type", "theta"}, {"value", {theta[0], theta[1]}}}.dump() << std::endl;
      }
    } else if (type == "bye") {
      return 0;
    }
  }
  return 0;
}
