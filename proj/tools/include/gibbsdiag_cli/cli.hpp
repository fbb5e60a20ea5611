#pragma once

#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace gibbsdiag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRunFailure = 2;
inline constexpr int kExitConfigError = 3;

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::size_t steps = 1000;
  std::optional<std::size_t> burn_in;
  std::size_t thinning = 1;
  std::size_t chains = 1;
  std::optional<Vector> init;
  std::string output_dir;
  nlohmann::json model = nlohmann::json::object();

  ChainConfig chain_config() const;
};

/// Rejects unknown keys, wrong types and out-of-range values.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

/// File name -> contents, written only once the whole run succeeded.
using Artifacts = std::map<std::string, std::string>;

/// Validates the experiment parameters eagerly (throws ConfigError) and
/// returns the deferred run. `resolved_model` receives the model sub-object
/// with every default and external fixture filled in.
std::function<Artifacts()> prepare_experiment(const RunConfig& cfg, std::size_t max_threads,
                                              const std::string& config_dir,
                                              nlohmann::json& resolved_model);

struct RunOptions {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed_override;
  std::size_t max_threads = 0;  // 0 = hardware concurrency
};

/// Exit code per kExit*; diagnostics go to `err`.
int run(const std::string& config_path, const RunOptions& options, std::ostream& err);

/// Prints numeric deltas between two report.json files of the same experiment.
int compare(const std::string& report_a, const std::string& report_b, std::ostream& out,
            std::ostream& err);

/// Version string baked in at configure time.
std::string version();

}  // namespace gibbsdiag::cli
