#include "gibbsdiag_cli/cli.hpp"

#include "gibbsdiag/external_approximator.hpp"
#include "gibbsdiag/diagnostics.hpp"
#include "gibbsdiag_cli/version.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace gibbsdiag::cli {

namespace fs = std::filesystem;

std::string version() { return GIBBSDIAG_CLI_VERSION; }

ChainConfig RunConfig::chain_config() const {
  ChainConfig c;
  c.steps = steps;
  c.seed = seed;
  c.burn_in = burn_in;
  c.thinning = thinning;
  if (init) c.init = *init;
  return c;
}

namespace {

const std::set<std::string> kExperiments = {"toy-gaussian", "finite", "lognormal",
                                            "stochvol-external", "sbc", "compat"};

std::size_t read_count(const nlohmann::json& j, const char* key, bool allow_zero) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < (allow_zero ? 0 : 1)) {
    throw ConfigError(std::string("\"") + key + "\" must be " +
                      (allow_zero ? "a nonnegative" : "a positive") + " integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {"experiment", "seed",  "steps",      "burn_in",
                                              "thinning",   "chains", "init",      "output_dir",
                                              "model"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key \"" + key + "\"");
  }
  RunConfig cfg;
  if (!j.contains("experiment") || !j["experiment"].is_string()) {
    throw ConfigError("\"experiment\" is required");
  }
  cfg.experiment = j["experiment"].get<std::string>();
  if (!kExperiments.count(cfg.experiment)) {
    throw ConfigError("unknown experiment \"" + cfg.experiment + "\"");
  }
  if (!j.contains("seed") || !j["seed"].is_number_unsigned()) {
    throw ConfigError("\"seed\" is required and must be an unsigned integer");
  }
  cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("steps")) cfg.steps = read_count(j, "steps", false);
  if (j.contains("burn_in")) cfg.burn_in = read_count(j, "burn_in", true);
  if (j.contains("thinning")) cfg.thinning = read_count(j, "thinning", false);
  if (j.contains("chains")) cfg.chains = read_count(j, "chains", false);
  if (j.contains("init")) {
    const auto& v = j["init"];
    if (!v.is_array() || v.empty()) throw ConfigError("\"init\" must be a nonempty number array");
    Vector init(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError("\"init\" must be a nonempty number array");
      init[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    cfg.init = init;
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("\"output_dir\" must be a string");
    cfg.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("model")) {
    if (!j["model"].is_object()) throw ConfigError("\"model\" must be an object");
    cfg.model = j["model"];
  }
  if (cfg.burn_in && *cfg.burn_in + 1 > cfg.steps) {
    throw ConfigError("\"burn_in\" must be smaller than \"steps\"");
  }
  return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["experiment"] = cfg.experiment;
  j["seed"] = cfg.seed;
  j["steps"] = cfg.steps;
  j["burn_in"] = cfg.burn_in.value_or(cfg.steps / 10);
  j["thinning"] = cfg.thinning;
  j["chains"] = cfg.chains;
  if (cfg.init) j["init"] = std::vector<double>(cfg.init->data(), cfg.init->data() + cfg.init->size());
  j["output_dir"] = cfg.output_dir;
  j["model"] = cfg.model;
  return j;
}

namespace {

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << contents;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json error_report(const std::exception& e) {
  nlohmann::json j;
  j["message"] = e.what();
  if (const auto* chain = dynamic_cast<const ChainError*>(&e)) {
    j["kind"] = "chain";
    j["step"] = chain->step();
    const Vector& y = chain->observation();
    j["y"] = std::vector<double>(y.data(), y.data() + y.size());
  } else if (const auto* sbc = dynamic_cast<const diag::SbcError*>(&e)) {
    j["kind"] = "sbc";
    j["repetition"] = sbc->repetition();
  } else if (dynamic_cast<const ext::ProtocolError*>(&e) != nullptr) {
    j["kind"] = "protocol";
  } else if (dynamic_cast<const NumericalError*>(&e) != nullptr) {
    j["kind"] = "numerical";
  } else {
    j["kind"] = "other";
  }
  return j;
}

}  // namespace

int run(const std::string& config_path, const RunOptions& options, std::ostream& err) {
  RunConfig cfg;
  nlohmann::json resolved_model;
  std::function<Artifacts()> job;
  try {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config file " + config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    // A manifest from an earlier run is accepted as its own config.
    if (j.is_object() && j.contains("tool") && j.contains("config")) j = j["config"];
    cfg = parse_run_config(j);
    if (options.output_dir) cfg.output_dir = *options.output_dir;
    if (options.seed_override) cfg.seed = *options.seed_override;
    if (cfg.output_dir.empty()) throw ConfigError("no output directory (config or --output)");
    const std::string config_dir = fs::absolute(config_path).parent_path().string();
    job = prepare_experiment(cfg, options.max_threads, config_dir, resolved_model);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }

  RunConfig resolved = cfg;
  resolved.model = resolved_model;
  nlohmann::json manifest;
  manifest["tool"] = "gibbs-diag";
  manifest["version"] = version();
  manifest["seed"] = cfg.seed;
  manifest["config"] = run_config_to_json(resolved);

  const fs::path out_dir(cfg.output_dir);
  try {
    fs::create_directories(out_dir);
  } catch (const std::exception& e) {
    err << "config error: cannot create output directory: " << e.what() << '\n';
    return kExitConfigError;
  }

  try {
    Artifacts artifacts = job();
    manifest["status"] = "ok";
    std::vector<std::string> names;
    for (const auto& [name, _] : artifacts) names.push_back(name);
    manifest["files"] = names;
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    for (const auto& [name, contents] : artifacts) write_file(out_dir / name, contents);
    return kExitOk;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    manifest["status"] = "failed";
    manifest["files"] = {"error.json"};
    try {
      write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
      write_file(out_dir / "error.json", error_report(e).dump(2) + "\n");
    } catch (const std::exception& io) {
      err << io.what() << '\n';
    }
    return kExitRunFailure;
  }
}

namespace {

void flatten(const nlohmann::json& j, const std::string& prefix,
             std::map<std::string, double>& out) {
  if (j.is_number()) {
    out[prefix] = j.get<double>();
  } else if (j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      flatten(value, prefix.empty() ? key : prefix + "." + key, out);
    }
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      flatten(j[i], prefix + "[" + std::to_string(i) + "]", out);
    }
  }
}

nlohmann::json load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

int compare(const std::string& report_a, const std::string& report_b, std::ostream& out,
            std::ostream& err) {
  nlohmann::json a;
  nlohmann::json b;
  try {
    a = load_report(report_a);
    b = load_report(report_b);
    if (!a.contains("experiment") || !b.contains("experiment")) {
      throw ConfigError("reports must carry an \"experiment\" field");
    }
    if (a["experiment"] != b["experiment"]) {
      throw ConfigError("experiment type mismatch: " + a["experiment"].dump() + " vs " +
                        b["experiment"].dump());
    }
  } catch (const std::exception& e) {
    err << "compare: " << e.what() << '\n';
    return kExitConfigError;
  }

  std::map<std::string, double> fa;
  std::map<std::string, double> fb;
  flatten(a, "", fa);
  flatten(b, "", fb);
  out << "experiment " << a["experiment"].get<std::string>() << '\n';
  out << std::left << std::setw(48) << "field" << std::right << std::setw(16) << "a"
      << std::setw(16) << "b" << std::setw(16) << "b - a" << '\n';
  out << std::setprecision(8);
  std::size_t differing = 0;
  for (const auto& [key, va] : fa) {
    const auto it = fb.find(key);
    if (it == fb.end()) {
      out << std::left << std::setw(48) << key << "  only in a\n";
      continue;
    }
    const double delta = it->second - va;
    if (delta != 0.0) ++differing;
    out << std::left << std::setw(48) << key << std::right << std::setw(16) << va << std::setw(16)
        << it->second << std::setw(16) << delta << '\n';
  }
  for (const auto& [key, _] : fb) {
    if (!fa.count(key)) out << std::left << std::setw(48) << key << "  only in b\n";
  }
  out << differing << " of " << fa.size() << " numeric fields differ\n";
  return kExitOk;
}

}  // namespace gibbsdiag::cli
