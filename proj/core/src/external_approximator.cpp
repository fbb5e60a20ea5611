#include "gibbsdiag/external_approximator.hpp"

#include "json.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>

namespace gibbsdiag::ext {

struct ExternalApproximator::Process {
  pid_t pid = -1;
  int to_child = -1;
  int from_child = -1;
  std::string buffer;

  ~Process() {
    if (to_child >= 0) ::close(to_child);
    if (from_child >= 0) ::close(from_child);
    if (pid > 0) {
      // Give the backend a moment to exit after "bye", then make sure.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid, nullptr, WNOHANG) == pid) return;
        ::usleep(2000);
      }
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
    }
  }

  void write_line(const std::string& line) {
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(to_child, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("backend stdin closed: ") + std::strerror(errno));
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      const auto newline = buffer.find('\n');
      if (newline != std::string::npos) {
        std::string line = buffer.substr(0, newline);
        buffer.erase(0, newline + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        throw ProtocolError("backend timed out after " + std::to_string(timeout.count()) + " ms");
      }
      pollfd fd{from_child, POLLIN, 0};
      const int ready = ::poll(&fd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(from_child, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw ProtocolError("backend closed its stdout (process exited?)");
      buffer.append(chunk, static_cast<std::size_t>(n));
    }
  }
};

namespace {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

nlohmann::json parse_reply(const std::string& line, const char* expected_type) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("malformed reply: " + line.substr(0, 200));
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ProtocolError("reply without a type: " + line.substr(0, 200));
  }
  if (j["type"] != expected_type) {
    throw ProtocolError("expected a \"" + std::string(expected_type) + "\" reply, got \"" +
                        j["type"].get<std::string>() + "\"");
  }
  return j;
}

}  // namespace

ExternalApproximator::ExternalApproximator(const std::string& command, std::size_t latent_dim,
                                           std::size_t observation_dim,
                                           const ExternalOptions& options)
    : process_(std::make_unique<Process>()),
      latent_dim_(latent_dim),
      observation_dim_(observation_dim),
      options_(options) {
  if (latent_dim == 0 || observation_dim == 0) {
    throw InvalidArgument("external approximator dimensions must be positive");
  }
  ignore_sigpipe();

  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw Error("pipe failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw Error("fork failed");
  }
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::signal(SIGPIPE, SIG_DFL);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  process_->pid = pid;
  process_->to_child = in_pipe[1];
  process_->from_child = out_pipe[0];

  nlohmann::json hello = {{"type", "hello"},
                          {"version", options_.protocol_version},
                          {"latent_dim", latent_dim},
                          {"obs_dim", observation_dim}};
  process_->write_line(hello.dump());
  const auto reply = parse_reply(process_->read_line(options_.timeout), "ready");
  if (!reply.contains("version") || !reply["version"].is_number_integer() ||
      reply["version"].get<int>() != options_.protocol_version) {
    throw ProtocolError("handshake mismatch: backend speaks version " +
                        (reply.contains("version") ? reply["version"].dump() : "?") +
                        ", expected " + std::to_string(options_.protocol_version));
  }
}

ExternalApproximator::~ExternalApproximator() {
  if (process_ && process_->to_child >= 0) {
    try {
      process_->write_line(R"({"type":"bye"})");
    } catch (const ProtocolError&) {
      // backend already gone
    }
  }
}

int ExternalApproximator::pid() const noexcept { return process_->pid; }

Vector ExternalApproximator::approximate(const Vector& y, std::uint64_t seed) {
  if (static_cast<std::size_t>(y.size()) != observation_dim_) {
    throw InvalidArgument("external approximator: observation has wrong dimension");
  }
  nlohmann::json request = {{"type", "approximate"},
                            {"y", std::vector<double>(y.data(), y.data() + y.size())},
                            {"seed", seed}};
  process_->write_line(request.dump());
  const auto reply = parse_reply(process_->read_line(options_.timeout), "theta");
  if (!reply.contains("value") || !reply["value"].is_array()) {
    throw ProtocolError("theta reply without a value array");
  }
  const auto& value = reply["value"];
  if (value.size() != latent_dim_) {
    throw ProtocolError("theta reply has " + std::to_string(value.size()) + " entries, expected " +
                        std::to_string(latent_dim_));
  }
  Vector theta(static_cast<Eigen::Index>(latent_dim_));
  for (std::size_t i = 0; i < latent_dim_; ++i) {
    if (!value[i].is_number()) throw ProtocolError("theta reply holds a non-number");
    theta[static_cast<Eigen::Index>(i)] = value[i].get<double>();
  }
  if (!theta.allFinite()) throw ProtocolError("theta reply is not finite");
  return theta;
}

ConditionalPair external_approximator(const std::string& command, std::size_t latent_dim,
                                      std::size_t observation_dim,
                                      const ExternalOptions& options) {
  auto backend =
      std::make_shared<ExternalApproximator>(command, latent_dim, observation_dim, options);
  ConditionalPair pair;
  pair.latent_dim = latent_dim;
  pair.observation_dim = observation_dim;
  pair.fit_approximation = [backend](const Vector& y) -> ThetaSampler {
    return [backend, y](Rng& rng) { return backend->approximate(y, rng.next_u64()); };
  };
  return pair;
}

ConditionalPair combine(const ConditionalPair& model, const ConditionalPair& approximator) {
  if (model.latent_dim != approximator.latent_dim ||
      model.observation_dim != approximator.observation_dim) {
    throw InvalidArgument("combine: model and approximator dimensions differ");
  }
  ConditionalPair pair = model;
  pair.fit_approximation = approximator.fit_approximation;
  return pair;
}

}  // namespace gibbsdiag::ext
