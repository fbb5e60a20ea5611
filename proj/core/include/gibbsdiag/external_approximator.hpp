#pragma once

#include "gibbsdiag/core_engine.hpp"
#include "gibbsdiag/types.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

namespace gibbsdiag::ext {

/// Handshake mismatch, malformed or unexpected reply, timeout, dead backend.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

struct ExternalOptions {
  std::chrono::milliseconds timeout{60'000};  // per reply
  int protocol_version = 1;
};

/// A backend subprocess speaking line-delimited JSON on stdin/stdout:
///
///   -> {"type":"hello","version":1,"latent_dim":d,"obs_dim":m}
///   <- {"type":"ready","version":1}
///   -> {"type":"approximate","y":[...],"seed":u64}
///   <- {"type":"theta","value":[...]}
///   -> {"type":"bye"}
///
/// The command runs under /bin/sh -c. Its stderr is inherited. One instance
/// serves one chain; it is not safe to share across threads.
class ExternalApproximator {
 public:
  /// Launches the backend and completes the handshake.
  ExternalApproximator(const std::string& command, std::size_t latent_dim,
                       std::size_t observation_dim, const ExternalOptions& options = {});
  ~ExternalApproximator();

  ExternalApproximator(const ExternalApproximator&) = delete;
  ExternalApproximator& operator=(const ExternalApproximator&) = delete;

  /// One theta draw from the backend's q(.|y).
  Vector approximate(const Vector& y, std::uint64_t seed);

  int pid() const noexcept;

 private:
  struct Process;
  std::unique_ptr<Process> process_;
  std::size_t latent_dim_;
  std::size_t observation_dim_;
  ExternalOptions options_;
};

/// Approximator half of a ConditionalPair backed by its own subprocess. The
/// request seed for each draw comes from the chain's Rng.
ConditionalPair external_approximator(const std::string& command, std::size_t latent_dim,
                                      std::size_t observation_dim,
                                      const ExternalOptions& options = {});

/// Likelihood and prior from `model`, approximation from `approximator`.
ConditionalPair combine(const ConditionalPair& model, const ConditionalPair& approximator);

}  // namespace gibbsdiag::ext
