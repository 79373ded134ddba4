#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aharness/action.hpp"
#include "aharness/skills.hpp"

namespace aharness {

inline constexpr const char* kSkillProtocol = "aharness-skill/1";

enum class EnvelopeKind { hello, capabilities, invoke, result, error };
std::string to_string(EnvelopeKind k);
EnvelopeKind envelope_kind_from_string(const std::string& text);

/// Malformed or out-of-order line. Fails the current call only.
class ProtocolError : public SkillFailure {
 public:
  using SkillFailure::SkillFailure;
};

/// The peer went away; the connection is unusable afterwards.
class ConnectionLost : public SkillFailure {
 public:
  using SkillFailure::SkillFailure;
};

/// One line on the wire: {"id": n, "kind": k, ...body fields}. The body's
/// fields sit beside id and kind.
struct Envelope {
  std::uint64_t id = 0;
  EnvelopeKind kind = EnvelopeKind::hello;
  json body = json::object();
};

/// Newline-terminated compact JSON.
std::string encode_envelope(const Envelope& e);
/// Throws ProtocolError.
Envelope decode_envelope(std::string_view line);

struct Capability {
  SkillId skill;
  std::vector<EvidenceType> emits;
  std::string schema = "1";
  double cost_hint = 1.0;

  friend bool operator==(const Capability&, const Capability&) = default;
};

std::string encode_hello(std::uint64_t id);
std::string encode_capabilities(std::uint64_t id, const std::vector<Capability>& caps);
/// Throws ProtocolError on duplicate skill ids or a protocol mismatch.
std::vector<Capability> decode_capabilities(const Envelope& e);

struct InvokeRequest {
  SkillAction action;
  /// Scene identifier the server resolves against its scene directory.
  std::string scene;
  std::string instruction;
  int step = 1;
  /// Stream seed and reliabilities; difficulty comes from the scene file.
  NoiseModel noise;

  friend bool operator==(const InvokeRequest& a, const InvokeRequest& b) {
    return a.action == b.action && a.scene == b.scene && a.instruction == b.instruction && a.step == b.step &&
           a.noise.seed == b.noise.seed && a.noise.p_det == b.noise.p_det && a.noise.p_seg == b.noise.p_seg &&
           a.noise.p_web == b.noise.p_web && a.noise.p_dream == b.noise.p_dream &&
           a.noise.zoom_factor == b.noise.zoom_factor;
  }
};

std::string encode_request(std::uint64_t id, const InvokeRequest& request);
InvokeRequest decode_request(const Envelope& e);

std::string encode_result(std::uint64_t id, const SkillOutput& output);
std::string encode_error(std::uint64_t id, const std::string& message);

/// Result → SkillOutput; error envelope → SkillFailure; anything else, or an
/// id other than `expected_id`, → ProtocolError.
SkillOutput decode_response(std::string_view line, std::uint64_t expected_id);

/// Line-framed byte channel.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send_line(const std::string& line) = 0;
  /// Next complete line without its newline; nullopt on timeout. Throws
  /// ConnectionLost at end of stream.
  virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
};

/// Transport over a pair of file descriptors (owned).
class FdTransport : public Transport {
 public:
  FdTransport(int read_fd, int write_fd);
  ~FdTransport() override;
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  void send_line(const std::string& line) override;
  std::optional<std::string> read_line(std::chrono::milliseconds timeout) override;

 protected:
  void close_fds();

 private:
  int read_fd_;
  int write_fd_;
  std::string buffer_;
};

/// Child process speaking the protocol on its standard streams.
std::unique_ptr<Transport> spawn_stdio(const std::vector<std::string>& argv);
std::unique_ptr<Transport> connect_tcp(const std::string& host, int port);

class SkillConnection {
 public:
  explicit SkillConnection(std::unique_ptr<Transport> transport);

  /// hello → capabilities.
  const std::vector<Capability>& handshake(std::chrono::milliseconds timeout);
  /// One request, one answer. Stale answers to earlier timed-out requests
  /// are skipped. Throws SkillFailure (timeout, error envelope, protocol
  /// error) or ConnectionLost.
  SkillOutput invoke(const InvokeRequest& request, std::chrono::milliseconds timeout);

  [[nodiscard]] bool alive() const;
  [[nodiscard]] bool ready() const;
  [[nodiscard]] std::uint64_t last_id() const;
  [[nodiscard]] const std::vector<Capability>& capabilities() const { return caps_; }
  [[nodiscard]] std::vector<std::string> incidents() const;

 private:
  std::optional<Envelope> await(std::uint64_t id, std::chrono::milliseconds timeout);
  void note(std::string incident);

  std::unique_ptr<Transport> transport_;
  mutable std::mutex mutex_;
  std::uint64_t next_id_ = 1;
  bool alive_ = true;
  bool ready_ = false;
  std::vector<Capability> caps_;
  std::vector<std::string> incidents_;
};

/// Registers every advertised skill whose id is not yet taken. Invocations
/// go over `connection`; after a connection loss the skills are withdrawn
/// from the registry.
std::vector<SkillId> register_external(Registry& registry, std::shared_ptr<SkillConnection> connection,
                                       std::chrono::milliseconds timeout);

/// Simulated suite in its usual order with every skill the connection
/// advertises served remotely instead; extra remote skills come last.
Registry bridged_registry(std::shared_ptr<SkillConnection> connection, std::chrono::milliseconds timeout);

}  // namespace aharness
