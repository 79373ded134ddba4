#include "aharness/skillbridge.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <set>
#include <thread>

namespace aharness {

std::string to_string(EnvelopeKind k) {
  switch (k) {
    case EnvelopeKind::hello: return "hello";
    case EnvelopeKind::capabilities: return "capabilities";
    case EnvelopeKind::invoke: return "invoke";
    case EnvelopeKind::result: return "result";
    case EnvelopeKind::error: return "error";
  }
  return "error";
}

EnvelopeKind envelope_kind_from_string(const std::string& text) {
  if (text == "hello") return EnvelopeKind::hello;
  if (text == "capabilities") return EnvelopeKind::capabilities;
  if (text == "invoke") return EnvelopeKind::invoke;
  if (text == "result") return EnvelopeKind::result;
  if (text == "error") return EnvelopeKind::error;
  throw ProtocolError("unknown envelope kind: " + text);
}

std::string encode_envelope(const Envelope& e) {
  json j = e.body.is_object() ? e.body : json::object();
  j["id"] = e.id;
  j["kind"] = to_string(e.kind);
  return dump_line(j) + "\n";
}

Envelope decode_envelope(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("malformed line: ") + ex.what());
  }
  if (!j.is_object()) throw ProtocolError("envelope is not an object");
  if (!j.contains("id") || !j.at("id").is_number_unsigned()) throw ProtocolError("envelope without a valid id");
  if (!j.contains("kind") || !j.at("kind").is_string()) throw ProtocolError("envelope without a kind");
  Envelope e;
  e.id = j.at("id").get<std::uint64_t>();
  e.kind = envelope_kind_from_string(j.at("kind").get<std::string>());
  j.erase("id");
  j.erase("kind");
  e.body = std::move(j);
  return e;
}

std::string encode_hello(std::uint64_t id) { return encode_envelope({id, EnvelopeKind::hello, json{{"protocol", kSkillProtocol}}}); }

std::string encode_capabilities(std::uint64_t id, const std::vector<Capability>& caps) {
  json skills = json::array();
  for (const Capability& c : caps) {
    json emits = json::array();
    for (EvidenceType t : c.emits) emits.push_back(to_string(t));
    skills.push_back(json{{"skill", c.skill.name()}, {"emits", std::move(emits)}, {"schema", c.schema}, {"cost_hint", c.cost_hint}});
  }
  return encode_envelope({id, EnvelopeKind::capabilities, json{{"protocol", kSkillProtocol}, {"skills", std::move(skills)}}});
}

std::vector<Capability> decode_capabilities(const Envelope& e) {
  if (e.kind != EnvelopeKind::capabilities) throw ProtocolError("expected capabilities, got " + to_string(e.kind));
  try {
    if (e.body.at("protocol").get<std::string>() != kSkillProtocol) {
      throw ProtocolError("protocol mismatch: " + e.body.at("protocol").get<std::string>());
    }
    std::vector<Capability> out;
    std::set<std::string> seen;
    for (const json& s : e.body.at("skills")) {
      Capability c;
      c.skill = SkillId(s.at("skill").get<std::string>());
      if (!seen.insert(c.skill.name()).second) throw ProtocolError("duplicate skill in capabilities: " + c.skill.name());
      for (const json& t : s.at("emits")) c.emits.push_back(evidence_type_from_string(t.get<std::string>()));
      c.schema = s.value("schema", std::string{"1"});
      c.cost_hint = s.value("cost_hint", 1.0);
      out.push_back(std::move(c));
    }
    return out;
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("malformed capabilities: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw ProtocolError(std::string("malformed capabilities: ") + ex.what());
  }
}

std::string encode_request(std::uint64_t id, const InvokeRequest& r) {
  json noise{{"seed", r.noise.seed},
             {"p_det", r.noise.p_det},
             {"p_seg", r.noise.p_seg},
             {"p_web", r.noise.p_web},
             {"p_dream", r.noise.p_dream},
             {"zoom_factor", r.noise.zoom_factor}};
  return encode_envelope({id, EnvelopeKind::invoke,
                          json{{"skill", r.action.skill.name()},
                               {"params", r.action.params},
                               {"scene", r.scene},
                               {"instruction", r.instruction},
                               {"step", r.step},
                               {"noise", std::move(noise)}}});
}

InvokeRequest decode_request(const Envelope& e) {
  if (e.kind != EnvelopeKind::invoke) throw ProtocolError("expected invoke, got " + to_string(e.kind));
  try {
    InvokeRequest r;
    r.action.skill = SkillId(e.body.at("skill").get<std::string>());
    r.action.params = e.body.at("params").get<SkillParams>();
    r.scene = e.body.at("scene").get<std::string>();
    r.instruction = e.body.at("instruction").get<std::string>();
    r.step = e.body.value("step", 1);
    if (e.body.contains("noise")) {
      const json& n = e.body.at("noise");
      r.noise.seed = n.value("seed", std::uint64_t{0});
      r.noise.p_det = n.value("p_det", r.noise.p_det);
      r.noise.p_seg = n.value("p_seg", r.noise.p_seg);
      r.noise.p_web = n.value("p_web", r.noise.p_web);
      r.noise.p_dream = n.value("p_dream", r.noise.p_dream);
      r.noise.zoom_factor = n.value("zoom_factor", r.noise.zoom_factor);
    }
    return r;
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("malformed invoke: ") + ex.what());
  }
}

std::string encode_result(std::uint64_t id, const SkillOutput& output) {
  json items = json::array();
  for (const OutputItem& item : output.items) items.push_back(item);
  return encode_envelope({id, EnvelopeKind::result, json{{"producer", output.producer.name()}, {"items", std::move(items)}}});
}

std::string encode_error(std::uint64_t id, const std::string& message) {
  return encode_envelope({id, EnvelopeKind::error, json{{"message", message}}});
}

namespace {

SkillOutput output_from(const Envelope& e) {
  try {
    SkillOutput out;
    out.producer = SkillId(e.body.at("producer").get<std::string>());
    for (const json& item : e.body.at("items")) out.items.push_back(item.get<OutputItem>());
    return out;
  } catch (const std::exception& ex) {
    throw ProtocolError(std::string("malformed result: ") + ex.what());
  }
}

}  // namespace

SkillOutput decode_response(std::string_view line, std::uint64_t expected_id) {
  const Envelope e = decode_envelope(line);
  if (e.id != expected_id) {
    throw ProtocolError("response id " + std::to_string(e.id) + " does not match request " + std::to_string(expected_id));
  }
  if (e.kind == EnvelopeKind::error) throw SkillFailure("remote skill error: " + e.body.value("message", std::string{}));
  if (e.kind != EnvelopeKind::result) throw ProtocolError("expected result, got " + to_string(e.kind));
  return output_from(e);
}

// ---------------------------------------------------------------------------

FdTransport::FdTransport(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {
  ::signal(SIGPIPE, SIG_IGN);
}

FdTransport::~FdTransport() { close_fds(); }

void FdTransport::close_fds() {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  read_fd_ = write_fd_ = -1;
}

void FdTransport::send_line(const std::string& line) {
  if (write_fd_ < 0) throw ConnectionLost("transport closed");
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(write_fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ConnectionLost(std::string("write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> FdTransport::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    if (read_fd_ < 0) throw ConnectionLost("transport closed");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    pollfd p{read_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(std::max<long long>(0, left.count())));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw ConnectionLost(std::string("poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) return std::nullopt;
    char chunk[4096];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ConnectionLost(std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) throw ConnectionLost("peer closed the connection");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

namespace {

class ChildTransport final : public FdTransport {
 public:
  ChildTransport(int read_fd, int write_fd, pid_t pid) : FdTransport(read_fd, write_fd), pid_(pid) {}
  ~ChildTransport() override {
    close_fds();  // end of input lets the child exit on its own
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }

 private:
  pid_t pid_;
};

}  // namespace

std::unique_ptr<Transport> spawn_stdio(const std::vector<std::string>& argv) {
  if (argv.empty()) throw std::invalid_argument("empty command");
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw std::runtime_error("pipe failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw std::runtime_error("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    std::vector<char*> args;
    for (const std::string& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
  return std::make_unique<ChildTransport>(from_child[0], to_child[1], pid);
}

std::unique_ptr<Transport> connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw ConnectionLost("cannot resolve " + host);
  }
  int fd = -1;
  for (addrinfo* a = res; a != nullptr; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ConnectionLost("cannot connect to " + host + ":" + service);
  const int dup = ::dup(fd);
  if (dup < 0) {
    ::close(fd);
    throw ConnectionLost("dup failed");
  }
  return std::make_unique<FdTransport>(fd, dup);
}

// ---------------------------------------------------------------------------

SkillConnection::SkillConnection(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {
  if (!transport_) throw std::invalid_argument("connection needs a transport");
}

bool SkillConnection::alive() const {
  const std::lock_guard lock(mutex_);
  return alive_;
}

bool SkillConnection::ready() const {
  const std::lock_guard lock(mutex_);
  return ready_;
}

std::uint64_t SkillConnection::last_id() const {
  const std::lock_guard lock(mutex_);
  return next_id_ - 1;
}

std::vector<std::string> SkillConnection::incidents() const {
  const std::lock_guard lock(mutex_);
  return incidents_;
}

void SkillConnection::note(std::string incident) { incidents_.push_back(std::move(incident)); }

// Reads until the answer to `id`; earlier ids are stale and dropped. A
// malformed line fails the wait; the next call resumes at the next newline.
std::optional<Envelope> SkillConnection::await(std::uint64_t id, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    std::optional<std::string> line;
    try {
      line = transport_->read_line(std::max(left, std::chrono::milliseconds(0)));
    } catch (const ConnectionLost& e) {
      alive_ = false;
      note(std::string("connection lost: ") + e.what());
      throw;
    }
    if (!line) return std::nullopt;
    Envelope e = decode_envelope(*line);
    if (e.id < id) continue;
    if (e.id > id) throw ProtocolError("unexpected response id " + std::to_string(e.id));
    return e;
  }
}

const std::vector<Capability>& SkillConnection::handshake(std::chrono::milliseconds timeout) {
  const std::lock_guard lock(mutex_);
  if (!alive_) throw ConnectionLost("connection is closed");
  const std::uint64_t id = next_id_++;
  try {
    transport_->send_line(encode_hello(id));
  } catch (const ConnectionLost& e) {
    alive_ = false;
    note(std::string("connection lost: ") + e.what());
    throw;
  }
  const auto e = await(id, timeout);
  if (!e) throw SkillFailure("handshake timed out");
  if (e->kind == EnvelopeKind::error) throw SkillFailure("handshake refused: " + e->body.value("message", std::string{}));
  caps_ = decode_capabilities(*e);
  ready_ = true;
  return caps_;
}

SkillOutput SkillConnection::invoke(const InvokeRequest& request, std::chrono::milliseconds timeout) {
  const std::lock_guard lock(mutex_);
  if (!alive_) throw ConnectionLost("connection is closed");
  if (!ready_) throw ProtocolError("invoke before handshake");
  const std::uint64_t id = next_id_++;
  try {
    transport_->send_line(encode_request(id, request));
  } catch (const ConnectionLost& e) {
    alive_ = false;
    note(std::string("connection lost: ") + e.what());
    throw;
  }
  std::optional<Envelope> e;
  try {
    e = await(id, timeout);
  } catch (const ProtocolError& err) {
    note(std::string("protocol error on request ") + std::to_string(id) + ": " + err.what());
    throw;
  }
  if (!e) {
    note("request " + std::to_string(id) + " timed out");
    throw SkillFailure("skill " + request.action.skill.name() + " timed out");
  }
  if (e->kind == EnvelopeKind::error) throw SkillFailure("remote skill error: " + e->body.value("message", std::string{}));
  if (e->kind != EnvelopeKind::result) throw ProtocolError("expected result, got " + to_string(e->kind));
  return output_from(*e);
}

std::vector<SkillId> register_external(Registry& registry, std::shared_ptr<SkillConnection> connection,
                                       std::chrono::milliseconds timeout) {
  if (!connection || !connection->ready()) throw std::invalid_argument("external skills need a completed handshake");
  std::vector<SkillId> added;
  for (const Capability& cap : connection->capabilities()) {
    if (registry.contains(cap.skill)) continue;
    SkillDescriptor d;
    d.id = cap.skill;
    d.emits = cap.emits;
    d.cost_hint = cap.cost_hint;
    d.origin = "external";
    d.invoker = [connection, timeout](const SkillRequest& r) {
      InvokeRequest req{r.action, r.scene->id, r.instruction, r.step, r.noise};
      return connection->invoke(req, timeout);
    };
    d.available = [connection] { return connection->alive(); };
    registry.register_skill(std::move(d));
    added.push_back(cap.skill);
  }
  return added;
}

Registry bridged_registry(std::shared_ptr<SkillConnection> connection, std::chrono::milliseconds timeout) {
  Registry remote;
  register_external(remote, connection, timeout);
  const Registry local = simulated_registry();
  Registry out;
  for (const SkillId& id : local.skills()) {
    out.register_skill(remote.contains(id) ? remote.descriptor(id) : local.descriptor(id));
  }
  for (const SkillId& id : remote.skills()) {
    if (!out.contains(id)) out.register_skill(remote.descriptor(id));
  }
  return out;
}

}  // namespace aharness
