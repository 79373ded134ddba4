// Reference skill server: serves the simulated suite over the line protocol
// on stdin/stdout or a TCP port.

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include "aharness/scene.hpp"
#include "aharness/skillbridge.hpp"
#include "aharness/skills.hpp"

namespace fs = std::filesystem;
using namespace aharness;

namespace {

struct ServerOptions {
  fs::path scenes;
  std::vector<std::string> skills{"detect", "segment", "zoom", "web_search", "dreamer"};
  int delay_ms = 0;
  int garble_every = 0;
};

class Server {
 public:
  explicit Server(ServerOptions opt) : opt_(std::move(opt)) {
    // "name" serves a simulated skill; "alias=name" serves it under another id.
    for (const std::string& s : opt_.skills) {
      const auto eq = s.find('=');
      const std::string name = eq == std::string::npos ? s : s.substr(0, eq);
      const std::string base = eq == std::string::npos ? s : s.substr(eq + 1);
      if (!suite_.contains(SkillId(base))) throw std::invalid_argument("unknown skill: " + base);
      if (!served_.emplace(name, base).second) throw std::invalid_argument("skill listed twice: " + name);
      order_.push_back(name);
    }
  }

  /// Answer to one request line; empty when nothing should be sent.
  std::string handle(const std::string& line) {
    ++answered_;
    std::string reply = answer(line);
    if (opt_.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(opt_.delay_ms));
    if (opt_.garble_every > 0 && answered_ % opt_.garble_every == 0 && reply.size() > 8) {
      reply = reply.substr(0, reply.size() / 2) + "\n";
    }
    return reply;
  }

  void reset() { greeted_ = false; }

 private:
  std::string answer(const std::string& line) {
    Envelope e;
    try {
      e = decode_envelope(line);
    } catch (const ProtocolError& err) {
      return encode_error(salvage_id(line), err.what());
    }
    if (e.kind == EnvelopeKind::hello) {
      if (e.body.value("protocol", std::string{}) != kSkillProtocol) return encode_error(e.id, "unsupported protocol");
      greeted_ = true;
      std::vector<Capability> caps;
      for (const std::string& name : order_) {
        const SkillDescriptor& d = suite_.descriptor(SkillId(served_.at(name)));
        caps.push_back({SkillId(name), d.emits, "1", d.cost_hint});
      }
      return encode_capabilities(e.id, caps);
    }
    if (!greeted_) return encode_error(e.id, "invoke before hello");
    if (e.kind != EnvelopeKind::invoke) return encode_error(e.id, "unexpected " + to_string(e.kind));
    try {
      InvokeRequest req = decode_request(e);
      const auto served = served_.find(req.action.skill.name());
      if (served == served_.end()) return encode_error(e.id, "unsupported skill: " + req.action.skill.name());
      req.action.skill = SkillId(served->second);
      const Scene* scene = find_scene(req.scene);
      if (scene == nullptr) return encode_error(e.id, "unknown scene: " + req.scene);
      NoiseModel noise = req.noise;
      noise.difficulty = scene->difficulty;
      SkillOutput out = suite_.invoke({scene, req.instruction, req.action, req.step, noise});
      out.producer = SkillId(served->first);
      return encode_result(e.id, out);
    } catch (const std::exception& err) {
      return encode_error(e.id, err.what());
    }
  }

  static std::uint64_t salvage_id(const std::string& line) {
    const auto pos = line.find("\"id\":");
    if (pos == std::string::npos) return 0;
    try {
      return std::stoull(line.substr(pos + 5));
    } catch (const std::exception&) {
      return 0;
    }
  }

  const Scene* find_scene(const std::string& id) {
    if (id.empty() || id.find('/') != std::string::npos) return nullptr;
    if (const auto it = scenes_.find(id); it != scenes_.end()) return &it->second;
    for (const fs::path& dir : {opt_.scenes, opt_.scenes / "eval", opt_.scenes / "library"}) {
      const fs::path file = dir / (id + ".json");
      if (fs::exists(file)) return &scenes_.emplace(id, load_scene(file)).first->second;
    }
    return nullptr;
  }

  ServerOptions opt_;
  std::map<std::string, std::string> served_;
  std::vector<std::string> order_;
  Registry suite_ = simulated_registry();
  std::map<std::string, Scene> scenes_;
  bool greeted_ = false;
  long answered_ = 0;
};

void serve_stream(Server& server, std::istream& in, const std::function<void(const std::string&)>& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::string reply = server.handle(line);
    if (!reply.empty()) out(reply);
  }
}

int serve_tcp(Server& server, int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) {
    std::perror("socket");
    return 1;
  }
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 4) != 0) {
    std::perror("bind");
    return 1;
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  std::cerr << "listening on " << ntohs(addr.sin_port) << std::endl;
  while (true) {
    const int conn = ::accept(fd, nullptr, nullptr);
    if (conn < 0) continue;
    server.reset();
    std::string buffer;
    char chunk[4096];
    while (true) {
      const ssize_t n = ::read(conn, chunk, sizeof chunk);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n')) {
        const std::string line = buffer.substr(0, nl);
        buffer.erase(0, nl + 1);
        if (line.empty()) continue;
        const std::string reply = server.handle(line);
        std::size_t done = 0;
        while (done < reply.size()) {
          const ssize_t w = ::send(conn, reply.data() + done, reply.size() - done, MSG_NOSIGNAL);
          if (w <= 0) break;
          done += static_cast<std::size_t>(w);
        }
      }
    }
    ::close(conn);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skill server for the aharness-skill/1 protocol"};
  ServerOptions opt;
  int port = -1;
  app.add_option("--scenes", opt.scenes, "Scene directory (searched with eval/ and library/ subdirectories)")->required();
  app.add_option("--skills", opt.skills, "Skills to advertise; alias=skill serves a simulated skill under another id")->delimiter(',');
  app.add_option("--tcp", port, "Serve on this loopback port instead of stdin/stdout (0 picks one)");
  app.add_option("--delay-ms", opt.delay_ms, "Sleep before every answer");
  app.add_option("--garble-every", opt.garble_every, "Truncate every n-th answer");
  CLI11_PARSE(app, argc, argv);

  try {
    Server server(opt);
    if (port >= 0) return serve_tcp(server, port);
    serve_stream(server, std::cin, [](const std::string& reply) {
      std::cout << reply;
      std::cout.flush();
    });
  } catch (const std::exception& e) {
    std::cerr << "skill server: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
