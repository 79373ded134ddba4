#include <doctest.h>

#include <csignal>
#include <filesystem>
#include <sys/wait.h>
#include <unistd.h>

#include "aharness/runtime.hpp"
#include "aharness/scenario.hpp"
#include "aharness/skillbridge.hpp"
#include "support.hpp"

using namespace aharness;
using namespace aharness::testing;
namespace fs = std::filesystem;

namespace {

constexpr std::chrono::milliseconds kWait{5000};

const fs::path& scene_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("aharness-unit-bridge-" + std::to_string(::getpid()));
    fs::remove_all(d);
    save_benchmark(build_benchmark({3, 3, 3, 12}), d);
    return d;
  }();
  return dir;
}

std::vector<std::string> server_argv(std::vector<std::string> extra = {}) {
  std::vector<std::string> argv{AHARNESS_SERVER_BIN, "--scenes", scene_dir().string()};
  argv.insert(argv.end(), extra.begin(), extra.end());
  return argv;
}

std::shared_ptr<SkillConnection> stdio_connection(std::vector<std::string> extra = {}) {
  auto c = std::make_shared<SkillConnection>(spawn_stdio(server_argv(std::move(extra))));
  c->handshake(kWait);
  return c;
}

InvokeRequest detect_request(const Scene& scene) {
  InvokeRequest r;
  r.action = action_for(skill_ids::detect, Box::full(scene.grid));
  r.action.params.query = scene.instruction;
  r.scene = scene.id;
  r.instruction = scene.instruction;
  r.noise.seed = 3;
  return r;
}

// TCP server child; killed on destruction.
struct TcpServer {
  pid_t pid = -1;
  int port = -1;

  TcpServer() {
    int err[2];
    REQUIRE(::pipe(err) == 0);
    pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      ::dup2(err[1], 2);
      ::close(err[0]);
      ::close(err[1]);
      const std::string dir = scene_dir().string();
      ::execl(AHARNESS_SERVER_BIN, AHARNESS_SERVER_BIN, "--scenes", dir.c_str(), "--tcp", "0", static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(err[1]);
    std::string text;
    char c;
    while (text.find('\n') == std::string::npos && ::read(err[0], &c, 1) == 1) text.push_back(c);
    ::close(err[0]);
    const std::string prefix = "listening on ";
    REQUIRE(text.rfind(prefix, 0) == 0);
    port = std::stoi(text.substr(prefix.size()));
  }
  ~TcpServer() {
    ::kill(pid, SIGTERM);
    ::waitpid(pid, nullptr, 0);
  }
};

}  // namespace

TEST_SUITE("bridge_process") {
  TEST_CASE("stdio handshake advertises the suite") {
    const auto c = stdio_connection();
    REQUIRE(c->capabilities().size() == 5);
    CHECK(c->capabilities()[0].skill == skill_ids::detect);
    CHECK(c->capabilities()[4].skill == skill_ids::dreamer);
  }

  TEST_CASE("bridged episodes match in-process episodes") {
    const Benchmark bench = load_benchmark(scene_dir());
    const auto c = stdio_connection();
    const Registry bridged = bridged_registry(c, kWait);
    const Registry local = simulated_registry();
    RunConfig cfg;
    cfg.validate();
    for (const Scene& scene : bench.eval) {
      const EpisodeResult a = run_episode(scene, scene.instruction, {&local}, cfg, 5);
      const EpisodeResult b = run_episode(scene, scene.instruction, {&bridged}, cfg, 5);
      CHECK(a.trace.evidence == b.trace.evidence);
      CHECK(a.fusion.mask == b.fusion.mask);
    }
    CHECK(c->incidents().empty());
  }

  TEST_CASE("tcp transport") {
    const Benchmark bench = load_benchmark(scene_dir());
    TcpServer server;
    auto c = std::make_shared<SkillConnection>(connect_tcp("127.0.0.1", server.port));
    CHECK(c->handshake(kWait).size() == 5);
    const Scene& scene = bench.eval.front();
    SkillRequest local_req;
    local_req.scene = &scene;
    local_req.instruction = scene.instruction;
    local_req.action = detect_request(scene).action;
    local_req.noise.seed = 3;
    local_req.noise.difficulty = scene.difficulty;
    CHECK(c->invoke(detect_request(scene), kWait) == simulated_registry().invoke(local_req));
  }

  TEST_CASE("timeouts fail one call and later calls resync") {
    const Benchmark bench = load_benchmark(scene_dir());
    const auto c = stdio_connection({"--delay-ms", "150"});
    const InvokeRequest r = detect_request(bench.eval.front());
    CHECK_THROWS_AS(c->invoke(r, std::chrono::milliseconds(0)), SkillFailure);
    const SkillOutput out = c->invoke(r, kWait);
    CHECK(out.producer == skill_ids::detect);
    CHECK(c->alive());
  }

  TEST_CASE("garbled answers fail one call only") {
    const Benchmark bench = load_benchmark(scene_dir());
    // Answer 1 is the handshake; every second answer after it is truncated.
    const auto c = stdio_connection({"--garble-every", "2"});
    const InvokeRequest r = detect_request(bench.eval.front());
    CHECK_THROWS_AS(c->invoke(r, kWait), ProtocolError);
    CHECK(c->invoke(r, kWait).producer == skill_ids::detect);
    CHECK_THROWS_AS(c->invoke(r, kWait), ProtocolError);
    CHECK(c->invoke(r, kWait).producer == skill_ids::detect);
    CHECK(c->last_id() == 5);
    CHECK(c->alive());
  }

  TEST_CASE("a server exit withdraws its skills") {
    const Benchmark bench = load_benchmark(scene_dir());
    // The shell forwards two lines (hello and one invoke), then the server sees end of input.
    std::string cmd = "{ read a; echo \"$a\"; read b; echo \"$b\"; } | '" + std::string(AHARNESS_SERVER_BIN) + "' --scenes '" + scene_dir().string() + "'";
    auto c = std::make_shared<SkillConnection>(spawn_stdio({"/bin/sh", "-c", cmd}));
    c->handshake(kWait);
    Registry reg = bridged_registry(c, kWait);
    const Scene& scene = bench.eval.front();
    CHECK(c->invoke(detect_request(scene), kWait).producer == skill_ids::detect);
    CHECK_THROWS_AS(c->invoke(detect_request(scene), kWait), ConnectionLost);
    CHECK_FALSE(c->alive());
    CHECK(reg.skills().empty());
    RunConfig cfg;
    cfg.validate();
    const EpisodeResult r = run_episode(scene, scene.instruction, {&reg}, cfg, 1);
    CHECK(r.trace.steps.size() <= 3);
    for (const StepRecord& s : r.trace.steps) CHECK_FALSE(s.failure.empty());
  }

  TEST_CASE("an extra remote skill widens the feasible set") {
    const auto c = stdio_connection({"--skills", "detect,segment,zoom,web_search,dreamer,detect_ext=detect"});
    const Registry reg = bridged_registry(c, kWait);
    CHECK(reg.skills().size() == 6);
    CHECK(reg.index_of(SkillId("detect_ext")) == 6);
    RouterState s;
    s.remaining_budget = 3.0;
    s.frame = Grid::make(kSceneWidth, kSceneHeight);
    s.query = "mug";
    CHECK(feasible_actions(s, reg, std::nullopt, RouterConfig{}).size() == 6);

    const Benchmark bench = load_benchmark(scene_dir());
    InvokeRequest r = detect_request(bench.eval.front());
    r.action.skill = SkillId("detect_ext");
    const SkillOutput out = c->invoke(r, kWait);
    CHECK(out.producer == SkillId("detect_ext"));
    CHECK_FALSE(out.items.empty());
  }

  TEST_CASE("unknown skills and scenes are reported as errors") {
    const auto c = stdio_connection({"--skills", "detect"});
    CHECK(c->capabilities().size() == 1);
    const Benchmark bench = load_benchmark(scene_dir());
    InvokeRequest r = detect_request(bench.eval.front());
    r.action.skill = skill_ids::segment;
    CHECK_THROWS_AS(c->invoke(r, kWait), SkillFailure);
    r = detect_request(bench.eval.front());
    r.scene = "no-such-scene";
    CHECK_THROWS_AS(c->invoke(r, kWait), SkillFailure);
    CHECK(c->alive());
  }
}
