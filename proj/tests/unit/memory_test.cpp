#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "aharness/memory.hpp"
#include "aharness/scenario.hpp"
#include "support.hpp"

using namespace aharness;
using namespace aharness::testing;

namespace {

double norm(const Embedding& e) {
  double s = 0.0;
  for (double v : e) s += v * v;
  return std::sqrt(s);
}

Embedding axis(std::size_t dim, std::size_t i) {
  Embedding e(dim, 0.0);
  e[i] = 1.0;
  return e;
}

MemoryEntry entry_with(Embedding e, double score, const std::string& source) {
  MemoryEntry m;
  m.embedding = std::move(e);
  m.outcome_score = score;
  m.source = source;
  m.summary.frame = Grid::make(160, 120);
  return m;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("aharness-unit-" + name);
}

}  // namespace

TEST_SUITE("memory") {
  TEST_CASE("embedding contract") {
    const HashingEmbedder emb;
    const std::vector<std::string> desc{"category:mug", "part:handle", "shape:ellipse"};
    const Embedding a = emb.embed(desc, "Grasp the mug by its handle");
    CHECK(a == emb.embed(desc, "Grasp the mug by its handle"));
    CHECK(a.size() == emb.dimension());
    CHECK(std::abs(norm(a) - 1.0) < 1e-9);
    CHECK(cosine(a, a) == doctest::Approx(1.0));
    const Embedding empty = emb.embed({}, "");
    CHECK(std::abs(norm(empty) - 1.0) < 1e-9);
    CHECK(HashingEmbedder::is_uninformative(empty));
    CHECK(cosine(a, emb.embed(desc, "grasp THE mug, by its handle")) == doctest::Approx(1.0));
  }

  TEST_CASE("retrieval ranking") {
    const std::size_t dim = 8;
    {
      MemoryBank bank(Tier::tt, 10);
      bank.insert(entry_with(axis(dim, 0), 0.5, "only"));
      const auto r = retrieve({&bank}, axis(dim, 3), 1);
      REQUIRE(r.size() == 1);
      CHECK(r[0].source == "only");
    }
    {
      MemoryBank bank(Tier::tt, 10);
      bank.insert(entry_with(axis(dim, 0), 0.5, "A"));
      bank.insert(entry_with(axis(dim, 1), 0.5, "B"));
      const auto r = retrieve({&bank}, axis(dim, 1), 1);
      REQUIRE(r.size() == 1);
      CHECK(r[0].source == "B");
      CHECK(r[0].similarity == doctest::Approx(1.0));
    }
    {
      // Query along axis 0; entries at cosine 0.9, 0.9, 0.5, 0.2, 0.1.
      const auto at = [&](double c) {
        Embedding e(dim, 0.0);
        e[0] = c;
        e[1] = std::sqrt(1.0 - c * c);
        return e;
      };
      MemoryBank bank(Tier::tt, 10);
      bank.insert(entry_with(at(0.9), 0.8, "low-score"));
      bank.insert(entry_with(at(0.9), 0.95, "high-score"));
      bank.insert(entry_with(at(0.5), 1.0, "c"));
      bank.insert(entry_with(at(0.2), 1.0, "d"));
      bank.insert(entry_with(at(0.1), 1.0, "e"));
      const auto r = retrieve({&bank}, axis(dim, 0), 2);
      REQUIRE(r.size() == 2);
      CHECK(r[0].source == "high-score");
      CHECK(r[1].source == "low-score");
    }
    {
      MemoryBank bank(Tier::tt, 10);
      bank.insert(entry_with(axis(dim, 0), 0.7, "older"));
      bank.insert(entry_with(axis(dim, 0), 0.7, "newer"));
      CHECK(retrieve({&bank}, axis(dim, 0), 1)[0].source == "newer");
    }
    MemoryBank empty(Tier::cs, 10);
    CHECK(retrieve({&empty}, axis(dim, 0), 2).empty());
    CHECK_THROWS(retrieve({&empty}, axis(dim, 0), 0));
  }

  TEST_CASE("ranking ignores a uniform similarity scale") {
    std::mt19937 gen(3);
    std::normal_distribution<double> n;
    const HashingEmbedder emb;
    MemoryBank bank(Tier::tt, 50);
    for (int i = 0; i < 30; ++i) {
      Embedding e(16);
      for (double& v : e) v = n(gen);
      bank.insert(entry_with(e, 0.5, std::to_string(i)));
    }
    Embedding q(16);
    for (double& v : q) v = n(gen);
    Embedding q2 = q;
    for (double& v : q2) v *= 7.5;
    const auto a = retrieve({&bank}, q, 5);
    const auto b = retrieve({&bank}, q2, 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a[i].source == b[i].source);
  }

  TEST_CASE("write-back gate") {
    MemoryBank tt(Tier::tt, 80);
    write_back(tt, entry_with(axis(4, 0), 1.0, "x"), false);
    CHECK(tt.size() == 0);
    write_back(tt, entry_with(axis(4, 0), 1.0, "x"), true);
    CHECK(tt.size() == 1);
    for (int i = 0; i < 79; ++i) write_back(tt, entry_with(axis(4, 1), 1.0, std::to_string(i)), true);
    CHECK(tt.size() == 80);
    CHECK(tt.capsules().empty());
    write_back(tt, entry_with(axis(4, 2), 1.0, "new"), true);
    CHECK(tt.size() == 80);
    CHECK(tt.capsules().size() == 1);
    CHECK(tt.entries().front().source == "0");
    CHECK(tt.capsules().front().embedding == axis(4, 0));
  }

  TEST_CASE("metabolism") {
    MemoryBank bank(Tier::tt, 2);
    for (int i = 1; i <= 3; ++i) bank.insert(entry_with(axis(4, static_cast<std::size_t>(i)), 1.0, std::to_string(i)));
    REQUIRE(bank.size() == 2);
    CHECK(bank.entries()[0].source == "2");
    CHECK(bank.entries()[1].source == "3");
    REQUIRE(bank.capsules().size() == 1);
    CHECK(bank.capsules()[0].embedding == axis(4, 1));

    for (int i = 4; i <= 9; ++i) bank.insert(entry_with(axis(4, static_cast<std::size_t>(i % 4)), 1.0, std::to_string(i)));
    CHECK(bank.size() == 2);
    CHECK(bank.capsules().size() == 2);
    int merged = 0;
    for (const auto& c : bank.capsules()) merged += c.merge_count;
    CHECK(merged == 7);
  }

  TEST_CASE("capsule merge unions parameter ranges") {
    ExperienceCapsule a;
    a.embedding = axis(4, 0);
    a.param_ranges["zoom"]["scale"] = {1, 2};
    ExperienceCapsule b;
    b.embedding = axis(4, 0);
    b.param_ranges["zoom"]["scale"] = {2, 4};
    merge_capsule(a, b);
    CHECK(a.param_ranges["zoom"]["scale"] == ParamRange{1, 4});
    CHECK(a.merge_count == 2);
  }

  TEST_CASE("capacity holds through 500 accepted episodes") {
    MemoryBank tt(Tier::tt, 80);
    std::mt19937 gen(1);
    std::normal_distribution<double> n;
    for (int i = 0; i < 500; ++i) {
      Embedding e(12);
      for (double& v : e) v = n(gen);
      const double s = norm(e);
      for (double& v : e) v /= s;
      write_back(tt, entry_with(e, 1.0, std::to_string(i)), true);
      CHECK(tt.size() <= 80);
      CHECK(tt.capsules().size() <= tt.capsule_capacity());
    }
    CHECK(tt.entries().front().source == "420");
    CHECK(tt.entries().back().source == "499");
    int folded = 0;
    for (const auto& c : tt.capsules()) folded += c.merge_count;
    CHECK(folded == 420);
  }

  TEST_CASE("seeding the common-sense bank") {
    const Benchmark bench = build_benchmark({4, 3, 3, 9});
    REQUIRE(bench.library_items.size() == 10);
    const HashingEmbedder emb;
    MemoryBank cs(Tier::cs, 1000);
    const SeedReport r = seed_cs(cs, bench.library_items, emb);
    CHECK(r.stored == 10);
    CHECK(cs.size() == 10);
    for (const auto& e : cs.entries()) CHECK(e.reference_mask.has_value());

    std::vector<LibraryItem> many;
    for (int i = 0; i < 1001; ++i) many.push_back(bench.library_items[static_cast<std::size_t>(i % 10)]);
    MemoryBank big(Tier::cs, 1000);
    const SeedReport r2 = seed_cs(big, many, emb);
    CHECK(r2.stored == 1000);
    CHECK(r2.rejected == 1);
    CHECK(big.size() == 1000);
    CHECK(big.capsules().empty());

    MemoryBank none(Tier::cs, 1000);
    CHECK(seed_cs(none, {}, emb).stored == 0);
    CHECK(retrieve({&none}, emb.embed({"a"}, "b"), 2).empty());
  }

  TEST_CASE("banks round-trip through their file format") {
    MemoryBank tt(Tier::tt, 3);
    for (int i = 0; i < 6; ++i) {
      MemoryEntry e = entry_with(axis(6, static_cast<std::size_t>(i)), 0.5 + 0.1 * i, std::to_string(i));
      e.action_sequence = {action_for(skill_ids::detect, {0, 0, 160, 120})};
      e.param_ranges = ranges_of(e.action_sequence);
      e.summary.hypothesis_box = Box{1, 2, 3, 4};
      e.summary.counts["box"] = i;
      tt.insert(e);
    }
    const auto path = temp_file("bank.jsonl");
    save_bank(tt, path);
    const MemoryBank back = load_bank(path);
    CHECK(back.tier() == Tier::tt);
    CHECK(back.capacity() == 3);
    CHECK(back.clock() == tt.clock());
    CHECK(back.entries() == tt.entries());
    CHECK(back.capsules() == tt.capsules());
    CHECK(serialize_bank(back) == serialize_bank(tt));
    std::filesystem::remove(path);
  }

  TEST_CASE("transferred regions follow the frame") {
    RetrievedMemory m;
    m.frame = Grid::make(100, 100);
    m.region = Box{10, 10, 20, 20};
    CHECK(transfer_region(m, Grid::make(100, 100)) == Box{10, 10, 20, 20});
    CHECK(transfer_region(m, Grid::make(200, 200)) == Box{20, 20, 40, 40});
    m.region.reset();
    CHECK_FALSE(transfer_region(m, Grid::make(100, 100)));
  }
}
