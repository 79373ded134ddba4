#include "aharness/memory.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "aharness/rng.hpp"

namespace aharness {

HashingEmbedder::HashingEmbedder(std::size_t visual_dim, std::size_t instruction_dim, bool normalize_halves)
    : visual_dim_(visual_dim), instruction_dim_(instruction_dim), normalize_halves_(normalize_halves) {
  if (visual_dim == 0 || instruction_dim == 0) throw std::invalid_argument("embedding blocks must be non-empty");
}

namespace {

void hash_into(std::vector<double>& block, std::size_t offset, std::size_t dim, const std::string& token,
               std::string_view salt) {
  const std::uint64_t h = mix64(fnv1a(token) ^ fnv1a(salt));
  const std::size_t slot = offset + static_cast<std::size_t>(h % dim);
  block[slot] += ((h >> 63) != 0U) ? -1.0 : 1.0;
}

double norm_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == ':') {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

Embedding HashingEmbedder::embed(const std::vector<std::string>& descriptor, const std::string& instruction) const {
  const std::size_t dim = dimension();
  Embedding e(dim, 0.0);
  for (const std::string& t : descriptor) {
    if (!t.empty()) hash_into(e, 0, visual_dim_, t, "visual");
  }
  for (const std::string& w : words(instruction)) hash_into(e, visual_dim_, instruction_dim_, w, "instruction");

  if (normalize_halves_) {
    for (const auto& [from, to] : {std::pair{std::size_t{0}, visual_dim_}, std::pair{visual_dim_, dim}}) {
      const double n = norm_of(e, from, to);
      if (n > 0.0) {
        for (std::size_t i = from; i < to; ++i) e[i] /= n;
      }
    }
  }
  const double n = norm_of(e, 0, dim);
  if (n == 0.0) {
    // No usable tokens: the uniform vector, which is flagged by is_uninformative.
    std::fill(e.begin(), e.end(), 1.0 / std::sqrt(static_cast<double>(dim)));
    return e;
  }
  for (double& v : e) v /= n;
  return e;
}

bool HashingEmbedder::is_uninformative(const Embedding& e) {
  if (e.empty()) return true;
  return std::all_of(e.begin(), e.end(), [&](double v) { return v == e.front(); });
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw std::invalid_argument("embedding dimensions differ");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::string to_string(Tier t) { return t == Tier::cs ? "cs" : "tt"; }

ParamRanges ranges_of(const std::vector<SkillAction>& actions) {
  ParamRanges out;
  for (const SkillAction& a : actions) {
    auto& per = out[a.skill.name()];
    const auto note = [&](const std::string& key, double v) {
      auto it = per.find(key);
      if (it == per.end()) {
        per[key] = {v, v};
      } else {
        it->second.lo = std::min(it->second.lo, v);
        it->second.hi = std::max(it->second.hi, v);
      }
    };
    note("scale", a.params.scale);
    note("roi_x_min", a.params.roi.x_min);
    note("roi_y_min", a.params.roi.y_min);
    note("roi_x_max", a.params.roi.x_max);
    note("roi_y_max", a.params.roi.y_max);
    for (const auto& [k, v] : a.params.extras) note(k, v);
  }
  return out;
}

void merge_ranges(ParamRanges& into, const ParamRanges& other) {
  for (const auto& [skill, params] : other) {
    auto& dst = into[skill];
    for (const auto& [k, r] : params) {
      auto it = dst.find(k);
      if (it == dst.end()) {
        dst[k] = r;
      } else {
        it->second.lo = std::min(it->second.lo, r.lo);
        it->second.hi = std::max(it->second.hi, r.hi);
      }
    }
  }
}

ExperienceCapsule compress(const MemoryEntry& entry, std::uint64_t created_at) {
  ExperienceCapsule c;
  c.created_at = created_at;
  c.inserted_at = entry.inserted_at;
  c.embedding = entry.embedding;
  c.summary = entry.summary;
  c.summary.step_params.clear();
  c.param_ranges = entry.param_ranges;
  c.action_sequence = entry.action_sequence;
  c.outcome_score = entry.outcome_score;
  c.merge_count = 1;
  return c;
}

void merge_capsule(ExperienceCapsule& into, const ExperienceCapsule& older) {
  const double a = into.merge_count;
  const double b = older.merge_count;
  const auto mean = [&](double x, double y) { return (a * x + b * y) / (a + b); };
  for (const auto& [k, n] : older.summary.counts) into.summary.counts[k] += n;
  into.summary.omega = mean(into.summary.omega, older.summary.omega);
  into.summary.zeta = mean(into.summary.zeta, older.summary.zeta);
  into.summary.mu = mean(into.summary.mu, older.summary.mu);
  into.summary.v = mean(into.summary.v, older.summary.v);
  if (!into.summary.hypothesis_box) into.summary.hypothesis_box = older.summary.hypothesis_box;
  into.outcome_score = mean(into.outcome_score, older.outcome_score);
  merge_ranges(into.param_ranges, older.param_ranges);
  double n = 0.0;
  for (std::size_t i = 0; i < into.embedding.size(); ++i) {
    into.embedding[i] = mean(into.embedding[i], older.embedding[i]);
    n += into.embedding[i] * into.embedding[i];
  }
  n = std::sqrt(n);
  if (n > 0.0) {
    for (double& v : into.embedding) v /= n;
  }
  into.inserted_at = std::max(into.inserted_at, older.inserted_at);
  into.merge_count += older.merge_count;
}

MemoryBank::MemoryBank(Tier tier, std::size_t capacity) : tier_(tier), capacity_(capacity) {}

void MemoryBank::insert(MemoryEntry entry) {
  entry.inserted_at = ++clock_;
  entries_.push_back(std::move(entry));
  metabolize();
}

void MemoryBank::metabolize() {
  while (entries_.size() > capacity_) {
    MemoryEntry oldest = std::move(entries_.front());
    entries_.pop_front();
    if (capacity_ == 0) continue;
    capsules_.push_back(compress(oldest, ++clock_));
    if (capsules_.size() > capacity_) {
      // Oldest capsule folds into its nearest neighbour.
      const ExperienceCapsule victim = capsules_.front();
      capsules_.erase(capsules_.begin());
      std::size_t best = 0;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < capsules_.size(); ++i) {
        const double s = cosine(victim.embedding, capsules_[i].embedding);
        if (s > best_sim) {
          best_sim = s;
          best = i;
        }
      }
      merge_capsule(capsules_[best], victim);
    }
  }
}

void MemoryBank::clear() {
  entries_.clear();
  capsules_.clear();
  clock_ = 0;
}

void MemoryBank::restore(std::deque<MemoryEntry> entries, std::vector<ExperienceCapsule> capsules, std::uint64_t clock) {
  if (entries.size() > capacity_ || capsules.size() > capacity_) throw std::invalid_argument("snapshot exceeds capacity");
  entries_ = std::move(entries);
  capsules_ = std::move(capsules);
  clock_ = clock;
}

void write_back(MemoryBank& tt, MemoryEntry entry, bool accepted) {
  if (!accepted) return;
  tt.insert(std::move(entry));
}

SeedReport seed_cs(MemoryBank& cs, const std::vector<LibraryItem>& library, const Embedder& embedder) {
  SeedReport report;
  for (const LibraryItem& item : library) {
    if (cs.size() >= cs.capacity()) {
      ++report.rejected;
      continue;
    }
    MemoryEntry e;
    e.source = item.source;
    e.embedding = embedder.embed(item.descriptor, item.instruction);
    e.action_sequence = item.solved_actions;
    e.param_ranges = ranges_of(item.solved_actions);
    e.outcome_score = 1.0;
    e.reference_mask = item.reference_mask;
    e.summary.frame = item.reference_mask.grid();
    e.summary.hypothesis_box = item.reference_mask.bounding_box();
    e.summary.omega = e.summary.zeta = e.summary.mu = e.summary.v = 1.0;
    for (const SkillAction& a : item.solved_actions) e.summary.step_params.push_back(a.params);
    cs.insert(std::move(e));
    ++report.stored;
  }
  return report;
}

std::vector<RetrievedMemory> retrieve(const std::vector<const MemoryBank*>& banks, const Embedding& query, std::size_t n) {
  if (n == 0) throw std::invalid_argument("retrieval count must be at least 1");
  std::vector<RetrievedMemory> pool;
  for (const MemoryBank* bank : banks) {
    if (bank == nullptr) continue;
    for (const MemoryEntry& e : bank->entries()) {
      RetrievedMemory m;
      m.similarity = cosine(query, e.embedding);
      m.tier = bank->tier();
      m.source = e.source;
      m.inserted_at = e.inserted_at;
      m.outcome_score = e.outcome_score;
      m.action_sequence = e.action_sequence;
      m.param_ranges = e.param_ranges;
      m.reference_mask = e.reference_mask;
      m.region = e.reference_mask ? e.reference_mask->bounding_box() : e.summary.hypothesis_box;
      m.frame = e.summary.frame;
      pool.push_back(std::move(m));
    }
    for (const ExperienceCapsule& c : bank->capsules()) {
      RetrievedMemory m;
      m.similarity = cosine(query, c.embedding);
      m.tier = bank->tier();
      m.capsule = true;
      m.source = "capsule";
      m.inserted_at = c.inserted_at;
      m.outcome_score = c.outcome_score;
      m.action_sequence = c.action_sequence;
      m.param_ranges = c.param_ranges;
      m.region = c.summary.hypothesis_box;
      m.frame = c.summary.frame;
      pool.push_back(std::move(m));
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [](const RetrievedMemory& a, const RetrievedMemory& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.outcome_score != b.outcome_score) return a.outcome_score > b.outcome_score;
    return a.inserted_at > b.inserted_at;
  });
  if (pool.size() > n) pool.resize(n);
  return pool;
}

std::optional<Box> transfer_region(const RetrievedMemory& m, const Grid& frame) {
  if (!m.region || m.region->empty()) return std::nullopt;
  if (m.frame == frame) return m.region;
  return rescale(*m.region, m.frame, frame);
}

void to_json(json& j, const EvidenceSummary& s) {
  json params = json::array();
  for (const SkillParams& p : s.step_params) params.push_back(p);
  j = json{{"counts", s.counts}, {"omega", s.omega}, {"zeta", s.zeta}, {"mu", s.mu}, {"v", s.v},
           {"frame", s.frame}, {"step_params", std::move(params)}};
  j["hypothesis_box"] = s.hypothesis_box ? json(*s.hypothesis_box) : json(nullptr);
}

void from_json(const json& j, EvidenceSummary& s) {
  s.counts = j.at("counts").get<std::map<std::string, int>>();
  s.omega = j.at("omega").get<double>();
  s.zeta = j.at("zeta").get<double>();
  s.mu = j.at("mu").get<double>();
  s.v = j.at("v").get<double>();
  s.frame = j.at("frame").get<Grid>();
  s.step_params.clear();
  for (const auto& p : j.at("step_params")) s.step_params.push_back(p.get<SkillParams>());
  s.hypothesis_box.reset();
  if (!j.at("hypothesis_box").is_null()) s.hypothesis_box = j.at("hypothesis_box").get<Box>();
}

namespace {

json ranges_to_json(const ParamRanges& r) {
  json j = json::object();
  for (const auto& [skill, params] : r) {
    for (const auto& [k, range] : params) j[skill][k] = json::array({range.lo, range.hi});
  }
  return j;
}

ParamRanges ranges_from_json(const json& j) {
  ParamRanges r;
  for (const auto& [skill, params] : j.items()) {
    for (const auto& [k, range] : params.items()) r[skill][k] = {range.at(0).get<double>(), range.at(1).get<double>()};
  }
  return r;
}

json actions_to_json(const std::vector<SkillAction>& actions) {
  json a = json::array();
  for (const SkillAction& x : actions) a.push_back(x);
  return a;
}

std::vector<SkillAction> actions_from_json(const json& j) {
  std::vector<SkillAction> out;
  for (const auto& x : j) out.push_back(x.get<SkillAction>());
  return out;
}

}  // namespace

void to_json(json& j, const MemoryEntry& e) {
  j = json{{"inserted_at", e.inserted_at},
           {"source", e.source},
           {"embedding", e.embedding},
           {"actions", actions_to_json(e.action_sequence)},
           {"param_ranges", ranges_to_json(e.param_ranges)},
           {"summary", e.summary},
           {"outcome_score", e.outcome_score}};
  j["reference_mask"] = e.reference_mask ? json(*e.reference_mask) : json(nullptr);
}

void from_json(const json& j, MemoryEntry& e) {
  e.inserted_at = j.at("inserted_at").get<std::uint64_t>();
  e.source = j.at("source").get<std::string>();
  e.embedding = j.at("embedding").get<Embedding>();
  e.action_sequence = actions_from_json(j.at("actions"));
  e.param_ranges = ranges_from_json(j.at("param_ranges"));
  e.summary = j.at("summary").get<EvidenceSummary>();
  e.outcome_score = j.at("outcome_score").get<double>();
  e.reference_mask.reset();
  if (!j.at("reference_mask").is_null()) e.reference_mask = j.at("reference_mask").get<Mask>();
}

void to_json(json& j, const ExperienceCapsule& c) {
  j = json{{"created_at", c.created_at},
           {"inserted_at", c.inserted_at},
           {"embedding", c.embedding},
           {"summary", c.summary},
           {"param_ranges", ranges_to_json(c.param_ranges)},
           {"actions", actions_to_json(c.action_sequence)},
           {"outcome_score", c.outcome_score},
           {"merge_count", c.merge_count}};
}

void from_json(const json& j, ExperienceCapsule& c) {
  c.created_at = j.at("created_at").get<std::uint64_t>();
  c.inserted_at = j.at("inserted_at").get<std::uint64_t>();
  c.embedding = j.at("embedding").get<Embedding>();
  c.summary = j.at("summary").get<EvidenceSummary>();
  c.param_ranges = ranges_from_json(j.at("param_ranges"));
  c.action_sequence = actions_from_json(j.at("actions"));
  c.outcome_score = j.at("outcome_score").get<double>();
  c.merge_count = j.at("merge_count").get<int>();
}

void to_json(json& j, const RetrievedMemory& m) {
  j = json{{"similarity", m.similarity},
           {"tier", to_string(m.tier)},
           {"capsule", m.capsule},
           {"source", m.source},
           {"inserted_at", m.inserted_at},
           {"outcome_score", m.outcome_score},
           {"actions", actions_to_json(m.action_sequence)},
           {"param_ranges", ranges_to_json(m.param_ranges)},
           {"frame", m.frame}};
  j["reference_mask"] = m.reference_mask ? json(*m.reference_mask) : json(nullptr);
  j["region"] = m.region ? json(*m.region) : json(nullptr);
}

void from_json(const json& j, RetrievedMemory& m) {
  m.similarity = j.at("similarity").get<double>();
  m.tier = j.at("tier").get<std::string>() == "cs" ? Tier::cs : Tier::tt;
  m.capsule = j.at("capsule").get<bool>();
  m.source = j.at("source").get<std::string>();
  m.inserted_at = j.at("inserted_at").get<std::uint64_t>();
  m.outcome_score = j.at("outcome_score").get<double>();
  m.action_sequence = actions_from_json(j.at("actions"));
  m.param_ranges = ranges_from_json(j.at("param_ranges"));
  m.frame = j.at("frame").get<Grid>();
  m.reference_mask.reset();
  if (!j.at("reference_mask").is_null()) m.reference_mask = j.at("reference_mask").get<Mask>();
  m.region.reset();
  if (!j.at("region").is_null()) m.region = j.at("region").get<Box>();
}

std::string serialize_bank(const MemoryBank& bank) {
  std::ostringstream out;
  out << dump_line(json{{"bank", {{"tier", to_string(bank.tier())}, {"capacity", bank.capacity()}, {"clock", bank.clock()}}}})
      << '\n';
  for (const MemoryEntry& e : bank.entries()) out << dump_line(json{{"entry", e}}) << '\n';
  for (const ExperienceCapsule& c : bank.capsules()) out << dump_line(json{{"capsule", c}}) << '\n';
  return out.str();
}

void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write bank file " + path.string());
  out << serialize_bank(bank);
}

MemoryBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read bank file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty bank file " + path.string());
  const json head = json::parse(line).at("bank");
  MemoryBank bank(head.at("tier").get<std::string>() == "cs" ? Tier::cs : Tier::tt, head.at("capacity").get<std::size_t>());
  std::deque<MemoryEntry> entries;
  std::vector<ExperienceCapsule> capsules;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.contains("entry")) {
      entries.push_back(j.at("entry").get<MemoryEntry>());
    } else if (j.contains("capsule")) {
      capsules.push_back(j.at("capsule").get<ExperienceCapsule>());
    } else {
      throw std::runtime_error("unrecognized bank line in " + path.string());
    }
  }
  bank.restore(std::move(entries), std::move(capsules), head.at("clock").get<std::uint64_t>());
  return bank;
}

}  // namespace aharness
