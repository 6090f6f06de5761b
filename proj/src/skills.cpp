#include "contrafix/skills.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

namespace fs = std::filesystem;

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error("DimensionMismatch",
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw Error("ZeroVector", "cosine of an all-zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

// FNV-1a; std::hash is not stable across implementations.
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void l2_normalize(std::vector<double>& v) {
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0)
    for (double& x : v) x /= norm;
}

}  // namespace

std::vector<double> embed(std::string_view text) {
  if (trim(text).empty()) throw Error("EmptyText", "cannot embed empty text");
  std::vector<double> v(kEmbeddingDim, 0.0);
  std::string lower = to_lower(text);
  size_t start = std::string::npos;
  auto flush = [&](size_t end) {
    if (start == std::string::npos) return;
    std::string_view token(lower.data() + start, end - start);
    v[fnv1a(token) % kEmbeddingDim] += 1.0;
    start = std::string::npos;
  };
  for (size_t i = 0; i < lower.size(); ++i) {
    bool alnum = std::isalnum(static_cast<unsigned char>(lower[i])) != 0;
    if (alnum && start == std::string::npos) start = i;
    if (!alnum) flush(i);
  }
  flush(lower.size());
  l2_normalize(v);
  return v;
}

/* ------------------------------------------------------------------ */
/* Leakage filter                                                      */
/* ------------------------------------------------------------------ */

namespace {

bool temporal_ok(std::int64_t resolved_at, const Date& source_disclosure,
                 const SkillQuery& query) {
  if (query.compare_by_source_disclosure)
    return source_disclosure < query.disclosure_date;
  return resolved_at < query.disclosure_date.epoch_seconds();
}

}  // namespace

bool leakage_filter_repair(const RepairSkill& entry, const SkillQuery& query) {
  return entry.source_instance_id != query.instance_id &&
         temporal_ok(entry.resolved_at, entry.source_disclosure_date, query);
}

bool leakage_filter_mutation(const MutationSkill& entry, const SkillQuery& query) {
  if (entry.is_seed_template) return true;
  return entry.source_instance_id != query.instance_id &&
         temporal_ok(entry.resolved_at, entry.source_disclosure_date, query);
}

/* ------------------------------------------------------------------ */
/* Persistence                                                         */
/* ------------------------------------------------------------------ */

namespace {

nlohmann::json repair_to_json(const RepairSkill& s) {
  return {{"skill_id", s.skill_id},
          {"repo_id", s.repo_id},
          {"vuln_class", s.vuln_class.canonical()},
          {"sanitizer_report_text", s.sanitizer_report_text},
          {"specification_text", s.specification_text},
          {"patch_text", s.patch_text},
          {"source_instance_id", s.source_instance_id},
          {"resolved_at", s.resolved_at},
          {"source_disclosure_date", s.source_disclosure_date.to_string()},
          {"embedding", s.embedding}};
}

RepairSkill repair_from_json(const nlohmann::json& j) {
  RepairSkill s;
  s.skill_id = j.at("skill_id").get<std::string>();
  s.repo_id = j.at("repo_id").get<std::string>();
  s.vuln_class = vuln_class_from_label(j.at("vuln_class").get<std::string>());
  s.sanitizer_report_text = j.at("sanitizer_report_text").get<std::string>();
  s.specification_text = j.value("specification_text", "");
  s.patch_text = j.at("patch_text").get<std::string>();
  s.source_instance_id = j.value("source_instance_id", "");
  s.resolved_at = j.value("resolved_at", std::int64_t{0});
  if (auto d = Date::parse(j.value("source_disclosure_date", "")))
    s.source_disclosure_date = *d;
  s.embedding = j.at("embedding").get<std::vector<double>>();
  return s;
}

nlohmann::json mutation_to_json(const MutationSkill& s) {
  return {{"skill_id", s.skill_id},
          {"repo_id", s.repo_id},
          {"vuln_class", s.vuln_class.canonical()},
          {"poc_format", s.poc_format},
          {"strategy", s.strategy},
          {"command_log", s.command_log},
          {"sanitizer_report_text", s.sanitizer_report_text},
          {"source_instance_id", s.source_instance_id},
          {"resolved_at", s.resolved_at},
          {"source_disclosure_date", s.source_disclosure_date.to_string()},
          {"embedding", s.embedding},
          {"is_seed_template", s.is_seed_template}};
}

MutationSkill mutation_from_json(const nlohmann::json& j) {
  MutationSkill s;
  s.skill_id = j.at("skill_id").get<std::string>();
  s.repo_id = j.value("repo_id", "");
  s.vuln_class = vuln_class_from_label(j.at("vuln_class").get<std::string>());
  s.poc_format = j.value("poc_format", "");
  s.strategy = j.at("strategy").get<std::string>();
  s.command_log = j.value("command_log", std::vector<std::string>{});
  s.sanitizer_report_text = j.value("sanitizer_report_text", "");
  s.source_instance_id = j.value("source_instance_id", "");
  s.resolved_at = j.value("resolved_at", std::int64_t{0});
  if (auto d = Date::parse(j.value("source_disclosure_date", "")))
    s.source_disclosure_date = *d;
  s.embedding = j.at("embedding").get<std::vector<double>>();
  s.is_seed_template = j.value("is_seed_template", false);
  return s;
}

void append_line(const fs::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw Error("PersistFailure", "cannot append to " + file.string());
  out << line << "\n";
  if (!out) throw Error("PersistFailure", "short append to " + file.string());
}

}  // namespace

SkillStore::SkillStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  load();
}

void SkillStore::set_embedder(std::function<std::vector<double>(std::string_view)> embedder) {
  embedder_ = std::move(embedder);
}

std::vector<double> SkillStore::embed_text(std::string_view text) const {
  if (!embedder_) return embed(text);  // already unit-norm
  std::vector<double> v = embedder_(text);
  l2_normalize(v);
  return v;
}

void SkillStore::load() {
  auto load_track = [&](const char* name, auto parse, auto& sink) {
    fs::path file = dir_ / name;
    if (!fs::exists(file)) return;
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      sink.push_back(parse(nlohmann::json::parse(line)));
    }
  };
  load_track("repair_skills.jsonl", repair_from_json, repair_);
  load_track("mutation_skills.jsonl", mutation_from_json, mutation_);
}

std::string SkillStore::next_id(const char* prefix) {
  for (;;) {
    std::string id = std::string(prefix) + "-" +
                     std::to_string(repair_.size() + mutation_.size() + (++counter_));
    if (!find_repair(id) && !find_mutation(id)) return id;  // imports may hold ids
  }
}

RepairSkill SkillStore::record_repair_skill(
    const std::string& repo_id, const VulnClass& vuln_class,
    const std::string& sanitizer_report_text, const std::string& specification_text,
    const std::string& patch_text, const std::string& source_instance_id,
    std::int64_t resolved_at, const Date& disclosure_date, bool verified) {
  if (!verified)
    throw Error("NotVerified", "only verified resolutions are recorded");
  if (trim(patch_text).empty())
    throw Error("NotVerified", "a verified resolution must carry a non-empty patch");

  std::lock_guard<std::mutex> lock(write_mutex_);
  RepairSkill s;
  s.skill_id = next_id("repair");
  s.repo_id = repo_id;
  s.vuln_class = vuln_class;
  s.sanitizer_report_text = sanitizer_report_text;
  s.specification_text = specification_text;
  s.patch_text = patch_text;
  s.source_instance_id = source_instance_id;
  s.resolved_at = resolved_at;
  s.source_disclosure_date = disclosure_date;
  s.embedding = embed_text(sanitizer_report_text.empty() ? specification_text
                                                         : sanitizer_report_text);
  append_line(dir_ / "repair_skills.jsonl", repair_to_json(s).dump());
  repair_.push_back(s);
  return s;
}

MutationSkill SkillStore::record_mutation_skill(
    const std::string& repo_id, const VulnClass& vuln_class, const std::string& poc_format,
    const std::string& strategy, const std::vector<std::string>& command_log,
    const std::string& sanitizer_report_text, const std::string& source_instance_id,
    std::int64_t resolved_at, const Date& disclosure_date, bool verified) {
  if (!verified)
    throw Error("NotVerified", "only verified resolutions are recorded");
  if (command_log.empty())
    throw Error("EmptyCommandLog", "a mutation skill needs the captured command sequence");

  std::lock_guard<std::mutex> lock(write_mutex_);
  MutationSkill s;
  s.skill_id = next_id("mutation");
  s.repo_id = repo_id;
  s.vuln_class = vuln_class;
  s.poc_format = poc_format;
  s.strategy = strategy;
  s.command_log = command_log;
  s.sanitizer_report_text = sanitizer_report_text;
  s.source_instance_id = source_instance_id;
  s.resolved_at = resolved_at;
  s.source_disclosure_date = disclosure_date;
  s.embedding = embed_text(sanitizer_report_text.empty() ? strategy : sanitizer_report_text);
  append_line(dir_ / "mutation_skills.jsonl", mutation_to_json(s).dump());
  mutation_.push_back(s);
  return s;
}

std::vector<MutationSkill> SkillStore::seed_mutation_templates() {
  struct Seed {
    VulnClass cls;
    const char* strategy;
  };
  const std::vector<Seed> seeds = {
      {VulnClass::heap_buffer_overflow(),
       "Manipulate size and index values near the allocated boundary: nudge lengths, "
       "counts, and offsets one step across the capacity in both directions while "
       "preserving the input's framing."},
      {VulnClass::stack_buffer_overflow(),
       "Manipulate size and index values near the allocated boundary: shrink and grow "
       "the fields that control how much data lands in fixed-size buffers."},
      {VulnClass::use_after_free(),
       "Interleave allocation and deallocation sequences to probe object lifetime "
       "limits: reorder release operations, duplicate references, and trigger reuse "
       "of freed objects earlier or later."},
      {VulnClass::null_pointer_deref(),
       "Systematically nullify object references along the call chain: remove or "
       "empty optional fields and initializers so dereferences meet absent objects."},
      {VulnClass::memory_leak(),
       "Vary allocation counts and early-exit paths: raise the number of acquired "
       "objects and force error returns between acquisition and release."},
      {VulnClass::segv(),
       "Perturb offsets, lengths, and reference targets that control memory access: "
       "push addresses and indices toward unmapped or misaligned territory in small "
       "steps."},
  };

  std::lock_guard<std::mutex> lock(write_mutex_);
  std::vector<MutationSkill> out;
  for (const auto& seed : seeds) {
    std::string id = "seed-" + seed.cls.canonical();
    auto existing = std::find_if(mutation_.begin(), mutation_.end(),
                                 [&](const MutationSkill& s) { return s.skill_id == id; });
    if (existing != mutation_.end()) {
      out.push_back(*existing);
      continue;
    }
    MutationSkill s;
    s.skill_id = id;
    s.vuln_class = seed.cls;
    s.poc_format = "any";
    s.strategy = seed.strategy;
    s.is_seed_template = true;
    s.embedding = embed_text(s.strategy);
    append_line(dir_ / "mutation_skills.jsonl", mutation_to_json(s).dump());
    mutation_.push_back(s);
    out.push_back(s);
  }
  return out;
}

/* ------------------------------------------------------------------ */
/* Retrieval                                                           */
/* ------------------------------------------------------------------ */

namespace {

template <typename Skill>
std::vector<Skill> rank_tiered(const std::vector<Skill>& eligible, const SkillQuery& query,
                               const std::vector<double>& query_embedding, int* tier_out) {
  std::vector<const Skill*> tier;
  int tier_used = 0;
  for (int candidate_tier = 1; candidate_tier <= 3 && tier.empty(); ++candidate_tier) {
    for (const auto& entry : eligible) {
      bool match = false;
      switch (candidate_tier) {
        case 1:
          match = entry.repo_id == query.repo_id && entry.vuln_class == query.vuln_class;
          break;
        case 2:
          match = entry.vuln_class == query.vuln_class;
          break;
        case 3:
          match = true;
          break;
      }
      if (match) tier.push_back(&entry);
    }
    if (!tier.empty()) tier_used = candidate_tier;
  }
  if (tier_out) *tier_out = tier_used;

  std::stable_sort(tier.begin(), tier.end(), [&](const Skill* a, const Skill* b) {
    double ca = cosine(query_embedding, a->embedding);
    double cb = cosine(query_embedding, b->embedding);
    if (ca != cb) return ca > cb;
    return a->skill_id < b->skill_id;
  });

  std::vector<Skill> out;
  for (const auto* entry : tier) {
    if (static_cast<int>(out.size()) >= query.k) break;
    out.push_back(*entry);
  }
  return out;
}

}  // namespace

std::vector<RepairSkill> SkillStore::retrieve_repair(const SkillQuery& query) {
  if (query.k < 1) throw Error("MalformedManifest", "retrieval k must be >= 1");
  std::lock_guard<std::mutex> lock(write_mutex_);  // batch workers share the store
  std::vector<RepairSkill> eligible;
  for (const auto& entry : repair_)
    if (leakage_filter_repair(entry, query)) eligible.push_back(entry);

  RetrievalAudit audit{query.instance_id, SkillTrack::Repair, {}, 0, 0};
  std::vector<RepairSkill> out;
  if (!eligible.empty()) {
    auto query_embedding = embed_text(query.sanitizer_report_text.empty()
                                          ? std::string("(no report)")
                                          : query.sanitizer_report_text);
    out = rank_tiered(eligible, query, query_embedding, &audit.tier);
  }
  for (const auto& entry : out) {
    audit.returned_ids.push_back(entry.skill_id);
    if (!leakage_filter_repair(entry, query)) ++audit.leakage_violations;
  }
  audit_.push_back(std::move(audit));
  return out;
}

std::vector<MutationSkill> SkillStore::retrieve_mutation(const SkillQuery& query) {
  if (query.k < 1) throw Error("MalformedManifest", "retrieval k must be >= 1");
  std::lock_guard<std::mutex> lock(write_mutex_);  // batch workers share the store
  std::vector<MutationSkill> eligible;
  for (const auto& entry : mutation_)
    if (leakage_filter_mutation(entry, query)) eligible.push_back(entry);

  RetrievalAudit audit{query.instance_id, SkillTrack::Mutation, {}, 0, 0};
  std::vector<MutationSkill> out;
  if (!eligible.empty()) {
    auto query_embedding = embed_text(query.sanitizer_report_text.empty()
                                          ? std::string("(no report)")
                                          : query.sanitizer_report_text);
    out = rank_tiered(eligible, query, query_embedding, &audit.tier);
  }
  for (const auto& entry : out) {
    audit.returned_ids.push_back(entry.skill_id);
    if (!leakage_filter_mutation(entry, query)) ++audit.leakage_violations;
  }
  audit_.push_back(std::move(audit));
  return out;
}

const RepairSkill* SkillStore::find_repair(const std::string& skill_id) const {
  for (const auto& s : repair_)
    if (s.skill_id == skill_id) return &s;
  return nullptr;
}

const MutationSkill* SkillStore::find_mutation(const std::string& skill_id) const {
  for (const auto& s : mutation_)
    if (s.skill_id == skill_id) return &s;
  return nullptr;
}

void SkillStore::export_track(SkillTrack track, const fs::path& file) const {
  std::ostringstream out;
  if (track == SkillTrack::Repair) {
    for (const auto& s : repair_) out << repair_to_json(s).dump() << "\n";
  } else {
    for (const auto& s : mutation_) out << mutation_to_json(s).dump() << "\n";
  }
  write_file_atomic(file, out.str());
}

int SkillStore::import_track(SkillTrack track, const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("NotFound", "cannot read " + file.string());
  std::lock_guard<std::mutex> lock(write_mutex_);
  std::string line;
  int imported = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto doc = nlohmann::json::parse(line);
    if (track == SkillTrack::Repair) {
      RepairSkill s = repair_from_json(doc);
      if (find_repair(s.skill_id)) continue;
      append_line(dir_ / "repair_skills.jsonl", repair_to_json(s).dump());
      repair_.push_back(std::move(s));
    } else {
      MutationSkill s = mutation_from_json(doc);
      if (find_mutation(s.skill_id)) continue;
      append_line(dir_ / "mutation_skills.jsonl", mutation_to_json(s).dump());
      mutation_.push_back(std::move(s));
    }
    ++imported;
  }
  return imported;
}

}  // namespace contrafix
