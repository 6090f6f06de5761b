#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "contrafix/core.hpp"

namespace contrafix {

constexpr int kEmbeddingDim = 256;
constexpr int kDefaultRetrievalK = 2;

/// Cosine similarity. Errors: DimensionMismatch, ZeroVector.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

/**
 * Deterministic offline embedding: lowercase, split on non-alphanumerics,
 * hash each token into a 256-bucket accumulator, L2-normalize. A remote
 * client can be swapped in through SkillStore::set_embedder; outputs are
 * re-normalized either way. Error: EmptyText.
 */
std::vector<double> embed(std::string_view text);

enum class SkillTrack { Repair, Mutation };

/// One verified resolution's reusable repair knowledge: where the fix
/// landed, the evidence-backed specification, and the clean diff.
struct RepairSkill {
  std::string skill_id;
  std::string repo_id;
  VulnClass vuln_class;
  std::string sanitizer_report_text;
  std::string specification_text;
  std::string patch_text;
  std::string source_instance_id;
  std::int64_t resolved_at = 0;  // seconds since epoch
  Date source_disclosure_date;
  std::vector<double> embedding;
};

/// One resolution's variant-construction knowledge: the PoC format, the
/// strategy summary, and the replayable mutation command log.
struct MutationSkill {
  std::string skill_id;
  std::string repo_id;
  VulnClass vuln_class;
  std::string poc_format;  // free text ("mp4", "interpreter-script", ...)
  std::string strategy;
  std::vector<std::string> command_log;
  std::string sanitizer_report_text;
  std::string source_instance_id;
  std::int64_t resolved_at = 0;
  Date source_disclosure_date;
  std::vector<double> embedding;
  bool is_seed_template = false;
};

struct SkillQuery {
  std::string instance_id;
  std::string repo_id;
  VulnClass vuln_class;
  std::string sanitizer_report_text;
  Date disclosure_date;
  SkillTrack track = SkillTrack::Repair;
  int k = kDefaultRetrievalK;
  /// Alternate temporal rule: compare the entry's source disclosure date
  /// (not its resolution timestamp) against the query's disclosure date.
  bool compare_by_source_disclosure = false;
};

/// Seed templates are exempt (static heuristics with no source instance);
/// otherwise an entry is eligible iff it comes from a different instance and
/// was resolved strictly before midnight of the query's disclosure date.
bool leakage_filter_repair(const RepairSkill& entry, const SkillQuery& query);
bool leakage_filter_mutation(const MutationSkill& entry, const SkillQuery& query);

struct RetrievalAudit {
  std::string instance_id;
  SkillTrack track;
  std::vector<std::string> returned_ids;
  int tier = 0;  // 1..3; 0 when nothing was returned
  int leakage_violations = 0;
};

/**
 * Dual-track persistent skill base. One JSON record per line per track;
 * appends go through a single writer lock, compaction rewrites the file
 * atomically. Retrieval walks three tiers without ever descending past a
 * non-empty one: exact (repo, class) match, exact class match, then
 * everything eligible ranked purely by embedding similarity. Within every
 * tier entries rank by cosine between the query report embedding and the
 * stored one, ties broken by skill_id.
 */
class SkillStore {
 public:
  explicit SkillStore(std::filesystem::path dir);

  RepairSkill record_repair_skill(const std::string& repo_id, const VulnClass& vuln_class,
                                  const std::string& sanitizer_report_text,
                                  const std::string& specification_text,
                                  const std::string& patch_text,
                                  const std::string& source_instance_id,
                                  std::int64_t resolved_at, const Date& disclosure_date,
                                  bool verified);

  MutationSkill record_mutation_skill(const std::string& repo_id, const VulnClass& vuln_class,
                                      const std::string& poc_format,
                                      const std::string& strategy,
                                      const std::vector<std::string>& command_log,
                                      const std::string& sanitizer_report_text,
                                      const std::string& source_instance_id,
                                      std::int64_t resolved_at, const Date& disclosure_date,
                                      bool verified);

  /// One static heuristic per sanitizer error class; idempotent.
  std::vector<MutationSkill> seed_mutation_templates();

  std::vector<RepairSkill> retrieve_repair(const SkillQuery& query);
  std::vector<MutationSkill> retrieve_mutation(const SkillQuery& query);

  const std::vector<RepairSkill>& repair_entries() const { return repair_; }
  const std::vector<MutationSkill>& mutation_entries() const { return mutation_; }
  const std::vector<RetrievalAudit>& audit_log() const { return audit_; }

  const RepairSkill* find_repair(const std::string& skill_id) const;
  const MutationSkill* find_mutation(const std::string& skill_id) const;

  void export_track(SkillTrack track, const std::filesystem::path& file) const;
  int import_track(SkillTrack track, const std::filesystem::path& file);

  void set_embedder(std::function<std::vector<double>(std::string_view)> embedder);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  void load();
  void append_repair(const RepairSkill& skill);
  void append_mutation(const MutationSkill& skill);
  std::string next_id(const char* prefix);
  std::vector<double> embed_text(std::string_view text) const;

  std::filesystem::path dir_;
  std::vector<RepairSkill> repair_;
  std::vector<MutationSkill> mutation_;
  std::vector<RetrievalAudit> audit_;
  std::function<std::vector<double>(std::string_view)> embedder_;
  std::mutex write_mutex_;
  int counter_ = 0;
};

}  // namespace contrafix
