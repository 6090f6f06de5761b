#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "contrafix/agents.hpp"
#include "contrafix/core.hpp"
#include "contrafix/llm.hpp"
#include "contrafix/skills.hpp"

namespace contrafix {

struct EngineConfig {
  std::string backend_spec = "scripted:";   // "scripted:<file>" | "remote:<endpoint>"
  std::string sandbox_spec = "local";       // "local" | "mock:<table.json>"
  std::string model = "scripted";
  std::string remote_api_key_env = "CONTRAFIX_API_KEY";
  PriceTable prices = default_price_table();
  int step_budget = kDefaultStepBudget;
  std::string interpreter_cmd = "python3 {script} {source} {output}";
  std::filesystem::path skills_dir = "skills";
  std::filesystem::path trace_dir = "trace";
  std::filesystem::path variant_parent;  // default: parent of workspace_root
  /// Directory of {mutator,analyzer,patcher}.txt prompt templates; built-in
  /// defaults apply for missing files.
  std::filesystem::path prompts_dir;
  std::map<std::string, std::string> extra_env;
  bool seed_templates = true;
  bool temporal_filter_by_disclosure = false;
  int jobs = 1;
};

enum class ResolutionStatus { Resolved, Unresolved, EnvironmentFailure };

std::string resolution_status_to_string(ResolutionStatus s);

struct Resolution {
  std::string instance_id;
  ResolutionStatus status = ResolutionStatus::Unresolved;
  int rounds_used = 0;
  std::optional<UnifiedDiff> final_diff;
  double cost_usd = 0;
  std::int64_t duration_ms = 0;
  std::string trace_dir;
  std::string detail;
  std::string expected_class;

  std::string to_json() const;
};

struct BatchReport {
  std::vector<Resolution> resolutions;
  double resolved_rate = 0;  // EnvironmentFailure counts in the denominator
  double avg_cost_usd = 0;
  int environment_failures = 0;
  std::map<std::string, std::pair<int, int>> per_class;  // label -> (n, resolved)

  std::string to_json() const;
};

/**
 * Classify why a candidate failed by diffing the old and new sanitizer
 * reports (class + top frame) and package the three carry-over evidence
 * items for the next round.
 */
CarryOverData build_carry_over(const PatchCandidate& failed,
                               const RepairSpecification& spec,
                               const std::vector<ProbeSpec>& probe_specs,
                               const SanitizerReport& original_report);

/**
 * Round controller: reproduce the PoC, then run up to three
 * Mutator -> Analyzer -> Patcher rounds with skill retrieval at the start
 * and carry-over refinement after failures. Successful resolutions record
 * both skill tracks. Transcripts, probe outputs, and diffs land in the
 * trace directory.
 */
class Engine {
 public:
  explicit Engine(EngineConfig config);

  Resolution resolve_instance(const InstanceManifest& manifest);
  /// As above with a caller-provided backend (tests inject scripted ones).
  Resolution resolve_instance(const InstanceManifest& manifest, ChatBackend& backend);

  /// Instances run in disclosure-date order so skill accumulation respects
  /// the temporal filter. Error: NoInstances.
  BatchReport run_batch(const std::filesystem::path& manifest_dir);

  /// Re-drive a recorded trace through the scripted backend.
  Resolution replay(const std::filesystem::path& trace_dir);

  SkillStore& skills() { return *skills_; }
  const EngineConfig& config() const { return config_; }

 private:
  std::unique_ptr<ChatBackend> make_backend() const;
  std::unique_ptr<Sandbox> make_sandbox(const InstanceManifest& manifest,
                                        Workspace& workspace) const;

  EngineConfig config_;
  std::unique_ptr<SkillStore> skills_;
};

/// Reconstruct a scripted-backend script from recorded transcripts.
std::string script_from_trace(const std::filesystem::path& instance_trace_dir);

BatchReport summarize_trace(const std::filesystem::path& trace_dir);

}  // namespace contrafix
