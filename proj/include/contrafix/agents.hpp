#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "contrafix/core.hpp"
#include "contrafix/evidence.hpp"
#include "contrafix/llm.hpp"
#include "contrafix/sandbox.hpp"
#include "contrafix/skills.hpp"
#include "contrafix/workspace.hpp"

namespace contrafix {

enum class VariantOrigin { LlmScript, LlmRewrite };

struct Variant {
  std::string variant_id;  // unique filename within the variant directory
  std::string path;        // absolute
  VariantOrigin origin = VariantOrigin::LlmRewrite;
  std::optional<VariantOutcome> outcome;
  std::vector<std::string> creation_log;  // serialized mutation actions
};

struct VariantSet {
  std::vector<Variant> variants;
  bool ideal = false;  // >=1 CrashSame and >=1 Safe
  bool fallback_single_execution = false;

  std::vector<std::string> crash_same_ids() const;
};

enum class GateFailure { None, NoCrashSame, NoSafe, Empty };

struct GateResult {
  bool pass = false;
  GateFailure reason = GateFailure::None;
};

std::string gate_failure_to_string(GateFailure reason);

/// The Mutator's verification gate: an ideal contrastive pair needs at
/// least one variant crashing with the expected class and at least one
/// terminating normally. All variants must have been executed.
GateResult ideal_pair_gate(const VariantSet& set);

enum class VerificationState { Unverified, EmptyDiff, CompileFailed, StillVulnerable, Verified };

std::string verification_state_to_string(VerificationState v);

struct PatchCandidate {
  std::vector<EditRecord> edits;
  UnifiedDiff diff;
  VerificationState verification = VerificationState::Unverified;
  std::string still_vulnerable_input;  // first non-Safe input id
  std::string failure_output;          // compiler or re-execution output
  std::optional<SanitizerReport> failure_report;
};

/**
 * Owns the variant registry and implements the tool surface the agents
 * call. One toolkit per instance; tool handlers route through the shared
 * workspace/sandbox and record everything needed for skill capture.
 */
class AgentToolkit {
 public:
  AgentToolkit(const InstanceManifest& manifest, Workspace& workspace, Sandbox& sandbox,
               std::filesystem::path variant_parent,
               std::string interpreter_cmd = "python3 {script} {source} {output}");

  /// Handler bound to one agent role, suitable for run_agent_loop.
  ToolDispatcher dispatcher(AgentRole role);

  /// Create a variant: for binary PoCs the content is a mutation script run
  /// by the interpreter command; for text PoCs the content is the rewritten
  /// variant itself. Errors: DuplicateName, ScriptFailed, EmptyOutput.
  Variant& mutate_poc(const std::string& filename, const std::string& content,
                      const std::string& mode = "auto");

  /// Execute one variant under the sandbox and record its outcome.
  /// Error: UnknownVariant.
  VariantOutcome run_variant(const std::string& variant_id);

  /// Execute every variant that has no outcome yet.
  void run_pending_variants();

  struct CheckResult {
    bool fixed = false;
    std::string failing_input;  // variant id or "original"
    std::string output;
    std::optional<SanitizerReport> report;
  };

  /// Gate 2: rebuild when stale, then re-execute the original PoC plus all
  /// CrashSame variants (test-driven mode consults the verify command).
  CheckResult check_vul();

  /// Validate independently of the agent's claims and extract the clean
  /// diff; on success the result is stashed for the phase to collect.
  std::string submit();
  const std::optional<PatchCandidate>& submitted() const { return submitted_; }
  void reset_submission() { submitted_.reset(); }

  const std::vector<Variant>& variants() const { return order_; }
  Variant* find_variant(const std::string& id);
  VariantSet current_set() const;

  /// "interpreter-script" for text PoCs, file extension otherwise.
  std::string poc_format() const;

  const std::filesystem::path& variant_dir() const { return variant_dir_; }
  std::string original_poc_abs() const;

  std::vector<std::string> collected_command_log(const VariantSet& set) const;

 private:
  std::string tool_view(const ToolCall& call);
  std::string tool_search(const ToolCall& call);
  std::string tool_edit(AgentRole role, const ToolCall& call);
  std::string tool_revert_last(AgentRole role);
  std::string tool_revert_all(AgentRole role);
  std::string tool_bash(const ToolCall& call);
  std::string tool_mutate(const ToolCall& call);
  std::string tool_run_variant(const ToolCall& call);
  std::string tool_run_probed(const ToolCall& call);
  std::string tool_check_vul();

  const InstanceManifest& manifest_;
  Workspace& workspace_;
  Sandbox& sandbox_;
  std::filesystem::path variant_dir_;
  std::string interpreter_cmd_;
  std::vector<Variant> order_;
  std::optional<PatchCandidate> submitted_;
};

/* ------------------------------------------------------------------ */
/* Phases                                                              */
/* ------------------------------------------------------------------ */

struct PhaseContext {
  const InstanceManifest* manifest = nullptr;
  Workspace* workspace = nullptr;
  Sandbox* sandbox = nullptr;
  AgentToolkit* toolkit = nullptr;
  ChatBackend* backend = nullptr;
  int step_budget = kDefaultStepBudget;
  /// System prompt overrides per agent; built-in defaults when absent.
  /// Prompt text is configuration, loaded from template files.
  std::map<AgentRole, std::string> prompts;
};

/// The built-in system prompt for one agent phase.
std::string default_prompt(AgentRole role);

struct MutatorResult {
  VariantSet set;
  std::string strategy_summary;  // the Mutator's end-of-phase message
  Transcript transcript;
};

/**
 * Differential variant generation: run the Mutator loop seeded with up to
 * two retrieved mutation skills, execute every variant, and apply the
 * ideal-pair gate with up to two retries. Exhaustion falls back to
 * single-execution analysis on the original PoC.
 */
MutatorResult mutator_phase(PhaseContext& ctx, const std::vector<MutationSkill>& skills,
                            const CarryOverData* carry_over, RoundState& round);

struct AnalyzerResult {
  RepairSpecification specification;
  std::vector<ProbeSpec> probe_specs;  // applied instrumentation (carry-over material)
  Transcript transcript;
};

/**
 * Three-phase contrastive analysis: fault-region exploration that nominates
 * probe specs, differential execution of all variants plus the original
 * under the same instrumentation, and specification inference. Carry-over
 * probes are re-applied before new ones; a build broken by instrumentation
 * gets one self-repair turn before degrading to a crash-frame spec. The
 * working tree is reverted to byte-pristine before returning.
 */
AnalyzerResult analyzer_phase(PhaseContext& ctx, const VariantSet& set,
                              const SanitizerReport& report, const CarryOverData* carry_over,
                              RoundState& round);

struct PatcherResult {
  PatchCandidate candidate;
  Transcript transcript;
};

/**
 * Patch generation under two verification gates (compile, re-execution).
 * Empty diffs and compile failures retry within the round (up to two); a
 * candidate that builds but still crashes ends the round for carry-over
 * refinement.
 */
PatcherResult patcher_phase(PhaseContext& ctx, const RepairSpecification& spec,
                            const std::vector<RepairSkill>& skills,
                            const CarryOverData* carry_over, RoundState& round);

}  // namespace contrafix
