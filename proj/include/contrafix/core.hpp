#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "contrafix/util.hpp"

namespace contrafix {

/* ------------------------------------------------------------------ */
/* Vulnerability classes                                               */
/* ------------------------------------------------------------------ */

enum class VulnLabel {
  HeapBufferOverflow,
  StackBufferOverflow,
  NullPointerDeref,
  UseAfterFree,
  MemoryLeak,
  Segv,
  Other,
};

/**
 * Sanitizer error class. The six named members mirror the sanitizer error
 * classes the benchmarks report; anything else is carried verbatim (lowercased)
 * in `other`.
 */
struct VulnClass {
  VulnLabel label = VulnLabel::Other;
  std::string other;  // set only when label == Other; non-empty, lowercase

  bool operator==(const VulnClass&) const = default;

  /// Canonical text form, e.g. "heap-buffer-overflow".
  std::string canonical() const;

  static VulnClass heap_buffer_overflow() { return {VulnLabel::HeapBufferOverflow, {}}; }
  static VulnClass stack_buffer_overflow() { return {VulnLabel::StackBufferOverflow, {}}; }
  static VulnClass null_pointer_deref() { return {VulnLabel::NullPointerDeref, {}}; }
  static VulnClass use_after_free() { return {VulnLabel::UseAfterFree, {}}; }
  static VulnClass memory_leak() { return {VulnLabel::MemoryLeak, {}}; }
  static VulnClass segv() { return {VulnLabel::Segv, {}}; }
};

/**
 * Map a raw label (benchmark metadata or a sanitizer banner phrase) to its
 * class. Matching is case-insensitive and knows the common sanitizer
 * spellings ("SEGV on unknown address", "heap-use-after-free",
 * "LeakSanitizer: detected memory leaks", ...). Unmatched labels map to
 * Other with the normalized text preserved.
 *
 * Throws Error("EmptyLabel") when the label is empty after trimming.
 */
VulnClass vuln_class_from_label(std::string_view label);

/// All six named classes, in benchmark table order.
const std::vector<VulnClass>& all_vuln_classes();

/* ------------------------------------------------------------------ */
/* Agents                                                              */
/* ------------------------------------------------------------------ */

enum class AgentRole { Mutator, Analyzer, Patcher };

std::string agent_role_to_string(AgentRole role);
AgentRole agent_role_from_string(std::string_view s);

/* ------------------------------------------------------------------ */
/* Instance manifests                                                  */
/* ------------------------------------------------------------------ */

enum class Language { CCpp, Go, Python, Javascript, OtherLang };

Language language_from_string(std::string_view s);
std::string language_to_string(Language lang);

struct CommandTemplates {
  std::string build;
  std::string run_poc;                 // must contain exactly one {input}
  std::optional<std::string> verify;
  int timeout_build_s = 600;
  int timeout_run_s = 60;
};

/**
 * One vulnerability task. A manifest is a single JSON document; batch jobs
 * are a directory of manifests. Immutable after parse.
 */
struct InstanceManifest {
  std::string instance_id;
  std::string repo_id;
  std::string workspace_root;
  std::string poc_path;  // relative to workspace_root
  VulnClass expected_class;
  Date disclosure_date;
  Language language = Language::CCpp;
  CommandTemplates commands;
  std::optional<std::string> price_table_ref;
  std::map<std::string, std::string> env;  // extra entries for executed commands
};

/**
 * Parse and validate a manifest document.
 *
 * Errors: MalformedManifest (not valid JSON / wrong shape), MissingField,
 * InvalidDate, MissingPoc (poc_path absent under workspace_root).
 */
InstanceManifest parse_instance_manifest(std::string_view bytes);

/* ------------------------------------------------------------------ */
/* Round bookkeeping                                                   */
/* ------------------------------------------------------------------ */

constexpr int kMaxRounds = 3;
constexpr int kMaxMutatorRetries = 2;
constexpr int kMaxPatcherRetries = 2;

// Forward declarations; the full types live with their owning modules.
struct UnifiedDiff;
struct RepairSpecification;
struct ProbeSpec;

/**
 * The three carry-over evidence items forwarded into a refinement round:
 * the failed patch with its failure output, the previous repair
 * specification, and the previous probe instrumentation.
 */
struct CarryOverData {
  std::string failed_patch_text;
  std::vector<std::string> failed_patch_files;
  std::string failure_output;
  std::string failure_kind;  // "persists" | "new crash type" | "site shifted" | "abnormal"
  std::string previous_spec_text;
  std::string previous_probe_specs_json;
};

struct RoundState {
  int round_index = 1;  // 1..kMaxRounds
  int mutator_retries_used = 0;
  int patcher_retries_used = 0;
  bool fallback_single_execution = false;
  std::optional<CarryOverData> carry_over;
};

}  // namespace contrafix
