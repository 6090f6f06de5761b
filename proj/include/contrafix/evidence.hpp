#pragma once

#include <optional>
#include <string>
#include <vector>

#include "contrafix/core.hpp"
#include "contrafix/probe.hpp"
#include "contrafix/sanitizer.hpp"

namespace contrafix {

/**
 * Paired probe outputs for contrastive analysis. Contrastive mode requires
 * at least one CrashSame run and at least one Safe run; otherwise the
 * engine degrades to single-execution analysis where no causal contrast
 * exists.
 */
struct ProbeRunSet {
  std::vector<ProbeRun> runs;
  VulnClass expected_class;

  bool contrastive() const;
};

/* ------------------------------------------------------------------ */
/* Value normalization                                                 */
/* ------------------------------------------------------------------ */

/**
 * Observed values are compared in a small abstract domain before any
 * disjointness test: decimal numerics compare numerically, pointer-shaped
 * values ("0x..." hex and the null token) collapse to {null, non-null}
 * because raw addresses vary across runs and would fake divergence, and
 * everything else compares as trimmed text.
 */
struct NormalizedValue {
  enum class Domain { Number, PointerNull, PointerNonNull, Text };
  Domain domain = Domain::Text;
  long double number = 0;  // Domain::Number only
  std::string text;        // Domain::Text only

  bool operator==(const NormalizedValue& other) const;
  bool operator<(const NormalizedValue& other) const;
};

NormalizedValue normalize_value(std::string_view raw);

/* ------------------------------------------------------------------ */
/* Observations                                                        */
/* ------------------------------------------------------------------ */

/// Per-(site, key) aggregation across one run set. Final value per run is
/// the last record for that site in run order (the crash-adjacent state);
/// the full value sets are kept for the specification text.
struct KeyObservation {
  std::string site;
  std::string key;
  std::string file;  // site location, for frame-distance ranking
  int line = 0;
  std::vector<std::string> crash_final;  // one entry per CrashSame run that reached the site
  std::vector<std::string> safe_final;
  std::vector<std::string> crash_all;  // deduplicated observed values
  std::vector<std::string> safe_all;
  int crash_reached = 0;
  int safe_reached = 0;
};

struct ObservationSet {
  std::vector<KeyObservation> observations;  // sorted by (site, key)
  int crash_runs = 0;
  int safe_runs = 0;
};

/// Aggregate records per (site, key). Abnormal and CrashOther runs
/// contaminate the contrast and are excluded from both classes.
ObservationSet collect_observations(const ProbeRunSet& runs);

enum class KeyVerdict { Invariant, Divergent, Mixed, ReachabilityDivergent };

std::string key_verdict_to_string(KeyVerdict v);

/**
 * Verdict for one key:
 *  - no safe runs (single-execution): Mixed, no contrast exists;
 *  - reached in only one class while the other has runs: ReachabilityDivergent;
 *  - one identical final value across all runs of both classes: Invariant;
 *  - disjoint crash/safe final-value sets (normalized): Divergent;
 *  - otherwise Mixed.
 */
KeyVerdict classify_key(const KeyObservation& obs, int crash_runs, int safe_runs);

struct BoundaryPredicate {
  enum class Orientation { CrashAbove, CrashBelow };
  std::string key;
  Orientation orientation = Orientation::CrashAbove;
  long double safe_bound = 0;   // safe_max (CrashAbove) / safe_min (CrashBelow)
  long double crash_bound = 0;  // crash_min (CrashAbove) / crash_max (CrashBelow)

  long double margin() const;
};

/**
 * Numeric threshold separating every safe final value from every crashing
 * one. Absent when any final value is non-numeric or when the two classes
 * interleave.
 */
std::optional<BoundaryPredicate> infer_boundary(const KeyObservation& obs);

struct CausalCandidate {
  std::string site;
  std::string key;
  std::string file;
  int line = 0;
  KeyVerdict verdict = KeyVerdict::Divergent;  // Divergent or ReachabilityDivergent
  std::optional<BoundaryPredicate> boundary;
  long double margin = 0;  // 0 for categorical divergence
  int frame_dist = kMaxFrameDistance;
  std::vector<std::string> crash_values;  // evidence text (finals, deduplicated)
  std::vector<std::string> safe_values;
};

/**
 * Divergent and ReachabilityDivergent keys, ordered Divergent first, then
 * crash-frame distance ascending, numeric margin descending, (site, key)
 * lexicographic. Invariant and Mixed keys are ruled out as incidental.
 */
std::vector<CausalCandidate> rank_candidates(const ObservationSet& set,
                                             const SanitizerReport* report);

/* ------------------------------------------------------------------ */
/* Repair specification                                                */
/* ------------------------------------------------------------------ */

enum class SpecMode { Contrastive, SingleExecution };

/**
 * The two-field artifact handed to the Patcher: a Location (file, function,
 * line range) and a Description stating the safety invariant with the
 * contrastive evidence. The deterministic machine_description is always
 * kept even when an LLM rewrites the prose; the candidate list is never
 * replaced.
 */
struct RepairSpecification {
  std::string file;
  std::string function;
  int line_begin = 0;
  int line_end = 0;
  std::string description;
  std::string machine_description;
  std::vector<CausalCandidate> candidates;
  SpecMode mode = SpecMode::Contrastive;

  std::string to_text() const;
  std::string to_json() const;
};

/**
 * Location and description from the top candidate when present, else from
 * the innermost resolvable crash frame with a +/-10 line range.
 * Error: NoLocation (no candidate and no resolvable frame).
 */
RepairSpecification compose_specification(const std::vector<CausalCandidate>& candidates,
                                          const SanitizerReport* report, SpecMode mode);

/// Integral values print without a decimal point ("63", not "63.0").
std::string format_number(long double v);

}  // namespace contrafix
