#pragma once

// Brute-force divergence oracle. Works straight off the raw runs (no reuse
// of the evidence pipeline's aggregation) so it can referee classify_key
// and infer_boundary: enumerate per-class final values by scanning records,
// test disjointness pairwise, and take extrema by linear search. Shares
// only normalize_value, which defines the value lattice itself.

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "contrafix/evidence.hpp"

namespace contrafix::testing {

struct OracleResult {
  KeyVerdict verdict = KeyVerdict::Mixed;
  std::optional<BoundaryPredicate> boundary;
};

inline std::map<std::pair<std::string, std::string>, OracleResult> oracle_classify(
    const ProbeRunSet& set) {
  int crash_runs = 0, safe_runs = 0;
  for (const auto& run : set.runs) {
    if (run.outcome == OutcomeClass::CrashSame) ++crash_runs;
    if (run.outcome == OutcomeClass::Safe) ++safe_runs;
  }

  // Every (site, key) seen in a contributing run.
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& run : set.runs) {
    if (run.outcome != OutcomeClass::CrashSame && run.outcome != OutcomeClass::Safe)
      continue;
    for (const auto& record : run.records)
      for (const auto& [key, value] : record.state) {
        std::pair<std::string, std::string> id{record.site, key};
        bool known = false;
        for (const auto& k : keys) known = known || k == id;
        if (!known) keys.push_back(id);
      }
  }

  std::map<std::pair<std::string, std::string>, OracleResult> out;
  for (const auto& id : keys) {
    // Final value per run: scan forward, last write wins.
    std::vector<std::string> crash_finals, safe_finals;
    for (const auto& run : set.runs) {
      bool crash = run.outcome == OutcomeClass::CrashSame;
      bool safe = run.outcome == OutcomeClass::Safe;
      if (!crash && !safe) continue;
      bool seen = false;
      std::string final_value;
      for (const auto& record : run.records) {
        if (record.site != id.first) continue;
        for (const auto& [key, value] : record.state)
          if (key == id.second) {
            final_value = value;
            seen = true;
          }
      }
      if (!seen) continue;
      (crash ? crash_finals : safe_finals).push_back(final_value);
    }

    OracleResult result;
    if (safe_runs == 0) {
      result.verdict = KeyVerdict::Mixed;
    } else if (!crash_finals.empty() && safe_finals.empty()) {
      result.verdict = KeyVerdict::ReachabilityDivergent;
    } else if (!safe_finals.empty() && crash_finals.empty() && crash_runs > 0) {
      result.verdict = KeyVerdict::ReachabilityDivergent;
    } else if (crash_finals.empty() && safe_finals.empty()) {
      result.verdict = KeyVerdict::Mixed;
    } else {
      // Single identical value across all runs of both classes?
      bool all_same = true;
      NormalizedValue first = normalize_value(crash_finals.empty() ? safe_finals[0]
                                                                   : crash_finals[0]);
      for (const auto& v : crash_finals) all_same = all_same && normalize_value(v) == first;
      for (const auto& v : safe_finals) all_same = all_same && normalize_value(v) == first;
      if (all_same) {
        result.verdict = KeyVerdict::Invariant;
      } else {
        bool overlap = false;
        for (const auto& c : crash_finals)
          for (const auto& s : safe_finals)
            overlap = overlap || normalize_value(c) == normalize_value(s);
        result.verdict = overlap ? KeyVerdict::Mixed : KeyVerdict::Divergent;
      }
    }

    if (result.verdict == KeyVerdict::Divergent) {
      bool numeric = !crash_finals.empty() && !safe_finals.empty();
      for (const auto& v : crash_finals)
        numeric = numeric &&
                  normalize_value(v).domain == NormalizedValue::Domain::Number;
      for (const auto& v : safe_finals)
        numeric = numeric &&
                  normalize_value(v).domain == NormalizedValue::Domain::Number;
      if (numeric) {
        long double crash_min = normalize_value(crash_finals[0]).number;
        long double crash_max = crash_min;
        for (const auto& v : crash_finals) {
          long double x = normalize_value(v).number;
          if (x < crash_min) crash_min = x;
          if (x > crash_max) crash_max = x;
        }
        long double safe_min = normalize_value(safe_finals[0]).number;
        long double safe_max = safe_min;
        for (const auto& v : safe_finals) {
          long double x = normalize_value(v).number;
          if (x < safe_min) safe_min = x;
          if (x > safe_max) safe_max = x;
        }
        if (safe_max < crash_min) {
          BoundaryPredicate b;
          b.key = id.second;
          b.orientation = BoundaryPredicate::Orientation::CrashAbove;
          b.safe_bound = safe_max;
          b.crash_bound = crash_min;
          result.boundary = b;
        } else if (crash_max < safe_min) {
          BoundaryPredicate b;
          b.key = id.second;
          b.orientation = BoundaryPredicate::Orientation::CrashBelow;
          b.safe_bound = safe_min;
          b.crash_bound = crash_max;
          result.boundary = b;
        }
      }
    }
    out[id] = result;
  }
  return out;
}

/// Randomized ProbeRunSet generator shared by the property suites:
/// 2-6 runs, 1-8 keys, integer/pointer/text values.
inline ProbeRunSet random_run_set(std::mt19937& rng) {
  auto pick = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  ProbeRunSet set;
  set.expected_class = VulnClass::heap_buffer_overflow();

  int n_keys = pick(1, 8);
  std::vector<std::pair<std::string, std::string>> keys;
  for (int k = 0; k < n_keys; ++k)
    keys.emplace_back("s" + std::to_string(pick(0, 2)), "k" + std::to_string(k));

  auto random_value = [&]() -> std::string {
    switch (pick(0, 3)) {
      case 0: return std::to_string(pick(-5, 70));
      case 1: return pick(0, 1) ? "null" : "0x55e1a0b2c3d4";
      case 2: return pick(0, 1) ? "alpha" : "beta";
      default: return std::to_string(pick(0, 9)) + "." + std::to_string(pick(0, 9));
    }
  };

  int n_runs = pick(2, 6);
  for (int r = 0; r < n_runs; ++r) {
    ProbeRun run;
    run.variant_id = "v" + std::to_string(r);
    switch (pick(0, 5)) {
      case 0: run.outcome = OutcomeClass::Abnormal; break;
      case 1: run.outcome = OutcomeClass::CrashOther; break;
      case 2:
      case 3: run.outcome = OutcomeClass::CrashSame; break;
      default: run.outcome = OutcomeClass::Safe; break;
    }
    int seq = 0;
    for (const auto& [site, key] : keys) {
      int records = pick(0, 3);  // 0 = this run never reaches the site
      for (int i = 0; i < records; ++i) {
        ProbeRecord record;
        record.site = site;
        record.file = "src/app.c";
        record.line = 20;
        record.phase = ProbePhase::Point;
        record.state.emplace_back(key, random_value());
        record.run_seq = seq++;
        run.records.push_back(std::move(record));
      }
    }
    set.runs.push_back(std::move(run));
  }
  return set;
}

}  // namespace contrafix::testing
