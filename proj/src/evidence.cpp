#include "contrafix/evidence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

bool ProbeRunSet::contrastive() const {
  bool crash = false, safe = false;
  for (const auto& run : runs) {
    crash = crash || run.outcome == OutcomeClass::CrashSame;
    safe = safe || run.outcome == OutcomeClass::Safe;
  }
  return crash && safe;
}

/* ------------------------------------------------------------------ */
/* Value normalization                                                 */
/* ------------------------------------------------------------------ */

bool NormalizedValue::operator==(const NormalizedValue& other) const {
  if (domain != other.domain) return false;
  switch (domain) {
    case Domain::Number: return number == other.number;
    case Domain::Text: return text == other.text;
    default: return true;  // the two pointer points carry no payload
  }
}

bool NormalizedValue::operator<(const NormalizedValue& other) const {
  if (domain != other.domain) return domain < other.domain;
  switch (domain) {
    case Domain::Number: return number < other.number;
    case Domain::Text: return text < other.text;
    default: return false;
  }
}

NormalizedValue normalize_value(std::string_view raw) {
  NormalizedValue v;
  std::string s = trim(raw);
  std::string lower = to_lower(s);

  if (lower == "null" || lower == "nil" || lower == "(nil)" || lower == "nullptr") {
    v.domain = NormalizedValue::Domain::PointerNull;
    return v;
  }
  if (lower.size() > 2 && starts_with(lower, "0x") &&
      lower.find_first_not_of("0123456789abcdef", 2) == std::string::npos) {
    bool zero = lower.find_first_not_of("0", 2) == std::string::npos;
    v.domain = zero ? NormalizedValue::Domain::PointerNull
                    : NormalizedValue::Domain::PointerNonNull;
    return v;
  }
  if (!s.empty()) {
    char* end = nullptr;
    long double parsed = std::strtold(s.c_str(), &end);
    if (end && *end == '\0' && end != s.c_str() && std::isfinite((double)parsed)) {
      v.domain = NormalizedValue::Domain::Number;
      v.number = parsed;
      return v;
    }
  }
  v.domain = NormalizedValue::Domain::Text;
  v.text = s;
  return v;
}

/* ------------------------------------------------------------------ */
/* Observation collection                                              */
/* ------------------------------------------------------------------ */

ObservationSet collect_observations(const ProbeRunSet& runs) {
  ObservationSet set;
  std::map<std::pair<std::string, std::string>, KeyObservation> by_key;

  for (const auto& run : runs.runs) {
    bool crash = run.outcome == OutcomeClass::CrashSame;
    bool safe = run.outcome == OutcomeClass::Safe;
    if (!crash && !safe) continue;  // Abnormal / CrashOther contaminate the contrast
    if (crash) ++set.crash_runs;
    if (safe) ++set.safe_runs;

    std::map<std::pair<std::string, std::string>, std::string> finals;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& record : run.records) {
      for (const auto& [key, value] : record.state) {
        auto id = std::make_pair(record.site, key);
        auto& obs = by_key[id];
        if (obs.site.empty()) {
          obs.site = record.site;
          obs.key = key;
          obs.file = record.file;
          obs.line = record.line;
        }
        auto& all = crash ? obs.crash_all : obs.safe_all;
        if (std::find(all.begin(), all.end(), value) == all.end()) all.push_back(value);
        finals[id] = value;  // last record in run order wins
        seen.insert(id);
      }
    }
    for (const auto& id : seen) {
      auto& obs = by_key[id];
      if (crash) {
        ++obs.crash_reached;
        obs.crash_final.push_back(finals[id]);
      } else {
        ++obs.safe_reached;
        obs.safe_final.push_back(finals[id]);
      }
    }
  }

  for (auto& [id, obs] : by_key) set.observations.push_back(std::move(obs));
  return set;
}

std::string key_verdict_to_string(KeyVerdict v) {
  switch (v) {
    case KeyVerdict::Invariant: return "Invariant";
    case KeyVerdict::Divergent: return "Divergent";
    case KeyVerdict::Mixed: return "Mixed";
    case KeyVerdict::ReachabilityDivergent: return "ReachabilityDivergent";
  }
  return "Mixed";
}

namespace {

std::set<NormalizedValue> normalized_set(const std::vector<std::string>& values) {
  std::set<NormalizedValue> out;
  for (const auto& v : values) out.insert(normalize_value(v));
  return out;
}

bool disjoint(const std::set<NormalizedValue>& a, const std::set<NormalizedValue>& b) {
  for (const auto& v : a)
    if (b.count(v)) return false;
  return true;
}

}  // namespace

KeyVerdict classify_key(const KeyObservation& obs, int crash_runs, int safe_runs) {
  if (safe_runs == 0) return KeyVerdict::Mixed;  // single execution: no contrast
  if (obs.crash_reached == 0 && obs.safe_reached == 0) return KeyVerdict::Mixed;
  if (obs.crash_reached > 0 && obs.safe_reached == 0) return KeyVerdict::ReachabilityDivergent;
  if (obs.safe_reached > 0 && obs.crash_reached == 0 && crash_runs > 0)
    return KeyVerdict::ReachabilityDivergent;

  auto crash = normalized_set(obs.crash_final);
  auto safe = normalized_set(obs.safe_final);
  std::set<NormalizedValue> all = crash;
  all.insert(safe.begin(), safe.end());
  if (all.size() == 1) return KeyVerdict::Invariant;
  if (disjoint(crash, safe)) return KeyVerdict::Divergent;
  return KeyVerdict::Mixed;
}

long double BoundaryPredicate::margin() const {
  return orientation == Orientation::CrashAbove ? crash_bound - safe_bound
                                                : safe_bound - crash_bound;
}

std::optional<BoundaryPredicate> infer_boundary(const KeyObservation& obs) {
  if (obs.crash_final.empty() || obs.safe_final.empty()) return std::nullopt;

  std::vector<long double> crash, safe;
  for (const auto& raw : obs.crash_final) {
    auto v = normalize_value(raw);
    if (v.domain != NormalizedValue::Domain::Number) return std::nullopt;
    crash.push_back(v.number);
  }
  for (const auto& raw : obs.safe_final) {
    auto v = normalize_value(raw);
    if (v.domain != NormalizedValue::Domain::Number) return std::nullopt;
    safe.push_back(v.number);
  }

  long double crash_min = *std::min_element(crash.begin(), crash.end());
  long double crash_max = *std::max_element(crash.begin(), crash.end());
  long double safe_min = *std::min_element(safe.begin(), safe.end());
  long double safe_max = *std::max_element(safe.begin(), safe.end());

  BoundaryPredicate b;
  b.key = obs.key;
  if (safe_max < crash_min) {
    b.orientation = BoundaryPredicate::Orientation::CrashAbove;
    b.safe_bound = safe_max;
    b.crash_bound = crash_min;
    return b;
  }
  if (crash_max < safe_min) {
    b.orientation = BoundaryPredicate::Orientation::CrashBelow;
    b.safe_bound = safe_min;
    b.crash_bound = crash_max;
    return b;
  }
  return std::nullopt;  // the classes interleave
}

std::vector<CausalCandidate> rank_candidates(const ObservationSet& set,
                                             const SanitizerReport* report) {
  std::vector<CausalCandidate> out;
  for (const auto& obs : set.observations) {
    KeyVerdict verdict = classify_key(obs, set.crash_runs, set.safe_runs);
    if (verdict != KeyVerdict::Divergent && verdict != KeyVerdict::ReachabilityDivergent)
      continue;

    CausalCandidate c;
    c.site = obs.site;
    c.key = obs.key;
    c.file = obs.file;
    c.line = obs.line;
    c.verdict = verdict;
    if (verdict == KeyVerdict::Divergent) {
      c.boundary = infer_boundary(obs);
      if (c.boundary) c.margin = c.boundary->margin();
    }
    c.frame_dist =
        report ? frame_distance(*report, obs.file, obs.line) : kMaxFrameDistance;
    auto dedup = [](const std::vector<std::string>& values) {
      std::vector<std::string> out_values;
      for (const auto& v : values)
        if (std::find(out_values.begin(), out_values.end(), v) == out_values.end())
          out_values.push_back(v);
      return out_values;
    };
    c.crash_values = dedup(obs.crash_final);
    c.safe_values = dedup(obs.safe_final);
    out.push_back(std::move(c));
  }

  std::sort(out.begin(), out.end(), [](const CausalCandidate& a, const CausalCandidate& b) {
    bool a_div = a.verdict == KeyVerdict::Divergent;
    bool b_div = b.verdict == KeyVerdict::Divergent;
    if (a_div != b_div) return a_div;
    if (a.frame_dist != b.frame_dist) return a.frame_dist < b.frame_dist;
    if (a.margin != b.margin) return a.margin > b.margin;
    if (a.site != b.site) return a.site < b.site;
    return a.key < b.key;
  });
  return out;
}

/* ------------------------------------------------------------------ */
/* Specification composition                                           */
/* ------------------------------------------------------------------ */

std::string format_number(long double v) {
  if (v == std::floor((double)v) && std::fabs((double)v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld", (long long)v);
    return buf;
  }
  std::ostringstream out;
  out << (double)v;
  return out.str();
}

namespace {

std::string join_values(const std::vector<std::string>& values) {
  std::string out = "{";
  for (size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    out += values[i];
  }
  out += "}";
  return out;
}

std::string describe_candidate(const CausalCandidate& c, const VulnClass* cls) {
  std::ostringstream out;
  std::string failure = cls ? cls->canonical() : "the failure";

  if (c.boundary) {
    const auto& b = *c.boundary;
    std::string safe_v = format_number(b.safe_bound);
    std::string crash_v = format_number(b.crash_bound);
    if (b.orientation == BoundaryPredicate::Orientation::CrashAbove)
      out << "`" << c.key << "` must not exceed " << safe_v << ". Evidence: " << c.key << "="
          << safe_v << " stays in bounds; " << c.key << "=" << crash_v << " triggers "
          << failure << ".";
    else
      out << "`" << c.key << "` must not fall below " << safe_v << ". Evidence: " << c.key
          << "=" << safe_v << " stays in bounds; " << c.key << "=" << crash_v << " triggers "
          << failure << ".";
  } else if (c.verdict == KeyVerdict::ReachabilityDivergent) {
    if (c.safe_values.empty())
      out << "site `" << c.site << "` is reached only in crashing runs; the path reaching "
             "it must be guarded.";
    else
      out << "site `" << c.site << "` is reached only in safe runs; crashing runs bypass it.";
  } else {
    // Categorical divergence; null/non-null gets the pointer phrasing.
    bool crash_null = !c.crash_values.empty();
    for (const auto& v : c.crash_values)
      crash_null = crash_null &&
                   normalize_value(v).domain == NormalizedValue::Domain::PointerNull;
    if (crash_null)
      out << "`" << c.key << "` must be non-null before use. Evidence: crashing runs observe "
          << c.key << "=null; safe runs observe " << c.key << "="
          << join_values(c.safe_values) << ".";
    else
      out << "`" << c.key << "` separates the outcomes. Evidence: crashing runs end with "
          << c.key << "=" << join_values(c.crash_values) << "; safe runs end with " << c.key
          << "=" << join_values(c.safe_values) << ".";
  }

  if (c.verdict == KeyVerdict::Divergent)
    out << " Observed final values - crashing: " << join_values(c.crash_values)
        << "; safe: " << join_values(c.safe_values) << ".";
  return out.str();
}

constexpr int kFallbackLineRadius = 10;

}  // namespace

RepairSpecification compose_specification(const std::vector<CausalCandidate>& candidates,
                                          const SanitizerReport* report, SpecMode mode) {
  RepairSpecification spec;
  spec.mode = mode;
  spec.candidates = candidates;

  if (!candidates.empty()) {
    const auto& top = candidates.front();
    spec.file = top.file;
    spec.line_begin = std::max(1, top.line - kFallbackLineRadius);
    spec.line_end = top.line + kFallbackLineRadius;
    spec.function = "unknown";
    if (report) {
      int idx = frame_distance(*report, top.file, top.line);
      if (idx != kMaxFrameDistance && !report->frames.empty()) {
        for (const auto& frame : report->frames)
          if (frame.index == idx && !frame.function.empty()) spec.function = frame.function;
      }
    }
    const VulnClass* cls = report ? &report->error_class : nullptr;
    std::ostringstream text;
    text << "Safety invariant: " << describe_candidate(top, cls);
    if (cls) text << " Expected failure class: " << cls->canonical() << ".";
    spec.machine_description = text.str();
    spec.description = spec.machine_description;
    if (spec.file.empty() && report) {
      // Probe records carried no usable location; fall back to the crash frame.
      for (const auto& frame : report->frames) {
        if (frame.file.empty() || frame.line <= 0) continue;
        spec.file = frame.file;
        spec.function = frame.function.empty() ? "unknown" : frame.function;
        spec.line_begin = std::max(1, frame.line - kFallbackLineRadius);
        spec.line_end = frame.line + kFallbackLineRadius;
        break;
      }
    }
    if (!spec.file.empty()) return spec;
  }

  // Crash-frame fallback: no candidate carried a location.
  if (report) {
    for (const auto& frame : report->frames) {
      if (frame.file.empty() || frame.line <= 0) continue;
      spec.file = frame.file;
      spec.function = frame.function.empty() ? "unknown" : frame.function;
      spec.line_begin = std::max(1, frame.line - kFallbackLineRadius);
      spec.line_end = frame.line + kFallbackLineRadius;
      std::ostringstream text;
      text << "Program triggers " << report->error_class.canonical() << " at " << spec.file
           << ":" << frame.line << " in " << spec.function << ".";
      if (mode == SpecMode::SingleExecution)
        text << " Single-execution analysis: no contrastive evidence is available; derive "
                "the invariant from the crash site.";
      else
        text << " No divergent probe evidence was found; derive the invariant from the "
                "crash site.";
      spec.machine_description = text.str();
      spec.description = spec.machine_description;
      return spec;
    }
  }
  throw Error("NoLocation", "no causal candidate and no resolvable crash frame");
}

std::string RepairSpecification::to_text() const {
  std::ostringstream out;
  out << "Location: " << file << ":" << function << ", lines " << line_begin << "-"
      << line_end << "\n";
  out << "Description: " << description << "\n";
  if (description != machine_description)
    out << "Machine evidence: " << machine_description << "\n";
  if (!candidates.empty()) {
    out << "Causal candidates (ranked):\n";
    for (const auto& c : candidates) {
      out << "  - " << c.site << "/" << c.key << " [" << key_verdict_to_string(c.verdict)
          << "] crashing=" << join_values(c.crash_values)
          << " safe=" << join_values(c.safe_values);
      if (c.boundary)
        out << " boundary=("
            << (c.boundary->orientation == BoundaryPredicate::Orientation::CrashAbove
                    ? "crash_above"
                    : "crash_below")
            << " " << format_number(c.boundary->safe_bound) << ", "
            << format_number(c.boundary->crash_bound) << ")";
      out << "\n";
    }
  }
  return out.str();
}

std::string RepairSpecification::to_json() const {
  nlohmann::json doc;
  doc["location"] = {{"file", file},
                     {"function", function},
                     {"line_begin", line_begin},
                     {"line_end", line_end}};
  doc["description"] = description;
  doc["machine_description"] = machine_description;
  doc["mode"] = mode == SpecMode::Contrastive ? "contrastive" : "single_execution";
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : candidates) {
    nlohmann::json jc = {{"site", c.site},
                         {"key", c.key},
                         {"verdict", key_verdict_to_string(c.verdict)},
                         {"margin", (double)c.margin},
                         {"frame_dist", c.frame_dist},
                         {"crash_values", c.crash_values},
                         {"safe_values", c.safe_values}};
    if (c.boundary) {
      jc["boundary"] = {
          {"orientation",
           c.boundary->orientation == BoundaryPredicate::Orientation::CrashAbove
               ? "crash_above"
               : "crash_below"},
          {"safe_bound", (double)c.boundary->safe_bound},
          {"crash_bound", (double)c.boundary->crash_bound}};
    }
    cands.push_back(std::move(jc));
  }
  doc["candidates"] = std::move(cands);
  return doc.dump(2);
}

}  // namespace contrafix
