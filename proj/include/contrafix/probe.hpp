#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "contrafix/core.hpp"
#include "contrafix/probe_wire.hpp"
#include "contrafix/sandbox.hpp"
#include "contrafix/workspace.hpp"

namespace contrafix {

enum class ProbePosition { Before, After, Wrap };
enum class ProbeKind { Point, Span };
enum class ProbePhase { Point, Enter, Exit };
enum class ValueKind { Integer, Pointer, Text };

struct ProbeExpression {
  std::string name;
  std::string source;  // expression in the target language
  ValueKind kind = ValueKind::Integer;
};

/**
 * One state probe attached to an exact source anchor. Point probes snapshot
 * a single location; span probes bracket the anchor with entry and exit
 * snapshots (kind == Span iff position == Wrap).
 */
struct ProbeSpec {
  std::string site;
  std::string path;    // workspace-relative
  std::string anchor;  // exact source text, unique within the file
  ProbePosition position = ProbePosition::Before;
  ProbeKind kind = ProbeKind::Point;
  std::vector<ProbeExpression> expressions;
};

struct ProbeRecord {
  std::string site;
  std::string file;
  int line = 0;
  ProbePhase phase = ProbePhase::Point;
  std::vector<std::pair<std::string, std::string>> state;  // declaration order
  int run_seq = 0;
};

struct ProbeStream {
  std::vector<ProbeRecord> records;
  int malformed_count = 0;
  bool truncated = false;  // record cap hit; the tail is kept
};

struct RenderedProbe {
  std::string point_or_enter;           // single snippet for point probes
  std::optional<std::string> exit_snippet;  // present for span probes
  std::string preamble;                 // per-file macro block (c_cpp only)
};

/// Records kept per run; ring-buffer semantics keep the crash-adjacent tail.
constexpr int kProbeRecordCap = 10000;

/**
 * Render a probe to target-language snippet(s) emitting the wire format on
 * the error stream. For c_cpp the snippet calls the PROBE_* macro family,
 * whose definitions (the preamble) are injected once per file under the
 * guard token. `anchor_line` is embedded literally for languages without a
 * __LINE__ equivalent; c_cpp resolves location at compile time.
 *
 * Error: UnsupportedLanguage.
 */
RenderedProbe render_probe(const ProbeSpec& spec, Language language, int anchor_line = 0);

/**
 * Inject rendered snippets relative to each spec's anchor via
 * str_replace_edit under the analyzer role. All-or-nothing: a failing spec
 * reverts the edits already applied by this call before the error (tagged
 * with the offending site) propagates.
 */
std::vector<EditRecord> instrument(Workspace& workspace, const std::vector<ProbeSpec>& specs,
                                   Language language);

/// Extract records from sentinel-prefixed lines. Malformed payloads are
/// skipped and counted; only the last kProbeRecordCap records survive.
ProbeStream parse_probe_stream(std::string_view text);

struct ProbeRun {
  std::string variant_id;  // "original" for the instance PoC
  OutcomeClass outcome = OutcomeClass::Abnormal;
  std::vector<ProbeRecord> records;
  std::optional<SanitizerReport> report;
};

struct ProbeRunOutput {
  std::vector<ProbeRun> runs;
  int malformed_records = 0;
};

/**
 * Build once, then execute each listed input plus the original PoC under the
 * current instrumentation, pairing each run's outcome with its parsed probe
 * records. Error: BuildFailedAfterInstrumentation (carries build output).
 */
ProbeRunOutput run_probed(Sandbox& sandbox,
                          const std::vector<std::pair<std::string, std::string>>& variants,
                          const std::string& original_poc_path);

/// Serialize specs for carry-over evidence and trace files.
std::string probe_specs_to_json(const std::vector<ProbeSpec>& specs);
std::vector<ProbeSpec> probe_specs_from_json(const std::string& json_text);

}  // namespace contrafix
