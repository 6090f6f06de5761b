#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "contrafix/core.hpp"

namespace contrafix {

struct StackFrame {
  int index = 0;     // 0 = innermost
  std::string function;
  std::string file;  // empty when only a module address is known
  int line = 0;      // 0 when unknown
};

struct SanitizerReport {
  VulnClass error_class;
  std::optional<std::string> fault_address;  // lowercase hex, "0x..."
  std::vector<StackFrame> frames;
  std::string raw_text;
  bool synthesized = false;  // true for test-driven adapter reports
};

/// No frame within this window of the probe location.
constexpr int kMaxFrameDistance = 0x7fffffff;

/**
 * Extract the first complete sanitizer report from captured program output:
 * the error class from the banner line, the faulting address when present,
 * and the first stack trace that follows. Returns nullopt when no
 * recognizable banner is found. A banner for a non-leak class with no
 * frames is treated as incomplete and the scan continues.
 */
std::optional<SanitizerReport> parse_report(std::string_view text);

/**
 * Test-driven adapter (benchmarks without sanitizers): a failing verify run
 * is wrapped in a report carrying the manifest's expected class. Frames are
 * recovered from a Python-style traceback when one is recognizable.
 */
SanitizerReport synthesize_test_report(const VulnClass& expected, std::string_view output);

/// True iff the report's class equals `expected` under label normalization.
bool same_error_class(const SanitizerReport& report, const VulnClass& expected);

/**
 * Index of the innermost frame whose file matches `file` and whose line is
 * within +/-8 of `line`; kMaxFrameDistance when none matches. Frames with
 * unknown lines match by file alone.
 */
int frame_distance(const SanitizerReport& report, std::string_view file, int line);

}  // namespace contrafix
