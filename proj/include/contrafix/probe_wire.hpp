#pragma once

namespace contrafix {

// Probe wire format, bit-exact:
//   @@CONTRAFIX_PROBE@@ {"site":"<id>","file":"<path>","line":<n>,
//                        "phase":"<point|enter|exit>","state":{...}}\n
// emitted on the error stream. The guard token marks the injected macro
// preamble so it is inserted once per file and never survives into a diff.
inline constexpr const char* kProbeSentinel = "@@CONTRAFIX_PROBE@@";
inline constexpr const char* kProbeGuard = "CONTRAFIX_PROBE_GUARD";

}  // namespace contrafix
