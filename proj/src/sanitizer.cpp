#include "contrafix/sanitizer.hpp"

#include <regex>

#include "contrafix/error.hpp"

namespace contrafix {

namespace {

struct BannerHit {
  size_t line_index;
  std::string class_phrase;
  std::optional<std::string> address;
};

// "==1234==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x6020..."
// "==1234==ERROR: LeakSanitizer: detected memory leaks"
const std::regex kBannerRe(
    R"(==\d+==\s*ERROR:\s*(\w+Sanitizer):\s*(.+))");

// "    #0 0x5578bc26921e in main /tmp/asanfix/heap.c:2"
const std::regex kFrameRe(R"(^\s*#(\d+)\s+0x[0-9a-fA-F]+\s+(.*)$)");

// "  File "/src/pkg/mod.py", line 42, in handler"
const std::regex kPyFrameRe(R"px(^\s*File "([^"]+)", line (\d+), in (\S+))px");

std::optional<std::string> extract_address(const std::string& line) {
  size_t at = line.find("address");
  if (at == std::string::npos) return std::nullopt;
  static const std::regex hex_re(R"(0x[0-9a-fA-F]+)");
  std::smatch m;
  std::string rest = line.substr(at);
  if (!std::regex_search(rest, m, hex_re)) return std::nullopt;
  return to_lower(m.str(0));
}

bool is_banner(const std::string& line, BannerHit* hit) {
  std::smatch m;
  if (!std::regex_search(line, m, kBannerRe)) return false;
  if (hit) {
    hit->class_phrase = m.str(2);
    // Trim the detail after the class token for "X on address 0x..." banners.
    size_t cut = hit->class_phrase.find(" on address ");
    if (cut != std::string::npos) hit->class_phrase.resize(cut);
    hit->class_phrase = trim(hit->class_phrase);
    hit->address = extract_address(line);
  }
  return true;
}

/// Parse the remainder of a frame line ("in func /path/file.c:12:3" or
/// "in _start (/bin/app+0x1104)" or "(/lib/libc.so.6+0x29d8f)").
void parse_frame_rest(std::string rest, StackFrame& frame) {
  // clang appends " (BuildId: ...)"; drop it.
  static const std::regex buildid_re(R"(\s*\(BuildId:[^)]*\)\s*$)");
  rest = std::regex_replace(rest, buildid_re, "");
  rest = trim(rest);

  if (starts_with(rest, "in ")) rest = trim(rest.substr(3));

  // Module-only location: "func (/path/module+0xoffset)" or bare "(module+0x..)".
  static const std::regex module_re(R"(^(.*?)\s*\([^()]*\+0x[0-9a-fA-F]+\)$)");
  std::smatch m;
  if (std::regex_match(rest, m, module_re)) {
    frame.function = trim(m.str(1));
    return;
  }

  // Source location is the last whitespace-separated token: file:line[:col].
  size_t sp = rest.find_last_of(" \t");
  std::string loc = (sp == std::string::npos) ? rest : rest.substr(sp + 1);
  static const std::regex loc_re(R"(^(.+?):(\d+)(?::\d+)?$)");
  if (std::regex_match(loc, m, loc_re)) {
    frame.file = m.str(1);
    frame.line = std::stoi(m.str(2));
    frame.function = (sp == std::string::npos) ? "" : trim(rest.substr(0, sp));
  } else {
    frame.function = rest;  // no recognizable location; name only
  }
}

std::vector<StackFrame> collect_frames(const std::vector<std::string>& lines,
                                       size_t banner_index) {
  std::vector<StackFrame> frames;
  for (size_t i = banner_index + 1; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    std::smatch m;
    if (std::regex_match(line, m, kFrameRe)) {
      StackFrame f;
      f.index = std::stoi(m.str(1));
      parse_frame_rest(m.str(2), f);
      frames.push_back(std::move(f));
      continue;
    }
    if (!frames.empty()) break;  // end of the first stack
    // Still scanning for the first frame; give up at the next report.
    if (is_banner(line, nullptr) || starts_with(trim(line), "SUMMARY:")) break;
  }
  return frames;
}

}  // namespace

std::optional<SanitizerReport> parse_report(std::string_view text) {
  auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    BannerHit hit;
    if (!is_banner(lines[i], &hit)) continue;

    SanitizerReport report;
    report.error_class = vuln_class_from_label(hit.class_phrase);
    report.fault_address = hit.address;
    report.frames = collect_frames(lines, i);
    report.raw_text = std::string(text);

    bool complete = report.error_class.label == VulnLabel::MemoryLeak ||
                    !report.frames.empty();
    if (complete) return report;
    // Incomplete (non-leak banner without a stack); try the next banner.
  }
  return std::nullopt;
}

SanitizerReport synthesize_test_report(const VulnClass& expected, std::string_view output) {
  SanitizerReport report;
  report.error_class = expected;
  report.raw_text = std::string(output);
  report.synthesized = true;

  // Python-style tracebacks list the innermost frame last.
  std::vector<StackFrame> frames;
  for (const auto& line : split_lines(output)) {
    std::smatch m;
    if (std::regex_search(line, m, kPyFrameRe)) {
      StackFrame f;
      f.file = m.str(1);
      f.line = std::stoi(m.str(2));
      f.function = m.str(3);
      frames.push_back(std::move(f));
    }
  }
  for (size_t i = 0; i < frames.size(); ++i) {
    frames[i].index = static_cast<int>(frames.size() - 1 - i);
  }
  report.frames.assign(frames.rbegin(), frames.rend());
  return report;
}

bool same_error_class(const SanitizerReport& report, const VulnClass& expected) {
  return report.error_class == expected;
}

namespace {

bool file_matches(std::string_view frame_file, std::string_view probe_file) {
  if (frame_file.empty() || probe_file.empty()) return false;
  if (frame_file == probe_file) return true;
  auto suffix_of = [](std::string_view whole, std::string_view tail) {
    return whole.size() > tail.size() &&
           whole.substr(whole.size() - tail.size()) == tail &&
           whole[whole.size() - tail.size() - 1] == '/';
  };
  return suffix_of(frame_file, probe_file) || suffix_of(probe_file, frame_file);
}

}  // namespace

int frame_distance(const SanitizerReport& report, std::string_view file, int line) {
  for (const auto& frame : report.frames) {
    if (!file_matches(frame.file, file)) continue;
    if (frame.line == 0) return frame.index;  // unknown line: match by file
    if (std::abs(frame.line - line) <= 8) return frame.index;
  }
  return kMaxFrameDistance;
}

}  // namespace contrafix
