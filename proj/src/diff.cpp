#include "contrafix/diff.hpp"

#include <algorithm>
#include <unordered_map>

#include "contrafix/error.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

namespace {

/// File body split into lines, remembering whether a trailing newline existed.
struct LineView {
  std::vector<std::string> lines;
  bool trailing_newline = true;

  explicit LineView(const std::string& content) {
    if (content.empty()) {
      trailing_newline = true;  // empty file has no dangling last line
      return;
    }
    lines = split_lines(content);
    trailing_newline = content.back() == '\n';
  }
};

enum class OpKind { Keep, Del, Ins };

struct DiffOp {
  OpKind kind;
  size_t a;  // index into old lines (Keep/Del)
  size_t b;  // index into new lines (Keep/Ins)
};

/// Myers O(ND) shortest edit script over interned line ids.
std::vector<DiffOp> myers(const std::vector<int>& a, const std::vector<int>& b) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  const int max_d = n + m;
  std::vector<DiffOp> ops;
  if (max_d == 0) return ops;

  std::vector<std::vector<int>> trace;
  std::vector<int> v(2 * max_d + 1, 0);
  const int off = max_d;

  int final_d = -1;
  for (int d = 0; d <= max_d; ++d) {
    trace.push_back(v);
    for (int k = -d; k <= d; k += 2) {
      int x;
      if (k == -d || (k != d && v[off + k - 1] < v[off + k + 1]))
        x = v[off + k + 1];
      else
        x = v[off + k - 1] + 1;
      int y = x - k;
      while (x < n && y < m && a[x] == b[y]) { ++x; ++y; }
      v[off + k] = x;
      if (x >= n && y >= m) { final_d = d; break; }
    }
    if (final_d >= 0) break;
  }

  // Backtrack from (n, m) through the snapshots.
  int x = n, y = m;
  for (int d = final_d; d > 0; --d) {
    const auto& pv = trace[d];
    int k = x - y;
    int prev_k;
    if (k == -d || (k != d && pv[off + k - 1] < pv[off + k + 1]))
      prev_k = k + 1;  // came from an insertion
    else
      prev_k = k - 1;  // came from a deletion
    int prev_x = pv[off + prev_k];
    int prev_y = prev_x - prev_k;
    while (x > prev_x && y > prev_y) {
      ops.push_back({OpKind::Keep, size_t(x - 1), size_t(y - 1)});
      --x; --y;
    }
    if (prev_k == k + 1) {
      ops.push_back({OpKind::Ins, size_t(x), size_t(y - 1)});
      --y;
    } else {
      ops.push_back({OpKind::Del, size_t(x - 1), size_t(y)});
      --x;
    }
  }
  while (x > 0 && y > 0) {
    ops.push_back({OpKind::Keep, size_t(x - 1), size_t(y - 1)});
    --x; --y;
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

std::vector<DiffOp> diff_lines(const LineView& av, const LineView& bv) {
  const auto& a = av.lines;
  const auto& b = bv.lines;
  // A dangling (newline-less) last line only ever matches another dangling
  // line, so trailing-newline changes surface as -/+ pairs.
  auto key_of = [](const LineView& v, size_t i) {
    std::string key = v.lines[i];
    if (!v.trailing_newline && i + 1 == v.lines.size()) key += '\x01';
    return key;
  };

  // Trim the common prefix/suffix so Myers only sees the changed middle.
  size_t pre = 0;
  while (pre < a.size() && pre < b.size() && key_of(av, pre) == key_of(bv, pre)) ++pre;
  size_t suf = 0;
  while (suf < a.size() - pre && suf < b.size() - pre &&
         key_of(av, a.size() - 1 - suf) == key_of(bv, b.size() - 1 - suf))
    ++suf;

  std::unordered_map<std::string, int> intern;
  auto ids = [&](const LineView& view, size_t from, size_t to) {
    std::vector<int> out;
    out.reserve(to - from);
    for (size_t i = from; i < to; ++i) {
      auto [it, _] = intern.emplace(key_of(view, i), static_cast<int>(intern.size()));
      out.push_back(it->second);
    }
    return out;
  };
  auto mid = myers(ids(av, pre, a.size() - suf), ids(bv, pre, b.size() - suf));

  std::vector<DiffOp> ops;
  ops.reserve(pre + mid.size() + suf);
  for (size_t i = 0; i < pre; ++i) ops.push_back({OpKind::Keep, i, i});
  for (auto op : mid) {
    op.a += pre;
    op.b += pre;
    ops.push_back(op);
  }
  for (size_t i = 0; i < suf; ++i)
    ops.push_back({OpKind::Keep, a.size() - suf + i, b.size() - suf + i});
  return ops;
}

constexpr size_t kContext = 3;
constexpr const char* kNoNewline = "\\ No newline at end of file";

struct HunkLine {
  char tag;  // ' ', '-', '+'
  std::string text;
  bool no_newline_after = false;
};

}  // namespace

std::string unified_diff(const std::string& path, const std::string& old_content,
                         const std::string& new_content) {
  if (old_content == new_content) return {};
  LineView a(old_content), b(new_content);
  auto ops = diff_lines(a, b);

  // Convert ops into tagged lines, marking dangling last lines.
  std::vector<HunkLine> tagged;
  tagged.reserve(ops.size());
  for (const auto& op : ops) {
    switch (op.kind) {
      case OpKind::Keep:
        tagged.push_back({' ', a.lines[op.a],
                          (!a.trailing_newline && op.a + 1 == a.lines.size()) ||
                              (!b.trailing_newline && op.b + 1 == b.lines.size())});
        break;
      case OpKind::Del:
        tagged.push_back({'-', a.lines[op.a],
                          !a.trailing_newline && op.a + 1 == a.lines.size()});
        break;
      case OpKind::Ins:
        tagged.push_back({'+', b.lines[op.b],
                          !b.trailing_newline && op.b + 1 == b.lines.size()});
        break;
    }
  }

  std::string out = "--- a/" + path + "\n+++ b/" + path + "\n";

  // Group changes into hunks with up to kContext shared lines on each side.
  size_t i = 0;
  size_t a_line = 0, b_line = 0;  // 0-based counters over old/new
  while (i < tagged.size()) {
    if (tagged[i].tag == ' ') {
      ++i; ++a_line; ++b_line;
      continue;
    }
    // Found a change; back up for leading context.
    size_t start = i;
    size_t ctx = 0;
    while (start > 0 && ctx < kContext && tagged[start - 1].tag == ' ') {
      --start; ++ctx;
    }
    size_t hunk_a = a_line - ctx;
    size_t hunk_b = b_line - ctx;

    // Extend through changes, absorbing gaps of <= 2*kContext context lines.
    size_t end = i;
    size_t run_a = a_line, run_b = b_line;
    size_t last_change = i;
    while (end < tagged.size()) {
      if (tagged[end].tag == ' ') {
        size_t gap = end;
        while (gap < tagged.size() && tagged[gap].tag == ' ') ++gap;
        if (gap < tagged.size() && gap - end <= 2 * kContext) {
          for (size_t j = end; j < gap; ++j) { ++run_a; ++run_b; }
          end = gap;
          continue;
        }
        break;
      }
      if (tagged[end].tag == '-') ++run_a;
      else ++run_b;
      last_change = end;
      ++end;
    }
    size_t tail = std::min(kContext, tagged.size() - (last_change + 1));
    size_t hunk_end = last_change + 1;
    for (size_t j = 0; j < tail && hunk_end < tagged.size() && tagged[hunk_end].tag == ' ';
         ++j, ++hunk_end) {
      ++run_a; ++run_b;
    }

    size_t count_a = run_a - hunk_a;
    size_t count_b = run_b - hunk_b;
    char header[64];
    std::snprintf(header, sizeof header, "@@ -%zu,%zu +%zu,%zu @@\n",
                  count_a == 0 ? hunk_a : hunk_a + 1, count_a,
                  count_b == 0 ? hunk_b : hunk_b + 1, count_b);
    out += header;
    for (size_t j = start; j < hunk_end; ++j) {
      out += tagged[j].tag;
      out += tagged[j].text;
      out += '\n';
      if (tagged[j].no_newline_after) {
        out += kNoNewline;
        out += '\n';
      }
    }
    i = hunk_end;
    a_line = run_a;
    b_line = run_b;
  }
  return out;
}

namespace {

struct ParsedHunk {
  size_t old_start = 0;  // 1-based (0 only for empty-side hunks)
  size_t old_count = 0;
  std::vector<HunkLine> lines;
};

std::vector<ParsedHunk> parse_hunks(const std::vector<std::string>& lines, bool reverse) {
  std::vector<ParsedHunk> hunks;
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    unsigned long os = 0, oc = 1, ns = 0, nc = 1;
    if (starts_with(line, "@@")) {
      int matched = std::sscanf(line.c_str(), "@@ -%lu,%lu +%lu,%lu @@", &os, &oc, &ns, &nc);
      if (matched < 4) {
        oc = nc = 1;
        if (std::sscanf(line.c_str(), "@@ -%lu +%lu @@", &os, &ns) != 2)
          throw Error("PatchApplyFailed", "bad hunk header: " + line);
      }
      ParsedHunk hunk;
      hunk.old_start = reverse ? ns : os;
      hunk.old_count = reverse ? nc : oc;
      for (size_t j = i + 1; j < lines.size(); ++j) {
        const std::string& body = lines[j];
        if (body == kNoNewline) {
          if (!hunk.lines.empty()) hunk.lines.back().no_newline_after = true;
          i = j;
          continue;
        }
        if (body.empty() || (body[0] != ' ' && body[0] != '-' && body[0] != '+')) break;
        char tag = body[0];
        if (reverse && tag == '-') tag = '+';
        else if (reverse && tag == '+') tag = '-';
        hunk.lines.push_back({tag, body.substr(1), false});
        i = j;
      }
      hunks.push_back(std::move(hunk));
    }
  }
  return hunks;
}

}  // namespace

std::string apply_unified_diff(const std::string& content, const std::string& diff_text,
                               bool reverse) {
  LineView file(content);
  auto hunks = parse_hunks(split_lines(diff_text), reverse);

  std::vector<std::string> out;
  bool out_trailing_newline = true;
  size_t cursor = 0;  // 0-based position in the old lines

  for (const auto& hunk : hunks) {
    size_t target = hunk.old_count == 0 ? hunk.old_start : hunk.old_start - 1;
    if (target < cursor || target > file.lines.size())
      throw Error("PatchApplyFailed", "hunk position out of range");
    for (; cursor < target; ++cursor) out.push_back(file.lines[cursor]);

    for (const auto& hl : hunk.lines) {
      if (hl.tag == ' ' || hl.tag == '-') {
        if (cursor >= file.lines.size() || file.lines[cursor] != hl.text)
          throw Error("PatchApplyFailed",
                      "context mismatch at line " + std::to_string(cursor + 1));
        if (hl.tag == ' ') out.push_back(file.lines[cursor]);
        ++cursor;
      } else {  // '+'
        out.push_back(hl.text);
      }
      if (hl.no_newline_after && (hl.tag == ' ' || hl.tag == '+'))
        out_trailing_newline = false;
    }
  }
  // A dangling last line that no hunk consumed is copied verbatim.
  bool tail_copied = cursor < file.lines.size();
  for (; cursor < file.lines.size(); ++cursor) out.push_back(file.lines[cursor]);
  if (!file.trailing_newline && tail_copied) out_trailing_newline = false;

  std::string joined = join_lines(out);
  if (!out_trailing_newline && !joined.empty()) joined.pop_back();
  return joined;
}

std::vector<std::string> diff_touched_files(const std::string& diff_text) {
  std::vector<std::string> files;
  for (const auto& line : split_lines(diff_text)) {
    if (starts_with(line, "+++ b/")) files.push_back(line.substr(6));
  }
  return files;
}

std::string diff_section_for(const std::string& diff_text, const std::string& path) {
  auto lines = split_lines(diff_text);
  std::string out;
  bool in_section = false;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (starts_with(lines[i], "--- a/")) {
      in_section = i + 1 < lines.size() && lines[i + 1] == "+++ b/" + path;
    }
    if (in_section) {
      out += lines[i];
      out += '\n';
    }
  }
  return out;
}

}  // namespace contrafix
