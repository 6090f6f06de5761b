#include "contrafix/workspace.hpp"

#include <algorithm>
#include <regex>
#include <sstream>

#include "contrafix/diff.hpp"
#include "contrafix/error.hpp"
#include "contrafix/probe_wire.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

namespace fs = std::filesystem;

namespace {

size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return 0;
  size_t n = 0;
  for (size_t pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + 1))
    ++n;
  return n;
}

}  // namespace

Workspace::Workspace(fs::path root) : root_(fs::absolute(std::move(root)).lexically_normal()) {
  if (!fs::is_directory(root_))
    throw Error("NotFound", "workspace root is not a directory: " + root_.string());
}

fs::path Workspace::resolve(const std::string& path) const {
  fs::path joined = (root_ / path).lexically_normal();
  auto [root_end, _] = std::mismatch(root_.begin(), root_.end(), joined.begin(), joined.end());
  if (root_end != root_.end())
    throw Error("OutsideWorkspace", path + " escapes the workspace root");
  return joined;
}

std::string Workspace::read(const std::string& path) const {
  fs::path p = resolve(path);
  if (!fs::is_regular_file(p)) throw Error("NotFound", path);
  return read_file(p);
}

std::string Workspace::view(const std::string& path,
                            std::optional<std::pair<int, int>> line_range) const {
  fs::path p = resolve(path);
  if (fs::is_directory(p)) {
    std::vector<std::string> entries;
    for (const auto& entry : fs::directory_iterator(p)) {
      std::string name = entry.path().filename().string();
      if (entry.is_directory()) name += "/ (dir)";
      entries.push_back(std::move(name));
    }
    std::sort(entries.begin(), entries.end());
    return join_lines(entries);
  }
  if (!fs::is_regular_file(p)) throw Error("NotFound", path);

  auto lines = split_lines(read_file(p));
  int first = 1, last = static_cast<int>(lines.size());
  if (line_range) {
    first = std::max(1, line_range->first);
    last = std::min(last, line_range->second);
  }
  std::ostringstream out;
  int shown = 0;
  int i = first;
  for (; i <= last && shown < kViewCap; ++i, ++shown)
    out << i << "\t" << lines[i - 1] << "\n";
  if (i <= last)
    out << "... (" << (last - i + 1) << " more lines; continue with range " << i << ".."
        << last << ")\n";
  return out.str();
}

std::vector<SearchMatch> Workspace::search(const std::string& pattern,
                                           const std::string& path) const {
  std::regex re;
  try {
    re = std::regex(pattern);
  } catch (const std::regex_error& e) {
    throw Error("BadPattern", std::string(e.what()));
  }

  fs::path p = resolve(path);
  std::vector<std::string> files;
  if (fs::is_directory(p)) {
    for (const auto& entry : fs::recursive_directory_iterator(p)) {
      if (entry.is_regular_file())
        files.push_back(fs::relative(entry.path(), root_).generic_string());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(p)) {
    files.push_back(fs::relative(p, root_).generic_string());
  } else {
    throw Error("NotFound", path);
  }

  std::vector<SearchMatch> matches;
  for (const auto& file : files) {
    std::string content = read_file(root_ / file);
    if (looks_binary(content)) continue;
    auto lines = split_lines(content);
    for (size_t i = 0; i < lines.size(); ++i) {
      if (!std::regex_search(lines[i], re)) continue;
      SearchMatch m;
      m.path = file;
      m.line = static_cast<int>(i + 1);
      m.text = lines[i];
      size_t from = i >= 2 ? i - 2 : 0;
      size_t to = std::min(lines.size(), i + 3);
      for (size_t j = from; j < to; ++j) m.context.push_back(lines[j]);
      matches.push_back(std::move(m));
      if (matches.size() >= kSearchCap) return matches;
    }
  }
  return matches;
}

void Workspace::snapshot_if_first_touch(const std::string& path, const std::string& content) {
  pristine_.emplace(path, content);
}

EditRecord Workspace::str_replace_edit(AgentRole agent, const std::string& path,
                                       const std::string& old_text,
                                       const std::string& new_text) {
  fs::path p = resolve(path);
  if (!fs::is_regular_file(p)) throw Error("NotFound", path);
  std::string rel = fs::relative(p, root_).generic_string();
  std::string content = read_file(p);
  if (looks_binary(content))
    throw Error("BinaryFile", rel + " is binary; edit PoC bytes via mutate_poc instead");

  size_t n = count_occurrences(content, old_text);
  if (n == 0) throw Error("NoMatch", "old text not found in " + rel);
  if (n > 1) throw Error("Ambiguous", std::to_string(n) + " occurrences in " + rel);

  snapshot_if_first_touch(rel, content);
  size_t pos = content.find(old_text);
  content.replace(pos, old_text.size(), new_text);
  write_file(p, content);

  EditRecord record{next_seq_++, agent, rel, old_text, new_text, ++generation_};
  records_.push_back(record);
  return record;
}

std::optional<EditRecord> Workspace::revert_last_edit(AgentRole agent) {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->agent != agent) continue;
    std::string content = read_file(root_ / it->path);
    size_t n = count_occurrences(content, it->new_text);
    if (n != 1)
      throw Error("RevertConflict",
                  it->path + " no longer contains the edit exactly once (found " +
                      std::to_string(n) + ")");
    size_t pos = content.find(it->new_text);
    content.replace(pos, it->new_text.size(), it->old_text);
    write_file(root_ / it->path, content);
    ++generation_;
    EditRecord record = *it;
    records_.erase(std::next(it).base());
    return record;
  }
  return std::nullopt;
}

int Workspace::revert_all_edits(std::optional<AgentRole> agent) {
  if (!agent) {
    int count = static_cast<int>(records_.size());
    for (const auto& [path, content] : pristine_) write_file(root_ / path, content);
    if (count > 0) ++generation_;
    records_.clear();
    return count;
  }
  int count = 0;
  while (true) {
    auto it = std::find_if(records_.rbegin(), records_.rend(),
                           [&](const EditRecord& r) { return r.agent == *agent; });
    if (it == records_.rend()) break;
    revert_last_edit(*agent);
    ++count;
  }
  return count;
}

std::vector<std::string> Workspace::touched_files() const {
  std::vector<std::string> files;
  for (const auto& [path, _] : pristine_) files.push_back(path);
  return files;
}

const std::string* Workspace::pristine(const std::string& path) const {
  auto it = pristine_.find(path);
  return it == pristine_.end() ? nullptr : &it->second;
}

UnifiedDiff Workspace::extract_diff(AgentRole agent) const {
  for (const auto& record : records_) {
    if (record.agent != agent)
      throw Error("NonPatcherEditsPresent",
                  agent_role_to_string(record.agent) + " edit still applied to " + record.path);
  }

  UnifiedDiff diff;
  for (const auto& [path, pristine_content] : pristine_) {
    std::string current = read_file(root_ / path);
    std::string file_diff = unified_diff(path, pristine_content, current);
    if (file_diff.empty()) continue;
    // Self-check: the hunks must re-apply cleanly onto the pristine bytes.
    if (apply_unified_diff(pristine_content, file_diff) != current)
      throw Error("PatchApplyFailed", "diff self-check failed for " + path);
    diff.text += file_diff;
    diff.files.push_back(path);
  }
  if (diff.text.find(kProbeSentinel) != std::string::npos ||
      diff.text.find(kProbeGuard) != std::string::npos)
    throw Error("ResidueDetected", "probe residue present in extracted diff");
  return diff;
}

}  // namespace contrafix
