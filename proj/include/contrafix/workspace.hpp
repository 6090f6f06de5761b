#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "contrafix/core.hpp"

namespace contrafix {

struct EditRecord {
  int seq = 0;
  AgentRole agent = AgentRole::Patcher;
  std::string path;  // workspace-relative
  std::string old_text;
  std::string new_text;
  int applied_at_generation = 0;
};

struct UnifiedDiff {
  std::string text;
  std::vector<std::string> files;

  bool empty() const { return files.empty(); }
};

struct SearchMatch {
  std::string path;  // workspace-relative
  int line = 0;      // 1-based
  std::string text;
  std::vector<std::string> context;  // up to 2 lines either side, the match included
};

/**
 * Journaled view/search/edit over one instance source tree. Every mutation
 * goes through str_replace_edit so it can be reverted per agent or globally,
 * and so the final patch can be extracted as a clean unified diff against
 * the pristine snapshot. Pristine copies are taken on first touch.
 *
 * All operations on one workspace are serialized by the caller; the journal
 * itself keeps no locks.
 */
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  /// Edit counter; bumped by every applied or reverted edit. The sandbox
  /// compares it against its last successful build to detect stale binaries.
  int generation() const { return generation_; }

  /// File -> numbered lines (1-based); directory -> sorted entry listing.
  /// At most kViewCap lines per call, with a continuation hint.
  std::string view(const std::string& path,
                   std::optional<std::pair<int, int>> line_range = std::nullopt) const;

  /// Regex search over a file or (recursively) a directory. Deterministic
  /// order: path lexicographic, then line ascending. At most kSearchCap
  /// matches. Binary files are skipped.
  std::vector<SearchMatch> search(const std::string& pattern, const std::string& path) const;

  /// Replace an exact, unique occurrence of `old_text`. Errors: NotFound,
  /// NoMatch, Ambiguous(count), OutsideWorkspace, BinaryFile.
  EditRecord str_replace_edit(AgentRole agent, const std::string& path,
                              const std::string& old_text, const std::string& new_text);

  /// Un-apply the agent's most recent edit by reverse substitution.
  /// Returns nullopt when the agent has no edits. Error: RevertConflict.
  std::optional<EditRecord> revert_last_edit(AgentRole agent);

  /// With an agent: un-apply that agent's edits newest-first, preserving
  /// other agents' edits. Without: restore every touched file to pristine
  /// bytes and clear the journal. Returns the number of edits reverted.
  int revert_all_edits(std::optional<AgentRole> agent = std::nullopt);

  /// Unified diff of the given agent's edits against pristine. Requires all
  /// other agents' edits to be reverted first, re-applies the diff to the
  /// pristine snapshot as a self-check, and rejects probe residue.
  UnifiedDiff extract_diff(AgentRole agent) const;

  const std::vector<EditRecord>& journal() const { return records_; }
  std::vector<std::string> touched_files() const;
  const std::string* pristine(const std::string& path) const;

  /// Current content of a workspace file (journal-agnostic read).
  std::string read(const std::string& path) const;

  static constexpr int kViewCap = 400;
  static constexpr int kSearchCap = 50;

 private:
  std::filesystem::path resolve(const std::string& path) const;
  void snapshot_if_first_touch(const std::string& path, const std::string& content);

  std::filesystem::path root_;
  std::vector<EditRecord> records_;
  std::map<std::string, std::string> pristine_;
  int generation_ = 0;
  int next_seq_ = 1;
};

}  // namespace contrafix
