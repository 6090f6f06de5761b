#pragma once

#include <string>
#include <vector>

namespace contrafix {

/**
 * Render a unified diff ("--- a/<path>" / "+++ b/<path>", 3 context lines)
 * between two file bodies. Returns an empty string when the bodies are
 * byte-equal. Handles missing trailing newlines with the standard
 * "\ No newline at end of file" marker.
 */
std::string unified_diff(const std::string& path, const std::string& old_content,
                         const std::string& new_content);

/**
 * Apply one file's unified diff hunks to `content`. Context and removed
 * lines must match exactly at the stated positions. With `reverse` the
 * diff is applied backwards (new -> old).
 *
 * Throws Error("PatchApplyFailed") on any mismatch.
 */
std::string apply_unified_diff(const std::string& content, const std::string& diff_text,
                               bool reverse = false);

/// Paths listed in "+++ b/<path>" headers, in order of appearance.
std::vector<std::string> diff_touched_files(const std::string& diff_text);

/// The "+++ b/<path>" section for one path, including headers and hunks.
std::string diff_section_for(const std::string& diff_text, const std::string& path);

}  // namespace contrafix
