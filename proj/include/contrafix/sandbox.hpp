#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "contrafix/core.hpp"
#include "contrafix/sanitizer.hpp"

namespace contrafix {

struct ExecutionResult {
  int exit_code = 0;
  bool timed_out = false;
  std::string stdout_text;
  std::string stderr_text;
  std::int64_t duration_ms = 0;
};

enum class OutcomeClass { CrashSame, CrashOther, Abnormal, Safe };

std::string outcome_class_to_string(OutcomeClass c);

struct VariantOutcome {
  OutcomeClass outcome = OutcomeClass::Abnormal;
  std::optional<SanitizerReport> report;
  ExecutionResult exec;
};

/// Timeout sentinel; unambiguous against any real process exit.
constexpr int kTimeoutExitCode = -1;

/// Render a `{name}` command template. Substituted values are shell-quoted
/// as whole arguments; `${...}` shell syntax passes through untouched.
/// Throws Error("PlaceholderMissing") for uncovered placeholders.
std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& substitutions);

/// Four-way partition of an execution: report with the expected class ->
/// CrashSame; report with another class -> CrashOther; clean exit without a
/// report -> Safe; everything else (timeouts, bare nonzero exits) -> Abnormal.
OutcomeClass classify_outcome(const ExecutionResult& exec,
                              const std::optional<SanitizerReport>& report,
                              const VulnClass& expected);

/// First 64 KiB + last 64 KiB with an elision marker. Report parsing always
/// runs on the untruncated text.
std::string truncate_stream(std::string text);

/// Run a shell command on the host (engine-side utility work such as
/// mutation scripts). Independent of any sandbox backend.
ExecutionResult run_local_command(const std::string& command,
                                  const std::filesystem::path& cwd, int timeout_s,
                                  const std::map<std::string, std::string>& extra_env = {});

/**
 * Executes the manifest's command templates inside the instance workspace.
 * One sandbox per workspace; calls are serialized by the caller. Run results
 * are gated on a successful build no older than the workspace's latest edit.
 */
class Sandbox {
 public:
  Sandbox(InstanceManifest manifest, std::function<int()> generation_source);
  virtual ~Sandbox() = default;

  const InstanceManifest& manifest() const { return manifest_; }

  /// True when outcomes come from a verify/test command instead of a
  /// sanitizer (test-driven targets).
  bool test_driven() const { return test_driven_; }
  void set_test_driven(bool v) { test_driven_ = v; }

  ExecutionResult execute(const std::string& tpl,
                          const std::map<std::string, std::string>& substitutions,
                          int timeout_s);

  /// Run a verbatim command (no template rendering; shell braces pass
  /// through). Backs the agents' bash tool.
  ExecutionResult run_raw(const std::string& command, int timeout_s);

  /// Run the build template; success records the workspace generation so
  /// later runs can detect stale binaries.
  ExecutionResult build();
  bool build_succeeded() const { return build_ok_; }

  /// Execute the run template on one input and classify the outcome. When
  /// `raw_output` is given it receives the untruncated combined streams
  /// (probe record parsing must see the full error stream).
  /// Errors: NotFound (input), StaleBuild.
  VariantOutcome run_poc(const std::filesystem::path& input,
                         std::string* raw_output = nullptr);

  /// Execute the manifest's verify command (test-driven gate).
  ExecutionResult run_verify();

 protected:
  virtual ExecutionResult exec_command(const std::string& command, int timeout_s) = 0;
  virtual ExecutionResult exec_run(const std::filesystem::path& input) = 0;
  virtual ExecutionResult exec_build();

  InstanceManifest manifest_;

 private:
  std::function<int()> generation_source_;
  bool build_ok_ = false;
  int built_generation_ = -1;
  bool test_driven_ = false;
};

/// Shells out to /bin/sh with working directory = workspace_root, captured
/// streams and a wall-clock limit enforced on the whole process group.
class LocalSandbox : public Sandbox {
 public:
  LocalSandbox(InstanceManifest manifest, std::function<int()> generation_source,
               std::map<std::string, std::string> extra_env = {});

 protected:
  ExecutionResult exec_command(const std::string& command, int timeout_s) override;
  ExecutionResult exec_run(const std::filesystem::path& input) override;

 private:
  std::map<std::string, std::string> extra_env_;
};

/**
 * Table-driven stand-in keyed by the SHA-256 of the input file's bytes:
 *   { "<hex digest>": {exit_code, stdout?, stderr?, report_class?,
 *                      overrides?: [{if_file_contains: {path, needle},
 *                                    exit_code, stdout?, stderr?,
 *                                    report_class?}, ...]},
 *     "__build__": {...} }
 * An override whose workspace file currently contains the needle replaces
 * the whole entry (first match wins), which is how a mocked fix flips an
 * outcome from crashing to safe. When report_class is given and the stderr
 * carries no banner, a minimal parseable report is appended so downstream
 * parsing stays uniform with the real backend.
 */
class MockSandbox : public Sandbox {
 public:
  MockSandbox(InstanceManifest manifest, std::function<int()> generation_source,
              const std::string& table_json);

  /// Scripted result for the next build() call (queue, FIFO).
  void queue_build_result(ExecutionResult result);
  /// Handler for bash-style execute() calls; default returns exit 0.
  void set_command_handler(std::function<ExecutionResult(const std::string&)> handler);

 protected:
  ExecutionResult exec_command(const std::string& command, int timeout_s) override;
  ExecutionResult exec_run(const std::filesystem::path& input) override;
  ExecutionResult exec_build() override;

 private:
  ExecutionResult entry_to_result(const std::string& key) const;

  std::string table_json_;
  std::deque<ExecutionResult> build_queue_;
  std::function<ExecutionResult(const std::string&)> command_handler_;
};

/// Minimal parseable sanitizer report text for a class (mock plumbing).
std::string fabricate_report_text(const VulnClass& cls);

}  // namespace contrafix
