#include "contrafix/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <chrono>
#include <cstring>

#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

namespace fs = std::filesystem;

std::string outcome_class_to_string(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::CrashSame: return "CrashSame";
    case OutcomeClass::CrashOther: return "CrashOther";
    case OutcomeClass::Abnormal: return "Abnormal";
    case OutcomeClass::Safe: return "Safe";
  }
  return "Abnormal";
}

namespace {

std::string shell_quote(const std::string& arg) {
  std::string out = "'";
  for (char c : arg) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  out += "'";
  return out;
}

}  // namespace

std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& substitutions) {
  std::string out;
  out.reserve(tpl.size());
  for (size_t i = 0; i < tpl.size(); ++i) {
    char c = tpl[i];
    bool shell_var = c == '{' && i > 0 && tpl[i - 1] == '$';
    if (c != '{' || shell_var) {
      out += c;
      continue;
    }
    size_t close = tpl.find('}', i);
    if (close == std::string::npos) {
      out += c;
      continue;
    }
    std::string name = tpl.substr(i + 1, close - i - 1);
    bool identifier = !name.empty() &&
                      (std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_');
    for (char nc : name)
      identifier = identifier && (std::isalnum(static_cast<unsigned char>(nc)) || nc == '_');
    if (!identifier) {
      out += c;
      continue;
    }
    auto it = substitutions.find(name);
    if (it == substitutions.end()) throw Error("PlaceholderMissing", name);
    out += shell_quote(it->second);
    i = close;
  }
  return out;
}

OutcomeClass classify_outcome(const ExecutionResult& exec,
                              const std::optional<SanitizerReport>& report,
                              const VulnClass& expected) {
  if (report) {
    return same_error_class(*report, expected) ? OutcomeClass::CrashSame
                                               : OutcomeClass::CrashOther;
  }
  if (exec.exit_code == 0 && !exec.timed_out) return OutcomeClass::Safe;
  return OutcomeClass::Abnormal;
}

std::string truncate_stream(std::string text) {
  constexpr size_t kKeep = 64 * 1024;
  if (text.size() <= 2 * kKeep) return text;
  size_t elided = text.size() - 2 * kKeep;
  return text.substr(0, kKeep) + "\n...[" + std::to_string(elided) + " bytes elided]...\n" +
         text.substr(text.size() - kKeep);
}

/* ------------------------------------------------------------------ */
/* Sandbox base                                                        */
/* ------------------------------------------------------------------ */

Sandbox::Sandbox(InstanceManifest manifest, std::function<int()> generation_source)
    : manifest_(std::move(manifest)), generation_source_(std::move(generation_source)) {
  if (!generation_source_) generation_source_ = [] { return 0; };
  test_driven_ = manifest_.language != Language::CCpp && manifest_.commands.verify.has_value();
}

ExecutionResult Sandbox::execute(const std::string& tpl,
                                 const std::map<std::string, std::string>& substitutions,
                                 int timeout_s) {
  std::string command = render_template(tpl, substitutions);
  ExecutionResult r = exec_command(command, timeout_s);
  r.stdout_text = truncate_stream(std::move(r.stdout_text));
  r.stderr_text = truncate_stream(std::move(r.stderr_text));
  return r;
}

ExecutionResult Sandbox::run_raw(const std::string& command, int timeout_s) {
  ExecutionResult r = exec_command(command, timeout_s);
  r.stdout_text = truncate_stream(std::move(r.stdout_text));
  r.stderr_text = truncate_stream(std::move(r.stderr_text));
  return r;
}

ExecutionResult Sandbox::exec_build() {
  return exec_command(render_template(manifest_.commands.build, {}),
                      manifest_.commands.timeout_build_s);
}

ExecutionResult Sandbox::build() {
  ExecutionResult r = exec_build();
  if (r.exit_code == 0 && !r.timed_out) {
    build_ok_ = true;
    built_generation_ = generation_source_();
  }
  r.stdout_text = truncate_stream(std::move(r.stdout_text));
  r.stderr_text = truncate_stream(std::move(r.stderr_text));
  return r;
}

VariantOutcome Sandbox::run_poc(const fs::path& input, std::string* raw_output) {
  if (!fs::exists(input)) throw Error("NotFound", "input does not exist: " + input.string());
  if (!build_ok_ || generation_source_() > built_generation_)
    throw Error("StaleBuild", "no successful build since the last source edit");

  VariantOutcome out;
  out.exec = exec_run(input);

  // Classification parses the full streams before truncation.
  std::string combined = out.exec.stdout_text + "\n" + out.exec.stderr_text;
  if (raw_output) *raw_output = combined;
  out.report = parse_report(combined);
  if (!out.report && test_driven_ && out.exec.exit_code != 0 && !out.exec.timed_out)
    out.report = synthesize_test_report(manifest_.expected_class, combined);

  out.outcome = classify_outcome(out.exec, out.report, manifest_.expected_class);
  out.exec.stdout_text = truncate_stream(std::move(out.exec.stdout_text));
  out.exec.stderr_text = truncate_stream(std::move(out.exec.stderr_text));
  return out;
}

ExecutionResult Sandbox::run_verify() {
  if (!manifest_.commands.verify)
    throw Error("MissingField", "manifest has no verify command");
  return execute(*manifest_.commands.verify, {}, manifest_.commands.timeout_run_s);
}

/* ------------------------------------------------------------------ */
/* LocalSandbox                                                        */
/* ------------------------------------------------------------------ */

ExecutionResult run_local_command(const std::string& command, const fs::path& cwd,
                                  int timeout_s,
                                  const std::map<std::string, std::string>& extra_env) {
  int out_pipe[2], err_pipe[2];
  if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0)
    throw Error("SpawnFailure", "pipe: " + std::string(std::strerror(errno)));

  auto start = std::chrono::steady_clock::now();
  pid_t pid = fork();
  if (pid < 0) throw Error("SpawnFailure", "fork: " + std::string(std::strerror(errno)));

  if (pid == 0) {
    setpgid(0, 0);  // own process group so a timeout kill reaps children too
    dup2(out_pipe[1], STDOUT_FILENO);
    dup2(err_pipe[1], STDERR_FILENO);
    close(out_pipe[0]); close(out_pipe[1]);
    close(err_pipe[0]); close(err_pipe[1]);
    if (chdir(cwd.c_str()) != 0) _exit(127);
    for (const auto& [k, v] : extra_env) setenv(k.c_str(), v.c_str(), 1);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }

  close(out_pipe[1]);
  close(err_pipe[1]);
  fcntl(out_pipe[0], F_SETFL, O_NONBLOCK);
  fcntl(err_pipe[0], F_SETFL, O_NONBLOCK);

  ExecutionResult result;
  auto deadline = start + std::chrono::seconds(timeout_s);
  bool out_open = true, err_open = true;
  bool child_done = false;
  int status = 0;

  auto drain = [](int fd, std::string& sink) {
    char buf[8192];
    for (;;) {
      ssize_t n = ::read(fd, buf, sizeof buf);
      if (n > 0) { sink.append(buf, static_cast<size_t>(n)); continue; }
      if (n == 0) return false;                         // closed
      return errno == EAGAIN || errno == EWOULDBLOCK;   // still open
    }
  };

  while (out_open || err_open || !child_done) {
    if (!child_done) {
      pid_t w = waitpid(pid, &status, WNOHANG);
      if (w == pid) child_done = true;
    }
    if (std::chrono::steady_clock::now() >= deadline && !result.timed_out) {
      result.timed_out = true;
      kill(-pid, SIGKILL);
    }
    struct pollfd fds[2];
    nfds_t n = 0;
    if (out_open) fds[n++] = {out_pipe[0], POLLIN, 0};
    if (err_open) fds[n++] = {err_pipe[0], POLLIN, 0};
    if (n > 0) poll(fds, n, 50);
    if (out_open) out_open = drain(out_pipe[0], result.stdout_text);
    if (err_open) err_open = drain(err_pipe[0], result.stderr_text);
    if (child_done && !out_open && !err_open) break;
    if (result.timed_out && child_done) break;
  }
  if (!child_done) waitpid(pid, &status, 0);
  close(out_pipe[0]);
  close(err_pipe[0]);

  if (result.timed_out) {
    result.exit_code = kTimeoutExitCode;
  } else if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  result.duration_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  return result;
}

LocalSandbox::LocalSandbox(InstanceManifest manifest, std::function<int()> generation_source,
                           std::map<std::string, std::string> extra_env)
    : Sandbox(std::move(manifest), std::move(generation_source)),
      extra_env_(std::move(extra_env)) {}

ExecutionResult LocalSandbox::exec_command(const std::string& command, int timeout_s) {
  return run_local_command(command, manifest_.workspace_root, timeout_s, extra_env_);
}

ExecutionResult LocalSandbox::exec_run(const fs::path& input) {
  std::string command =
      render_template(manifest_.commands.run_poc, {{"input", input.string()}});
  return exec_command(command, manifest_.commands.timeout_run_s);
}

/* ------------------------------------------------------------------ */
/* MockSandbox                                                         */
/* ------------------------------------------------------------------ */

std::string fabricate_report_text(const VulnClass& cls) {
  if (cls.label == VulnLabel::MemoryLeak)
    return "==1==ERROR: LeakSanitizer: detected memory leaks\n"
           "Direct leak of 32 byte(s) in 1 object(s) allocated from:\n"
           "    #0 0x1 in main src/app.c:1\n";
  return "==1==ERROR: AddressSanitizer: " + cls.canonical() +
         " on address 0x000000000001 at pc 0x1 bp 0x1 sp 0x1\n"
         "    #0 0x1 in main src/app.c:1\n";
}

MockSandbox::MockSandbox(InstanceManifest manifest, std::function<int()> generation_source,
                         const std::string& table_json)
    : Sandbox(std::move(manifest), std::move(generation_source)),
      table_json_(table_json) {
  // Validate upfront so a broken table fails loudly at construction.
  auto doc = nlohmann::json::parse(table_json_, nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    throw Error("MalformedManifest", "mock sandbox table is not a JSON object");
}

void MockSandbox::queue_build_result(ExecutionResult result) {
  build_queue_.push_back(std::move(result));
}

void MockSandbox::set_command_handler(
    std::function<ExecutionResult(const std::string&)> handler) {
  command_handler_ = std::move(handler);
}

ExecutionResult MockSandbox::entry_to_result(const std::string& key) const {
  auto doc = nlohmann::json::parse(table_json_);
  if (!doc.contains(key))
    throw Error("SpawnFailure", "no mock sandbox entry for " + key);
  nlohmann::json entry = doc[key];

  if (entry.contains("overrides")) {
    for (const auto& ov : entry["overrides"]) {
      const auto& cond = ov.at("if_file_contains");
      fs::path p = fs::path(manifest_.workspace_root) / cond.at("path").get<std::string>();
      if (!fs::exists(p)) continue;
      std::string content = read_file(p);
      if (content.find(cond.at("needle").get<std::string>()) != std::string::npos) {
        entry = ov;  // a matching override replaces the whole entry
        break;
      }
    }
  }

  ExecutionResult r;
  r.exit_code = entry.value("exit_code", 0);
  r.stdout_text = entry.value("stdout", "");
  r.stderr_text = entry.value("stderr", "");
  r.timed_out = entry.value("timed_out", false);
  r.duration_ms = entry.value("duration_ms", 1);
  if (entry.contains("report_class") && !entry["report_class"].is_null()) {
    std::string cls = entry["report_class"].get<std::string>();
    if (!parse_report(r.stderr_text))
      r.stderr_text += fabricate_report_text(vuln_class_from_label(cls));
  }
  return r;
}

ExecutionResult MockSandbox::exec_command(const std::string& command, int) {
  if (command_handler_) return command_handler_(command);
  return {};
}

ExecutionResult MockSandbox::exec_run(const fs::path& input) {
  return entry_to_result(sha256_hex(read_file(input)));
}

ExecutionResult MockSandbox::exec_build() {
  if (!build_queue_.empty()) {
    ExecutionResult r = std::move(build_queue_.front());
    build_queue_.pop_front();
    return r;
  }
  auto doc = nlohmann::json::parse(table_json_);
  if (doc.contains("__build__")) return entry_to_result("__build__");
  return {};
}

}  // namespace contrafix
