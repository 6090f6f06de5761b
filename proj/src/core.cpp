#include "contrafix/core.hpp"

#include <filesystem>
#include <map>

#include <json.hpp>

#include "contrafix/error.hpp"

namespace contrafix {

std::string VulnClass::canonical() const {
  switch (label) {
    case VulnLabel::HeapBufferOverflow: return "heap-buffer-overflow";
    case VulnLabel::StackBufferOverflow: return "stack-buffer-overflow";
    case VulnLabel::NullPointerDeref: return "null-pointer-deref";
    case VulnLabel::UseAfterFree: return "use-after-free";
    case VulnLabel::MemoryLeak: return "memory-leak";
    case VulnLabel::Segv: return "segv";
    case VulnLabel::Other: return other;
  }
  return other;
}

const std::vector<VulnClass>& all_vuln_classes() {
  static const std::vector<VulnClass> classes = {
      VulnClass::heap_buffer_overflow(), VulnClass::null_pointer_deref(),
      VulnClass::segv(),                 VulnClass::use_after_free(),
      VulnClass::memory_leak(),          VulnClass::stack_buffer_overflow()};
  return classes;
}

VulnClass vuln_class_from_label(std::string_view label) {
  std::string norm = to_lower(trim(label));
  if (norm.empty()) throw Error("EmptyLabel", "vulnerability label is empty");

  // Exact spellings first, including the aliases sanitizers actually emit.
  static const std::map<std::string, VulnLabel> table = {
      {"heap-buffer-overflow", VulnLabel::HeapBufferOverflow},
      {"stack-buffer-overflow", VulnLabel::StackBufferOverflow},
      {"null-pointer-deref", VulnLabel::NullPointerDeref},
      {"null-pointer-dereference", VulnLabel::NullPointerDeref},
      {"null-dereference", VulnLabel::NullPointerDeref},
      {"null-deref", VulnLabel::NullPointerDeref},
      {"use-after-free", VulnLabel::UseAfterFree},
      {"heap-use-after-free", VulnLabel::UseAfterFree},
      {"memory-leak", VulnLabel::MemoryLeak},
      {"memory leak", VulnLabel::MemoryLeak},
      {"detected memory leaks", VulnLabel::MemoryLeak},
      {"leaksanitizer: detected memory leaks", VulnLabel::MemoryLeak},
      {"segv", VulnLabel::Segv},
      {"segmentation fault", VulnLabel::Segv},
  };
  auto it = table.find(norm);
  if (it != table.end()) return {it->second, {}};

  // Banner phrases carry trailing detail ("SEGV on unknown address ...").
  if (starts_with(norm, "segv ") || starts_with(norm, "segv:")) return VulnClass::segv();
  if (starts_with(norm, "heap-use-after-free ")) return VulnClass::use_after_free();
  if (norm.find("detected memory leaks") != std::string::npos) return VulnClass::memory_leak();

  return {VulnLabel::Other, norm};
}

std::string agent_role_to_string(AgentRole role) {
  switch (role) {
    case AgentRole::Mutator: return "mutator";
    case AgentRole::Analyzer: return "analyzer";
    case AgentRole::Patcher: return "patcher";
  }
  return "mutator";
}

AgentRole agent_role_from_string(std::string_view s) {
  std::string norm = to_lower(trim(s));
  if (norm == "mutator") return AgentRole::Mutator;
  if (norm == "analyzer") return AgentRole::Analyzer;
  if (norm == "patcher") return AgentRole::Patcher;
  throw Error("MalformedManifest", "unknown agent role: " + norm);
}

Language language_from_string(std::string_view s) {
  std::string norm = to_lower(trim(s));
  if (norm == "c_cpp" || norm == "c" || norm == "cpp" || norm == "c++") return Language::CCpp;
  if (norm == "go") return Language::Go;
  if (norm == "python") return Language::Python;
  if (norm == "javascript" || norm == "js") return Language::Javascript;
  return Language::OtherLang;
}

std::string language_to_string(Language lang) {
  switch (lang) {
    case Language::CCpp: return "c_cpp";
    case Language::Go: return "go";
    case Language::Python: return "python";
    case Language::Javascript: return "javascript";
    case Language::OtherLang: return "other";
  }
  return "other";
}

namespace {

const nlohmann::json& require_field(const nlohmann::json& doc, const std::string& name) {
  auto it = doc.find(name);
  if (it == doc.end() || it->is_null())
    throw Error("MissingField", name);
  return *it;
}

std::string require_string(const nlohmann::json& doc, const std::string& name) {
  const auto& v = require_field(doc, name);
  if (!v.is_string()) throw Error("MalformedManifest", name + " must be a string");
  return v.get<std::string>();
}

int count_placeholder(const std::string& tpl, const std::string& name) {
  int n = 0;
  std::string needle = "{" + name + "}";
  for (size_t pos = tpl.find(needle); pos != std::string::npos;
       pos = tpl.find(needle, pos + 1))
    ++n;
  return n;
}

}  // namespace

InstanceManifest parse_instance_manifest(std::string_view bytes) {
  nlohmann::json doc = nlohmann::json::parse(bytes, nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    throw Error("MalformedManifest", "manifest is not a JSON object");

  InstanceManifest m;
  m.instance_id = require_string(doc, "instance_id");
  if (trim(m.instance_id).empty())
    throw Error("MalformedManifest", "instance_id is empty");
  m.repo_id = require_string(doc, "repo_id");
  // Relative roots are resolved against the engine's working directory once,
  // here; everything downstream (chdir, {input} substitution) needs stable
  // absolute paths.
  m.workspace_root = std::filesystem::absolute(require_string(doc, "workspace_root"))
                         .lexically_normal()
                         .string();
  m.poc_path = require_string(doc, "poc_path");
  m.expected_class = vuln_class_from_label(require_string(doc, "expected_class"));

  auto date = Date::parse(require_string(doc, "disclosure_date"));
  if (!date) throw Error("InvalidDate", "disclosure_date is not a valid ISO-8601 date");
  m.disclosure_date = *date;

  m.language = language_from_string(require_string(doc, "language"));

  const auto& cmds = require_field(doc, "commands");
  if (!cmds.is_object()) throw Error("MalformedManifest", "commands must be an object");
  m.commands.build = require_string(cmds, "build");
  m.commands.run_poc = require_string(cmds, "run_poc");
  if (cmds.contains("verify") && !cmds["verify"].is_null())
    m.commands.verify = cmds["verify"].get<std::string>();
  if (cmds.contains("timeout_build_s")) m.commands.timeout_build_s = cmds["timeout_build_s"].get<int>();
  if (cmds.contains("timeout_run_s")) m.commands.timeout_run_s = cmds["timeout_run_s"].get<int>();

  if (count_placeholder(m.commands.run_poc, "input") != 1)
    throw Error("MalformedManifest", "run_poc must contain exactly one {input} placeholder");
  if (m.commands.timeout_build_s <= 0 || m.commands.timeout_run_s <= 0)
    throw Error("MalformedManifest", "timeouts must be strictly positive");

  if (doc.contains("price_table_ref") && !doc["price_table_ref"].is_null())
    m.price_table_ref = doc["price_table_ref"].get<std::string>();

  if (doc.contains("env") && doc["env"].is_object())
    for (const auto& [name, value] : doc["env"].items())
      m.env[name] = value.get<std::string>();

  std::filesystem::path poc = std::filesystem::path(m.workspace_root) / m.poc_path;
  if (!std::filesystem::exists(poc))
    throw Error("MissingPoc", "poc_path does not exist: " + poc.string());

  return m;
}

}  // namespace contrafix
