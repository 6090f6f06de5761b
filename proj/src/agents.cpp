#include "contrafix/agents.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/probe.hpp"
#include "contrafix/probe_wire.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

namespace fs = std::filesystem;

std::vector<std::string> VariantSet::crash_same_ids() const {
  std::vector<std::string> ids;
  for (const auto& v : variants)
    if (v.outcome && v.outcome->outcome == OutcomeClass::CrashSame) ids.push_back(v.variant_id);
  return ids;
}

std::string gate_failure_to_string(GateFailure reason) {
  switch (reason) {
    case GateFailure::None: return "none";
    case GateFailure::NoCrashSame: return "NoCrashSame";
    case GateFailure::NoSafe: return "NoSafe";
    case GateFailure::Empty: return "Empty";
  }
  return "none";
}

GateResult ideal_pair_gate(const VariantSet& set) {
  if (set.variants.empty()) return {false, GateFailure::Empty};
  bool crash = false, safe = false;
  for (const auto& v : set.variants) {
    if (!v.outcome) continue;
    crash = crash || v.outcome->outcome == OutcomeClass::CrashSame;
    safe = safe || v.outcome->outcome == OutcomeClass::Safe;
  }
  if (!crash) return {false, GateFailure::NoCrashSame};
  if (!safe) return {false, GateFailure::NoSafe};
  return {true, GateFailure::None};
}

std::string verification_state_to_string(VerificationState v) {
  switch (v) {
    case VerificationState::Unverified: return "Unverified";
    case VerificationState::EmptyDiff: return "EmptyDiff";
    case VerificationState::CompileFailed: return "CompileFailed";
    case VerificationState::StillVulnerable: return "StillVulnerable";
    case VerificationState::Verified: return "Verified";
  }
  return "Unverified";
}

/* ------------------------------------------------------------------ */
/* Toolkit                                                             */
/* ------------------------------------------------------------------ */

AgentToolkit::AgentToolkit(const InstanceManifest& manifest, Workspace& workspace,
                           Sandbox& sandbox, fs::path variant_parent,
                           std::string interpreter_cmd)
    : manifest_(manifest), workspace_(workspace), sandbox_(sandbox),
      interpreter_cmd_(std::move(interpreter_cmd)) {
  variant_dir_ =
      fs::absolute(variant_parent / "variants" / manifest.instance_id).lexically_normal();
  fs::create_directories(variant_dir_);
}

std::string AgentToolkit::original_poc_abs() const {
  return (fs::path(manifest_.workspace_root) / manifest_.poc_path).string();
}

std::string AgentToolkit::poc_format() const {
  std::string bytes = read_file(original_poc_abs());
  if (!looks_binary(bytes)) return "interpreter-script";
  std::string ext = fs::path(manifest_.poc_path).extension().string();
  if (!ext.empty() && ext[0] == '.') ext.erase(0, 1);
  return ext.empty() ? "binary" : to_lower(ext);
}

Variant* AgentToolkit::find_variant(const std::string& id) {
  for (auto& v : order_)
    if (v.variant_id == id) return &v;
  return nullptr;
}

VariantSet AgentToolkit::current_set() const {
  VariantSet set;
  set.variants = order_;
  set.ideal = ideal_pair_gate(set).pass;
  return set;
}

std::vector<std::string> AgentToolkit::collected_command_log(const VariantSet& set) const {
  std::vector<std::string> log;
  for (const auto& v : set.variants)
    log.insert(log.end(), v.creation_log.begin(), v.creation_log.end());
  return log;
}

Variant& AgentToolkit::mutate_poc(const std::string& filename, const std::string& content,
                                  const std::string& mode) {
  if (filename.empty() || filename.find('/') != std::string::npos)
    throw Error("DuplicateName", "variant filename must be a bare, non-empty name");
  if (find_variant(filename)) throw Error("DuplicateName", filename);
  if (filename == "original") throw Error("DuplicateName", "'original' is reserved");

  bool script_mode;
  if (mode == "script") script_mode = true;
  else if (mode == "rewrite") script_mode = false;
  else script_mode = looks_binary(read_file(original_poc_abs()));

  fs::path out_path = variant_dir_ / filename;
  if (script_mode) {
    fs::path script_path = variant_dir_ / (filename + ".mutate.py");
    write_file(script_path, content);
    std::string command = render_template(interpreter_cmd_,
                                          {{"script", script_path.string()},
                                           {"source", original_poc_abs()},
                                           {"output", out_path.string()}});
    ExecutionResult r = run_local_command(command, variant_dir_, 60);
    if (r.exit_code != 0 || r.timed_out)
      throw Error("ScriptFailed", r.stderr_text.empty() ? r.stdout_text : r.stderr_text);
    if (!fs::exists(out_path) || fs::file_size(out_path) == 0)
      throw Error("EmptyOutput", "mutation script produced no variant file");
  } else {
    write_file(out_path, content);
  }

  Variant v;
  v.variant_id = filename;
  v.path = out_path.string();
  v.origin = script_mode ? VariantOrigin::LlmScript : VariantOrigin::LlmRewrite;
  nlohmann::json action = {{"tool", "mutate_poc"},
                           {"filename", filename},
                           {"mode", script_mode ? "script" : "rewrite"},
                           {"content", content}};
  v.creation_log.push_back(action.dump());
  write_file(variant_dir_ / (filename + ".log.jsonl"), action.dump() + "\n");
  order_.push_back(std::move(v));
  return order_.back();
}

VariantOutcome AgentToolkit::run_variant(const std::string& variant_id) {
  Variant* v = find_variant(variant_id);
  if (!v) throw Error("UnknownVariant", variant_id);
  VariantOutcome outcome = sandbox_.run_poc(v->path);
  v->outcome = outcome;
  return outcome;
}

void AgentToolkit::run_pending_variants() {
  for (auto& v : order_)
    if (!v.outcome) v.outcome = sandbox_.run_poc(v.path);
}

AgentToolkit::CheckResult AgentToolkit::check_vul() {
  CheckResult result;
  // Gate 1 first: the tree must compile as it stands.
  ExecutionResult b = sandbox_.build();
  if (b.exit_code != 0 || b.timed_out) {
    result.fixed = false;
    result.failing_input = "(build)";
    result.output = b.stderr_text.empty() ? b.stdout_text : b.stderr_text;
    return result;
  }

  if (sandbox_.test_driven() && manifest_.commands.verify) {
    ExecutionResult v = sandbox_.run_verify();
    result.fixed = v.exit_code == 0 && !v.timed_out;
    if (!result.fixed) {
      result.failing_input = "verify";
      result.output = v.stderr_text + v.stdout_text;
      std::string combined = v.stdout_text + "\n" + v.stderr_text;
      result.report = parse_report(combined);
      if (!result.report)
        result.report = synthesize_test_report(manifest_.expected_class, combined);
    }
    return result;
  }

  std::vector<std::pair<std::string, std::string>> inputs;
  inputs.emplace_back("original", original_poc_abs());
  for (const auto& v : order_)
    if (v.outcome && v.outcome->outcome == OutcomeClass::CrashSame)
      inputs.emplace_back(v.variant_id, v.path);

  for (const auto& [id, path] : inputs) {
    VariantOutcome outcome = sandbox_.run_poc(path);
    if (outcome.outcome != OutcomeClass::Safe) {
      result.fixed = false;
      result.failing_input = id;
      result.output = outcome.exec.stderr_text;
      result.report = outcome.report;
      return result;
    }
  }
  result.fixed = true;
  return result;
}

std::string AgentToolkit::submit() {
  // Instrumentation residue never ships: clear non-patcher edits first.
  workspace_.revert_all_edits(AgentRole::Analyzer);
  workspace_.revert_all_edits(AgentRole::Mutator);

  UnifiedDiff diff = workspace_.extract_diff(AgentRole::Patcher);
  if (diff.empty()) return "error: EmptyDiff: no patcher edits to submit";

  ExecutionResult b = sandbox_.build();
  if (b.exit_code != 0 || b.timed_out)
    return "error: CompileFailed: " +
           truncate_stream(b.stderr_text.empty() ? b.stdout_text : b.stderr_text);

  CheckResult check = check_vul();
  if (!check.fixed)
    return "error: StillVulnerable: input '" + check.failing_input +
           "' still fails after the patch";

  PatchCandidate candidate;
  for (const auto& record : workspace_.journal())
    if (record.agent == AgentRole::Patcher) candidate.edits.push_back(record);
  candidate.diff = diff;
  candidate.verification = VerificationState::Verified;
  submitted_ = std::move(candidate);
  return "verified: clean diff extracted (" + std::to_string(diff.files.size()) +
         " file(s))";
}

/* ------------------------------------------------------------------ */
/* Tool handlers                                                       */
/* ------------------------------------------------------------------ */

namespace {

nlohmann::json parse_args(const ToolCall& call) {
  auto doc = nlohmann::json::parse(call.arguments_json, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return nlohmann::json::object();
  return doc;
}

std::string outcome_summary(const std::string& id, const VariantOutcome& outcome) {
  std::ostringstream out;
  out << id << ": " << outcome_class_to_string(outcome.outcome);
  if (outcome.report) out << " (" << outcome.report->error_class.canonical() << ")";
  out << ", exit " << outcome.exec.exit_code;
  if (outcome.exec.timed_out) out << " (timed out)";
  return out.str();
}

}  // namespace

std::string AgentToolkit::tool_view(const ToolCall& call) {
  auto args = parse_args(call);
  std::optional<std::pair<int, int>> range;
  if (args.contains("start") && args.contains("end"))
    range = {args["start"].get<int>(), args["end"].get<int>()};
  return workspace_.view(args.value("path", "."), range);
}

std::string AgentToolkit::tool_search(const ToolCall& call) {
  auto args = parse_args(call);
  auto matches = workspace_.search(args.value("pattern", ""), args.value("path", "."));
  if (matches.empty()) return "no matches";
  std::ostringstream out;
  for (const auto& m : matches) {
    out << m.path << ":" << m.line << ": " << m.text << "\n";
    for (const auto& c : m.context) out << "    | " << c << "\n";
  }
  return out.str();
}

std::string AgentToolkit::tool_edit(AgentRole role, const ToolCall& call) {
  auto args = parse_args(call);
  EditRecord record = workspace_.str_replace_edit(role, args.value("path", ""),
                                                  args.value("old", ""),
                                                  args.value("new", ""));
  return "edit applied to " + record.path + " (seq " + std::to_string(record.seq) + ")";
}

std::string AgentToolkit::tool_revert_last(AgentRole role) {
  auto record = workspace_.revert_last_edit(role);
  if (!record) return "nothing to revert";
  return "reverted edit seq " + std::to_string(record->seq) + " in " + record->path;
}

std::string AgentToolkit::tool_revert_all(AgentRole role) {
  int n = workspace_.revert_all_edits(role);
  return "reverted " + std::to_string(n) + " edit(s)";
}

std::string AgentToolkit::tool_bash(const ToolCall& call) {
  auto args = parse_args(call);
  ExecutionResult r = sandbox_.run_raw(args.value("command", ""),
                                       manifest_.commands.timeout_run_s);
  std::ostringstream out;
  out << "exit " << r.exit_code << (r.timed_out ? " (timed out)" : "") << "\n";
  if (!r.stdout_text.empty()) out << r.stdout_text;
  if (!r.stderr_text.empty()) out << r.stderr_text;
  return out.str();
}

std::string AgentToolkit::tool_mutate(const ToolCall& call) {
  auto args = parse_args(call);
  Variant& v = mutate_poc(args.value("filename", ""), args.value("content", ""),
                          args.value("mode", "auto"));
  return "variant '" + v.variant_id + "' created at " + v.path;
}

std::string AgentToolkit::tool_run_variant(const ToolCall& call) {
  auto args = parse_args(call);
  std::string id = args.value("variant_id", "");
  return outcome_summary(id, run_variant(id));
}

std::string AgentToolkit::tool_run_probed(const ToolCall& call) {
  auto args = parse_args(call);
  std::vector<std::pair<std::string, std::string>> selected;
  if (args.contains("variant_ids") && args["variant_ids"].is_array()) {
    for (const auto& id : args["variant_ids"]) {
      Variant* v = find_variant(id.get<std::string>());
      if (!v) throw Error("UnknownVariant", id.get<std::string>());
      selected.emplace_back(v->variant_id, v->path);
    }
  } else {
    for (const auto& v : order_) selected.emplace_back(v.variant_id, v.path);
  }
  ProbeRunOutput runs = run_probed(sandbox_, selected, original_poc_abs());
  std::ostringstream out;
  for (const auto& run : runs.runs) {
    out << run.variant_id << ": " << outcome_class_to_string(run.outcome) << ", "
        << run.records.size() << " probe record(s)\n";
    for (const auto& record : run.records) {
      out << "  " << record.site << " [" << record.file << ":" << record.line << "] {";
      for (size_t i = 0; i < record.state.size(); ++i) {
        if (i) out << ", ";
        out << record.state[i].first << "=" << record.state[i].second;
      }
      out << "}\n";
    }
  }
  return out.str();
}

std::string AgentToolkit::tool_check_vul() {
  CheckResult r = check_vul();
  if (r.fixed) return "fixed: original PoC and all crashing variants now run safe";
  return "still_vulnerable: input '" + r.failing_input + "' fails\n" +
         truncate_stream(r.output);
}

ToolDispatcher AgentToolkit::dispatcher(AgentRole role) {
  return [this, role](const ToolCall& call) -> std::string {
    if (call.tool == "view") return tool_view(call);
    if (call.tool == "search") return tool_search(call);
    if (call.tool == "str_replace_edit") return tool_edit(role, call);
    if (call.tool == "revert_last_edit") return tool_revert_last(role);
    if (call.tool == "revert_all_edits") return tool_revert_all(role);
    if (call.tool == "bash") return tool_bash(call);
    if (call.tool == "mutate_poc") return tool_mutate(call);
    if (call.tool == "run_variant") return tool_run_variant(call);
    if (call.tool == "run_probed") return tool_run_probed(call);
    if (call.tool == "check_vul") return tool_check_vul();
    if (call.tool == "submit") return submit();
    throw Error("UnknownTool", call.tool);
  };
}

/* ------------------------------------------------------------------ */
/* Mutator phase                                                       */
/* ------------------------------------------------------------------ */

namespace {

std::string carry_over_text(const CarryOverData* carry) {
  if (!carry) return "";
  std::ostringstream out;
  out << "\n## Carry-over from the failed round\n"
      << "Failure kind: " << carry->failure_kind << "\n"
      << "Failed patch:\n" << carry->failed_patch_text << "\n"
      << "Failure output:\n" << carry->failure_output << "\n"
      << "Previous repair specification:\n" << carry->previous_spec_text << "\n"
      << "Previous probe instrumentation:\n" << carry->previous_probe_specs_json << "\n";
  return out.str();
}

constexpr const char* kMutatorSystemPrompt =
    "You are the Mutator. Build PoC variants that straddle the failure boundary: "
    "at least one variant must crash with the same sanitizer error class as the "
    "original PoC and at least one must terminate normally. Aim for 4-8 variants "
    "with at least 2 of each. Create variants with mutate_poc and execute them "
    "with run_variant. Finish with a short summary of the strategy that worked.";

constexpr const char* kAnalyzerSystemPrompt =
    "You are the Analyzer. Locate the fault from the sanitizer report, then "
    "nominate state probes for the fault region. Finish with a JSON object "
    "{\"probes\": [{site, path, anchor, position, kind, expressions: "
    "[{name, expr, kind}]}]} naming the expressions whose runtime values may "
    "govern the failure.";

constexpr const char* kPatcherSystemPrompt =
    "You are the Patcher. Enforce the safety invariant in the repair "
    "specification with a minimal source fix via str_replace_edit. Verify with "
    "check_vul, then call submit to extract the verified diff.";

std::string phase_prompt(const PhaseContext& ctx, AgentRole role) {
  auto it = ctx.prompts.find(role);
  if (it != ctx.prompts.end() && !it->second.empty()) return it->second;
  return default_prompt(role);
}

}  // namespace

std::string default_prompt(AgentRole role) {
  switch (role) {
    case AgentRole::Mutator: return kMutatorSystemPrompt;
    case AgentRole::Analyzer: return kAnalyzerSystemPrompt;
    case AgentRole::Patcher: return kPatcherSystemPrompt;
  }
  return kMutatorSystemPrompt;
}

MutatorResult mutator_phase(PhaseContext& ctx, const std::vector<MutationSkill>& skills,
                            const CarryOverData* carry_over, RoundState& round) {
  MutatorResult result;
  std::ostringstream context;
  context << "Instance " << ctx.manifest->instance_id << " (" << ctx.manifest->repo_id
          << "), expected class " << ctx.manifest->expected_class.canonical()
          << ", PoC at " << ctx.manifest->poc_path << " (format "
          << ctx.toolkit->poc_format() << ").\n";
  if (!skills.empty()) {
    context << "\n## Retrieved mutation skills\n";
    for (const auto& s : skills) {
      context << "- [" << s.skill_id << "] " << s.strategy << "\n";
      for (const auto& cmd : s.command_log) context << "    " << cmd << "\n";
    }
  }
  context << carry_over_text(carry_over);

  std::string user_context = context.str();
  for (int attempt = 0;; ++attempt) {
    bool exhausted = false;
    try {
      run_agent_loop(*ctx.backend, AgentRole::Mutator, phase_prompt(ctx, AgentRole::Mutator),
                     user_context, ctx.toolkit->dispatcher(AgentRole::Mutator),
                     tool_schemas_for(AgentRole::Mutator), ctx.step_budget,
                     result.transcript);
    } catch (const Error& e) {
      if (e.kind() != "BudgetExhausted") throw;
      exhausted = true;
    }
    ctx.toolkit->run_pending_variants();
    result.set = ctx.toolkit->current_set();

    GateResult gate = ideal_pair_gate(result.set);
    if (gate.pass) {
      result.set.ideal = true;
      break;
    }
    if (attempt >= kMaxMutatorRetries || exhausted) {
      result.set.ideal = false;
      result.set.fallback_single_execution = true;
      break;
    }
    ++round.mutator_retries_used;
    user_context = "The variant set was rejected: " + gate_failure_to_string(gate.reason) +
                   ". Adjust the mutations to produce the missing outcome class.";
  }

  // The final assistant message is the strategy summary kept for skills.
  for (auto it = result.transcript.messages.rbegin(); it != result.transcript.messages.rend();
       ++it) {
    if (it->role == "assistant" && !it->tool_name) {
      result.strategy_summary = it->content;
      break;
    }
  }
  round.fallback_single_execution = result.set.fallback_single_execution;
  return result;
}

/* ------------------------------------------------------------------ */
/* Analyzer phase                                                      */
/* ------------------------------------------------------------------ */

namespace {

std::vector<ProbeSpec> nominations_from_final(const std::string& final_text) {
  auto doc = nlohmann::json::parse(final_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("probes")) return {};
  try {
    return probe_specs_from_json(doc["probes"].dump());
  } catch (const Error&) {
    return {};
  }
}

std::string last_final_text(const Transcript& transcript) {
  for (auto it = transcript.messages.rbegin(); it != transcript.messages.rend(); ++it)
    if (it->role == "assistant" && !it->tool_name) return it->content;
  return "";
}

}  // namespace

AnalyzerResult analyzer_phase(PhaseContext& ctx, const VariantSet& set,
                              const SanitizerReport& report, const CarryOverData* carry_over,
                              RoundState& round) {
  AnalyzerResult result;
  Workspace& ws = *ctx.workspace;

  // Phase 1: fault location. The loop explores the tree and nominates
  // candidate expressions as probe specs in its final message.
  std::ostringstream context;
  context << "Sanitizer report:\n" << report.raw_text << "\n\nVariant outcomes:\n";
  for (const auto& v : set.variants)
    context << "- " << v.variant_id << ": "
            << (v.outcome ? outcome_class_to_string(v.outcome->outcome) : "unexecuted")
            << "\n";
  if (set.fallback_single_execution)
    context << "(no ideal contrastive pair; single-execution analysis on the original PoC)\n";
  context << carry_over_text(carry_over);

  bool exhausted = false;
  try {
    run_agent_loop(*ctx.backend, AgentRole::Analyzer, phase_prompt(ctx, AgentRole::Analyzer),
                   context.str(), ctx.toolkit->dispatcher(AgentRole::Analyzer),
                   tool_schemas_for(AgentRole::Analyzer), ctx.step_budget,
                   result.transcript);
  } catch (const Error& e) {
    if (e.kind() != "BudgetExhausted") throw;
    exhausted = true;
  }

  std::vector<ProbeSpec> specs;
  if (carry_over && !carry_over->previous_probe_specs_json.empty()) {
    // Effective probes from the failed round are preserved and re-applied first.
    try {
      specs = probe_specs_from_json(carry_over->previous_probe_specs_json);
    } catch (const Error&) {
    }
  }
  for (auto& spec : nominations_from_final(last_final_text(result.transcript))) {
    bool duplicate = std::any_of(specs.begin(), specs.end(), [&](const ProbeSpec& s) {
      return s.site == spec.site;
    });
    if (!duplicate) specs.push_back(std::move(spec));
  }

  // Sites are reported in pristine-tree coordinates: records carry
  // instrumented line numbers (the macro preamble shifts them), but the
  // Patcher edits the reverted tree and frame ranking compares against the
  // uninstrumented crash report.
  std::map<std::string, std::pair<std::string, int>> site_locations;
  for (const auto& spec : specs) {
    try {
      std::string content = ws.read(spec.path);
      size_t pos = content.find(spec.anchor);
      int line = pos == std::string::npos
                     ? 0
                     : 1 + static_cast<int>(
                               std::count(content.begin(), content.begin() + pos, '\n'));
      site_locations[spec.site] = {spec.path, line};
    } catch (const Error&) {
    }
  }

  // Phase 2: differential execution under the same probes.
  ProbeRunSet run_set;
  run_set.expected_class = ctx.manifest->expected_class;
  bool instrumented = false;
  if (!specs.empty()) {
    try {
      instrument(ws, specs, ctx.manifest->language);
      instrumented = true;
    } catch (const Error&) {
      specs.clear();  // anchors rejected; degrade to the crash-frame spec
    }
  }
  if (instrumented) {
    std::vector<std::pair<std::string, std::string>> inputs;
    for (const auto& v : set.variants) inputs.emplace_back(v.variant_id, v.path);
    for (int repair_attempt = 0;; ++repair_attempt) {
      try {
        ProbeRunOutput output =
            run_probed(*ctx.sandbox, inputs, ctx.toolkit->original_poc_abs());
        run_set.runs = std::move(output.runs);
        break;
      } catch (const Error& e) {
        if (e.kind() != "BuildFailedAfterInstrumentation") throw;
        if (repair_attempt >= 1 || exhausted) {
          ws.revert_all_edits(AgentRole::Analyzer);
          instrumented = false;
          break;
        }
        // One self-repair turn: the agent sees the compiler output and may
        // fix its own probe edits.
        try {
          run_agent_loop(*ctx.backend, AgentRole::Analyzer,
                         phase_prompt(ctx, AgentRole::Analyzer),
                         "Instrumentation broke the build. Compiler output:\n" +
                             std::string(e.what()) + "\nRepair your probe edits.",
                         ctx.toolkit->dispatcher(AgentRole::Analyzer),
                         tool_schemas_for(AgentRole::Analyzer), ctx.step_budget,
                         result.transcript);
        } catch (const Error& inner) {
          if (inner.kind() != "BudgetExhausted") throw;
          exhausted = true;
        }
      }
    }
  }

  // Phase 3: specification inference over the contrastive evidence.
  SpecMode mode = run_set.contrastive() ? SpecMode::Contrastive : SpecMode::SingleExecution;
  if (set.fallback_single_execution) mode = SpecMode::SingleExecution;
  ObservationSet observations = collect_observations(run_set);
  for (auto& obs : observations.observations) {
    auto it = site_locations.find(obs.site);
    if (it != site_locations.end() && it->second.second > 0) {
      obs.file = it->second.first;
      obs.line = it->second.second;
    }
  }
  std::vector<CausalCandidate> candidates = rank_candidates(observations, &report);
  result.specification = compose_specification(candidates, &report, mode);
  result.probe_specs = instrumented ? specs : std::vector<ProbeSpec>{};

  // One optional refinement turn may rewrite the description, never the
  // candidate list; the machine text always rides along.
  if (!exhausted) {
    try {
      run_agent_loop(*ctx.backend, AgentRole::Analyzer,
                     phase_prompt(ctx, AgentRole::Analyzer),
                     "Draft specification:\n" + result.specification.to_text() +
                         "\nOptionally rewrite the Description (text only); reply with "
                         "the new description or an empty message to keep it.",
                     ctx.toolkit->dispatcher(AgentRole::Analyzer),
                     tool_schemas_for(AgentRole::Analyzer), ctx.step_budget,
                     result.transcript);
      std::string rewrite = trim(last_final_text(result.transcript));
      if (!rewrite.empty()) result.specification.description = rewrite;
    } catch (const Error& e) {
      if (e.kind() != "BudgetExhausted") throw;
    }
  }

  // No instrumentation residue may remain in the working tree.
  ws.revert_all_edits(AgentRole::Analyzer);
  for (const auto& path : ws.touched_files()) {
    std::string content = ws.read(path);
    if (content.find(kProbeSentinel) != std::string::npos ||
        content.find(kProbeGuard) != std::string::npos)
      throw Error("ResidueDetected", path + " still contains probe residue after revert");
  }
  round.fallback_single_execution =
      round.fallback_single_execution || mode == SpecMode::SingleExecution;
  return result;
}

/* ------------------------------------------------------------------ */
/* Patcher phase                                                       */
/* ------------------------------------------------------------------ */

PatcherResult patcher_phase(PhaseContext& ctx, const RepairSpecification& spec,
                            const std::vector<RepairSkill>& skills,
                            const CarryOverData* carry_over, RoundState& round) {
  PatcherResult result;
  ctx.toolkit->reset_submission();

  std::ostringstream context;
  context << "Repair specification:\n" << spec.to_text() << "\n";
  if (!skills.empty()) {
    context << "## Retrieved repair skills (verified fixes for similar errors)\n";
    for (const auto& s : skills) {
      context << "- [" << s.skill_id << "] class " << s.vuln_class.canonical() << "\n"
              << "  Specification: " << s.specification_text << "\n"
              << "  Patch:\n" << s.patch_text << "\n";
    }
  }
  context << carry_over_text(carry_over);

  std::string user_context = context.str();
  for (int attempt = 0;; ++attempt) {
    bool exhausted = false;
    try {
      run_agent_loop(*ctx.backend, AgentRole::Patcher, phase_prompt(ctx, AgentRole::Patcher),
                     user_context, ctx.toolkit->dispatcher(AgentRole::Patcher),
                     tool_schemas_for(AgentRole::Patcher), ctx.step_budget,
                     result.transcript,
                     [&] { return ctx.toolkit->submitted().has_value(); });
    } catch (const Error& e) {
      if (e.kind() != "BudgetExhausted") throw;
      exhausted = true;
    }

    if (ctx.toolkit->submitted()) {
      result.candidate = *ctx.toolkit->submitted();
      return result;
    }

    // The agent stopped without a successful submit; evaluate the gates on
    // the tree as it stands.
    PatchCandidate candidate;
    for (const auto& record : ctx.workspace->journal())
      if (record.agent == AgentRole::Patcher) candidate.edits.push_back(record);

    std::string retry_reason;
    if (candidate.edits.empty()) {
      candidate.verification = VerificationState::EmptyDiff;
      retry_reason = "The previous attempt produced an empty diff. Apply a concrete "
                     "source fix with str_replace_edit.";
    } else {
      ExecutionResult b = ctx.sandbox->build();
      if (b.exit_code != 0 || b.timed_out) {
        candidate.verification = VerificationState::CompileFailed;
        candidate.failure_output = b.stderr_text.empty() ? b.stdout_text : b.stderr_text;
        retry_reason = "The patched tree does not compile. Compiler output:\n" +
                       candidate.failure_output;
      } else {
        AgentToolkit::CheckResult check = ctx.toolkit->check_vul();
        if (check.fixed) {
          // Verified but never submitted; extract the clean diff ourselves.
          std::string submit_result = ctx.toolkit->submit();
          if (ctx.toolkit->submitted()) {
            result.candidate = *ctx.toolkit->submitted();
            return result;
          }
          candidate.verification = VerificationState::EmptyDiff;
          candidate.failure_output = submit_result;
          retry_reason = submit_result;
        } else {
          candidate.verification = VerificationState::StillVulnerable;
          candidate.still_vulnerable_input = check.failing_input;
          candidate.failure_output = check.output;
          candidate.failure_report = check.report;
          try {
            candidate.diff = ctx.workspace->extract_diff(AgentRole::Patcher);
          } catch (const Error&) {
          }
          result.candidate = std::move(candidate);
          return result;  // verification failure ends the round (carry-over refinement)
        }
      }
    }

    if (attempt >= kMaxPatcherRetries || exhausted) {
      result.candidate = std::move(candidate);
      return result;
    }
    ++round.patcher_retries_used;
    user_context = retry_reason;
  }
}

}  // namespace contrafix
