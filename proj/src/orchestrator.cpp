#include "contrafix/orchestrator.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <thread>

#include <json.hpp>

#include "contrafix/diff.hpp"
#include "contrafix/error.hpp"
#include "contrafix/probe.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

namespace fs = std::filesystem;

std::string resolution_status_to_string(ResolutionStatus s) {
  switch (s) {
    case ResolutionStatus::Resolved: return "Resolved";
    case ResolutionStatus::Unresolved: return "Unresolved";
    case ResolutionStatus::EnvironmentFailure: return "EnvironmentFailure";
  }
  return "Unresolved";
}

std::string Resolution::to_json() const {
  nlohmann::json doc;
  doc["instance_id"] = instance_id;
  doc["status"] = resolution_status_to_string(status);
  doc["rounds_used"] = rounds_used;
  doc["cost_usd"] = cost_usd;
  doc["duration_ms"] = duration_ms;
  doc["trace_dir"] = trace_dir;
  doc["detail"] = detail;
  doc["expected_class"] = expected_class;
  if (final_diff) {
    doc["final_diff"] = final_diff->text;
    doc["final_diff_files"] = final_diff->files;
  }
  return doc.dump(2);
}

std::string BatchReport::to_json() const {
  nlohmann::json doc;
  doc["resolved_rate"] = resolved_rate;
  doc["avg_cost_usd"] = avg_cost_usd;
  doc["environment_failures"] = environment_failures;
  nlohmann::json by_class = nlohmann::json::object();
  for (const auto& [label, counts] : per_class)
    by_class[label] = {{"n", counts.first}, {"resolved", counts.second}};
  doc["per_class"] = std::move(by_class);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : resolutions)
    rows.push_back({{"instance_id", r.instance_id},
                    {"status", resolution_status_to_string(r.status)},
                    {"rounds_used", r.rounds_used},
                    {"cost_usd", r.cost_usd}});
  doc["resolutions"] = std::move(rows);
  return doc.dump(2);
}

/* ------------------------------------------------------------------ */
/* Carry-over                                                          */
/* ------------------------------------------------------------------ */

CarryOverData build_carry_over(const PatchCandidate& failed,
                               const RepairSpecification& spec,
                               const std::vector<ProbeSpec>& probe_specs,
                               const SanitizerReport& original_report) {
  CarryOverData carry;
  carry.failed_patch_text = failed.diff.text;
  carry.failed_patch_files = failed.diff.files;
  carry.failure_output = failed.failure_output;
  carry.previous_spec_text = spec.to_text();
  carry.previous_probe_specs_json = probe_specs_to_json(probe_specs);

  if (!failed.failure_report) {
    carry.failure_kind = failed.verification == VerificationState::CompileFailed
                             ? "compile failure"
                             : "abnormal";
    return carry;
  }
  const SanitizerReport& now = *failed.failure_report;
  if (!(now.error_class == original_report.error_class)) {
    carry.failure_kind = "new crash type";
    return carry;
  }
  auto top = [](const SanitizerReport& r) -> std::pair<std::string, std::string> {
    if (r.frames.empty()) return {"", ""};
    return {r.frames.front().function, r.frames.front().file};
  };
  carry.failure_kind = top(now) == top(original_report) ? "persists" : "site shifted";
  return carry;
}

/* ------------------------------------------------------------------ */
/* Engine                                                              */
/* ------------------------------------------------------------------ */

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
  skills_ = std::make_unique<SkillStore>(config_.skills_dir);
  if (config_.seed_templates) skills_->seed_mutation_templates();
}

std::unique_ptr<ChatBackend> Engine::make_backend() const {
  if (starts_with(config_.backend_spec, "scripted:")) {
    std::string path = config_.backend_spec.substr(9);
    if (path.empty()) return std::make_unique<ScriptedBackend>("{}");
    return std::make_unique<ScriptedBackend>(read_file(path));
  }
  if (starts_with(config_.backend_spec, "remote:")) {
    return std::make_unique<RemoteBackend>(config_.backend_spec.substr(7), config_.model,
                                           config_.remote_api_key_env);
  }
  throw Error("MalformedManifest",
              "backend must be scripted:<file> or remote:<endpoint>, got " +
                  config_.backend_spec);
}

std::unique_ptr<Sandbox> Engine::make_sandbox(const InstanceManifest& manifest,
                                              Workspace& workspace) const {
  auto generation = [&workspace] { return workspace.generation(); };
  if (config_.sandbox_spec == "local") {
    std::map<std::string, std::string> env = config_.extra_env;
    env.insert(manifest.env.begin(), manifest.env.end());
    return std::make_unique<LocalSandbox>(manifest, generation, std::move(env));
  }
  if (starts_with(config_.sandbox_spec, "mock:"))
    return std::make_unique<MockSandbox>(manifest, generation,
                                         read_file(config_.sandbox_spec.substr(5)));
  throw Error("MalformedManifest",
              "sandbox must be local or mock:<table.json>, got " + config_.sandbox_spec);
}

Resolution Engine::resolve_instance(const InstanceManifest& manifest) {
  auto backend = make_backend();
  return resolve_instance(manifest, *backend);
}

Resolution Engine::resolve_instance(const InstanceManifest& manifest, ChatBackend& backend) {
  auto start = std::chrono::steady_clock::now();
  Resolution resolution;
  resolution.instance_id = manifest.instance_id;
  resolution.expected_class = manifest.expected_class.canonical();

  fs::path trace = config_.trace_dir / manifest.instance_id;
  fs::create_directories(trace);
  resolution.trace_dir = trace.string();
  nlohmann::json manifest_copy = {
      {"instance_id", manifest.instance_id},
      {"repo_id", manifest.repo_id},
      {"workspace_root", manifest.workspace_root},
      {"poc_path", manifest.poc_path},
      {"expected_class", manifest.expected_class.canonical()},
      {"disclosure_date", manifest.disclosure_date.to_string()},
      {"language", language_to_string(manifest.language)},
      {"commands",
       {{"build", manifest.commands.build},
        {"run_poc", manifest.commands.run_poc},
        {"timeout_build_s", manifest.commands.timeout_build_s},
        {"timeout_run_s", manifest.commands.timeout_run_s}}}};
  if (manifest.commands.verify)
    manifest_copy["commands"]["verify"] = *manifest.commands.verify;
  write_file(trace / "manifest.json", manifest_copy.dump(2));
  write_file(trace / "config.json",
             nlohmann::json{{"sandbox", config_.sandbox_spec},
                            {"backend", config_.backend_spec},
                            {"model", config_.model},
                            {"step_budget", config_.step_budget}}
                 .dump(2));

  auto finish = [&](ResolutionStatus status, const std::string& detail) -> Resolution& {
    resolution.status = status;
    resolution.detail = detail;
    resolution.duration_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - start)
                                 .count();
    write_file(trace / "resolution.json", resolution.to_json());
    return resolution;
  };

  Workspace workspace(manifest.workspace_root);
  std::unique_ptr<Sandbox> sandbox;
  try {
    sandbox = make_sandbox(manifest, workspace);
  } catch (const Error& e) {
    return finish(ResolutionStatus::EnvironmentFailure, e.what());
  }

  std::optional<SanitizerReport> original_report;
  fs::path variant_parent = config_.variant_parent.empty()
                                ? fs::path(manifest.workspace_root).parent_path()
                                : config_.variant_parent;
  AgentToolkit toolkit(manifest, workspace, *sandbox, variant_parent,
                       config_.interpreter_cmd);

  // Reproduce the PoC before any round; a non-reproducing instance is an
  // environment failure, not a repair failure.
  try {
    ExecutionResult built = sandbox->build();
    if (built.exit_code != 0 || built.timed_out)
      return finish(ResolutionStatus::EnvironmentFailure,
                    "initial build failed: " + built.stderr_text.substr(0, 2000));
    VariantOutcome original = sandbox->run_poc(toolkit.original_poc_abs());
    if (original.outcome != OutcomeClass::CrashSame)
      return finish(ResolutionStatus::EnvironmentFailure,
                    "PocNotReproducible: original PoC classified " +
                        outcome_class_to_string(original.outcome));
    original_report = original.report;
  } catch (const Error& e) {
    return finish(ResolutionStatus::EnvironmentFailure, e.what());
  }

  PhaseContext ctx;
  ctx.manifest = &manifest;
  ctx.workspace = &workspace;
  ctx.sandbox = sandbox.get();
  ctx.toolkit = &toolkit;
  ctx.backend = &backend;
  ctx.step_budget = config_.step_budget;
  if (!config_.prompts_dir.empty()) {
    for (AgentRole role : {AgentRole::Mutator, AgentRole::Analyzer, AgentRole::Patcher}) {
      fs::path file = config_.prompts_dir / (agent_role_to_string(role) + ".txt");
      if (fs::exists(file)) ctx.prompts[role] = read_file(file);
    }
  }

  std::optional<CarryOverData> carry;
  double cost = 0;

  for (int round_index = 1; round_index <= kMaxRounds; ++round_index) {
    resolution.rounds_used = round_index;
    RoundState round;
    round.round_index = round_index;
    round.carry_over = carry;
    fs::path round_dir = trace / ("round_" + std::to_string(round_index));
    fs::create_directories(round_dir);

    SkillQuery query;
    query.instance_id = manifest.instance_id;
    query.repo_id = manifest.repo_id;
    query.vuln_class = manifest.expected_class;
    query.sanitizer_report_text = original_report ? original_report->raw_text : "";
    query.disclosure_date = manifest.disclosure_date;
    query.k = kDefaultRetrievalK;
    query.compare_by_source_disclosure = config_.temporal_filter_by_disclosure;
    query.track = SkillTrack::Mutation;
    auto mutation_skills = skills_->retrieve_mutation(query);
    query.track = SkillTrack::Repair;
    auto repair_skills = skills_->retrieve_repair(query);

    const CarryOverData* carry_ptr = carry ? &*carry : nullptr;
    try {
      MutatorResult mut = mutator_phase(ctx, mutation_skills, carry_ptr, round);
      write_file(round_dir / "mutator.transcript.json", mut.transcript.to_json());
      cost += transcript_cost(mut.transcript, config_.prices, config_.model);

      AnalyzerResult ana =
          analyzer_phase(ctx, mut.set, *original_report, carry_ptr, round);
      write_file(round_dir / "analyzer.transcript.json", ana.transcript.to_json());
      write_file(round_dir / "specification.json", ana.specification.to_json());
      write_file(round_dir / "probes.json", probe_specs_to_json(ana.probe_specs));
      cost += transcript_cost(ana.transcript, config_.prices, config_.model);

      PatcherResult pat = patcher_phase(ctx, ana.specification, repair_skills, carry_ptr,
                                        round);
      write_file(round_dir / "patcher.transcript.json", pat.transcript.to_json());
      cost += transcript_cost(pat.transcript, config_.prices, config_.model);

      if (pat.candidate.verification == VerificationState::Verified) {
        resolution.final_diff = pat.candidate.diff;
        resolution.cost_usd = cost;
        write_file(trace / "final.diff", pat.candidate.diff.text);

        std::int64_t now = static_cast<std::int64_t>(std::time(nullptr));
        skills_->record_repair_skill(
            manifest.repo_id, manifest.expected_class,
            original_report ? original_report->raw_text : "",
            ana.specification.to_text(), pat.candidate.diff.text, manifest.instance_id,
            now, manifest.disclosure_date, true);
        auto command_log = toolkit.collected_command_log(mut.set);
        if (!command_log.empty()) {
          std::string strategy = mut.strategy_summary.empty()
                                     ? "(no strategy summary recorded)"
                                     : mut.strategy_summary;
          skills_->record_mutation_skill(
              manifest.repo_id, manifest.expected_class, toolkit.poc_format(), strategy,
              command_log, original_report ? original_report->raw_text : "",
              manifest.instance_id, now, manifest.disclosure_date, true);
        }
        return finish(ResolutionStatus::Resolved, "verified in round " +
                                                      std::to_string(round_index));
      }

      carry = build_carry_over(pat.candidate, ana.specification, ana.probe_specs,
                               *original_report);
      write_file(round_dir / "carry_over.json",
                 nlohmann::json{{"failure_kind", carry->failure_kind},
                                {"failed_patch", carry->failed_patch_text},
                                {"failure_output", carry->failure_output},
                                {"previous_spec", carry->previous_spec_text},
                                {"previous_probe_specs",
                                 carry->previous_probe_specs_json}}
                     .dump(2));
      workspace.revert_all_edits(AgentRole::Patcher);
      resolution.detail = "round " + std::to_string(round_index) + " failed: " +
                          verification_state_to_string(pat.candidate.verification);
    } catch (const Error& e) {
      // A round that died mid-phase counts as failed; refinement continues
      // without carry-over evidence it could not produce.
      workspace.revert_all_edits(AgentRole::Analyzer);
      workspace.revert_all_edits(AgentRole::Patcher);
      carry.reset();
      resolution.detail =
          "round " + std::to_string(round_index) + " error: " + e.what();
      write_file(round_dir / "error.txt", resolution.detail);
    }
  }

  resolution.cost_usd = cost;
  workspace.revert_all_edits();  // leave the tree pristine
  return finish(ResolutionStatus::Unresolved, resolution.detail);
}

/* ------------------------------------------------------------------ */
/* Batch                                                               */
/* ------------------------------------------------------------------ */

BatchReport Engine::run_batch(const fs::path& manifest_dir) {
  std::vector<InstanceManifest> manifests;
  std::vector<Resolution> early_failures;
  if (fs::is_directory(manifest_dir)) {
    for (const auto& entry : fs::directory_iterator(manifest_dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
      try {
        manifests.push_back(parse_instance_manifest(read_file(entry.path())));
      } catch (const Error& e) {
        Resolution r;
        r.instance_id = entry.path().stem().string();
        r.status = ResolutionStatus::EnvironmentFailure;
        r.detail = e.what();
        early_failures.push_back(std::move(r));
      }
    }
  }
  if (manifests.empty() && early_failures.empty())
    throw Error("NoInstances", "no manifests in " + manifest_dir.string());

  // Disclosure-date order keeps the temporal leakage filter meaningful.
  std::sort(manifests.begin(), manifests.end(),
            [](const InstanceManifest& a, const InstanceManifest& b) {
              if (a.disclosure_date != b.disclosure_date)
                return a.disclosure_date < b.disclosure_date;
              return a.instance_id < b.instance_id;
            });

  BatchReport report;
  report.resolutions = std::move(early_failures);

  int jobs = std::max(1, config_.jobs);
  if (jobs == 1) {
    for (const auto& manifest : manifests)
      report.resolutions.push_back(resolve_instance(manifest));
  } else {
    // Workers share only the skill store (append-serialized).
    std::vector<Resolution> slots(manifests.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= manifests.size()) return;
        slots[i] = resolve_instance(manifests[i]);
      }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& r : slots) report.resolutions.push_back(std::move(r));
  }

  int resolved = 0;
  double cost = 0;
  for (const auto& r : report.resolutions) {
    if (r.status == ResolutionStatus::Resolved) ++resolved;
    if (r.status == ResolutionStatus::EnvironmentFailure) ++report.environment_failures;
    cost += r.cost_usd;
    auto& cell = report.per_class[r.expected_class.empty() ? "unknown" : r.expected_class];
    ++cell.first;
    if (r.status == ResolutionStatus::Resolved) ++cell.second;
  }
  report.resolved_rate =
      report.resolutions.empty() ? 0.0 : double(resolved) / report.resolutions.size();
  report.avg_cost_usd =
      report.resolutions.empty() ? 0.0 : cost / report.resolutions.size();
  write_file(config_.trace_dir / "batch_report.json", report.to_json());
  return report;
}

/* ------------------------------------------------------------------ */
/* Replay                                                              */
/* ------------------------------------------------------------------ */

std::string script_from_trace(const fs::path& instance_trace_dir) {
  nlohmann::json script = {{"mutator", nlohmann::json::array()},
                           {"analyzer", nlohmann::json::array()},
                           {"patcher", nlohmann::json::array()}};
  for (int round = 1; round <= kMaxRounds; ++round) {
    fs::path round_dir = instance_trace_dir / ("round_" + std::to_string(round));
    if (!fs::is_directory(round_dir)) break;
    for (const char* agent : {"mutator", "analyzer", "patcher"}) {
      fs::path file = round_dir / (std::string(agent) + ".transcript.json");
      if (!fs::exists(file)) continue;
      auto doc = nlohmann::json::parse(read_file(file));
      for (const auto& msg : doc["messages"]) {
        if (msg.value("role", "") != "assistant") continue;
        if (msg.contains("tool")) {
          nlohmann::json step = {{"action", "call"}, {"tool", msg["tool"]}};
          if (msg.contains("args"))
            step["args"] = nlohmann::json::parse(msg["args"].get<std::string>());
          script[agent].push_back(std::move(step));
        } else {
          script[agent].push_back(
              {{"action", "final"}, {"text", msg.value("content", "")}});
        }
      }
    }
  }
  return script.dump(2);
}

Resolution Engine::replay(const fs::path& trace_dir) {
  InstanceManifest manifest =
      parse_instance_manifest(read_file(trace_dir / "manifest.json"));

  // Replays run against the sandbox the trace was recorded with.
  fs::path recorded_config = trace_dir / "config.json";
  if (fs::exists(recorded_config)) {
    auto doc = nlohmann::json::parse(read_file(recorded_config), nullptr, false);
    if (doc.is_object() && doc.contains("sandbox"))
      config_.sandbox_spec = doc["sandbox"].get<std::string>();
  }

  // A resolved trace leaves the patch applied; restore pristine first.
  fs::path diff_file = trace_dir / "final.diff";
  if (fs::exists(diff_file)) {
    std::string diff_text = read_file(diff_file);
    for (const auto& path : diff_touched_files(diff_text)) {
      fs::path target = fs::path(manifest.workspace_root) / path;
      if (!fs::exists(target)) continue;
      std::string section = diff_section_for(diff_text, path);
      try {
        write_file(target, apply_unified_diff(read_file(target), section, /*reverse=*/true));
      } catch (const Error&) {
        // Tree already pristine (or diverged); leave it as found.
      }
    }
  }

  ScriptedBackend backend(script_from_trace(trace_dir));
  return resolve_instance(manifest, backend);
}

BatchReport summarize_trace(const fs::path& trace_dir) {
  BatchReport report;
  int resolved = 0;
  double cost = 0;
  for (const auto& entry : fs::directory_iterator(trace_dir)) {
    if (!entry.is_directory()) continue;
    fs::path file = entry.path() / "resolution.json";
    if (!fs::exists(file)) continue;
    auto doc = nlohmann::json::parse(read_file(file));
    Resolution r;
    r.instance_id = doc.value("instance_id", "");
    std::string status = doc.value("status", "Unresolved");
    r.status = status == "Resolved" ? ResolutionStatus::Resolved
               : status == "EnvironmentFailure" ? ResolutionStatus::EnvironmentFailure
                                                : ResolutionStatus::Unresolved;
    r.rounds_used = doc.value("rounds_used", 0);
    r.cost_usd = doc.value("cost_usd", 0.0);
    r.duration_ms = doc.value("duration_ms", std::int64_t{0});
    r.detail = doc.value("detail", "");
    r.expected_class = doc.value("expected_class", "");
    if (r.status == ResolutionStatus::Resolved) ++resolved;
    if (r.status == ResolutionStatus::EnvironmentFailure) ++report.environment_failures;
    cost += r.cost_usd;
    auto& cell = report.per_class[r.expected_class.empty() ? "unknown" : r.expected_class];
    ++cell.first;
    if (r.status == ResolutionStatus::Resolved) ++cell.second;
    report.resolutions.push_back(std::move(r));
  }
  report.resolved_rate = report.resolutions.empty()
                             ? 0.0
                             : double(resolved) / report.resolutions.size();
  report.avg_cost_usd =
      report.resolutions.empty() ? 0.0 : cost / report.resolutions.size();
  return report;
}

}  // namespace contrafix
