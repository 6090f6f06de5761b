#include <doctest.h>

#include <json.hpp>

#include "contrafix/diff.hpp"
#include "contrafix/error.hpp"
#include "contrafix/orchestrator.hpp"
#include "contrafix/probe.hpp"
#include "contrafix/probe_wire.hpp"
#include "support/temp_dir.hpp"
#include "support/toy.hpp"

using namespace contrafix;
namespace toy = contrafix::testing;
using contrafix::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct EngineRig {
  TempDir dir;
  fs::path ws_root;
  EngineConfig config;
  InstanceManifest manifest;

  explicit EngineRig(const std::string& instance_id = "toy-1",
                     const std::string& disclosure = "2024-01-01") {
    ws_root = dir / "ws";
    toy::write_toy_workspace(ws_root);
    write_file(dir / "mock_table.json", toy::toy_mock_table());
    config.sandbox_spec = "mock:" + (dir / "mock_table.json").string();
    config.trace_dir = dir / "trace";
    config.skills_dir = dir / "skills";
    config.variant_parent = dir / "aux";
    manifest = parse_instance_manifest(
        toy::toy_manifest_json(ws_root, instance_id, disclosure));
  }
};

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_SUITE_BEGIN("orchestrator");

TEST_CASE("happy path resolves in round 1 with a clean tree") {
  EngineRig rig;
  Engine engine(rig.config);
  ScriptedBackend backend(toy::toy_happy_script());
  std::string pristine = slurp(rig.ws_root / "src/app.c");

  auto resolution = engine.resolve_instance(rig.manifest, backend);
  CHECK(resolution.status == ResolutionStatus::Resolved);
  CHECK(resolution.rounds_used == 1);
  REQUIRE(resolution.final_diff.has_value());
  CHECK(!resolution.final_diff->text.empty());
  CHECK(resolution.final_diff->text.find(kProbeSentinel) == std::string::npos);
  CHECK(resolution.cost_usd > 0);

  // workspace = pristine + exactly the final patch
  std::string patched = slurp(rig.ws_root / "src/app.c");
  CHECK(patched != pristine);
  CHECK(patched.find("if (nslots > 62)") != std::string::npos);
  CHECK(patched.find(kProbeGuard) == std::string::npos);
  CHECK(apply_unified_diff(pristine,
                           diff_section_for(resolution.final_diff->text, "src/app.c")) ==
        patched);

  // skills were recorded for both tracks; the mutation command log equals
  // the concatenated creation logs of the final variant set
  CHECK(engine.skills().repair_entries().size() == 1);
  const MutationSkill* recorded = nullptr;
  for (const auto& s : engine.skills().mutation_entries())
    if (!s.is_seed_template) recorded = &s;
  REQUIRE(recorded != nullptr);
  REQUIRE(recorded->command_log.size() == 2);
  CHECK(recorded->command_log[0].find("v_crash") != std::string::npos);
  CHECK(recorded->command_log[1].find("v_safe") != std::string::npos);
  CHECK(recorded->strategy.find("boundary") != std::string::npos);
  CHECK(recorded->poc_format == "bin");

  // trace layout
  fs::path trace = fs::path(resolution.trace_dir);
  CHECK(fs::exists(trace / "manifest.json"));
  CHECK(fs::exists(trace / "final.diff"));
  CHECK(fs::exists(trace / "round_1" / "mutator.transcript.json"));
  CHECK(fs::exists(trace / "round_1" / "analyzer.transcript.json"));
  CHECK(fs::exists(trace / "round_1" / "patcher.transcript.json"));
  CHECK(fs::exists(trace / "round_1" / "specification.json"));

  // the engine path produced contrastive evidence, not a degraded fallback
  auto spec_doc = nlohmann::json::parse(slurp(trace / "round_1" / "specification.json"));
  CHECK(spec_doc["mode"] == "contrastive");
  REQUIRE(spec_doc["candidates"].size() == 1);
  CHECK(spec_doc["candidates"][0]["key"] == "nslots");
  CHECK(spec_doc["description"].get<std::string>().find(
            "nslots=62 stays in bounds; nslots=63") != std::string::npos);
}

TEST_CASE("decoy patch fails round 1; carry-over drives round 2") {
  EngineRig rig("toy-decoy");
  Engine engine(rig.config);
  ScriptedBackend backend(toy::toy_decoy_script());
  std::string pristine = slurp(rig.ws_root / "src/app.c");

  auto resolution = engine.resolve_instance(rig.manifest, backend);
  CHECK(resolution.status == ResolutionStatus::Resolved);
  CHECK(resolution.rounds_used == 2);

  // the recorded carry-over names the failure and packages all three items
  fs::path carry_file = fs::path(resolution.trace_dir) / "round_1" / "carry_over.json";
  REQUIRE(fs::exists(carry_file));
  auto carry = nlohmann::json::parse(slurp(carry_file));
  CHECK(carry["failure_kind"] == "persists");
  CHECK(carry["failed_patch"].get<std::string>().find("nslots == 63") !=
        std::string::npos);
  CHECK(!carry["failure_output"].get<std::string>().empty());
  CHECK(carry["previous_spec"].get<std::string>().find("nslots") != std::string::npos);
  CHECK(carry["previous_probe_specs"].get<std::string>().find("loop_entry") !=
        std::string::npos);

  // round 2 context carries the three evidence items into the prompts
  std::string round2_mutator =
      slurp(fs::path(resolution.trace_dir) / "round_2" / "mutator.transcript.json");
  CHECK(round2_mutator.find("Failed patch") != std::string::npos);
  CHECK(round2_mutator.find("Previous repair specification") != std::string::npos);
  CHECK(round2_mutator.find("Previous probe instrumentation") != std::string::npos);
  CHECK(round2_mutator.find("persists") != std::string::npos);

  // the decoy is gone; only the real fix ships
  std::string patched = slurp(rig.ws_root / "src/app.c");
  CHECK(patched.find("nslots == 63") == std::string::npos);
  CHECK(patched.find("if (nslots > 62)") != std::string::npos);
  CHECK(resolution.final_diff->text.find("nslots == 63") == std::string::npos);
  (void)pristine;
}

TEST_CASE("three failing rounds end Unresolved with a pristine tree") {
  EngineRig rig("toy-budget");
  Engine engine(rig.config);
  ScriptedBackend backend(toy::toy_budget_script());
  std::string pristine = slurp(rig.ws_root / "src/app.c");

  auto resolution = engine.resolve_instance(rig.manifest, backend);
  CHECK(resolution.status == ResolutionStatus::Unresolved);
  CHECK(resolution.rounds_used == 3);
  CHECK(!resolution.final_diff.has_value());
  CHECK(slurp(rig.ws_root / "src/app.c") == pristine);
  CHECK(engine.skills().repair_entries().empty());

  // budget ceilings hold in every recorded transcript
  for (int round = 1; round <= 3; ++round) {
    for (const char* agent : {"mutator", "analyzer", "patcher"}) {
      fs::path file = fs::path(resolution.trace_dir) /
                      ("round_" + std::to_string(round)) /
                      (std::string(agent) + ".transcript.json");
      REQUIRE(fs::exists(file));
      auto doc = nlohmann::json::parse(slurp(file));
      CHECK(doc["steps_used"].get<int>() <= 40);
    }
  }
}

TEST_CASE("non-reproducing PoC is an environment failure") {
  EngineRig rig("toy-env");
  write_file(rig.ws_root / "poc.bin", toy::toy_input(62));  // runs safe
  Engine engine(rig.config);
  ScriptedBackend backend(toy::toy_happy_script());
  auto resolution = engine.resolve_instance(rig.manifest, backend);
  CHECK(resolution.status == ResolutionStatus::EnvironmentFailure);
  CHECK(resolution.detail.find("PocNotReproducible") != std::string::npos);
  CHECK(resolution.rounds_used == 0);
}

TEST_CASE("reported cost equals recomputation from the trace") {
  EngineRig rig("toy-cost");
  Engine engine(rig.config);
  ScriptedBackend backend(toy::toy_decoy_script());
  auto resolution = engine.resolve_instance(rig.manifest, backend);
  REQUIRE(resolution.status == ResolutionStatus::Resolved);

  double recomputed = 0;
  PriceTable prices = default_price_table();
  for (int round = 1; round <= resolution.rounds_used; ++round) {
    for (const char* agent : {"mutator", "analyzer", "patcher"}) {
      fs::path file = fs::path(resolution.trace_dir) /
                      ("round_" + std::to_string(round)) /
                      (std::string(agent) + ".transcript.json");
      auto doc = nlohmann::json::parse(slurp(file));
      // per-phase subtotal first, mirroring the engine's accumulation order
      Transcript t;
      for (const auto& usage : doc["per_call_usage"])
        t.per_call_usage.push_back({usage["input_tokens"].get<std::int64_t>(),
                                    usage["output_tokens"].get<std::int64_t>()});
      recomputed += transcript_cost(t, prices, "scripted");
    }
  }
  CHECK(resolution.cost_usd == recomputed);
}

TEST_CASE("build_carry_over classifies the failure kind") {
  SanitizerReport original;
  original.error_class = VulnClass::heap_buffer_overflow();
  original.frames = {{0, "main", "src/app.c", 20}};
  original.raw_text = "r";

  RepairSpecification spec;
  spec.description = "desc";
  spec.machine_description = "desc";

  PatchCandidate failed;
  failed.verification = VerificationState::StillVulnerable;
  failed.diff.text = "--- a/src/app.c\n";
  failed.diff.files = {"src/app.c"};
  failed.failure_output = "still crashing";

  SUBCASE("same class, same top frame: persists") {
    failed.failure_report = original;
    auto carry = build_carry_over(failed, spec, {}, original);
    CHECK(carry.failure_kind == "persists");
  }
  SUBCASE("different class: new crash type") {
    SanitizerReport now = original;
    now.error_class = VulnClass::segv();
    failed.failure_report = now;
    auto carry = build_carry_over(failed, spec, {}, original);
    CHECK(carry.failure_kind == "new crash type");
  }
  SUBCASE("same class, different top frame: site shifted") {
    SanitizerReport now = original;
    now.frames = {{0, "helper", "src/util.c", 7}};
    failed.failure_report = now;
    auto carry = build_carry_over(failed, spec, {}, original);
    CHECK(carry.failure_kind == "site shifted");
  }
  SUBCASE("no report at all") {
    failed.failure_report.reset();
    auto carry = build_carry_over(failed, spec, {}, original);
    CHECK(carry.failure_kind == "abnormal");
  }
}

TEST_CASE("batch runs in disclosure order and accumulates skills") {
  TempDir dir;
  fs::path ws_a = dir / "ws_a";
  fs::path ws_b = dir / "ws_b";
  toy::write_toy_workspace(ws_a);
  toy::write_toy_workspace(ws_b);
  write_file(dir / "mock_table.json", toy::toy_mock_table());
  write_file(dir / "happy.json", toy::toy_happy_script());

  fs::path manifests = dir / "manifests";
  fs::create_directories(manifests);
  write_file(manifests / "a.json", toy::toy_manifest_json(ws_a, "inst-a", "2020-01-01"));
  write_file(manifests / "b.json", toy::toy_manifest_json(ws_b, "inst-b", "2030-01-01"));

  EngineConfig config;
  config.sandbox_spec = "mock:" + (dir / "mock_table.json").string();
  config.backend_spec = "scripted:" + (dir / "happy.json").string();
  config.trace_dir = dir / "trace";
  config.skills_dir = dir / "skills";
  config.variant_parent = dir / "aux";
  config.seed_templates = false;

  Engine engine(config);
  auto report = engine.run_batch(manifests);
  REQUIRE(report.resolutions.size() == 2);
  CHECK(report.resolutions[0].instance_id == "inst-a");  // disclosure order
  CHECK(report.resolutions[1].instance_id == "inst-b");
  CHECK(report.resolved_rate == 1.0);
  CHECK(report.per_class["heap-buffer-overflow"] == std::pair<int, int>{2, 2});

  // B's prompts carried A's recorded skills
  std::string b_mutator = slurp(dir / "trace" / "inst-b" / "round_1" /
                                "mutator.transcript.json");
  CHECK(b_mutator.find("Nudged the slot count") != std::string::npos);
  std::string b_patcher = slurp(dir / "trace" / "inst-b" / "round_1" /
                                "patcher.transcript.json");
  CHECK(b_patcher.find("Retrieved repair skills") != std::string::npos);
  CHECK(b_patcher.find("nslots=62 stays in bounds") != std::string::npos);

  // A ran with an empty store
  std::string a_mutator = slurp(dir / "trace" / "inst-a" / "round_1" /
                                "mutator.transcript.json");
  CHECK(a_mutator.find("Retrieved mutation skills") == std::string::npos);

  // the retrieval audit recorded no leakage violations anywhere
  for (const auto& audit : engine.skills().audit_log())
    CHECK(audit.leakage_violations == 0);
}

TEST_CASE("reversed disclosure dates empty both retrievals") {
  TempDir dir;
  fs::path ws_a = dir / "ws_a";
  fs::path ws_b = dir / "ws_b";
  toy::write_toy_workspace(ws_a);
  toy::write_toy_workspace(ws_b);
  write_file(dir / "mock_table.json", toy::toy_mock_table());
  write_file(dir / "happy.json", toy::toy_happy_script());

  fs::path manifests = dir / "manifests";
  fs::create_directories(manifests);
  // B now discloses before A: B runs first with an empty store, and A's
  // entry never becomes visible to it.
  write_file(manifests / "a.json", toy::toy_manifest_json(ws_a, "inst-a", "2030-01-01"));
  write_file(manifests / "b.json", toy::toy_manifest_json(ws_b, "inst-b", "2020-01-01"));

  EngineConfig config;
  config.sandbox_spec = "mock:" + (dir / "mock_table.json").string();
  config.backend_spec = "scripted:" + (dir / "happy.json").string();
  config.trace_dir = dir / "trace";
  config.skills_dir = dir / "skills";
  config.variant_parent = dir / "aux";
  config.seed_templates = false;

  Engine engine(config);
  auto report = engine.run_batch(manifests);
  CHECK(report.resolutions[0].instance_id == "inst-b");

  std::string b_mutator = slurp(dir / "trace" / "inst-b" / "round_1" /
                                "mutator.transcript.json");
  CHECK(b_mutator.find("Retrieved mutation skills") == std::string::npos);
  std::string b_patcher = slurp(dir / "trace" / "inst-b" / "round_1" /
                                "patcher.transcript.json");
  CHECK(b_patcher.find("Retrieved repair skills") == std::string::npos);

  for (const auto& audit : engine.skills().audit_log())
    CHECK(audit.leakage_violations == 0);
}

TEST_CASE("batch rates count environment failures in the denominator") {
  TempDir dir;
  fs::path ws_a = dir / "ws_a";
  fs::path ws_b = dir / "ws_b";
  toy::write_toy_workspace(ws_a);
  toy::write_toy_workspace(ws_b);
  write_file(ws_b / "poc.bin", toy::toy_input(62));  // reproduces Safe -> env failure
  write_file(dir / "mock_table.json", toy::toy_mock_table());
  write_file(dir / "happy.json", toy::toy_happy_script());

  fs::path manifests = dir / "manifests";
  fs::create_directories(manifests);
  write_file(manifests / "a.json", toy::toy_manifest_json(ws_a, "inst-a", "2020-01-01"));
  write_file(manifests / "b.json", toy::toy_manifest_json(ws_b, "inst-b", "2021-01-01"));

  EngineConfig config;
  config.sandbox_spec = "mock:" + (dir / "mock_table.json").string();
  config.backend_spec = "scripted:" + (dir / "happy.json").string();
  config.trace_dir = dir / "trace";
  config.skills_dir = dir / "skills";
  config.variant_parent = dir / "aux";

  Engine engine(config);
  auto report = engine.run_batch(manifests);
  CHECK(report.resolutions.size() == 2);
  CHECK(report.resolved_rate == 0.5);
  CHECK(report.environment_failures == 1);

  CHECK_THROWS_AS(Engine(config).run_batch(dir / "nothing_here"), Error);
}

TEST_CASE("replay re-drives a recorded trace to the same outcome") {
  EngineRig rig("toy-replay");
  Engine engine(rig.config);
  ScriptedBackend backend(toy::toy_happy_script());
  auto first = engine.resolve_instance(rig.manifest, backend);
  REQUIRE(first.status == ResolutionStatus::Resolved);

  EngineConfig replay_config = rig.config;
  replay_config.trace_dir = rig.dir / "trace_replay";
  replay_config.skills_dir = rig.dir / "skills_replay";
  Engine replayer(replay_config);
  auto second = replayer.replay(first.trace_dir);
  CHECK(second.status == ResolutionStatus::Resolved);
  CHECK(second.rounds_used == first.rounds_used);
  CHECK(second.final_diff->text == first.final_diff->text);
}

TEST_SUITE_END();
