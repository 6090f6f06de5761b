#include <doctest.h>

#include <cmath>
#include <random>

#include "contrafix/error.hpp"
#include "contrafix/skills.hpp"
#include "support/temp_dir.hpp"

using namespace contrafix;
using contrafix::testing::TempDir;

namespace {

RepairSkill add_repair(SkillStore& store, const std::string& repo, const VulnClass& cls,
                       const std::string& report, const std::string& instance,
                       std::int64_t resolved_at,
                       const Date& disclosed = Date{2019, 1, 1}) {
  return store.record_repair_skill(repo, cls, report, "spec for " + instance,
                                   "--- a/f.c\n+++ b/f.c\n@@ -1,1 +1,1 @@\n-x\n+y\n",
                                   instance, resolved_at, disclosed, true);
}

SkillQuery query_for(const std::string& instance, const std::string& repo,
                     const VulnClass& cls, const std::string& report,
                     const Date& disclosed = Date{2021, 6, 1}) {
  SkillQuery q;
  q.instance_id = instance;
  q.repo_id = repo;
  q.vuln_class = cls;
  q.sanitizer_report_text = report;
  q.disclosure_date = disclosed;
  return q;
}

}  // namespace

TEST_SUITE_BEGIN("skills");

TEST_CASE("cosine matches hand computations") {
  CHECK(cosine({1, 0}, {1, 0}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::fabs(cosine({1, 2, 2}, {2, 1, 2}) - 8.0 / 9.0) < 1e-12);

  try {
    cosine({1, 2}, {1, 2, 3});
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == "DimensionMismatch");
  }
  try {
    cosine({0, 0}, {1, 2});
    FAIL("expected ZeroVector");
  } catch (const Error& e) {
    CHECK(e.kind() == "ZeroVector");
  }
}

TEST_CASE("cosine agrees with an independent computation on random pairs") {
  std::mt19937 rng(31337);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    int dim = 2 + trial % 17;
    std::vector<double> a(dim), b(dim);
    for (int i = 0; i < dim; ++i) {
      a[i] = dist(rng);
      b[i] = dist(rng);
    }
    a[0] += 0.5;  // keep away from the zero vector
    b[0] += 0.5;
    long double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < dim; ++i) {
      dot += (long double)a[i] * b[i];
      na += (long double)a[i] * a[i];
      nb += (long double)b[i] * b[i];
    }
    double expected = (double)(dot / (std::sqrt((double)na) * std::sqrt((double)nb)));
    CHECK(std::fabs(cosine(a, b) - expected) < 1e-9);
  }
}

TEST_CASE("default embedding is deterministic, unit-norm, token-sensitive") {
  auto v1 = embed("heap-buffer-overflow WRITE of size 1 in main");
  auto v2 = embed("heap-buffer-overflow WRITE of size 1 in main");
  CHECK(v1 == v2);
  CHECK(v1.size() == kEmbeddingDim);
  double norm = 0;
  for (double x : v1) norm += x * x;
  CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-9);

  // shared tokens score higher than disjoint tokens
  auto near = embed("heap-buffer-overflow READ of size 4 in main");
  auto far = embed("python KeyError traceback dispatch handler");
  CHECK(cosine(v1, near) > cosine(v1, far));

  try {
    embed("   ");
    FAIL("expected EmptyText");
  } catch (const Error& e) {
    CHECK(e.kind() == "EmptyText");
  }
}

TEST_CASE("recording enforces verification and non-empty inputs") {
  TempDir dir;
  SkillStore store(dir.path());
  auto skill = add_repair(store, "repo/a", VulnClass::heap_buffer_overflow(),
                          "==1==ERROR: ...", "inst-a", 1000);
  CHECK(!skill.skill_id.empty());
  CHECK(store.repair_entries().size() == 1);

  try {
    store.record_repair_skill("r", VulnClass::segv(), "t", "s", "patch", "i", 0,
                              Date{2020, 1, 1}, /*verified=*/false);
    FAIL("expected NotVerified");
  } catch (const Error& e) {
    CHECK(e.kind() == "NotVerified");
  }

  try {
    store.record_mutation_skill("r", VulnClass::segv(), "mp4", "strategy", {}, "t", "i", 0,
                                Date{2020, 1, 1}, true);
    FAIL("expected EmptyCommandLog");
  } catch (const Error& e) {
    CHECK(e.kind() == "EmptyCommandLog");
  }

  auto mutation = store.record_mutation_skill(
      "r", VulnClass::segv(), "mp4", "poke the box sizes",
      {"{\"tool\":\"mutate_poc\",\"filename\":\"v1\"}"}, "report", "inst-b", 1000,
      Date{2020, 1, 1}, true);
  CHECK(mutation.command_log.size() == 1);
  CHECK(store.record_mutation_skill("r", VulnClass::segv(), "mp4", "again",
                                    {"cmd"}, "report", "inst-c", 1000, Date{2020, 1, 1},
                                    true)
            .skill_id != mutation.skill_id);
}

TEST_CASE("strategy text round-trips byte-exact through persistence") {
  TempDir dir;
  std::string strategy = "Nudged the slot count across the 62-slot boundary.\n\ttabs too";
  {
    SkillStore store(dir.path());
    store.record_mutation_skill("repo", VulnClass::heap_buffer_overflow(), "bin", strategy,
                                {"cmd1", "cmd2"}, "report text", "inst", 42,
                                Date{2020, 2, 2}, true);
  }
  SkillStore reloaded(dir.path());
  REQUIRE(reloaded.mutation_entries().size() == 1);
  const auto& entry = reloaded.mutation_entries()[0];
  CHECK(entry.strategy == strategy);
  CHECK(entry.command_log == std::vector<std::string>{"cmd1", "cmd2"});
  CHECK(entry.resolved_at == 42);
  CHECK(entry.source_disclosure_date == Date{2020, 2, 2});
}

TEST_CASE("seed templates: one per class, idempotent, heuristic texts") {
  TempDir dir;
  SkillStore store(dir.path());
  auto seeds = store.seed_mutation_templates();
  CHECK(seeds.size() == 6);
  auto again = store.seed_mutation_templates();
  CHECK(again.size() == 6);
  CHECK(store.mutation_entries().size() == 6);

  bool saw_heap = false, saw_uaf = false, saw_npd = false;
  for (const auto& seed : seeds) {
    CHECK(seed.is_seed_template);
    CHECK(seed.source_instance_id.empty());
    if (seed.vuln_class == VulnClass::heap_buffer_overflow()) {
      saw_heap = true;
      CHECK(seed.strategy.find("size and index values near the allocated boundary") !=
            std::string::npos);
    }
    if (seed.vuln_class == VulnClass::use_after_free()) {
      saw_uaf = true;
      CHECK(seed.strategy.find("allocation and deallocation") != std::string::npos);
    }
    if (seed.vuln_class == VulnClass::null_pointer_deref()) {
      saw_npd = true;
      CHECK(seed.strategy.find("nullify object references") != std::string::npos);
    }
  }
  CHECK(saw_heap);
  CHECK(saw_uaf);
  CHECK(saw_npd);
}

TEST_CASE("leakage filter excludes same instance and future resolutions") {
  TempDir dir;
  SkillStore store(dir.path());
  Date disclosure{2021, 6, 1};
  std::int64_t before = Date{2020, 1, 1}.epoch_seconds();
  std::int64_t after = Date{2022, 1, 1}.epoch_seconds();

  auto own = add_repair(store, "r", VulnClass::segv(), "t", "inst-q", before);
  auto old_entry = add_repair(store, "r", VulnClass::segv(), "t", "inst-old", before);
  auto future = add_repair(store, "r", VulnClass::segv(), "t", "inst-new", after);

  SkillQuery q = query_for("inst-q", "r", VulnClass::segv(), "t", disclosure);
  CHECK(!leakage_filter_repair(own, q));      // same instance
  CHECK(leakage_filter_repair(old_entry, q)); // strictly earlier
  CHECK(!leakage_filter_repair(future, q));   // resolved after disclosure

  // resolution exactly at midnight of the disclosure date is excluded
  RepairSkill at_midnight = old_entry;
  at_midnight.source_instance_id = "inst-mid";
  at_midnight.resolved_at = disclosure.epoch_seconds();
  CHECK(!leakage_filter_repair(at_midnight, q));

  // alternate rule keyed on the entry's own disclosure date
  SkillQuery by_date = q;
  by_date.compare_by_source_disclosure = true;
  RepairSkill older_cve = future;  // resolved late, but the CVE is older
  older_cve.source_instance_id = "inst-cve";
  older_cve.source_disclosure_date = Date{2019, 1, 1};
  CHECK(leakage_filter_repair(older_cve, by_date));
}

TEST_CASE("three-tier retrieval with short-circuit") {
  TempDir dir;
  SkillStore store(dir.path());
  std::int64_t early = Date{2019, 1, 1}.epoch_seconds();
  std::string report = "==1==ERROR: AddressSanitizer: SEGV on unknown address";

  auto a = add_repair(store, "repo/x", VulnClass::segv(), report, "inst-a", early);
  auto b = add_repair(store, "repo/y", VulnClass::segv(), report, "inst-b", early);
  auto c = add_repair(store, "repo/z", VulnClass::memory_leak(),
                      "==2==ERROR: LeakSanitizer: detected memory leaks", "inst-c", early);

  SkillQuery q = query_for("inst-q", "repo/x", VulnClass::segv(), report);

  auto tier1 = store.retrieve_repair(q);
  REQUIRE(tier1.size() == 1);  // same repo + class; never descends
  CHECK(tier1[0].skill_id == a.skill_id);

  q.repo_id = "repo/unseen";
  auto tier2 = store.retrieve_repair(q);
  REQUIRE(tier2.size() == 2);  // class matches from other repos
  CHECK(tier2[0].vuln_class == VulnClass::segv());
  CHECK(tier2[1].vuln_class == VulnClass::segv());

  q.vuln_class = VulnClass::use_after_free();
  auto tier3 = store.retrieve_repair(q);
  REQUIRE(!tier3.empty());  // embedding fallback over everything eligible
  CHECK(tier3.size() <= size_t(q.k));

  SkillStore empty_store(dir / "empty");
  CHECK(empty_store.retrieve_repair(q).empty());
}

TEST_CASE("within-tier ranking is cosine with skill_id tie-break") {
  TempDir dir;
  SkillStore store(dir.path());
  std::int64_t early = Date{2019, 1, 1}.epoch_seconds();
  std::string near_report = "heap overflow write main decode frame buffer";
  std::string far_report = "completely different words about leaks timers";

  auto far_skill = add_repair(store, "r", VulnClass::segv(), far_report, "inst-1", early);
  auto near_skill = add_repair(store, "r", VulnClass::segv(), near_report, "inst-2", early);

  SkillQuery q = query_for("inst-q", "r", VulnClass::segv(),
                           "heap overflow write main decode buffer sizes");
  q.k = 2;
  auto out = store.retrieve_repair(q);
  REQUIRE(out.size() == 2);
  CHECK(out[0].skill_id == near_skill.skill_id);
  CHECK(out[1].skill_id == far_skill.skill_id);

  // identical embeddings tie-break lexicographically by skill_id
  auto twin_a = add_repair(store, "twin", VulnClass::memory_leak(), "same words here",
                           "inst-3", early);
  auto twin_b = add_repair(store, "twin", VulnClass::memory_leak(), "same words here",
                           "inst-4", early);
  SkillQuery tq = query_for("inst-q", "twin", VulnClass::memory_leak(), "same words here");
  auto twins = store.retrieve_repair(tq);
  REQUIRE(twins.size() == 2);
  CHECK(twins[0].skill_id < twins[1].skill_id);
}

TEST_CASE("property: tier-1 eligibility short-circuits lower tiers") {
  std::mt19937 rng(1212);
  std::int64_t early = Date{2018, 1, 1}.epoch_seconds();
  for (int trial = 0; trial < 30; ++trial) {
    TempDir dir;
    SkillStore store(dir.path());
    auto pick = [&](int lo, int hi) {
      return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    int n = pick(1, 12);
    for (int i = 0; i < n; ++i) {
      add_repair(store, "repo" + std::to_string(pick(0, 2)),
                 all_vuln_classes()[pick(0, 5)],
                 "report tokens " + std::to_string(pick(0, 5)),
                 "inst" + std::to_string(i), early);
    }
    SkillQuery q = query_for("query-inst", "repo1", all_vuln_classes()[pick(0, 5)],
                             "report tokens 3");
    bool tier1_exists = false;
    for (const auto& entry : store.repair_entries())
      tier1_exists = tier1_exists || (entry.repo_id == q.repo_id &&
                                      entry.vuln_class == q.vuln_class);
    auto out = store.retrieve_repair(q);
    if (tier1_exists) {
      CHECK(!out.empty());
      for (const auto& entry : out) {
        CHECK(entry.repo_id == q.repo_id);
        CHECK(entry.vuln_class == q.vuln_class);
      }
    }
    // the audit trail never records a leakage violation
    for (const auto& audit : store.audit_log()) CHECK(audit.leakage_violations == 0);
  }
}

TEST_CASE("seed templates are retrievable under arbitrarily old disclosures") {
  TempDir dir;
  SkillStore store(dir.path());
  store.seed_mutation_templates();
  SkillQuery q = query_for("inst-q", "nowhere", VulnClass::heap_buffer_overflow(),
                           "heap report", Date{1999, 1, 1});
  q.track = SkillTrack::Mutation;
  auto out = store.retrieve_mutation(q);
  REQUIRE(!out.empty());
  for (const auto& entry : out) CHECK(entry.is_seed_template);
}

TEST_CASE("store round-trips through reload and export/import") {
  TempDir dir;
  TempDir other;
  {
    SkillStore store(dir.path());
    add_repair(store, "r1", VulnClass::segv(), "report one", "i1", 100);
    add_repair(store, "r2", VulnClass::memory_leak(), "report two", "i2", 200);
    store.export_track(SkillTrack::Repair, other / "repair.jsonl");
  }
  SkillStore reloaded(dir.path());
  REQUIRE(reloaded.repair_entries().size() == 2);
  CHECK(reloaded.repair_entries()[0].embedding ==
        embed(reloaded.repair_entries()[0].sanitizer_report_text));

  SkillStore fresh(other / "store");
  CHECK(fresh.import_track(SkillTrack::Repair, other / "repair.jsonl") == 2);
  CHECK(fresh.import_track(SkillTrack::Repair, other / "repair.jsonl") == 0);  // dedup
  REQUIRE(fresh.repair_entries().size() == 2);
  CHECK(fresh.repair_entries()[0].specification_text ==
        reloaded.repair_entries()[0].specification_text);
}

TEST_SUITE_END();
