#include <doctest.h>

#include <filesystem>

#include <json.hpp>

#include "contrafix/sanitizer.hpp"
#include "contrafix/util.hpp"

using namespace contrafix;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("sanitizer");

TEST_CASE("bundled corpus: class, address presence, top frame") {
  fs::path dir = fs::path(CONTRAFIX_TEST_DATA_DIR) / "sanitizer";
  int fixtures = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    ++fixtures;
    CAPTURE(entry.path().filename().string());

    auto expected =
        nlohmann::json::parse(read_file(entry.path().string() + ".expected.json"));
    auto report = parse_report(read_file(entry.path()));
    REQUIRE(report.has_value());
    CHECK(report->error_class ==
          vuln_class_from_label(expected["class"].get<std::string>()));
    CHECK(report->fault_address.has_value() == expected["has_address"].get<bool>());
    if (expected["top_function"].is_null()) {
      CHECK(report->frames.empty());
    } else {
      REQUIRE(!report->frames.empty());
      CHECK(report->frames[0].function == expected["top_function"].get<std::string>());
      CHECK(report->frames[0].file == expected["top_file"].get<std::string>());
      CHECK(report->frames[0].line == expected["top_line"].get<int>());
    }
    // Parser stability: re-parsing the report's own raw text agrees.
    auto again = parse_report(report->raw_text);
    REQUIRE(again.has_value());
    CHECK(again->error_class == report->error_class);
    CHECK(again->frames.size() == report->frames.size());
  }
  CHECK(fixtures >= 12);  // at least two per class
}

TEST_CASE("no banner yields absence, not an error") {
  CHECK(!parse_report("all tests passed\n").has_value());
  CHECK(!parse_report("").has_value());
  CHECK(!parse_report("error: something unrelated\n").has_value());
}

TEST_CASE("first complete report wins with multiple banners") {
  std::string two =
      "==1==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x602000000011 at pc "
      "0x1 bp 0x1 sp 0x1\n"
      "    #0 0x1 in foo /src/a.c:12\n"
      "\n"
      "==1==ERROR: AddressSanitizer: SEGV on unknown address 0x000000000000 (pc 0x2)\n"
      "    #0 0x2 in bar /src/b.c:3\n";
  auto report = parse_report(two);
  REQUIRE(report.has_value());
  CHECK(report->error_class == VulnClass::heap_buffer_overflow());
  CHECK(report->fault_address == "0x602000000011");
  REQUIRE(report->frames.size() == 1);
  CHECK(report->frames[0].function == "foo");
  CHECK(report->frames[0].line == 12);
}

TEST_CASE("incomplete first banner falls through to the next") {
  std::string text =
      "==1==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x10 at pc 0x1\n"
      "SUMMARY: AddressSanitizer: heap-buffer-overflow\n"
      "==2==ERROR: AddressSanitizer: SEGV on unknown address 0x000000000000 (pc 0x2)\n"
      "    #0 0x2 in bar /src/b.c:3\n";
  auto report = parse_report(text);
  REQUIRE(report.has_value());
  CHECK(report->error_class == VulnClass::segv());
}

TEST_CASE("same_error_class uses label normalization") {
  SanitizerReport r;
  r.error_class = VulnClass::segv();
  CHECK(same_error_class(r, VulnClass::segv()));
  CHECK(!same_error_class(r, VulnClass::heap_buffer_overflow()));
  CHECK(same_error_class(r, vuln_class_from_label("SEGV on unknown address")));

  SanitizerReport uaf;
  uaf.error_class = vuln_class_from_label("heap-use-after-free");
  CHECK(same_error_class(uaf, VulnClass::use_after_free()));

  // reflexive on every class, symmetric in the class argument
  for (const auto& c1 : all_vuln_classes()) {
    SanitizerReport r1;
    r1.error_class = c1;
    CHECK(same_error_class(r1, c1));
    for (const auto& c2 : all_vuln_classes()) {
      SanitizerReport r2;
      r2.error_class = c2;
      CHECK(same_error_class(r1, c2) == same_error_class(r2, c1));
    }
  }
}

TEST_CASE("frame_distance window and sentinel") {
  SanitizerReport r;
  r.error_class = VulnClass::heap_buffer_overflow();
  r.frames = {{0, "foo", "a.c", 12}, {1, "mid", "lib.c", 99}, {2, "bar", "b.c", 44}};

  CHECK(frame_distance(r, "a.c", 12) == 0);
  CHECK(frame_distance(r, "b.c", 40) == 2);   // within the +/-8 window
  CHECK(frame_distance(r, "z.c", 5) == kMaxFrameDistance);
  CHECK(frame_distance(r, "a.c", 30) == kMaxFrameDistance);  // outside the window

  // path suffix matching: probes use workspace-relative paths
  SanitizerReport abs;
  abs.error_class = VulnClass::segv();
  abs.frames = {{0, "main", "/work/toy/src/app.c", 20}};
  CHECK(frame_distance(abs, "src/app.c", 19) == 0);

  // unknown line participates by file only
  SanitizerReport mod;
  mod.error_class = VulnClass::segv();
  mod.frames = {{0, "main", "app.c", 0}};
  CHECK(frame_distance(mod, "app.c", 500) == 0);
}

TEST_CASE("test-driven adapter synthesizes a uniform report") {
  std::string pytest_out =
      "=== FAILURES ===\n"
      "Traceback (most recent call last):\n"
      "  File \"/src/pkg/api.py\", line 88, in dispatch\n"
      "    return handler(req)\n"
      "  File \"/src/pkg/handlers.py\", line 41, in handler\n"
      "    return store[key]\n"
      "KeyError: 'missing'\n";
  auto report = synthesize_test_report(vuln_class_from_label("cwe-862"), pytest_out);
  CHECK(report.synthesized);
  CHECK(report.error_class.canonical() == "cwe-862");
  REQUIRE(report.frames.size() == 2);
  // innermost = deepest traceback entry
  CHECK(report.frames[0].function == "handler");
  CHECK(report.frames[0].line == 41);
  CHECK(report.frames[1].function == "dispatch");

  auto bare = synthesize_test_report(VulnClass::segv(), "exit status 3\n");
  CHECK(bare.frames.empty());
  CHECK(bare.synthesized);
}

TEST_SUITE_END();
