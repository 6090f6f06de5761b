#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/llm.hpp"

using namespace contrafix;

namespace {

ToolDispatcher echo_dispatcher(std::vector<std::string>* calls = nullptr) {
  return [calls](const ToolCall& call) {
    if (calls) calls->push_back(call.tool);
    return "result of " + call.tool;
  };
}

std::string linear_script(const std::string& agent, const nlohmann::json& steps) {
  nlohmann::json script;
  script[agent] = steps;
  return script.dump();
}

}  // namespace

TEST_SUITE_BEGIN("llm");

TEST_CASE("ACL matrix matches the per-agent tool access") {
  struct Row {
    const char* tool;
    bool mutator, analyzer, patcher;
  };
  // File Viewer / File Editing: Analyzer + Patcher. Command execution: all.
  // PoC mutation: Mutator only. Runtime observation: Analyzer only.
  // Verification: Patcher only.
  const Row rows[] = {
      {"view", false, true, true},
      {"search", false, true, true},
      {"str_replace_edit", false, true, true},
      {"revert_last_edit", false, true, true},
      {"revert_all_edits", false, true, true},
      {"bash", true, true, true},
      {"mutate_poc", true, false, false},
      {"run_variant", true, false, false},
      {"run_probed", false, true, false},
      {"check_vul", false, false, true},
      {"submit", false, false, true},
  };
  CHECK(all_tool_names().size() == 11);
  for (const auto& row : rows) {
    CAPTURE(row.tool);
    CHECK(acl_permits(AgentRole::Mutator, row.tool) == row.mutator);
    CHECK(acl_permits(AgentRole::Analyzer, row.tool) == row.analyzer);
    CHECK(acl_permits(AgentRole::Patcher, row.tool) == row.patcher);
  }
}

TEST_CASE("loop alternates calls and results until final") {
  ScriptedBackend backend(linear_script(
      "analyzer", nlohmann::json::array(
                      {{{"action", "call"}, {"tool", "view"}, {"args", {{"path", "x"}}}},
                       {{"action", "final"}, {"text", "done"}}})));
  std::vector<std::string> calls;
  Transcript t;
  run_agent_loop(backend, AgentRole::Analyzer, "sys", "ctx", echo_dispatcher(&calls),
                 tool_schemas_for(AgentRole::Analyzer), 40, t);
  CHECK(t.steps_used == 2);
  CHECK(calls == std::vector<std::string>{"view"});
  int tool_results = 0, finals = 0;
  for (const auto& m : t.messages) {
    if (m.role == "tool") ++tool_results;
    if (m.role == "assistant" && !m.tool_name) ++finals;
  }
  CHECK(tool_results == 1);
  CHECK(finals == 1);
  CHECK(t.messages.back().content == "done");
}

TEST_CASE("denied tools feed AclViolation back instead of aborting") {
  // A confused mutator calls submit; the loop continues to a final.
  ScriptedBackend backend(linear_script(
      "mutator",
      nlohmann::json::array({{{"action", "call"}, {"tool", "submit"}},
                             {{"action", "final"}, {"text", "ok"}}})));
  std::vector<std::string> calls;
  Transcript t;
  run_agent_loop(backend, AgentRole::Mutator, "sys", "ctx", echo_dispatcher(&calls),
                 tool_schemas_for(AgentRole::Mutator), 40, t);
  CHECK(calls.empty());  // never dispatched to the registry
  bool saw_violation = false;
  for (const auto& m : t.messages)
    if (m.role == "tool" && m.content.find("AclViolation") != std::string::npos)
      saw_violation = true;
  CHECK(saw_violation);
  CHECK(t.messages.back().content == "ok");
}

TEST_CASE("unknown tools are errors fed back to the model") {
  CHECK_THROWS_AS(dispatch_tool(AgentRole::Patcher, {"format_disk", "{}"},
                                echo_dispatcher()),
                  Error);
  ScriptedBackend backend(linear_script(
      "patcher",
      nlohmann::json::array({{{"action", "call"}, {"tool", "format_disk"}},
                             {{"action", "final"}, {"text", "ok"}}})));
  Transcript t;
  run_agent_loop(backend, AgentRole::Patcher, "s", "c", echo_dispatcher(),
                 tool_schemas_for(AgentRole::Patcher), 40, t);
  bool saw_unknown = false;
  for (const auto& m : t.messages)
    if (m.role == "tool" && m.content.find("UnknownTool") != std::string::npos)
      saw_unknown = true;
  CHECK(saw_unknown);
}

TEST_CASE("tool errors are serialized into results") {
  ScriptedBackend backend(linear_script(
      "patcher", nlohmann::json::array({{{"action", "call"}, {"tool", "view"}},
                                        {{"action", "final"}, {"text", ""}}})));
  Transcript t;
  run_agent_loop(
      backend, AgentRole::Patcher, "s", "c",
      [](const ToolCall&) -> std::string { throw Error("NoMatch", "nothing there"); },
      tool_schemas_for(AgentRole::Patcher), 40, t);
  bool saw_kind = false;
  for (const auto& m : t.messages)
    if (m.role == "tool" && m.content.find("NoMatch") != std::string::npos) saw_kind = true;
  CHECK(saw_kind);
}

TEST_CASE("budget exhaustion stops the loop with the transcript intact") {
  nlohmann::json steps = nlohmann::json::array();
  for (int i = 0; i < 41; ++i)
    steps.push_back({{"action", "call"}, {"tool", "view"}});
  ScriptedBackend backend(linear_script("analyzer", steps));
  Transcript t;
  try {
    run_agent_loop(backend, AgentRole::Analyzer, "s", "c", echo_dispatcher(),
                   tool_schemas_for(AgentRole::Analyzer), 40, t);
    FAIL("expected BudgetExhausted");
  } catch (const Error& e) {
    CHECK(e.kind() == "BudgetExhausted");
    CHECK(std::string(e.what()).find("40") != std::string::npos);
  }
  CHECK(t.steps_used == 40);
  CHECK(t.budget_exhausted);
  CHECK(t.per_call_usage.size() == 40);
}

TEST_CASE("scripted matcher steps branch on the latest tool result") {
  nlohmann::json script = {
      {"mutator",
       nlohmann::json::array(
           {{{"action", "call"}, {"tool", "run_variant"}, {"args", {{"variant_id", "v"}}}},
            {{"on_result_contains", "CrashSame"},
             {"then", nlohmann::json::array({{{"action", "final"}, {"text", "A"}}})},
             {"else", nlohmann::json::array({{{"action", "final"}, {"text", "B"}}})}}})}};
  auto run_with = [&](const std::string& result_text) {
    ScriptedBackend backend(script.dump());
    Transcript t;
    run_agent_loop(
        backend, AgentRole::Mutator, "s", "c",
        [&](const ToolCall&) { return result_text; },
        tool_schemas_for(AgentRole::Mutator), 40, t);
    return t.messages.back().content;
  };
  CHECK(run_with("v: CrashSame, exit 1") == "A");
  CHECK(run_with("v: Safe, exit 0") == "B");
}

TEST_CASE("exhausted scripts yield a flagged empty final") {
  ScriptedBackend backend("{}");
  Transcript t;
  auto action = backend.next(AgentRole::Patcher, t, {});
  CHECK(action.is_final);
  CHECK(action.final_text.empty());
  CHECK(action.script_exhausted);
}

TEST_CASE("cost accounting: unit cases and additivity") {
  PriceTable table = {{"m", {0.25, 2.00}}, {"n", {1.00, 2.00}}};
  CHECK(accumulate_cost({1000000, 0}, table, "m") == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(accumulate_cost({1000, 500}, table, "n") == doctest::Approx(0.002).epsilon(1e-15));
  try {
    accumulate_cost({1, 1}, table, "absent-model");
    FAIL("expected UnknownModel");
  } catch (const Error& e) {
    CHECK(e.kind() == "UnknownModel");
  }

  Transcript t;
  t.per_call_usage = {{1000, 500}, {2000, 0}, {0, 250}};
  for (const auto& u : t.per_call_usage) t.usage += u;
  double per_call_sum = 0;
  for (const auto& u : t.per_call_usage) per_call_sum += accumulate_cost(u, table, "n");
  CHECK(transcript_cost(t, table, "n") == per_call_sum);
}

TEST_CASE("remote backend speaks the documented wire contract") {
  httplib::Server server;
  nlohmann::json seen_payload;
  server.Post("/v1/agent", [&](const httplib::Request& req, httplib::Response& res) {
    seen_payload = nlohmann::json::parse(req.body);
    nlohmann::json reply = {{"type", "call"},
                            {"tool", "view"},
                            {"args", {{"path", "src/a.c"}}},
                            {"usage", {{"input_tokens", 700}, {"output_tokens", 21}}}};
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteBackend backend("http://127.0.0.1:" + std::to_string(port), "gpt-x", "");
  Transcript t;
  t.messages.push_back({"system", "sys", std::nullopt, std::nullopt});
  t.messages.push_back({"user", "ctx", std::nullopt, std::nullopt});
  auto action = backend.next(AgentRole::Analyzer, t, tool_schemas_for(AgentRole::Analyzer));
  CHECK(!action.is_final);
  CHECK(action.call.tool == "view");
  CHECK(action.usage.input_tokens == 700);
  CHECK(seen_payload["model"] == "gpt-x");
  CHECK(seen_payload["agent"] == "analyzer");
  CHECK(seen_payload["temperature"] == 1.0);
  CHECK(seen_payload["top_p"] == 1.0);
  CHECK(seen_payload["messages"].size() == 2);
  CHECK(!seen_payload["tools"].empty());

  server.stop();
  server_thread.join();

  RemoteBackend dead("http://127.0.0.1:1", "gpt-x", "");
  try {
    dead.next(AgentRole::Analyzer, t, {});
    FAIL("expected BackendUnavailable");
  } catch (const Error& e) {
    CHECK(e.kind() == "BackendUnavailable");
  }
}

TEST_CASE("transcripts serialize with tool calls and usage") {
  ScriptedBackend backend(linear_script(
      "patcher",
      nlohmann::json::array(
          {{{"action", "call"}, {"tool", "view"}, {"args", {{"path", "a.c"}}},
            {"input_tokens", 120}, {"output_tokens", 8}},
           {{"action", "final"}, {"text", "done"}, {"input_tokens", 50},
            {"output_tokens", 4}}})));
  Transcript t;
  run_agent_loop(backend, AgentRole::Patcher, "s", "c", echo_dispatcher(),
                 tool_schemas_for(AgentRole::Patcher), 40, t);
  CHECK(t.usage.input_tokens == 170);
  CHECK(t.usage.output_tokens == 12);
  auto doc = nlohmann::json::parse(t.to_json());
  CHECK(doc["agent"] == "patcher");
  CHECK(doc["steps_used"] == 2);
  CHECK(doc["per_call_usage"].size() == 2);
  bool saw_args = false;
  for (const auto& m : doc["messages"])
    if (m.contains("args")) saw_args = true;
  CHECK(saw_args);
}

TEST_SUITE_END();
