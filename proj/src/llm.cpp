#include "contrafix/llm.hpp"

#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

const std::set<std::string>& all_tool_names() {
  static const std::set<std::string> names = {
      "view",       "search",      "str_replace_edit", "revert_last_edit",
      "revert_all_edits", "bash",  "mutate_poc",       "run_variant",
      "run_probed", "check_vul",   "submit"};
  return names;
}

const std::set<std::string>& agent_acl(AgentRole agent) {
  static const std::set<std::string> mutator = {"bash", "mutate_poc", "run_variant"};
  static const std::set<std::string> analyzer = {
      "view", "search", "str_replace_edit", "revert_last_edit", "revert_all_edits",
      "bash", "run_probed"};
  static const std::set<std::string> patcher = {
      "view", "search", "str_replace_edit", "revert_last_edit", "revert_all_edits",
      "bash", "check_vul", "submit"};
  switch (agent) {
    case AgentRole::Mutator: return mutator;
    case AgentRole::Analyzer: return analyzer;
    case AgentRole::Patcher: return patcher;
  }
  return mutator;
}

bool acl_permits(AgentRole agent, const std::string& tool) {
  return agent_acl(agent).count(tool) > 0;
}

std::vector<ToolSchema> tool_schemas_for(AgentRole agent) {
  static const std::map<std::string, ToolSchema> schemas = {
      {"view",
       {"view", "Show file content with line numbers; list directory entries.",
        {{"path", "path", true}, {"start", "integer", false}, {"end", "integer", false}}}},
      {"search",
       {"search", "Regex search; returns matches with surrounding context.",
        {{"pattern", "regex", true}, {"path", "path", true}}}},
      {"str_replace_edit",
       {"str_replace_edit", "Replace an exact, unique match of old with new.",
        {{"path", "path", true}, {"old", "text", true}, {"new", "text", true}}}},
      {"revert_last_edit", {"revert_last_edit", "Revert the most recent edit.", {}}},
      {"revert_all_edits",
       {"revert_all_edits", "Revert all applied edits and restore the clean working tree.",
        {}}},
      {"bash",
       {"bash", "Run a shell command inside the instance workspace.",
        {{"command", "text", true}}}},
      {"mutate_poc",
       {"mutate_poc",
        "Create a variant file; mutation commands are logged automatically.",
        {{"filename", "text", true}, {"content", "text", true}, {"mode", "text", false}}}},
      {"run_variant",
       {"run_variant", "Execute the specified variant and return its outcome.",
        {{"variant_id", "text", true}}}},
      {"run_probed",
       {"run_probed",
        "Compile the instrumented program and execute the listed variants (all when "
        "omitted); returns paired probe outputs.",
        {{"variant_ids", "list", false}}}},
      {"check_vul",
       {"check_vul", "Re-execute the original PoC and all crashing variants to confirm "
                     "the fix.",
        {}}},
      {"submit", {"submit", "Validate the patch and extract the verified diff.", {}}},
  };
  std::vector<ToolSchema> out;
  for (const auto& name : agent_acl(agent)) out.push_back(schemas.at(name));
  return out;
}

/* ------------------------------------------------------------------ */
/* Transcript                                                          */
/* ------------------------------------------------------------------ */

std::string Transcript::to_json() const {
  nlohmann::json doc;
  doc["agent"] = agent_role_to_string(agent);
  doc["steps_used"] = steps_used;
  doc["budget_exhausted"] = budget_exhausted;
  doc["usage"] = {{"input_tokens", usage.input_tokens},
                  {"output_tokens", usage.output_tokens}};
  nlohmann::json calls = nlohmann::json::array();
  for (const auto& u : per_call_usage)
    calls.push_back({{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}});
  doc["per_call_usage"] = std::move(calls);
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    nlohmann::json jm = {{"role", m.role}, {"content", m.content}};
    if (m.tool_name) jm["tool"] = *m.tool_name;
    if (m.tool_args_json) jm["args"] = *m.tool_args_json;
    msgs.push_back(std::move(jm));
  }
  doc["messages"] = std::move(msgs);
  return doc.dump(2);
}

/* ------------------------------------------------------------------ */
/* Scripted backend                                                    */
/* ------------------------------------------------------------------ */

struct ScriptedBackend::Impl {
  nlohmann::json script;
  struct Cursor {
    std::vector<std::pair<const nlohmann::json*, size_t>> stack;
    bool started = false;
  };
  std::map<AgentRole, Cursor> cursors;
};

ScriptedBackend::ScriptedBackend(const std::string& script_json)
    : impl_(std::make_shared<Impl>()) {
  impl_->script = nlohmann::json::parse(script_json, nullptr, false);
  if (impl_->script.is_discarded() || !impl_->script.is_object())
    throw Error("MalformedManifest", "backend script is not a JSON object");
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& file) {
  return ScriptedBackend(read_file(file));
}

ModelAction ScriptedBackend::next(AgentRole agent, const Transcript& transcript,
                                  const std::vector<ToolSchema>&) {
  auto& cursor = impl_->cursors[agent];
  if (!cursor.started) {
    cursor.started = true;
    std::string key = agent_role_to_string(agent);
    if (impl_->script.contains(key) && impl_->script[key].is_array())
      cursor.stack.push_back({&impl_->script[key], 0});
  }

  auto latest_tool_result = [&]() -> std::string {
    for (auto it = transcript.messages.rbegin(); it != transcript.messages.rend(); ++it)
      if (it->role == "tool") return it->content;
    return "";
  };

  while (!cursor.stack.empty()) {
    auto& [list, index] = cursor.stack.back();
    if (index >= list->size()) {
      cursor.stack.pop_back();
      continue;
    }
    const nlohmann::json& step = (*list)[index++];
    if (!step.is_object()) continue;

    if (step.contains("on_result_contains")) {
      bool hit = latest_tool_result().find(
                     step["on_result_contains"].get<std::string>()) != std::string::npos;
      const char* branch = hit ? "then" : "else";
      if (step.contains(branch) && step[branch].is_array())
        cursor.stack.push_back({&step[branch], 0});
      continue;
    }

    ModelAction action;
    action.usage.input_tokens = step.value("input_tokens", 10);
    action.usage.output_tokens = step.value("output_tokens", 5);
    std::string kind = step.value("action", "");
    if (kind == "call") {
      action.call.tool = step.value("tool", "");
      action.call.arguments_json =
          step.contains("args") ? step["args"].dump() : std::string("{}");
      return action;
    }
    if (kind == "final") {
      action.is_final = true;
      action.final_text = step.value("text", "");
      return action;
    }
    // Unknown step shape: skip it.
  }

  ModelAction exhausted;
  exhausted.is_final = true;
  exhausted.script_exhausted = true;
  exhausted.usage = {0, 0};
  return exhausted;
}

/* ------------------------------------------------------------------ */
/* Remote backend                                                      */
/* ------------------------------------------------------------------ */

RemoteBackend::RemoteBackend(std::string endpoint, std::string model, std::string api_key_env)
    : endpoint_(std::move(endpoint)), model_(std::move(model)),
      api_key_env_(std::move(api_key_env)) {}

ModelAction RemoteBackend::next(AgentRole agent, const Transcript& transcript,
                                const std::vector<ToolSchema>& tools) {
  nlohmann::json payload;
  payload["model"] = model_;
  payload["agent"] = agent_role_to_string(agent);
  payload["temperature"] = kTemperature;
  payload["top_p"] = kTopP;
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : transcript.messages) {
    nlohmann::json jm = {{"role", m.role}, {"content", m.content}};
    if (m.tool_name) jm["tool"] = *m.tool_name;
    msgs.push_back(std::move(jm));
  }
  payload["messages"] = std::move(msgs);
  nlohmann::json jtools = nlohmann::json::array();
  for (const auto& t : tools) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, type, required] : t.parameters)
      params[name] = {{"type", type}, {"required", required}};
    jtools.push_back(
        {{"name", t.name}, {"description", t.description}, {"parameters", params}});
  }
  payload["tools"] = std::move(jtools);

  httplib::Client client(endpoint_);
  client.set_read_timeout(300, 0);
  httplib::Headers headers;
  if (!api_key_env_.empty()) {
    const char* key = std::getenv(api_key_env_.c_str());
    if (key) headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = client.Post("/v1/agent", headers, payload.dump(), "application/json");
  if (!res || res->status != 200)
    throw Error("BackendUnavailable",
                endpoint_ + " returned " + (res ? std::to_string(res->status) : "no response"));

  auto doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    throw Error("BackendUnavailable", "malformed backend response");

  ModelAction action;
  if (doc.contains("usage")) {
    action.usage.input_tokens = doc["usage"].value("input_tokens", 0);
    action.usage.output_tokens = doc["usage"].value("output_tokens", 0);
  }
  std::string type = doc.value("type", "");
  if (type == "final") {
    action.is_final = true;
    action.final_text = doc.value("text", "");
  } else if (type == "call") {
    action.call.tool = doc.value("tool", "");
    action.call.arguments_json = doc.contains("args") ? doc["args"].dump() : "{}";
  } else {
    throw Error("BackendUnavailable", "backend response type must be final or call");
  }
  return action;
}

/* ------------------------------------------------------------------ */
/* Dispatch and the agent loop                                         */
/* ------------------------------------------------------------------ */

std::string dispatch_tool(AgentRole agent, const ToolCall& call,
                          const ToolDispatcher& registry) {
  if (!all_tool_names().count(call.tool))
    throw Error("UnknownTool", call.tool);
  if (!acl_permits(agent, call.tool))
    return "error: AclViolation: agent '" + agent_role_to_string(agent) +
           "' may not call '" + call.tool + "'";
  try {
    return registry(call);
  } catch (const Error& e) {
    return std::string("error: ") + e.what();
  }
}

Transcript& run_agent_loop(ChatBackend& backend, AgentRole agent,
                           const std::string& system_prompt, const std::string& user_context,
                           const ToolDispatcher& dispatcher,
                           const std::vector<ToolSchema>& tools, int step_budget,
                           Transcript& transcript, const std::function<bool()>& stop) {
  transcript.agent = agent;
  if (transcript.messages.empty()) {
    transcript.messages.push_back({"system", system_prompt, std::nullopt, std::nullopt});
    transcript.messages.push_back({"user", user_context, std::nullopt, std::nullopt});
  } else {
    transcript.messages.push_back({"user", user_context, std::nullopt, std::nullopt});
  }

  for (;;) {
    if (transcript.steps_used >= step_budget) {
      transcript.budget_exhausted = true;
      throw Error("BudgetExhausted", std::to_string(transcript.steps_used));
    }
    ModelAction action = backend.next(agent, transcript, tools);
    transcript.per_call_usage.push_back(action.usage);
    transcript.usage += action.usage;
    ++transcript.steps_used;

    if (action.is_final) {
      transcript.messages.push_back(
          {"assistant", action.final_text, std::nullopt, std::nullopt});
      return transcript;
    }

    transcript.messages.push_back({"assistant",
                                   "[tool call] " + action.call.tool,
                                   action.call.tool, action.call.arguments_json});
    std::string result;
    try {
      result = dispatch_tool(agent, action.call, dispatcher);
    } catch (const Error& e) {
      result = std::string("error: ") + e.what();  // UnknownTool feeds back, loop continues
    }
    transcript.messages.push_back({"tool", result, action.call.tool, std::nullopt});

    if (stop && stop()) return transcript;  // e.g. a successful submit ends the phase
  }
}

/* ------------------------------------------------------------------ */
/* Cost                                                                */
/* ------------------------------------------------------------------ */

double accumulate_cost(const TokenUsage& usage, const PriceTable& table,
                       const std::string& model) {
  auto it = table.find(model);
  if (it == table.end()) throw Error("UnknownModel", model);
  return usage.input_tokens / 1e6 * it->second.in_per_million +
         usage.output_tokens / 1e6 * it->second.out_per_million;
}

double transcript_cost(const Transcript& transcript, const PriceTable& table,
                       const std::string& model) {
  double total = 0;
  for (const auto& usage : transcript.per_call_usage)
    total += accumulate_cost(usage, table, model);
  return total;
}

PriceTable default_price_table() {
  return {{"scripted", {1.00, 2.00}}};
}

}  // namespace contrafix
