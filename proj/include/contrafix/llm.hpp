#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "contrafix/core.hpp"

namespace contrafix {

/// The closed tool vocabulary. Nothing outside this set is dispatchable.
const std::set<std::string>& all_tool_names();

struct ToolSchema {
  std::string name;
  std::string description;
  // parameter name -> (semantic type, required)
  std::vector<std::tuple<std::string, std::string, bool>> parameters;
};

/// Per-agent permitted tool names; mirrors the engine's tool access matrix.
const std::set<std::string>& agent_acl(AgentRole agent);
bool acl_permits(AgentRole agent, const std::string& tool);

struct TokenUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& other) {
    input_tokens += other.input_tokens;
    output_tokens += other.output_tokens;
    return *this;
  }
};

struct ToolCall {
  std::string tool;
  std::string arguments_json;  // object; tool-specific fields
};

/// Exactly one arm: a final text or a tool call.
struct ModelAction {
  bool is_final = false;
  std::string final_text;
  ToolCall call;
  TokenUsage usage;
  bool script_exhausted = false;  // scripted backend ran out of steps
};

struct TranscriptMessage {
  std::string role;  // "system" | "user" | "assistant" | "tool"
  std::string content;
  std::optional<std::string> tool_name;
  std::optional<std::string> tool_args_json;  // assistant tool-call messages
};

struct Transcript {
  AgentRole agent = AgentRole::Mutator;
  std::vector<TranscriptMessage> messages;
  std::vector<TokenUsage> per_call_usage;
  TokenUsage usage;
  int steps_used = 0;
  bool budget_exhausted = false;

  std::string to_json() const;
};

constexpr int kDefaultStepBudget = 40;

// Sampling is fixed per the engine configuration; exposed read-only.
constexpr double kTemperature = 1.0;
constexpr double kTopP = 1.0;

/**
 * A chat model able to continue a transcript with either a final message or
 * a tool call. Implementations: ScriptedBackend (deterministic, offline)
 * and RemoteBackend (HTTP).
 */
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ModelAction next(AgentRole agent, const Transcript& transcript,
                           const std::vector<ToolSchema>& tools) = 0;
  virtual std::string model_name() const = 0;
};

/**
 * Deterministic test backend driven by a JSON script:
 *   {"mutator": [step...], "analyzer": [step...], "patcher": [step...]}
 * step: {"action":"call","tool":...,"args":{...}} | {"action":"final","text":...}
 *       | {"on_result_contains": "...", "then": [step...], "else": [step...]}
 * Each agent consumes its list across phases and rounds; matcher steps
 * branch on a substring of the latest tool result. An exhausted script
 * yields final("") with the exhaustion flag set.
 */
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(const std::string& script_json);
  static ScriptedBackend from_file(const std::filesystem::path& file);

  ModelAction next(AgentRole agent, const Transcript& transcript,
                   const std::vector<ToolSchema>& tools) override;
  std::string model_name() const override { return "scripted"; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/**
 * HTTP client for a chat/tool-call endpoint. POSTs {model, agent, messages,
 * tools, temperature, top_p} to <endpoint>/v1/agent and expects
 * {"type":"final","text":...} or {"type":"call","tool":...,"args":{...}}
 * with an optional {"usage":{"input_tokens":N,"output_tokens":N}}.
 * Error: BackendUnavailable.
 */
class RemoteBackend : public ChatBackend {
 public:
  RemoteBackend(std::string endpoint, std::string model, std::string api_key_env);
  ModelAction next(AgentRole agent, const Transcript& transcript,
                   const std::vector<ToolSchema>& tools) override;
  std::string model_name() const override { return model_; }

 private:
  std::string endpoint_;
  std::string model_;
  std::string api_key_env_;
};

/// Tool handler: receives the call, returns the result text for the model.
using ToolDispatcher = std::function<std::string(const ToolCall&)>;

/**
 * Route one call: out-of-vocabulary names throw Error("UnknownTool"),
 * ACL-denied calls return a structured AclViolation result, permitted calls
 * go to the registry with any engine error serialized into the result text.
 */
std::string dispatch_tool(AgentRole agent, const ToolCall& call,
                          const ToolDispatcher& registry);

/**
 * Alternate model actions with dispatched tool results until a final
 * message or budget exhaustion. Every call is ACL-checked before dispatch;
 * denied calls feed an AclViolation result back to the model rather than
 * aborting. Tool errors are serialized into results the same way. The
 * transcript (an out-parameter) survives even when the budget error fires.
 *
 * `stop` is polled after each dispatch; a true return ends the loop with
 * the latest result as the final text (the submit tool uses this).
 */
Transcript& run_agent_loop(ChatBackend& backend, AgentRole agent,
                           const std::string& system_prompt, const std::string& user_context,
                           const ToolDispatcher& dispatcher,
                           const std::vector<ToolSchema>& tools, int step_budget,
                           Transcript& transcript,
                           const std::function<bool()>& stop = nullptr);

/// Table 1-shaped schemas for the agent's permitted tools.
std::vector<ToolSchema> tool_schemas_for(AgentRole agent);

/* ------------------------------------------------------------------ */
/* Cost accounting                                                     */
/* ------------------------------------------------------------------ */

struct ModelPrice {
  double in_per_million = 0;
  double out_per_million = 0;
};

using PriceTable = std::map<std::string, ModelPrice>;

/// USD cost of one usage total. Error: UnknownModel.
double accumulate_cost(const TokenUsage& usage, const PriceTable& table,
                       const std::string& model);

/// Sum of per-call costs of a transcript (same formula, same order).
double transcript_cost(const Transcript& transcript, const PriceTable& table,
                       const std::string& model);

PriceTable default_price_table();

}  // namespace contrafix
