#include "contrafix/probe.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/util.hpp"

namespace contrafix {

namespace {

std::string phase_name(ProbePhase phase) {
  switch (phase) {
    case ProbePhase::Point: return "point";
    case ProbePhase::Enter: return "enter";
    case ProbePhase::Exit: return "exit";
  }
  return "point";
}

/* -------------------------- c / c++ -------------------------------- */

std::string c_macro(const char* name, const char* phase) {
  std::ostringstream out;
  out << "#define " << name << "(site, fmt, ...) \\\n"
      << "  fprintf(stderr, \"" << kProbeSentinel
      << " {\\\"site\\\":\\\"%s\\\",\\\"file\\\":\\\"%s\\\",\\\"line\\\":%d,"
      << "\\\"phase\\\":\\\"" << phase << "\\\",\\\"state\\\":{\" fmt \"}}\\n\", \\\n"
      << "    site, __FILE__, __LINE__, ##__VA_ARGS__)\n";
  return out.str();
}

std::string c_preamble() {
  std::ostringstream out;
  out << "#ifndef " << kProbeGuard << "\n"
      << "#define " << kProbeGuard << "\n"
      << "#include <stdio.h>\n"
      << "#include <stdint.h>\n"
      << c_macro("PROBE_POINT", "point") << c_macro("PROBE_SPAN_ENTER", "enter")
      << c_macro("PROBE_SPAN_EXIT", "exit")
      << "static const char* contrafix_probe_ptr(const void* p) {\n"
      << "  static char bufs[8][24];\n"
      << "  static unsigned next;\n"
      << "  char* b;\n"
      << "  if (!p) return \"null\";\n"
      << "  b = bufs[next++ & 7u];\n"
      << "  snprintf(b, 24, \"0x%llx\", (unsigned long long)(uintptr_t)p);\n"
      << "  return b;\n"
      << "}\n"
      << "#endif /* " << kProbeGuard << " */\n";
  return out.str();
}

std::string c_snippet(const ProbeSpec& spec, const char* macro) {
  std::string fmt, args;
  for (size_t i = 0; i < spec.expressions.size(); ++i) {
    const auto& e = spec.expressions[i];
    if (i > 0) fmt += ",";
    switch (e.kind) {
      case ValueKind::Integer:
        fmt += "\\\"" + e.name + "\\\":%lld";
        args += ", (long long)(" + e.source + ")";
        break;
      case ValueKind::Pointer:
        fmt += "\\\"" + e.name + "\\\":\\\"%s\\\"";
        args += ", contrafix_probe_ptr((const void*)(" + e.source + "))";
        break;
      case ValueKind::Text:
        fmt += "\\\"" + e.name + "\\\":\\\"%s\\\"";
        args += ", (" + e.source + ")";
        break;
    }
  }
  return std::string(macro) + "(\"" + spec.site + "\", \"" + fmt + "\"" + args + ");";
}

/* -------------------------- python --------------------------------- */

std::string py_snippet(const ProbeSpec& spec, ProbePhase phase, int line) {
  std::string fmt, args;
  for (size_t i = 0; i < spec.expressions.size(); ++i) {
    const auto& e = spec.expressions[i];
    if (i > 0) fmt += ",";
    switch (e.kind) {
      case ValueKind::Integer:
        fmt += "\"" + e.name + "\":%d";
        args += "(" + e.source + "), ";
        break;
      case ValueKind::Pointer:
        fmt += "\"" + e.name + "\":\"%s\"";
        args += "('null' if (" + e.source + ") is None else hex(id(" + e.source + "))), ";
        break;
      case ValueKind::Text:
        fmt += "\"" + e.name + "\":\"%s\"";
        args += "(" + e.source + "), ";
        break;
    }
  }
  std::ostringstream out;
  out << "print('" << kProbeSentinel << " {\"site\":\"" << spec.site << "\",\"file\":\""
      << spec.path << "\",\"line\":" << line << ",\"phase\":\"" << phase_name(phase)
      << "\",\"state\":{" << fmt << "}}' % (" << args
      << "), file=__import__('sys').stderr)";
  return out.str();
}

/* -------------------------- go ------------------------------------- */

std::string go_snippet(const ProbeSpec& spec, ProbePhase phase, int line) {
  std::ostringstream out;
  out << "println(\"" << kProbeSentinel << " {\\\"site\\\":\\\"" << spec.site
      << "\\\",\\\"file\\\":\\\"" << spec.path << "\\\",\\\"line\\\":" << line
      << ",\\\"phase\\\":\\\"" << phase_name(phase) << "\\\",\\\"state\\\":{";
  for (size_t i = 0; i < spec.expressions.size(); ++i) {
    const auto& e = spec.expressions[i];
    if (i > 0) out << ",";
    out << "\\\"" << e.name << "\\\":";
    switch (e.kind) {
      case ValueKind::Integer:
        out << "\", (" << e.source << "), \"";
        break;
      case ValueKind::Pointer:
        out << "\", func() string { if (" << e.source
            << ") == nil { return \"\\\"null\\\"\" }; return \"\\\"non-null\\\"\" }(), \"";
        break;
      case ValueKind::Text:
        out << "\\\"\", (" << e.source << "), \"\\\"";
        break;
    }
  }
  out << "}}\")";
  return out.str();
}

/* -------------------------- javascript ----------------------------- */

std::string js_snippet(const ProbeSpec& spec, ProbePhase phase, int line) {
  std::ostringstream out;
  out << "console.error(\"" << kProbeSentinel << " \" + JSON.stringify({site:\"" << spec.site
      << "\",file:\"" << spec.path << "\",line:" << line << ",phase:\"" << phase_name(phase)
      << "\",state:{";
  for (size_t i = 0; i < spec.expressions.size(); ++i) {
    const auto& e = spec.expressions[i];
    if (i > 0) out << ",";
    out << "\"" << e.name << "\":";
    switch (e.kind) {
      case ValueKind::Integer:
      case ValueKind::Text:
        out << "(" << e.source << ")";
        break;
      case ValueKind::Pointer:
        out << "(((" << e.source << ") === null || (" << e.source
            << ") === undefined) ? \"null\" : \"non-null\")";
        break;
    }
  }
  out << "}}));";
  return out.str();
}

void check_spec(const ProbeSpec& spec) {
  bool span = spec.kind == ProbeKind::Span;
  bool wrap = spec.position == ProbePosition::Wrap;
  if (span != wrap)
    throw Error("MalformedProbeSpec",
                "site " + spec.site + ": span probes wrap, point probes do not");
  if (spec.expressions.empty())
    throw Error("MalformedProbeSpec", "site " + spec.site + ": no expressions");
}

}  // namespace

RenderedProbe render_probe(const ProbeSpec& spec, Language language, int anchor_line) {
  check_spec(spec);
  RenderedProbe out;
  bool span = spec.kind == ProbeKind::Span;

  switch (language) {
    case Language::CCpp:
      out.preamble = c_preamble();
      out.point_or_enter = c_snippet(spec, span ? "PROBE_SPAN_ENTER" : "PROBE_POINT");
      if (span) out.exit_snippet = c_snippet(spec, "PROBE_SPAN_EXIT");
      return out;
    case Language::Python:
      out.point_or_enter =
          py_snippet(spec, span ? ProbePhase::Enter : ProbePhase::Point, anchor_line);
      if (span) out.exit_snippet = py_snippet(spec, ProbePhase::Exit, anchor_line);
      return out;
    case Language::Go:
      out.point_or_enter =
          go_snippet(spec, span ? ProbePhase::Enter : ProbePhase::Point, anchor_line);
      if (span) out.exit_snippet = go_snippet(spec, ProbePhase::Exit, anchor_line);
      return out;
    case Language::Javascript:
      out.point_or_enter =
          js_snippet(spec, span ? ProbePhase::Enter : ProbePhase::Point, anchor_line);
      if (span) out.exit_snippet = js_snippet(spec, ProbePhase::Exit, anchor_line);
      return out;
    default:
      throw Error("UnsupportedLanguage", "probes support c_cpp, go, python, javascript");
  }
}

namespace {

std::string anchor_indent(const std::string& anchor) {
  std::string indent;
  for (char c : anchor) {
    if (c == ' ' || c == '\t') indent += c;
    else break;
  }
  return indent;
}

std::string indent_snippet(const std::string& snippet, const std::string& indent) {
  auto lines = split_lines(snippet);
  std::string out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (i > 0) out += '\n';
    out += indent + lines[i];
  }
  return out;
}

int line_of_anchor(const std::string& content, const std::string& anchor) {
  size_t pos = content.find(anchor);
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(content.begin(), content.begin() + pos, '\n'));
}

}  // namespace

std::vector<EditRecord> instrument(Workspace& workspace, const std::vector<ProbeSpec>& specs,
                                   Language language) {
  std::set<std::string> sites;
  for (const auto& spec : specs) {
    check_spec(spec);
    if (!sites.insert(spec.site).second)
      throw Error("MalformedProbeSpec", "duplicate site " + spec.site);
  }

  std::vector<EditRecord> applied;
  try {
    for (const auto& spec : specs) {
      std::string content = workspace.read(spec.path);
      int anchor_line = line_of_anchor(content, spec.anchor);
      RenderedProbe rendered = render_probe(spec, language, anchor_line);

      // Macro preamble once per touched file, guarded by the token.
      if (!rendered.preamble.empty() && content.find(kProbeGuard) == std::string::npos) {
        applied.push_back(workspace.str_replace_edit(AgentRole::Analyzer, spec.path, content,
                                                     rendered.preamble + content));
        content = workspace.read(spec.path);
      }

      std::string indent = anchor_indent(spec.anchor);
      std::string enter = indent_snippet(rendered.point_or_enter, indent);
      std::string replacement;
      switch (spec.position) {
        case ProbePosition::Before:
          replacement = enter + "\n" + spec.anchor;
          break;
        case ProbePosition::After:
          replacement = spec.anchor + "\n" + enter;
          break;
        case ProbePosition::Wrap:
          replacement = enter + "\n" + spec.anchor + "\n" +
                        indent_snippet(*rendered.exit_snippet, indent);
          break;
      }
      applied.push_back(
          workspace.str_replace_edit(AgentRole::Analyzer, spec.path, spec.anchor, replacement));
    }
  } catch (const Error& e) {
    // All-or-nothing: drop the edits this call already applied.
    for (size_t i = 0; i < applied.size(); ++i) workspace.revert_last_edit(AgentRole::Analyzer);
    throw Error(e.kind(), std::string("instrumentation failed: ") + e.what());
  }
  return applied;
}

ProbeStream parse_probe_stream(std::string_view text) {
  ProbeStream out;
  int seq = 0;
  const std::string sentinel = kProbeSentinel;
  for (const auto& line : split_lines(text)) {
    size_t pos = line.find(sentinel);
    if (pos == std::string::npos) continue;
    std::string payload = trim(line.substr(pos + sentinel.size()));
    auto doc = nlohmann::ordered_json::parse(payload, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("site") ||
        !doc.contains("phase") || !doc.contains("state") || !doc["state"].is_object()) {
      ++out.malformed_count;
      continue;
    }
    ProbeRecord record;
    bool ok = true;
    try {
      record.site = doc["site"].get<std::string>();
      record.file = doc.value("file", "");
      record.line = doc.value("line", 0);
      std::string phase = doc["phase"].get<std::string>();
      if (phase == "point") record.phase = ProbePhase::Point;
      else if (phase == "enter") record.phase = ProbePhase::Enter;
      else if (phase == "exit") record.phase = ProbePhase::Exit;
      else ok = false;
      for (const auto& [key, value] : doc["state"].items()) {
        std::string text_value = value.is_string() ? value.get<std::string>() : value.dump();
        record.state.emplace_back(key, trim(text_value));
      }
    } catch (const std::exception&) {
      ok = false;
    }
    if (!ok) {
      ++out.malformed_count;
      continue;
    }
    record.run_seq = seq++;
    out.records.push_back(std::move(record));
    if (out.records.size() > static_cast<size_t>(kProbeRecordCap)) {
      out.records.erase(out.records.begin());  // ring: keep the crash-adjacent tail
      out.truncated = true;
    }
  }
  return out;
}

ProbeRunOutput run_probed(Sandbox& sandbox,
                          const std::vector<std::pair<std::string, std::string>>& variants,
                          const std::string& original_poc_path) {
  ExecutionResult build = sandbox.build();
  if (build.exit_code != 0 || build.timed_out)
    throw Error("BuildFailedAfterInstrumentation",
                build.stderr_text.empty() ? build.stdout_text : build.stderr_text);

  ProbeRunOutput out;
  auto run_one = [&](const std::string& id, const std::string& path) {
    std::string raw;
    VariantOutcome outcome = sandbox.run_poc(path, &raw);
    ProbeStream stream = parse_probe_stream(raw);
    out.malformed_records += stream.malformed_count;
    out.runs.push_back({id, outcome.outcome, std::move(stream.records), outcome.report});
  };
  for (const auto& [id, path] : variants) run_one(id, path);
  run_one("original", original_poc_path);
  return out;
}

std::string probe_specs_to_json(const std::vector<ProbeSpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& spec : specs) {
    nlohmann::json exprs = nlohmann::json::array();
    for (const auto& e : spec.expressions) {
      const char* kind = e.kind == ValueKind::Integer ? "integer"
                         : e.kind == ValueKind::Pointer ? "pointer"
                                                        : "text";
      exprs.push_back({{"name", e.name}, {"expr", e.source}, {"kind", kind}});
    }
    const char* position = spec.position == ProbePosition::Before ? "before"
                           : spec.position == ProbePosition::After ? "after"
                                                                   : "wrap";
    arr.push_back({{"site", spec.site},
                   {"path", spec.path},
                   {"anchor", spec.anchor},
                   {"position", position},
                   {"kind", spec.kind == ProbeKind::Span ? "span" : "point"},
                   {"expressions", exprs}});
  }
  return arr.dump();
}

std::vector<ProbeSpec> probe_specs_from_json(const std::string& json_text) {
  auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_array())
    throw Error("MalformedProbeSpec", "probe spec document is not a JSON array");
  std::vector<ProbeSpec> specs;
  for (const auto& item : doc) {
    ProbeSpec spec;
    spec.site = item.at("site").get<std::string>();
    spec.path = item.at("path").get<std::string>();
    spec.anchor = item.at("anchor").get<std::string>();
    std::string position = item.value("position", "before");
    spec.position = position == "after" ? ProbePosition::After
                    : position == "wrap" ? ProbePosition::Wrap
                                         : ProbePosition::Before;
    spec.kind = item.value("kind", "point") == "span" ? ProbeKind::Span : ProbeKind::Point;
    for (const auto& e : item.value("expressions", nlohmann::json::array())) {
      ProbeExpression expr;
      expr.name = e.at("name").get<std::string>();
      expr.source = e.value("expr", e.value("source", expr.name));
      std::string kind = e.value("kind", "integer");
      expr.kind = kind == "pointer" ? ValueKind::Pointer
                  : kind == "text" ? ValueKind::Text
                                   : ValueKind::Integer;
      spec.expressions.push_back(std::move(expr));
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace contrafix
