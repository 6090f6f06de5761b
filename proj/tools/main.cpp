#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "contrafix/error.hpp"
#include "contrafix/orchestrator.hpp"
#include "contrafix/util.hpp"

using namespace contrafix;

namespace {

void add_engine_options(CLI::App* cmd, EngineConfig& config, std::string& price_file) {
  cmd->add_option("--backend", config.backend_spec,
                  "scripted:<script.json> or remote:<endpoint>");
  cmd->add_option("--sandbox", config.sandbox_spec, "local or mock:<table.json>");
  cmd->add_option("--skills", config.skills_dir, "skill store directory");
  cmd->add_option("--trace", config.trace_dir, "trace output directory");
  cmd->add_option("--model", config.model, "model name for cost accounting");
  cmd->add_option("--prices", price_file, "price table JSON (model -> per-million USD)");
  cmd->add_option("--step-budget", config.step_budget, "tool-call budget per agent phase");
  cmd->add_option("--variant-dir", config.variant_parent,
                  "parent directory for variant files");
  cmd->add_option("--prompts", config.prompts_dir,
                  "directory of {mutator,analyzer,patcher}.txt prompt templates");
  cmd->add_flag("--temporal-by-disclosure", config.temporal_filter_by_disclosure,
                "compare skill source disclosure dates instead of resolution timestamps");
}

void load_prices(EngineConfig& config, const std::string& price_file) {
  if (price_file.empty()) return;
  auto doc = nlohmann::json::parse(read_file(price_file));
  for (const auto& [model, entry] : doc.items())
    config.prices[model] = {entry.value("in_per_million", 0.0),
                            entry.value("out_per_million", 0.0)};
}

void print_resolution(const Resolution& r) {
  std::cout << r.instance_id << ": " << resolution_status_to_string(r.status)
            << " (rounds " << r.rounds_used << ", $" << r.cost_usd << ", "
            << r.duration_ms << " ms)\n";
  if (!r.detail.empty()) std::cout << "  " << r.detail << "\n";
  if (r.final_diff) std::cout << r.final_diff->text;
}

void print_report(const BatchReport& report, bool by_class) {
  std::printf("resolved %.1f%% (%zu instances, %d environment failures), avg $%.4f\n",
              report.resolved_rate * 100.0, report.resolutions.size(),
              report.environment_failures, report.avg_cost_usd);
  if (by_class) {
    for (const auto& [label, counts] : report.per_class)
      std::printf("  %-24s %d/%d\n", label.c_str(), counts.second, counts.first);
  }
  for (const auto& r : report.resolutions)
    std::printf("  %-32s %s (rounds %d)\n", r.instance_id.c_str(),
                resolution_status_to_string(r.status).c_str(), r.rounds_used);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrafix - contrastive vulnerability repair engine"};
  app.require_subcommand(1);

  EngineConfig config;
  std::string price_file;

  std::string manifest_file;
  auto* run = app.add_subcommand("run", "resolve one instance manifest");
  run->add_option("--manifest", manifest_file, "instance manifest JSON")->required();
  add_engine_options(run, config, price_file);

  std::string batch_dir;
  auto* batch = app.add_subcommand("batch", "resolve a directory of manifests");
  batch->add_option("--dir", batch_dir, "directory of instance manifests")->required();
  batch->add_option("--jobs", config.jobs, "parallel instance workers");
  add_engine_options(batch, config, price_file);

  auto* skills = app.add_subcommand("skills", "inspect or move the skill store");
  skills->add_option("--skills", config.skills_dir, "skill store directory");
  std::string track_name = "repair";
  std::string show_id, io_file;
  auto* skills_list = skills->add_subcommand("list", "list stored skills");
  auto* skills_show = skills->add_subcommand("show", "print one skill");
  skills_show->add_option("id", show_id)->required();
  auto* skills_export = skills->add_subcommand("export", "write one track as JSONL");
  skills_export->add_option("file", io_file)->required();
  skills_export->add_option("--track", track_name, "repair or mutation");
  auto* skills_import = skills->add_subcommand("import", "read one track from JSONL");
  skills_import->add_option("file", io_file)->required();
  skills_import->add_option("--track", track_name, "repair or mutation");
  skills->require_subcommand(1);

  std::string trace_arg;
  auto* replay = app.add_subcommand("replay", "re-drive a recorded trace");
  replay->add_option("--trace", trace_arg, "instance trace directory")->required();
  replay->add_option("--skills", config.skills_dir, "skill store directory");
  replay->add_option("--model", config.model, "model name for cost accounting");
  replay->add_option("--prices", price_file, "price table JSON");

  bool by_class = false;
  auto* report = app.add_subcommand("report", "summarize a trace directory");
  report->add_option("--trace", trace_arg, "trace directory")->required();
  report->add_flag("--by-class", by_class, "per-class breakdown");

  CLI11_PARSE(app, argc, argv);

  try {
    load_prices(config, price_file);

    if (run->parsed()) {
      Engine engine(config);
      auto manifest = parse_instance_manifest(read_file(manifest_file));
      print_resolution(engine.resolve_instance(manifest));
      return 0;
    }
    if (batch->parsed()) {
      Engine engine(config);
      print_report(engine.run_batch(batch_dir), true);
      return 0;
    }
    if (skills->parsed()) {
      SkillStore store(config.skills_dir);
      SkillTrack track =
          track_name == "mutation" ? SkillTrack::Mutation : SkillTrack::Repair;
      if (skills_list->parsed()) {
        for (const auto& s : store.repair_entries())
          std::printf("repair   %-28s %-24s repo=%s\n", s.skill_id.c_str(),
                      s.vuln_class.canonical().c_str(), s.repo_id.c_str());
        for (const auto& s : store.mutation_entries())
          std::printf("mutation %-28s %-24s %s%s\n", s.skill_id.c_str(),
                      s.vuln_class.canonical().c_str(), s.poc_format.c_str(),
                      s.is_seed_template ? " (seed)" : "");
      } else if (skills_show->parsed()) {
        if (const auto* r = store.find_repair(show_id)) {
          std::cout << "repair skill " << r->skill_id << "\nclass: "
                    << r->vuln_class.canonical() << "\nspec:\n" << r->specification_text
                    << "\npatch:\n" << r->patch_text << "\n";
        } else if (const auto* m = store.find_mutation(show_id)) {
          std::cout << "mutation skill " << m->skill_id << "\nclass: "
                    << m->vuln_class.canonical() << "\nformat: " << m->poc_format
                    << "\nstrategy: " << m->strategy << "\ncommands:\n";
          for (const auto& c : m->command_log) std::cout << "  " << c << "\n";
        } else {
          std::cerr << "no skill with id " << show_id << "\n";
          return 1;
        }
      } else if (skills_export->parsed()) {
        store.export_track(track, io_file);
        std::cout << "exported to " << io_file << "\n";
      } else if (skills_import->parsed()) {
        int n = store.import_track(track, io_file);
        std::cout << "imported " << n << " entr" << (n == 1 ? "y" : "ies") << "\n";
      }
      return 0;
    }
    if (replay->parsed()) {
      Engine engine(config);
      print_resolution(engine.replay(trace_arg));
      return 0;
    }
    if (report->parsed()) {
      print_report(summarize_trace(trace_arg), by_class);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
