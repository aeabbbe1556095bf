#include "kgrt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "kgrt/config.hpp"
#include "kgrt/error.hpp"
#include "kgrt/eval.hpp"
#include "kgrt/extract.hpp"
#include "kgrt/gct.hpp"
#include "kgrt/pipeline.hpp"

namespace kgrt::cli {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "global seed (overrides the config)");
  cmd->add_option("--out", f.out, "output directory (overrides output.directory)");
}

config::RunConfig resolve(const CommonFlags& f) {
  config::RunConfig c = f.config_path.empty() ? config::parse_run_config("{}", "defaults")
                                              : config::load_run_config(f.config_path);
  if (f.seed) {
    c.seed = *f.seed;
    c.model.seed = *f.seed;
  }
  if (!f.out.empty()) c.output_directory = f.out;
  c.validate();
  return c;
}

void print_summary(std::ostream& out, const eval::Summary& s, const std::vector<std::string>& keys) {
  for (const auto& k : keys)
    for (const auto& [key, value] : s)
      if (key == k) out << key << "=" << value << "\n";
}

void print_rows(std::ostream& out, const std::string& name, const std::vector<eval::ReportRow>& rows) {
  out << name << ": " << rows.size() << " report rows";
  if (!rows.empty()) {
    const auto& last = rows.back();
    out << ", step " << last.step << " auc_pr=" << eval::format_real(last.auc_pr)
        << " auc_roc=" << eval::format_real(last.auc_roc) << " loss=" << eval::format_real(last.loss);
  }
  out << "\n";
}

int cmd_generate(const config::RunConfig& c, std::ostream& out) {
  const fs::path dir = c.output_directory;
  const auto d = pipeline::generate_dataset(c);
  fs::create_directories(dir);
  pipeline::write_dataset(d, dir, nullptr);
  std::size_t positives = 0;
  for (const auto& v : d.visits) positives += static_cast<std::size_t>(v.label);
  out << "nodes=" << d.graph.nodes().size() << "\n"
      << "edges=" << d.graph.edges().size() << "\n"
      << "visits=" << d.visits.size() << "\n"
      << "positive_visits=" << positives << "\n"
      << "table_entries=" << d.table.counts().size() << "\n";
  return kExitOk;
}

int cmd_train(const config::RunConfig& c, const std::string& kg_path, const std::string& cohort_path,
              std::ostream& out) {
  const fs::path dir = c.output_directory;
  const auto d = pipeline::load_dataset(kg_path.empty() ? dir / pipeline::kKgFile : fs::path(kg_path),
                                        cohort_path.empty() ? dir / pipeline::kCohortFile : fs::path(cohort_path), c);
  const std::string mode = gct::to_string(c.model.loss_mode);
  auto result = pipeline::train_mode(d, c, c.model.loss_mode, dir / mode, nullptr);
  print_rows(out, "train " + mode, result.rows);
  out << "checkpoint=" << (dir / mode / pipeline::kCheckpointFile).string() << "\n";
  out << "report=" << (dir / mode / pipeline::kReportFile).string() << "\n";
  return kExitOk;
}

int cmd_extract(const config::RunConfig& c, const std::string& checkpoint, const std::string& cohort_path,
                const std::string& output, std::ostream& out) {
  const fs::path dir = c.output_directory;
  const std::string mode = gct::to_string(c.model.loss_mode);
  const auto model =
      gct::load_checkpoint(checkpoint.empty() ? dir / mode / pipeline::kCheckpointFile : fs::path(checkpoint));
  const auto visits = cohort::load_cohort(cohort_path.empty() ? dir / pipeline::kCohortFile : fs::path(cohort_path));
  const auto encoded = pipeline::encode_cohort(visits, model.vocab, c);
  const auto graph = extract::recover_graph(model, encoded, c.extract);
  const fs::path target = output.empty() ? dir / pipeline::recovered_file(mode) : fs::path(output);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  extract::save_recovered(graph, target);
  out << "layer=" << graph.layer << "\n"
      << "recovered_pairs=" << graph.triples.size() << "\n"
      << "output=" << target.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const config::RunConfig& c, const std::string& kg_path, const std::string& recovered,
                 const std::string& modified_report, const std::string& original_report, std::ostream& out) {
  const fs::path dir = c.output_directory;
  eval::Summary s;
  if (!recovered.empty()) {
    const auto truth = kg::load_kg(kg_path.empty() ? dir / pipeline::kKgFile : fs::path(kg_path));
    eval::append(s, "recovery.", eval::score_recovery(truth, extract::load_recovered(recovered), c.match_floor));
  }
  if (!modified_report.empty()) {
    eval::append(s, "comparison.",
                 eval::compare_runs(eval::load_report(modified_report), eval::load_report(original_report)));
  }
  fs::create_directories(dir);
  eval::save_summary(s, dir / "evaluation.txt");
  out << eval::summary_to_text(s);
  return kExitOk;
}

int cmd_report(const config::RunConfig& c, std::ostream& out) {
  const fs::path dir = c.output_directory;
  const auto mod = eval::load_report(dir / "modified" / pipeline::kReportFile);
  const auto orig = eval::load_report(dir / "original" / pipeline::kReportFile);
  const std::size_t n = std::max(mod.size(), orig.size());
  char line[256];
  out << "Modified loss function                | Original loss function\n";
  std::snprintf(line, sizeof line, "%6s %8s %8s %8s | %6s %8s %8s %8s\n", "Steps", "AUC-PR", "AUC-ROC", "loss", "Steps",
                "AUC-PR", "AUC-ROC", "loss");
  out << line;
  for (std::size_t i = 0; i < n; ++i) {
    char left[128] = "", right[128] = "";
    if (i < mod.size())
      std::snprintf(left, sizeof left, "%6zu %8.3f %8.3f %8.3f", mod[i].step, mod[i].auc_pr, mod[i].auc_roc,
                    mod[i].loss);
    if (i < orig.size())
      std::snprintf(right, sizeof right, "%6zu %8.3f %8.3f %8.3f", orig[i].step, orig[i].auc_pr, orig[i].auc_roc,
                    orig[i].loss);
    std::snprintf(line, sizeof line, "%-33s | %s\n", left, right);
    out << line;
  }
  const fs::path summary = dir / pipeline::kComparisonFile;
  if (fs::exists(summary)) print_summary(out, eval::load_summary(summary), pipeline::headline_keys());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-graph round trip through a graph convolution transformer", "kgrt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", config::kToolVersion);

  CommonFlags flags;
  std::string kg_path, cohort_path, checkpoint, output, recovered, modified_report, original_report, loss_mode;
  std::optional<std::size_t> layer;

  auto* generate = app.add_subcommand("generate", "write a synthetic KG, cohort and conditional table");
  add_common(generate, flags);

  auto* train = app.add_subcommand("train", "train one loss mode and write checkpoint and report");
  add_common(train, flags);
  train->add_option("--kg", kg_path, "KG JSONL (default <out>/kg.jsonl)");
  train->add_option("--cohort", cohort_path, "cohort JSONL (default <out>/cohort.jsonl)");
  train->add_option("--loss-mode", loss_mode, "original or modified (overrides model.loss_mode)");

  auto* extract_cmd = app.add_subcommand("extract", "recover a KG from a checkpoint's attention");
  add_common(extract_cmd, flags);
  extract_cmd->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/<loss_mode>/checkpoint.ckpt)");
  extract_cmd->add_option("--cohort", cohort_path, "cohort JSONL (default <out>/cohort.jsonl)");
  extract_cmd->add_option("--layer", layer, "attention layer, 1-based (overrides extract.layer)");
  extract_cmd->add_option("--output", output, "recovered graph file (default <out>/recovered_<loss_mode>.jsonl)");
  extract_cmd->add_option("--loss-mode", loss_mode, "selects the default checkpoint and output names");

  auto* evaluate = app.add_subcommand("evaluate", "score a recovered graph and/or compare two reports");
  add_common(evaluate, flags);
  evaluate->add_option("--kg", kg_path, "ground-truth KG JSONL (default <out>/kg.jsonl)");
  evaluate->add_option("--recovered", recovered, "recovered graph JSONL");
  auto* mod_opt = evaluate->add_option("--modified-report", modified_report, "report CSV of the modified run");
  auto* orig_opt = evaluate->add_option("--original-report", original_report, "report CSV of the original run");
  mod_opt->needs(orig_opt);
  orig_opt->needs(mod_opt);

  auto* roundtrip = app.add_subcommand("roundtrip", "generate, train both modes, extract, score and compare");
  add_common(roundtrip, flags);

  auto* report = app.add_subcommand("report", "print both reports side by side from a run directory");
  add_common(report, flags);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  config::RunConfig c;
  try {
    c = resolve(flags);
    if (!loss_mode.empty()) c.model.loss_mode = gct::parse_loss_mode(loss_mode);
    if (layer) c.extract.layer = *layer;
    c.validate();
    if (evaluate->parsed() && recovered.empty() && modified_report.empty())
      throw ConfigError("evaluate needs --recovered and/or --modified-report with --original-report");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(c, out);
    if (train->parsed()) return cmd_train(c, kg_path, cohort_path, out);
    if (extract_cmd->parsed()) return cmd_extract(c, checkpoint, cohort_path, output, out);
    if (evaluate->parsed()) return cmd_evaluate(c, kg_path, recovered, modified_report, original_report, out);
    if (report->parsed()) return cmd_report(c, out);
    if (roundtrip->parsed()) {
      const auto r = pipeline::run_roundtrip(c, c.output_directory, out);
      print_summary(out, r.summary, pipeline::headline_keys());
      out << "run_directory=" << c.output_directory << "\n";
      return kExitOk;
    }
  } catch (const gct::DivergenceError& e) {
    err << "training diverged at step " << e.step() << ": " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace kgrt::cli
