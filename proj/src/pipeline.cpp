#include "kgrt/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "kgrt/error.hpp"
#include "kgrt/rng.hpp"

namespace kgrt::pipeline {

using json = nlohmann::ordered_json;

Dataset assemble_dataset(kg::KnowledgeGraph graph, std::vector<cohort::VisitRecord> visits,
                         const config::RunConfig& c) {
  auto table = cohort::count_cooccurrence(visits);
  auto vocab = cohort::Vocabulary::from_graph(graph);
  auto encoded = encode_cohort(visits, vocab, c);
  return Dataset{std::move(graph), std::move(visits), std::move(table), std::move(vocab), std::move(encoded)};
}

std::vector<cohort::EncodedVisit> encode_cohort(const std::vector<cohort::VisitRecord>& visits,
                                                const cohort::Vocabulary& vocab, const config::RunConfig& c) {
  const auto table = cohort::count_cooccurrence(visits);
  return cohort::encode_batch(visits, table, vocab, cohort::max_visit_tokens(visits), c.prior_options());
}

Dataset generate_dataset(const config::RunConfig& c) {
  auto graph = kg::generate_synthetic_kg(c.kg, derive_seed(c.seed, "kg"));
  auto visits = cohort::sample_cohort(graph, c.cohort, derive_seed(c.seed, "cohort"));
  return assemble_dataset(std::move(graph), std::move(visits), c);
}

Dataset load_dataset(const std::filesystem::path& kg_path, const std::filesystem::path& cohort_path,
                     const config::RunConfig& c) {
  return assemble_dataset(kg::load_kg(kg_path), cohort::load_cohort(cohort_path), c);
}

std::string recovered_file(const std::string& which) { return "recovered_" + which + ".jsonl"; }

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Manifest::Manifest(std::filesystem::path root, std::string command, const config::RunConfig& c)
    : root_(std::move(root)),
      command_(std::move(command)),
      config_hash_(config::config_hash(c)),
      seed_(c.seed),
      started_at_(utc_now()) {
  write();
}

void Manifest::add_file(const std::string& relative) {
  if (std::find(files_.begin(), files_.end(), relative) == files_.end()) files_.push_back(relative);
}

void Manifest::reach(const std::string& stage) {
  stage_ = stage;
  write();
}

void Manifest::fail(const std::string& message) {
  status_ = "failed";
  error_ = message;
  finished_at_ = utc_now();
  write();
}

void Manifest::complete() {
  stage_ = "complete";
  status_ = "complete";
  finished_at_ = utc_now();
  write();
}

void Manifest::write() const {
  json files = json::array();
  for (const auto& f : files_) {
    const auto path = root_ / f;
    if (!std::filesystem::exists(path)) continue;
    const std::string content = read_all(path);
    files.push_back({{"path", f}, {"bytes", content.size()}, {"fnv1a64", hex64(fnv1a64(content))}});
  }
  json j{{"tool", "kgrt"},
         {"version", config::kToolVersion},
         {"command", command_},
         {"config_hash", config_hash_},
         {"seed", seed_},
         {"status", status_},
         {"stage_reached", stage_},
         {"started_at", started_at_},
         {"finished_at", finished_at_},
         {"files", files}};
  if (!error_.empty()) j["error"] = error_;
  std::ofstream out(root_ / kManifestFile, std::ios::binary);
  if (!out) throw Error("cannot write " + (root_ / kManifestFile).string());
  out << j.dump(2) << "\n";
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir, Manifest* manifest) {
  kg::save_kg(d.graph, dir / kKgFile);
  cohort::save_cohort(d.visits, dir / kCohortFile);
  cohort::save_table_csv(d.table, dir / kTableFile);
  if (manifest) {
    manifest->add_file(kKgFile);
    manifest->add_file(kCohortFile);
    manifest->add_file(kTableFile);
  }
}

gct::TrainResult train_mode(const Dataset& d, const config::RunConfig& c, gct::LossMode mode,
                            const std::filesystem::path& dir, Manifest* manifest, const std::string& prefix) {
  gct::GctConfig mc = c.model;
  mc.loss_mode = mode;
  mc.seed = c.seed;
  std::filesystem::create_directories(dir);
  auto note = [&](const char* name) {
    if (manifest) manifest->add_file(prefix + name);
  };
  try {
    auto result = gct::train(gct::init_model(mc, d.vocab), d.encoded, mc);
    gct::save_checkpoint(result.model, dir / kCheckpointFile);
    note(kCheckpointFile);
    eval::save_report(result.rows, dir / kReportFile);
    note(kReportFile);
    return result;
  } catch (const gct::DivergenceError& e) {
    eval::save_report(e.partial_report(), dir / kReportFile);
    note(kReportFile);
    throw;
  }
}

const std::vector<std::string>& headline_keys() {
  static const std::vector<std::string> keys{
      "recovery.prior.edge_recall",        "recovery.prior.edge_f1",
      "recovery.prior.relation_accuracy",  "recovery.original.edge_f1",
      "recovery.original.relation_accuracy", "recovery.modified.edge_f1",
      "recovery.modified.relation_accuracy", "comparison.mean_loss_modified",
      "comparison.mean_loss_original",     "comparison.mean_loss_ratio",
      "comparison.mean_auc_roc_modified",  "comparison.mean_auc_roc_original",
      "comparison.finding_loss_ratio_below_threshold", "comparison.finding_modified_auc_roc_lower"};
  return keys;
}

RoundtripResult run_roundtrip(const config::RunConfig& c, const std::filesystem::path& out, std::ostream& log) {
  std::filesystem::create_directories(out);
  Manifest manifest(out, "roundtrip", c);
  try {
    RoundtripResult r;
    const Dataset d = generate_dataset(c);
    write_dataset(d, out, &manifest);
    std::size_t positives = 0;
    for (const auto& v : d.visits) positives += static_cast<std::size_t>(v.label);
    log << "generate: " << d.graph.nodes().size() << " nodes, " << d.graph.edges().size() << " edges, "
        << d.visits.size() << " visits (" << positives << " positive)\n";
    manifest.reach("generate");

    r.original = train_mode(d, c, gct::LossMode::original, out / "original", &manifest, "original/");
    log << "train original: " << r.original.rows.size() << " report rows\n";
    manifest.reach("train_original");
    r.modified = train_mode(d, c, gct::LossMode::modified, out / "modified", &manifest, "modified/");
    log << "train modified: " << r.modified.rows.size() << " report rows\n";
    manifest.reach("train_modified");

    extract::RecoverOptions prior_opts = c.extract;
    prior_opts.layer = 1;
    r.recovered_prior = extract::recover_graph(r.original.model, d.encoded, prior_opts);
    r.recovered_original = extract::recover_graph(r.original.model, d.encoded, c.extract);
    r.recovered_modified = extract::recover_graph(r.modified.model, d.encoded, c.extract);
    for (const auto& [which, g] : {std::pair<std::string, const extract::RecoveredGraph*>{"prior", &r.recovered_prior},
                                   {"original", &r.recovered_original},
                                   {"modified", &r.recovered_modified}}) {
      extract::save_recovered(*g, out / recovered_file(which));
      manifest.add_file(recovered_file(which));
    }
    log << "extract: layer " << r.recovered_modified.layer << ", " << r.recovered_original.triples.size()
        << " (original) / " << r.recovered_modified.triples.size() << " (modified) recovered pairs\n";
    manifest.reach("extract");

    r.score_prior = eval::score_recovery(d.graph, r.recovered_prior, c.match_floor);
    r.score_original = eval::score_recovery(d.graph, r.recovered_original, c.match_floor);
    r.score_modified = eval::score_recovery(d.graph, r.recovered_modified, c.match_floor);
    r.summary.emplace_back("config_hash", config::config_hash(c));
    r.summary.emplace_back("seed", std::to_string(c.seed));
    r.summary.emplace_back("extract.layer", std::to_string(r.recovered_modified.layer));
    r.summary.emplace_back("extract.match_floor", eval::format_real(c.match_floor));
    eval::append(r.summary, "recovery.prior.", r.score_prior);
    eval::append(r.summary, "recovery.original.", r.score_original);
    eval::append(r.summary, "recovery.modified.", r.score_modified);
    if (!r.original.rows.empty()) {
      r.comparison = eval::compare_runs(r.modified.rows, r.original.rows);
      eval::append(r.summary, "comparison.", r.comparison);
    }
    eval::save_summary(r.summary, out / kComparisonFile);
    manifest.add_file(kComparisonFile);
    manifest.reach("evaluate");
    manifest.complete();
    return r;
  } catch (const std::exception& e) {
    manifest.fail(e.what());
    throw;
  }
}

}  // namespace kgrt::pipeline
