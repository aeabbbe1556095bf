#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kgrt/cohort.hpp"
#include "kgrt/config.hpp"
#include "kgrt/eval.hpp"
#include "kgrt/extract.hpp"
#include "kgrt/gct.hpp"
#include "kgrt/kg.hpp"

namespace kgrt::pipeline {

// A graph and cohort plus everything derived from them for training.
struct Dataset {
  kg::KnowledgeGraph graph;
  std::vector<cohort::VisitRecord> visits;
  cohort::ConditionalTable table;
  cohort::Vocabulary vocab;
  std::vector<cohort::EncodedVisit> encoded;
};

// Seeds: the graph uses derive_seed(seed, "kg"), the cohort derive_seed(seed, "cohort").
Dataset generate_dataset(const config::RunConfig& c);
Dataset assemble_dataset(kg::KnowledgeGraph graph, std::vector<cohort::VisitRecord> visits,
                         const config::RunConfig& c);
Dataset load_dataset(const std::filesystem::path& kg_path, const std::filesystem::path& cohort_path,
                     const config::RunConfig& c);

// Encodes visits against an existing vocabulary (for reloaded checkpoints).
std::vector<cohort::EncodedVisit> encode_cohort(const std::vector<cohort::VisitRecord>& visits,
                                                const cohort::Vocabulary& vocab, const config::RunConfig& c);

// File names inside a run directory.
inline constexpr const char* kKgFile = "kg.jsonl";
inline constexpr const char* kCohortFile = "cohort.jsonl";
inline constexpr const char* kTableFile = "conditional_table.csv";
inline constexpr const char* kCheckpointFile = "checkpoint.ckpt";
inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kComparisonFile = "comparison.txt";
inline constexpr const char* kManifestFile = "manifest.json";
std::string recovered_file(const std::string& which);  // "recovered_<which>.jsonl"

// Run bookkeeping: config hash, seed, stage reached, timestamps and the files
// written so far (size and FNV-1a of the content). Rewritten after each stage.
class Manifest {
 public:
  Manifest(std::filesystem::path root, std::string command, const config::RunConfig& c);
  void add_file(const std::string& relative);
  void reach(const std::string& stage);
  void fail(const std::string& message);
  void complete();
  const std::string& stage() const { return stage_; }

 private:
  void write() const;

  std::filesystem::path root_;
  std::string command_;
  std::string config_hash_;
  std::uint64_t seed_;
  std::string started_at_;
  std::string finished_at_;
  std::string stage_ = "config";
  std::string status_ = "running";
  std::string error_;
  std::vector<std::string> files_;
};

// Writes kg, cohort and conditional table into dir.
void write_dataset(const Dataset& d, const std::filesystem::path& dir, Manifest* manifest);

// Trains one loss mode and writes <dir>/checkpoint.ckpt and <dir>/report.csv.
// On divergence the partial report is written before the error propagates.
gct::TrainResult train_mode(const Dataset& d, const config::RunConfig& c, gct::LossMode mode,
                            const std::filesystem::path& dir, Manifest* manifest, const std::string& prefix = "");

struct RoundtripResult {
  gct::TrainResult original;
  gct::TrainResult modified;
  extract::RecoveredGraph recovered_prior;
  extract::RecoveredGraph recovered_original;
  extract::RecoveredGraph recovered_modified;
  eval::RecoveryScore score_prior;
  eval::RecoveryScore score_original;
  eval::RecoveryScore score_modified;
  eval::Comparison comparison;
  eval::Summary summary;
};

// Keys of the summary that roundtrip also prints.
const std::vector<std::string>& headline_keys();

// generate -> train (both modes) -> recover -> score -> compare, writing the
// whole run directory. Stage progress goes to log.
RoundtripResult run_roundtrip(const config::RunConfig& c, const std::filesystem::path& out, std::ostream& log);

}  // namespace kgrt::pipeline
