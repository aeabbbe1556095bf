#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "kgrt/cohort.hpp"
#include "kgrt/extract.hpp"
#include "kgrt/gct.hpp"
#include "kgrt/kg.hpp"

namespace kgrt::config {

inline constexpr const char* kToolVersion = "0.1.0";

// Everything a run needs. Loaded from a JSON object with the sections
// kg, cohort, model, extract and output plus a top-level seed; every key is
// optional and falls back to the defaults below, unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 42;
  kg::GeneratorOptions kg;
  cohort::CohortOptions cohort;
  bool forbid_same_type = true;
  gct::GctConfig model;
  extract::RecoverOptions extract;
  double match_floor = 0.0;
  std::string output_directory = "run";

  // Cross-section checks; throws ConfigError naming the offending key.
  void validate() const;
  cohort::PriorOptions prior_options() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& source);  // throws ConfigError
RunConfig load_run_config(const std::filesystem::path& path);                    // throws ConfigError

// Canonical JSON of the fully resolved configuration (every key present,
// fixed order); it parses back to the same RunConfig.
std::string canonical_json(const RunConfig& c);

// FNV-1a of canonical_json with the output directory left out, as 16
// lowercase hex digits.
std::string config_hash(const RunConfig& c);

}  // namespace kgrt::config
