#include "kgrt/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kgrt/error.hpp"
#include "kgrt/rng.hpp"

namespace kgrt::config {

using json = nlohmann::ordered_json;

namespace {

// Reads the members of one JSON object, rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& target, std::function<bool(const T&)> ok = {}, const char* rule = "") {
    known_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    T value{};
    try {
      value = convert<T>(*it);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": wrong value type");
    }
    if (ok && !ok(value)) throw ConfigError(where(key) + ": " + rule);
    target = value;
  }

  Section child(const std::string& key) {
    known_.insert(key);
    auto it = obj_.find(key);
    static const json empty = json::object();
    return Section(it == obj_.end() ? empty : *it, where(key));
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!known_.contains(it.key())) throw ConfigError("unknown config key '" + where(it.key()) + "'");
  }

 private:
  template <typename T>
  static T convert(const json& j) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw std::invalid_argument("bool");
      return j.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw std::invalid_argument("string");
      return j.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_unsigned()) throw std::invalid_argument("unsigned");
      return j.get<T>();
    } else {
      if (!j.is_number()) throw std::invalid_argument("number");
      return j.get<T>();
    }
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> known_;
};

template <typename T>
std::function<bool(const T&)> positive() {
  return [](const T& v) { return v > T{0}; };
}

std::function<bool(const double&)> in_range(double lo, double hi, bool lo_open, bool hi_open) {
  return [=](const double& v) {
    return std::isfinite(v) && (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  };
}

std::size_t count_of(const kg::GeneratorOptions& o, const std::string& type) {
  for (const auto& [t, n] : o.counts)
    if (t == type) return n;
  return 0;
}

void set_count(kg::GeneratorOptions& o, const std::string& type, std::size_t n) {
  for (auto& [t, c] : o.counts)
    if (t == type) c = n;
}

}  // namespace

cohort::PriorOptions RunConfig::prior_options() const {
  cohort::PriorOptions p;
  p.forbid_same_type = forbid_same_type;
  p.diagnosis_type = cohort.diagnosis_type;
  p.procedure_type = cohort.procedure_type;
  return p;
}

void RunConfig::validate() const {
  if (cohort.diagnoses_min > cohort.diagnoses_max)
    throw ConfigError("cohort.diagnoses_min must not exceed cohort.diagnoses_max");
  if (cohort.risk_procedures > count_of(kg, "procedure"))
    throw ConfigError("cohort.risk_procedures exceeds kg.procedure_count");
  if (extract.layer > model.num_blocks) throw ConfigError("extract.layer exceeds model.num_blocks");
  if (model.eval_every > 0 && model.steps > 0 && model.eval_every > model.steps)
    throw ConfigError("model.eval_every exceeds model.steps; the report would be empty");
  model.validate();
  extract.validate();
  if (output_directory.empty()) throw ConfigError("output.directory must not be empty");
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
  RunConfig c;
  try {
    Section top(root, "");
    top.read<std::uint64_t>("seed", c.seed);

    Section k = top.child("kg");
    std::size_t n_diag = count_of(c.kg, "diagnosis"), n_proc = count_of(c.kg, "procedure");
    k.read<std::size_t>("diagnosis_count", n_diag, positive<std::size_t>(), "must be >= 1");
    k.read<std::size_t>("procedure_count", n_proc, positive<std::size_t>(), "must be >= 1");
    set_count(c.kg, "diagnosis", n_diag);
    set_count(c.kg, "procedure", n_proc);
    k.read<double>("edge_density", c.kg.edge_density, in_range(0, 1, true, false), "must lie in (0, 1]");
    k.read<double>("bidirectional_fraction", c.kg.bidirectional_fraction, in_range(0, 1, false, false),
                   "must lie in [0, 1]");
    k.finish();

    Section co = top.child("cohort");
    co.read<std::size_t>("n_visits", c.cohort.n_visits, positive<std::size_t>(), "must be >= 1");
    co.read<std::size_t>("diagnoses_min", c.cohort.diagnoses_min, positive<std::size_t>(), "must be >= 1");
    co.read<std::size_t>("diagnoses_max", c.cohort.diagnoses_max, positive<std::size_t>(), "must be >= 1");
    co.read<double>("link_rate", c.cohort.link_rate, in_range(0, 1, true, false), "must lie in (0, 1]");
    co.read<double>("noise_rate", c.cohort.noise_rate, in_range(0, 1, false, true), "must lie in [0, 1)");
    co.read<std::size_t>("risk_procedures", c.cohort.risk_procedures, positive<std::size_t>(), "must be >= 1");
    co.read<bool>("forbid_same_type", c.forbid_same_type);
    co.finish();

    Section m = top.child("model");
    m.read<std::size_t>("num_blocks", c.model.num_blocks);
    m.read<std::size_t>("embed_dim", c.model.embed_dim);
    m.read<std::size_t>("mlp_hidden", c.model.mlp_hidden);
    m.read<double>("lambda", c.model.lambda);
    m.read<double>("learning_rate", c.model.learning_rate);
    m.read<std::size_t>("steps", c.model.steps);
    m.read<std::size_t>("batch_size", c.model.batch_size);
    m.read<std::size_t>("eval_every", c.model.eval_every);
    m.read<double>("eval_fraction", c.model.eval_fraction);
    std::string mode = gct::to_string(c.model.loss_mode);
    m.read<std::string>("loss_mode", mode);
    c.model.loss_mode = gct::parse_loss_mode(mode);
    m.finish();

    Section e = top.child("extract");
    e.read<std::size_t>("layer", c.extract.layer);
    std::string emode = extract::to_string(c.extract.mode);
    e.read<std::string>("mode", emode);
    c.extract.mode = extract::parse_mode(emode);
    e.read<double>("tau", c.extract.tau);
    e.read<std::size_t>("max_hops", c.extract.max_hops);
    e.read<std::size_t>("beam_width", c.extract.beam_width);
    std::string agg = extract::to_string(c.extract.aggregation);
    e.read<std::string>("aggregation", agg);
    c.extract.aggregation = extract::parse_aggregation(agg);
    e.read<double>("match_floor", c.match_floor, in_range(0, INFINITY, false, true), "must be >= 0");
    e.finish();

    Section o = top.child("output");
    o.read<std::string>("directory", c.output_directory);
    o.finish();

    top.finish();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  c.model.seed = c.seed;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string canonical_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["kg"] = {{"diagnosis_count", count_of(c.kg, "diagnosis")},
             {"procedure_count", count_of(c.kg, "procedure")},
             {"edge_density", c.kg.edge_density},
             {"bidirectional_fraction", c.kg.bidirectional_fraction}};
  j["cohort"] = {{"n_visits", c.cohort.n_visits},
                 {"diagnoses_min", c.cohort.diagnoses_min},
                 {"diagnoses_max", c.cohort.diagnoses_max},
                 {"link_rate", c.cohort.link_rate},
                 {"noise_rate", c.cohort.noise_rate},
                 {"risk_procedures", c.cohort.risk_procedures},
                 {"forbid_same_type", c.forbid_same_type}};
  j["model"] = {{"num_blocks", c.model.num_blocks},
                {"embed_dim", c.model.embed_dim},
                {"mlp_hidden", c.model.mlp_hidden},
                {"lambda", c.model.lambda},
                {"learning_rate", c.model.learning_rate},
                {"steps", c.model.steps},
                {"batch_size", c.model.batch_size},
                {"eval_every", c.model.eval_every},
                {"eval_fraction", c.model.eval_fraction},
                {"loss_mode", gct::to_string(c.model.loss_mode)}};
  j["extract"] = {{"layer", c.extract.layer},
                  {"mode", extract::to_string(c.extract.mode)},
                  {"tau", c.extract.tau},
                  {"max_hops", c.extract.max_hops},
                  {"beam_width", c.extract.beam_width},
                  {"aggregation", extract::to_string(c.extract.aggregation)},
                  {"match_floor", c.match_floor}};
  j["output"] = {{"directory", c.output_directory}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& c) {
  // Where a run is written does not change what it computes.
  RunConfig hashed = c;
  hashed.output_directory = "-";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(hashed))));
  return buf;
}

}  // namespace kgrt::config
