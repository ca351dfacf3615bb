#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dissector/dissector.hpp"
#include "dissector/synthetic.hpp"
#include "json.hpp"

namespace dissector::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr const char* kVersion = DISSECTOR_VERSION;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string bundle;
  std::string neurons = "all";
  int n_cls = 5;
  std::string heuristic = "mmesh";
  std::size_t b_first = 10;
  std::size_t b_rest = 5;
  std::size_t max_len = 3;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  bool coex = false;
  bool verify = false;
  bool timing = false;
  bool quiet = false;
  std::string out;
  std::string csv;
  std::string results;
  std::string masked_acts;
  std::string accuracy;
  std::optional<double> imrou;
  bool abs_labmask = false;
  std::string defaults;
  std::string untrained;
  std::size_t units = kDefaultRandomUnits;
  std::string k_list = "1,3,5,10";
  // gen-synthetic
  std::string kind = "random";
  int grid = 16;
  int concepts = 0;
  int samples = 0;
  std::size_t n_neurons = 1;
  std::string layer = "relu";
  std::string config_file;  // consumed before parsing; registered for --help
};

// ---------------------------------------------------------------- formatting

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string row;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) row += ',';
    row += csv_field(fields[i]);
  }
  return row + '\n';
}

Json json_double(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

Json formula_json(const Formula& f) {
  Json tail = Json::array();
  for (const auto& t : f.tail) tail.push_back({{"op", std::string(to_string(t.op))}, {"id", t.id}});
  return {{"head", f.head}, {"tail", tail}};
}

Formula formula_from_json(const Json& j) {
  Formula f(j.at("head").get<ConceptId>());
  for (const auto& t : j.at("tail")) {
    const auto op = parse_op(t.at("op").get<std::string>());
    if (!op) throw FormatError("unknown connective in formula: " + t.at("op").get<std::string>());
    f.tail.push_back({*op, t.at("id").get<ConceptId>()});
  }
  return f;
}

// CSV preamble: engine, command and configuration as comment lines.
std::string csv_preamble(const std::string& command, const Json& config) {
  std::string s = "# dissector " + std::string(kVersion) + " " + command + "\n";
  for (const auto& [key, value] : config.items()) {
    s += "# " + key + "=" + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
  }
  return s;
}

Json header_line(const std::string& command, const Json& config) {
  return {{"type", "header"}, {"engine", "dissector"}, {"version", kVersion}, {"command", command}, {"config", config}};
}

void write_output(const std::string& path, const std::string& data) {
  try {
    detail::write_file_atomic(path, data);
  } catch (const IoError& e) {
    throw std::runtime_error(e.what());
  }
}

// ---------------------------------------------------------------- config

Json search_config_json(const Options& o) {
  return {{"bundle", o.bundle},       {"neurons", o.neurons}, {"n_cls", o.n_cls},     {"heuristic", o.heuristic},
          {"b_first", o.b_first},     {"b_rest", o.b_rest},   {"max_len", o.max_len}, {"seed", o.seed},
          {"coex", o.coex}};
}

SearchConfig search_config(const Options& o) {
  const auto h = parse_heuristic(o.heuristic);
  if (!h) throw ConfigError("unknown heuristic: " + o.heuristic);
  if (o.b_first == 0 || o.b_rest == 0) throw ConfigError("beam sizes must be positive");
  if (o.max_len == 0) throw ConfigError("max-len must be positive");
  if (o.n_cls <= 0) throw ConfigError("n-cls must be positive");
  SearchConfig cfg;
  cfg.heuristic = *h;
  cfg.b_first = o.b_first;
  cfg.b_rest = o.b_rest;
  cfg.max_len = o.max_len;
  return cfg;
}

ThresholdOptions threshold_options(const Options& o) {
  ThresholdOptions t;
  t.coex_compat = o.coex;
  return t;
}

std::size_t resolve_jobs(const Options& o) {
  if (o.jobs > 0) return o.jobs;
  if (const char* env = std::getenv("DISSECTOR_JOBS"); env != nullptr && *env != '\0') {
    std::size_t v = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v == 0) {
      throw ConfigError("DISSECTOR_JOBS must be a positive integer");
    }
    return v;
  }
  return default_jobs();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty() || key == "config") throw ConfigError(path + ":" + std::to_string(lineno) + ": invalid key");
    out.emplace_back(key, trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

Bundle load_input_bundle(const Options& o, const std::string& path) {
  LoadOptions lo;
  lo.verify_meta = o.verify;
  return load_bundle(path, lo);
}

std::vector<std::size_t> selected_neurons(const Options& o, const Bundle& b) {
  return parse_neuron_range(o.neurons, b.acts.n_neurons());
}

class Progress {
 public:
  Progress(std::ostream& err, bool quiet, std::string command)
      : err_(err), quiet_(quiet), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void unit(const std::string& what, double seconds) {
    if (quiet_) return;
    const std::lock_guard lock(mutex_);
    err_ << "[" << command_ << "] " << what << " (" << fmt_double(seconds) << " s)\n";
  }

  void done() {
    if (quiet_) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    err_ << "[" << command_ << "] finished in " << fmt_double(s) << " s\n";
  }

 private:
  std::ostream& err_;
  bool quiet_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::mutex mutex_;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---------------------------------------------------------------- explain

struct NeuronRun {
  std::size_t neuron = 0;
  ClusteredExplanation run;
};

std::vector<NeuronRun> explain_neurons(const Bundle& b, const std::vector<std::size_t>& neurons, const Options& o,
                                       const SearchConfig& cfg, Progress& progress) {
  std::vector<NeuronRun> runs(neurons.size());
  const ThresholdOptions topts = threshold_options(o);
  parallel_for(neurons.size(), resolve_jobs(o), [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    runs[i].neuron = neurons[i];
    runs[i].run = clustered_explain(b, neurons[i], o.n_cls, cfg, o.seed, topts);
    progress.unit("neuron " + std::to_string(neurons[i]) + ": " + std::to_string(runs[i].run.records.size()) + " ranges",
                  seconds_since(t0));
  });
  return runs;
}

Json record_json(const ExplanationRecord& r, const ConceptCatalog& catalog, bool timing) {
  Json j = {{"type", "record"},
            {"neuron", r.neuron},
            {"cluster", r.interval.label},
            {"lo", json_double(r.interval.lo)},
            {"hi", json_double(r.interval.hi)},
            {"formula", format_formula(r.formula, catalog)}};
  const Json fj = formula_json(r.formula);
  j["head"] = fj["head"];
  j["tail"] = fj["tail"];
  j["iou_num"] = r.iou.num;
  j["iou_den"] = r.iou.den;
  j["iou"] = r.iou.to_double();
  j["visited"] = r.visited;
  j["candidates"] = r.candidates;
  j["dedup_skips"] = r.dedup_skips;
  j["empty_activation"] = r.empty_activation;
  if (timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

int cmd_explain(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  const SearchConfig cfg = search_config(o);
  const Bundle b = load_input_bundle(o, o.bundle);
  const auto neurons = selected_neurons(o, b);
  Progress progress(err, o.quiet, "explain");
  const auto runs = explain_neurons(b, neurons, o, cfg, progress);

  const Json config = search_config_json(o);
  std::string jsonl = header_line("explain", config).dump() + "\n";
  std::string csv = csv_preamble("explain", config);
  std::vector<std::string> cols = {"neuron", "cluster",    "lo",          "hi",         "formula",
                                   "iou",    "iou_num",    "iou_den",     "visited",    "candidates",
                                   "dedup_skips", "empty_activation"};
  if (o.timing) cols.emplace_back("wall_seconds");
  csv += csv_row(cols);
  for (const auto& nr : runs) {
    if (nr.run.degenerate) {
      jsonl += Json{{"type", "degenerate"}, {"neuron", nr.neuron}}.dump() + "\n";
      continue;
    }
    for (const auto& r : nr.run.records) {
      jsonl += record_json(r, b.catalog, o.timing).dump() + "\n";
      std::vector<std::string> row = {std::to_string(r.neuron),
                                      std::to_string(r.interval.label),
                                      fmt_double(r.interval.lo),
                                      fmt_double(r.interval.hi),
                                      format_formula(r.formula, b.catalog),
                                      fmt_double(r.iou.to_double()),
                                      std::to_string(r.iou.num),
                                      std::to_string(r.iou.den),
                                      std::to_string(r.visited),
                                      std::to_string(r.candidates),
                                      std::to_string(r.dedup_skips),
                                      r.empty_activation ? "true" : "false"};
      if (o.timing) row.push_back(fmt_double(r.wall_seconds));
      csv += csv_row(row);
    }
  }
  write_output(o.out, jsonl);
  const std::string csv_path = o.csv.empty() ? fs::path(o.out).replace_extension(".csv").string() : o.csv;
  write_output(csv_path, csv);
  progress.done();
  return kOk;
}

// ---------------------------------------------------------------- compare-heuristics

int cmd_compare(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  const SearchConfig base = search_config(o);
  const Bundle b = load_input_bundle(o, o.bundle);
  const auto neurons = selected_neurons(o, b);
  Progress progress(err, o.quiet, "compare-heuristics");
  constexpr Heuristic kOrder[] = {Heuristic::none, Heuristic::areas, Heuristic::cfh, Heuristic::mmesh};

  struct Totals {
    std::int64_t visited[4] = {0, 0, 0, 0};
    double iou[4] = {0, 0, 0, 0};
    std::size_t jobs = 0;
  };
  std::vector<Totals> per_neuron(neurons.size());
  const ThresholdOptions topts = threshold_options(o);
  parallel_for(neurons.size(), resolve_jobs(o), [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    const ThresholdSet ts = threshold_set(b.acts, neurons[i], o.n_cls, o.seed, topts);
    Totals& t = per_neuron[i];
    for (const auto& iv : ts.intervals) {
      ++t.jobs;
      for (std::size_t h = 0; h < 4; ++h) {
        SearchConfig cfg = base;
        cfg.heuristic = kOrder[h];
        const auto rec = explain_interval(b, neurons[i], iv, cfg);
        t.visited[h] += rec.visited;
        t.iou[h] += rec.iou.to_double();
      }
    }
    progress.unit("neuron " + std::to_string(neurons[i]), seconds_since(t0));
  });
  Totals all;
  for (const auto& t : per_neuron) {
    all.jobs += t.jobs;
    for (std::size_t h = 0; h < 4; ++h) {
      all.visited[h] += t.visited[h];
      all.iou[h] += t.iou[h];
    }
  }
  Json config = search_config_json(o);
  config.erase("heuristic");
  std::string csv = csv_preamble("compare-heuristics", config);
  csv += csv_row({"heuristic", "jobs", "mean_visited", "total_visited", "ratio_to_none", "mean_iou"});
  const double n = all.jobs == 0 ? 1.0 : static_cast<double>(all.jobs);
  for (std::size_t h = 0; h < 4; ++h) {
    const double ratio =
        all.visited[0] == 0 ? 0.0 : static_cast<double>(all.visited[h]) / static_cast<double>(all.visited[0]);
    csv += csv_row({std::string(to_string(kOrder[h])), std::to_string(all.jobs),
                    fmt_double(static_cast<double>(all.visited[h]) / n), std::to_string(all.visited[h]),
                    fmt_double(ratio), fmt_double(all.iou[h] / n)});
  }
  write_output(o.out, csv);
  progress.done();
  return kOk;
}

// ---------------------------------------------------------------- cluster

int cmd_cluster(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  if (o.n_cls <= 0) throw ConfigError("n-cls must be positive");
  const Bundle b = load_input_bundle(o, o.bundle);
  const auto neurons = selected_neurons(o, b);
  Progress progress(err, o.quiet, "cluster");
  std::vector<ThresholdSet> sets(neurons.size());
  const ThresholdOptions topts = threshold_options(o);
  parallel_for(neurons.size(), resolve_jobs(o), [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    sets[i] = threshold_set(b.acts, neurons[i], o.n_cls, o.seed, topts);
    progress.unit("neuron " + std::to_string(neurons[i]), seconds_since(t0));
  });
  const Json config = {{"bundle", o.bundle}, {"neurons", o.neurons}, {"n_cls", o.n_cls}, {"seed", o.seed},
                       {"coex", o.coex}};
  std::string jsonl = header_line("cluster", config).dump() + "\n";
  for (const auto& ts : sets) {
    Json ivs = Json::array();
    for (const auto& iv : ts.intervals) {
      ivs.push_back({{"label", iv.label}, {"lo", json_double(iv.lo)}, {"hi", json_double(iv.hi)}});
    }
    jsonl += Json{{"type", "thresholds"},
                  {"neuron", ts.neuron},
                  {"mode", std::string(to_string(ts.mode))},
                  {"degenerate", ts.degenerate},
                  {"reduced_k", ts.reduced_k},
                  {"intervals", ivs}}
                 .dump() +
             "\n";
  }
  write_output(o.out, jsonl);
  progress.done();
  return kOk;
}

// ---------------------------------------------------------------- results files

struct ResultRecord {
  std::size_t index = 0;  // position among record lines
  std::size_t neuron = 0;
  Interval interval;
  Formula formula;
  std::string text;
  bool empty_activation = false;
};

std::vector<ResultRecord> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read results file " + path);
  std::vector<ResultRecord> out;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        header = true;
        continue;
      }
      if (type != "record") continue;
      ResultRecord r;
      r.index = out.size();
      r.neuron = j.at("neuron").get<std::size_t>();
      r.interval.label = j.at("cluster").get<int>();
      r.interval.lo = j.at("lo").is_null() ? -kInf : j.at("lo").get<double>();
      r.interval.hi = j.at("hi").is_null() ? kInf : j.at("hi").get<double>();
      r.formula = formula_from_json(j);
      r.text = j.value("formula", std::string());
      r.empty_activation = j.value("empty_activation", false);
      out.push_back(std::move(r));
    } catch (const Json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw FormatError(path + ": missing header line");
  return out;
}

std::vector<double> read_accuracy(const std::string& path, std::size_t n_samples) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read accuracy file " + path);
  std::vector<double> v;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    double d = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), d);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) throw FormatError("bad accuracy value: " + t);
    v.push_back(d);
  }
  if (v.size() != n_samples) {
    throw FormatError("accuracy file has " + std::to_string(v.size()) + " values for " + std::to_string(n_samples) +
                      " samples");
  }
  return v;
}

// ---------------------------------------------------------------- metrics

struct MetricRow {
  const ResultRecord* rec = nullptr;
  QualityVector q;
};

std::string degenerate_list(const QualityVector& q) {
  std::vector<std::string> names;
  if (q.iou.degenerate) names.emplace_back("IoU");
  if (q.expl_cov.degenerate) names.emplace_back("ExplCov");
  if (q.sample_cov.degenerate) names.emplace_back("SampleCov");
  if (q.act_cov.degenerate) names.emplace_back("ActCov");
  if (q.det_acc.degenerate) names.emplace_back("DetAcc");
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) s += (i > 0 ? ";" : "") + names[i];
  return s;
}

class Mean {
 public:
  void add(const std::optional<double>& v) {
    if (!v) return;
    sum_ += *v;
    ++n_;
  }
  std::optional<double> value() const {
    if (n_ == 0) return std::nullopt;
    return static_cast<double>(sum_ / static_cast<long double>(n_));
  }

 private:
  long double sum_ = 0;
  std::size_t n_ = 0;
};

int cmd_metrics(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  const Bundle b = load_input_bundle(o, o.bundle);
  const auto records = read_results(o.results);
  AuxOptions aux;
  aux.imrou_r = o.imrou;
  if (!o.accuracy.empty()) aux.accuracy = read_accuracy(o.accuracy, b.masks.n_samples());
  if (o.abs_labmask && o.masked_acts.empty()) throw ConfigError("--abs-labmask requires --masked-acts");
  for (const auto& r : records) {
    if (r.neuron >= b.acts.n_neurons()) throw FormatError("results reference neuron outside the bundle");
    validate(r.formula, b.catalog, std::numeric_limits<std::size_t>::max());
  }
  Progress progress(err, o.quiet, "metrics");

  std::vector<MetricRow> rows(records.size());
  parallel_for(records.size(), resolve_jobs(o), [&](std::size_t i) {
    const ResultRecord& r = records[i];
    rows[i].rec = &r;
    rows[i].q = quality_vector(r.formula, b.acts, r.neuron, r.interval, b.masks, aux);
    if (o.masked_acts.empty()) return;
    const fs::path file = fs::path(o.masked_acts) / ("masked_" + std::to_string(r.index) + ".bin");
    if (!fs::exists(file)) {
      progress.unit("record " + std::to_string(r.index) + ": no masked activations", 0.0);
      return;
    }
    const ActivationStore masked = load_activations(file);
    const std::size_t mk = masked.n_neurons() == 1 ? 0 : r.neuron;
    rows[i].q.lab_mask = lab_mask(b.acts, r.neuron, r.interval, masked, mk);
    if (o.abs_labmask) {
      rows[i].q.aux.abs_lab_mask = abs_lab_mask(r.formula, b.acts, r.neuron, r.interval, b.masks, masked, mk);
    }
  });

  Json config = {{"bundle", o.bundle},           {"results", o.results},
                 {"masked_acts", o.masked_acts}, {"accuracy", o.accuracy},
                 {"imrou", o.imrou ? Json(*o.imrou) : Json(nullptr)}, {"abs_labmask", o.abs_labmask}};
  std::string csv = csv_preamble("metrics", config);
  csv += csv_row({"scope", "neuron", "cluster", "lo", "hi", "formula", "IoU", "ExplCov", "SampleCov", "ActCov",
                  "DetAcc", "LabMask", "ScenePerc", "ImRoU", "Pearson", "AvgActSize", "AvgLabSize", "AvgOverlap",
                  "AbsLabMask", "n_records", "degenerate"});
  for (const auto& row : rows) {
    const auto& q = row.q;
    const auto& r = *row.rec;
    csv += csv_row({"record", std::to_string(r.neuron), std::to_string(r.interval.label), fmt_double(r.interval.lo),
                    fmt_double(r.interval.hi), r.text.empty() ? format_formula(r.formula, b.catalog) : r.text,
                    fmt_double(q.iou.to_double()), fmt_double(q.expl_cov.to_double()),
                    fmt_double(q.sample_cov.to_double()), fmt_double(q.act_cov.to_double()),
                    fmt_double(q.det_acc.to_double()), fmt_opt(q.lab_mask), "", fmt_opt(q.aux.imrou),
                    fmt_opt(q.aux.pearson), fmt_opt(q.aux.avg_act_size), fmt_opt(q.aux.avg_lab_size),
                    fmt_opt(q.aux.avg_overlap), fmt_opt(q.aux.abs_lab_mask), "1", degenerate_list(q)});
  }

  // Aggregate rows: one per cluster ordinal, then all records.
  auto aggregate = [&](const std::string& scope, const std::string& cluster, auto&& keep) {
    Mean iou, ec, sc, ac, da, lm, im, pe, as, ls, ao, al;
    std::vector<Formula> labels;
    std::size_t n = 0;
    for (const auto& row : rows) {
      if (!keep(*row.rec)) continue;
      ++n;
      const auto& q = row.q;
      iou.add(q.iou.to_double());
      ec.add(q.expl_cov.to_double());
      sc.add(q.sample_cov.to_double());
      ac.add(q.act_cov.to_double());
      da.add(q.det_acc.to_double());
      lm.add(q.lab_mask);
      im.add(q.aux.imrou);
      pe.add(q.aux.pearson);
      as.add(q.aux.avg_act_size);
      ls.add(q.aux.avg_lab_size);
      ao.add(q.aux.avg_overlap);
      al.add(q.aux.abs_lab_mask);
      labels.push_back(row.rec->formula);
    }
    csv += csv_row({scope, "", cluster, "", "", "", fmt_opt(iou.value()), fmt_opt(ec.value()), fmt_opt(sc.value()),
                    fmt_opt(ac.value()), fmt_opt(da.value()), fmt_opt(lm.value()),
                    fmt_opt(scene_perc(labels, b.masks)), fmt_opt(im.value()), fmt_opt(pe.value()),
                    fmt_opt(as.value()), fmt_opt(ls.value()), fmt_opt(ao.value()), fmt_opt(al.value()),
                    std::to_string(n), ""});
  };
  std::set<int> clusters;
  for (const auto& r : records) clusters.insert(r.interval.label);
  for (int c : clusters) {
    aggregate("cluster", std::to_string(c), [c](const ResultRecord& r) { return r.interval.label == c; });
  }
  aggregate("all", "", [](const ResultRecord&) { return true; });
  write_output(o.out, csv);
  progress.done();
  return kOk;
}

// ---------------------------------------------------------------- defaults / classify

int cmd_defaults(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  const SearchConfig cfg = search_config(o);
  Progress progress(err, o.quiet, "defaults");
  DefaultLabelOptions dopts;
  dopts.n_cls = o.n_cls;
  dopts.search = cfg;
  dopts.n_random_units = o.units;
  dopts.jobs = resolve_jobs(o);
  DefaultLabelSet set;
  ConceptCatalog catalog;
  if (!o.untrained.empty()) {
    const Bundle u = load_input_bundle(o, o.untrained);
    const auto neurons = parse_neuron_range(o.neurons, u.acts.n_neurons());
    set = default_labels_from_export(u, neurons, dopts, o.seed);
    catalog = u.catalog;
  } else {
    if (o.units == 0) throw ConfigError("units must be positive");
    const Bundle b = load_input_bundle(o, o.bundle);
    set = compute_default_labels(b.masks, b.acts.layer_kind(), dopts, o.seed);
    catalog = b.catalog;
  }
  Json config = search_config_json(o);
  config["untrained"] = o.untrained;
  config["units"] = o.units;
  Json formulas = Json::array();
  for (const auto& f : set.formulas) {
    Json fj = formula_json(f);
    fj["formula"] = format_formula(f, catalog);
    formulas.push_back(fj);
  }
  Json doc = header_line("defaults", config);
  doc["type"] = "defaults";
  doc["provenance"] = std::string(to_string(set.provenance));
  doc["seed"] = set.seed;
  doc["formulas"] = formulas;
  write_output(o.out, doc.dump(2) + "\n");
  progress.done();
  return kOk;
}

DefaultLabelSet read_defaults(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read defaults file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  DefaultLabelSet set;
  try {
    const Json doc = Json::parse(ss.str());
    if (doc.at("type").get<std::string>() != "defaults") throw FormatError(path + ": not a defaults file");
    set.provenance = doc.at("provenance").get<std::string>() == "untrained_export" ? DefaultProvenance::untrained_export
                                                                                  : DefaultProvenance::random_activations;
    set.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& f : doc.at("formulas")) set.formulas.push_back(formula_from_json(f));
  } catch (const Json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return set;
}

int cmd_classify(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  const auto records = read_results(o.results);
  const DefaultLabelSet defaults = read_defaults(o.defaults);
  Progress progress(err, o.quiet, "classify");
  const Json config = {{"results", o.results}, {"defaults", o.defaults}};
  std::string csv = csv_preamble("classify", config);
  csv += csv_row({"scope", "neuron", "cluster", "formula", "tag", "fraction", "n_records"});
  // cluster -> counts per tag
  std::map<int, std::array<std::size_t, 3>> per_cluster;
  std::array<std::size_t, 3> overall{};
  for (const auto& r : records) {
    if (r.empty_activation) continue;
    const SpecializationTag tag = classify_specialization(r.formula, defaults);
    ++per_cluster[r.interval.label][static_cast<std::size_t>(tag)];
    ++overall[static_cast<std::size_t>(tag)];
    csv += csv_row({"record", std::to_string(r.neuron), std::to_string(r.interval.label), r.text,
                    std::string(to_string(tag)), "", ""});
  }
  constexpr SpecializationTag kTags[] = {SpecializationTag::unspecialized, SpecializationTag::weakly_specialized,
                                         SpecializationTag::specialized};
  auto summary = [&](const std::string& scope, const std::string& cluster, const std::array<std::size_t, 3>& counts) {
    const std::size_t n = counts[0] + counts[1] + counts[2];
    for (std::size_t t = 0; t < 3; ++t) {
      const double frac = n == 0 ? 0.0 : static_cast<double>(counts[t]) / static_cast<double>(n);
      csv += csv_row({scope, "", cluster, "", std::string(to_string(kTags[t])), fmt_double(frac), std::to_string(n)});
    }
  };
  for (const auto& [c, counts] : per_cluster) summary("cluster", std::to_string(c), counts);
  summary("all", "", overall);
  write_output(o.out, csv);
  progress.done();
  return kOk;
}

// ---------------------------------------------------------------- sweeps

int cmd_sweep_thresholds(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  const SearchConfig cfg = search_config(o);
  const Bundle b = load_input_bundle(o, o.bundle);
  const auto neurons = selected_neurons(o, b);
  Progress progress(err, o.quiet, "sweep-thresholds");
  std::vector<std::vector<SweepRange>> sweeps(neurons.size());
  parallel_for(neurons.size(), resolve_jobs(o), [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    sweeps[i] = threshold_sweep(b, neurons[i], cfg);
    progress.unit("neuron " + std::to_string(neurons[i]), seconds_since(t0));
  });
  Json config = search_config_json(o);
  config.erase("n_cls");
  config.erase("coex");
  std::string csv = csv_preamble("sweep-thresholds", config);
  std::vector<std::string> cols = {"scope", "neuron", "direction", "quantile", "lo", "hi", "formula", "iou"};
  for (auto name : kCategoryNames) cols.emplace_back(name);
  csv += csv_row(cols);
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    for (const auto& s : sweeps[i]) {
      std::vector<std::string> row = {"unit",
                                      std::to_string(neurons[i]),
                                      std::string(to_string(s.direction)),
                                      fmt_double(s.quantile),
                                      fmt_double(s.interval.lo),
                                      fmt_double(s.interval.hi),
                                      format_formula(s.record.formula, b.catalog),
                                      fmt_double(s.record.iou.to_double())};
      for (double v : s.histogram) row.push_back(fmt_double(v));
      csv += csv_row(row);
    }
  }
  // Category histogram over all selected neurons per preset.
  const std::size_t n_presets = neurons.empty() ? 0 : sweeps[0].size();
  for (std::size_t p = 0; p < n_presets; ++p) {
    std::vector<Formula> labels;
    for (const auto& sw : sweeps) {
      if (!sw[p].record.empty_activation) labels.push_back(sw[p].record.formula);
    }
    const CategoryHistogram h = category_histogram(labels, b.catalog);
    std::vector<std::string> row = {"all", "", std::string(to_string(sweeps[0][p].direction)),
                                    fmt_double(sweeps[0][p].quantile), "", "", "", ""};
    for (double v : h) row.push_back(fmt_double(v));
    csv += csv_row(row);
  }
  write_output(o.out, csv);
  progress.done();
  return kOk;
}

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    int k = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), k);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || k <= 0) {
      throw ConfigError("invalid k list: " + text);
    }
    ks.push_back(k);
  }
  if (ks.empty()) throw ConfigError("empty k list");
  return ks;
}

int cmd_sweep_clusters(const Options& o, std::ostream& /*out*/, std::ostream& err) {
  const SearchConfig cfg = search_config(o);
  const auto ks = parse_k_list(o.k_list);
  const Bundle b = load_input_bundle(o, o.bundle);
  const auto neurons = selected_neurons(o, b);
  Progress progress(err, o.quiet, "sweep-clusters");
  const auto rows = cluster_count_sweep(b, neurons, ks, cfg, o.seed, resolve_jobs(o));
  Json config = search_config_json(o);
  config.erase("n_cls");
  config.erase("coex");
  config["k_list"] = o.k_list;
  std::string csv = csv_preamble("sweep-clusters", config);
  csv += csv_row({"k", "n_labels", "IoU", "ExplCov", "SampleCov", "ActCov", "DetAcc", "novel_fraction"});
  for (const auto& r : rows) {
    csv += csv_row({std::to_string(r.k), std::to_string(r.n_labels), fmt_double(r.mean.iou),
                    fmt_double(r.mean.expl_cov), fmt_double(r.mean.sample_cov), fmt_double(r.mean.act_cov),
                    fmt_double(r.mean.det_acc), fmt_double(r.novel_fraction)});
  }
  write_output(o.out, csv);
  progress.done();
  return kOk;
}

// ---------------------------------------------------------------- gen-synthetic

int cmd_gen_synthetic(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.grid <= 0) throw ConfigError("grid must be positive");
  Progress progress(err, o.quiet, "gen-synthetic");
  if (o.kind == "planted") {
    const std::size_t samples = o.samples > 0 ? static_cast<std::size_t>(o.samples) : 40;
    const std::size_t distractors = o.concepts > 2 ? static_cast<std::size_t>(o.concepts - 2) : 12;
    const auto p = synthetic::planted_instance(o.seed, o.grid, samples, distractors);
    write_bundle(p.bundle, o.out);
    const Json truth = {{"seed", o.seed},
                        {"low_concept", p.low_concept},
                        {"high_concept", p.high_concept},
                        {"low_name", p.bundle.catalog.at(p.low_concept).name},
                        {"high_name", p.bundle.catalog.at(p.high_concept).name}};
    write_output((fs::path(o.out) / "planted.json").string(), truth.dump(2) + "\n");
    out << truth.dump() << "\n";
  } else if (o.kind == "random") {
    synthetic::InstanceSpec spec;
    spec.grid = o.grid;
    if (o.concepts > 0) spec.min_concepts = spec.max_concepts = o.concepts;
    if (o.samples > 0) spec.min_samples = spec.max_samples = o.samples;
    if (o.n_neurons == 0) throw ConfigError("n-neurons must be positive");
    spec.n_neurons = o.n_neurons;
    if (o.layer == "relu") {
      spec.kind = LayerKind::relu;
    } else if (o.layer == "signed") {
      spec.kind = LayerKind::signed_values;
    } else {
      throw ConfigError("unknown layer kind: " + o.layer);
    }
    write_bundle(synthetic::random_instance(o.seed, spec), o.out);
  } else {
    throw ConfigError("unknown synthetic kind: " + o.kind);
  }
  progress.done();
  return kOk;
}

// ---------------------------------------------------------------- wiring

struct Command {
  CLI::App* app;
  int (*fn)(const Options&, std::ostream&, std::ostream&);
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_file, "key=value file; command-line flags take precedence");
  sub->add_option("--jobs", o.jobs, "worker threads (default: DISSECTOR_JOBS or all cores)");
  sub->add_flag("--quiet", o.quiet, "suppress progress output");
  sub->add_flag("--verify", o.verify, "recompute mask metadata while loading");
}

void add_bundle(CLI::App* sub, Options& o) {
  sub->add_option("--bundle", o.bundle, "input bundle directory")->required()->check(CLI::ExistingDirectory);
}

void add_selection(CLI::App* sub, Options& o) {
  sub->add_option("--neurons", o.neurons, "neuron range, e.g. 0-9,12 or all")->capture_default_str();
  sub->add_option("--seed", o.seed, "random seed")->capture_default_str();
}

void add_search(CLI::App* sub, Options& o) {
  sub->add_option("--heuristic", o.heuristic, "mmesh, cfh, areas or none")
      ->check(CLI::IsMember({"mmesh", "cfh", "areas", "none"}))
      ->capture_default_str();
  sub->add_option("--b-first", o.b_first, "beam width at arity 1")->capture_default_str();
  sub->add_option("--b-rest", o.b_rest, "beam width at higher arities")->capture_default_str();
  sub->add_option("--max-len", o.max_len, "maximum formula length")->capture_default_str();
}

void add_clustering(CLI::App* sub, Options& o) {
  sub->add_option("--n-cls", o.n_cls, "activation clusters per neuron")->capture_default_str();
  sub->add_flag("--coex", o.coex, "single top-quantile range instead of clustering");
}

}  // namespace

std::vector<std::size_t> parse_neuron_range(const std::string& text, std::size_t n) {
  const std::string t = trim(text);
  std::vector<std::size_t> out;
  if (t == "all") {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  auto parse_index = [&](std::string_view s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ConfigError("invalid neuron range: " + text);
    }
    if (v >= n) throw ConfigError("neuron " + std::to_string(v) + " out of range (layer has " + std::to_string(n) + ")");
    return v;
  };
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string it = trim(item);
    const auto dash = it.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_index(it));
      continue;
    }
    const std::size_t a = parse_index(std::string_view(it).substr(0, dash));
    const std::size_t b = parse_index(std::string_view(it).substr(dash + 1));
    if (b < a) throw ConfigError("invalid neuron range: " + text);
    for (std::size_t i = a; i <= b; ++i) out.push_back(i);
  }
  if (out.empty()) throw ConfigError("empty neuron range");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app("Compositional neuron explanations over activation ranges", "dissector");
  app.set_version_flag("--version", std::string(kVersion));
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::vector<Command> commands;
  {
    auto* s = app.add_subcommand("explain", "explain neurons per activation cluster (JSONL records + CSV table)");
    add_common(s, o);
    add_bundle(s, o);
    add_selection(s, o);
    add_search(s, o);
    add_clustering(s, o);
    s->add_option("--out", o.out, "JSONL output")->required();
    s->add_option("--csv", o.csv, "CSV output (default: --out with .csv extension)");
    s->add_flag("--timing", o.timing, "include wall time per record");
    commands.push_back({s, cmd_explain});
  }
  {
    auto* s = app.add_subcommand("compare-heuristics", "visited states of every heuristic on the same jobs (CSV)");
    add_common(s, o);
    add_bundle(s, o);
    add_selection(s, o);
    add_search(s, o);
    add_clustering(s, o);
    s->add_option("--out", o.out, "CSV output")->required();
    commands.push_back({s, cmd_compare});
  }
  {
    auto* s = app.add_subcommand("cluster", "activation ranges per neuron (JSONL)");
    add_common(s, o);
    add_bundle(s, o);
    add_selection(s, o);
    add_clustering(s, o);
    s->add_option("--out", o.out, "JSONL output")->required();
    commands.push_back({s, cmd_cluster});
  }
  {
    auto* s = app.add_subcommand("metrics", "quality measures of explanation records (CSV)");
    add_common(s, o);
    add_bundle(s, o);
    s->add_option("--results", o.results, "JSONL from explain")->required()->check(CLI::ExistingFile);
    s->add_option("--masked-acts", o.masked_acts, "directory of masked_<record>.bin activation files")
        ->check(CLI::ExistingDirectory);
    s->add_option("--accuracy", o.accuracy, "per-sample accuracy, one value per line")->check(CLI::ExistingFile);
    s->add_option("--imrou", o.imrou, "ImRoU penalty weight r");
    s->add_flag("--abs-labmask", o.abs_labmask, "also report the unnormalised LabMask");
    s->add_option("--out", o.out, "CSV output")->required();
    commands.push_back({s, cmd_metrics});
  }
  {
    auto* s = app.add_subcommand("defaults", "labels found on uninformative neurons (JSON)");
    add_common(s, o);
    s->add_option("--bundle", o.bundle, "bundle providing the concept masks")->check(CLI::ExistingDirectory);
    s->add_option("--untrained", o.untrained, "bundle exported from an untrained network")
        ->check(CLI::ExistingDirectory);
    add_selection(s, o);
    add_search(s, o);
    s->add_option("--n-cls", o.n_cls, "activation clusters per neuron")->capture_default_str();
    s->add_option("--units", o.units, "random units to sample")->capture_default_str();
    s->add_option("--out", o.out, "JSON output")->required();
    commands.push_back({s, cmd_defaults});
  }
  {
    auto* s = app.add_subcommand("classify", "specialization tag of each explanation (CSV)");
    add_common(s, o);
    s->add_option("--results", o.results, "JSONL from explain")->required()->check(CLI::ExistingFile);
    s->add_option("--defaults", o.defaults, "JSON from defaults")->required()->check(CLI::ExistingFile);
    s->add_option("--out", o.out, "CSV output")->required();
    commands.push_back({s, cmd_classify});
  }
  {
    auto* s = app.add_subcommand("sweep-thresholds", "best label per preset quantile range (CSV)");
    add_common(s, o);
    add_bundle(s, o);
    add_selection(s, o);
    add_search(s, o);
    s->add_option("--out", o.out, "CSV output")->required();
    commands.push_back({s, cmd_sweep_thresholds});
  }
  {
    auto* s = app.add_subcommand("sweep-clusters", "quality averages for several cluster counts (CSV)");
    add_common(s, o);
    add_bundle(s, o);
    add_selection(s, o);
    add_search(s, o);
    s->add_option("--k-list", o.k_list, "comma-separated cluster counts")->capture_default_str();
    s->add_option("--out", o.out, "CSV output")->required();
    commands.push_back({s, cmd_sweep_clusters});
  }
  {
    auto* s = app.add_subcommand("gen-synthetic", "write a seeded synthetic bundle");
    add_common(s, o);
    s->add_option("--out", o.out, "output bundle directory")->required();
    s->add_option("--kind", o.kind, "random or planted")->check(CLI::IsMember({"random", "planted"}))
        ->capture_default_str();
    s->add_option("--seed", o.seed, "random seed")->capture_default_str();
    s->add_option("--grid", o.grid, "grid side length")->capture_default_str();
    s->add_option("--concepts", o.concepts, "concept count (0: random)");
    s->add_option("--samples", o.samples, "sample count (0: random)");
    s->add_option("--n-neurons", o.n_neurons, "neurons in a random bundle")->capture_default_str();
    s->add_option("--layer", o.layer, "relu or signed")->check(CLI::IsMember({"relu", "signed"}))
        ->capture_default_str();
    commands.push_back({s, cmd_gen_synthetic});
  }

  try {
    // Expand --config into flags placed before the user's own, so that the
    // command line wins under the take-last policy.
    std::vector<std::string> argv = args;
    std::optional<std::string> config_path;
    for (std::size_t i = 0; i < argv.size(); ++i) {
      if (argv[i] == "--config") {
        if (i + 1 >= argv.size()) throw ConfigError("--config needs a file");
        config_path = argv[i + 1];
        argv.erase(argv.begin() + static_cast<std::ptrdiff_t>(i), argv.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        --i;
      } else if (argv[i].rfind("--config=", 0) == 0) {
        config_path = argv[i].substr(9);
        argv.erase(argv.begin() + static_cast<std::ptrdiff_t>(i));
        --i;
      }
    }
    if (config_path) {
      const auto sub_it = std::find_if(argv.begin(), argv.end(), [&](const std::string& a) {
        return std::any_of(commands.begin(), commands.end(), [&](const Command& c) { return c.app->get_name() == a; });
      });
      if (sub_it == argv.end()) throw ConfigError("--config given without a subcommand");
      const CLI::App* sub = app.get_subcommand(*sub_it);
      std::vector<std::string> expanded;
      for (const auto& [key, value] : read_config_file(*config_path)) {
        if (sub->get_option_no_throw("--" + key) != nullptr) {
          expanded.push_back("--" + key + "=" + value);
          continue;
        }
        const bool known = std::any_of(commands.begin(), commands.end(), [&](const Command& c) {
          return c.app->get_option_no_throw("--" + key) != nullptr;
        });
        if (!known) throw ConfigError("unknown config key: " + key);
      }
      argv.insert(sub_it + 1, expanded.begin(), expanded.end());
    }
    std::reverse(argv.begin(), argv.end());
    try {
      app.parse(argv);
    } catch (const CLI::Success& e) {  // --help and --version
      app.exit(e, out, err);
      return kOk;
    } catch (const CLI::ParseError& e) {
      app.exit(e, out, err);
      return kConfigError;
    }
    for (const auto& c : commands) {
      if (c.app->parsed()) return c.fn(o, out, err);
    }
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const BundleError& e) {
    err << "error: " << e.what() << "\n";
    return kFormatError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace dissector::cli
