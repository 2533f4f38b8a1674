#pragma once

// Command-line front end: gen, train, eval, predict, mine, monitor, baseline.
// Exit codes: 0 ok, 2 usage/config, 3 data, 4 numeric, 5 I/O.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alertcast/attack_miner.hpp"
#include "alertcast/baselines.hpp"
#include "alertcast/evaluation.hpp"
#include "alertcast/model_io.hpp"
#include "alertcast/runtime.hpp"
#include "alertcast/synth_gen.hpp"
#include "alertcast/trainer.hpp"

namespace alertcast {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4, kExitIo = 5 };

inline int exit_code_for(ErrorClass c) {
  switch (c) {
    case ErrorClass::Usage: return kExitUsage;
    case ErrorClass::Data: return kExitData;
    case ErrorClass::Numeric: return kExitNumeric;
    case ErrorClass::Io: return kExitIo;
  }
  return kExitUsage;
}

inline constexpr const char* kReportDirEnv = "ALERTCAST_REPORT_DIR";

struct RunConfig {
  std::string subcommand;
  std::string data, model, out, config, manifest, scenario = "default", categories, stream, context, part = "test";
  std::string format = "json", precision, kind = "both", retrain_out;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> split_seed;
  std::size_t machines = 0, epochs = 0, hidden = 0, k = 0, window = 0, batch = 0, embed = 0, threads = 1;
  std::optional<double> learning_rate, floor, delta;
  double margin = 0.10, alpha = 0.1;
  std::uint64_t support = 1000;
  std::size_t sample_window = 100;
  bool stochastic = false, lenient = false, confidence = false, uniqueness = false, dump_scenario = false;
};

namespace cli_detail {

inline void require_readable(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing --") + what);
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw IoError("cannot read " + std::string(what) + " '" + path + "'");
}

inline void require_writable(const std::string& path) {
  if (path.empty()) return;
  const auto parent = std::filesystem::absolute(path).parent_path();
  std::error_code ec;
  if (!std::filesystem::is_directory(parent, ec)) throw IoError("output directory '" + parent.string() + "' does not exist");
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Json read_json_file(const std::string& path) {
  auto in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Report destination: --out, else $ALERTCAST_REPORT_DIR/<name>, else stdout.
inline std::optional<std::string> report_path(const RunConfig& rc, const std::string& name) {
  if (!rc.out.empty()) return rc.out;
  if (const char* dir = std::getenv(kReportDirEnv); dir && *dir) return (std::filesystem::path(dir) / name).string();
  return std::nullopt;
}

inline void emit(const RunConfig& rc, const std::string& name, const std::string& text, std::ostream& out) {
  if (const auto p = report_path(rc, name)) {
    write_text(*p, text);
  } else {
    out << text;
  }
}

inline Corpus load_corpus(const std::string& path, const IngestOptions& opts = {}) {
  auto in = open_in(path);
  return ingest_corpus(in, opts);
}

inline Corpus load_for_model(const std::string& path, const TrainedModel& m, bool lenient) {
  const bool has_unk = m.vocab->unknown_id().has_value();
  IngestOptions opts{m.vocab, lenient && has_unk ? UnknownLabelPolicy::Lenient : UnknownLabelPolicy::Strict, false};
  return load_corpus(path, opts);
}

inline std::string fixed(double x, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

inline void print_metrics(std::ostream& out, const std::string& name, const MetricsReport& m) {
  out << std::left << std::setw(14) << name << " precision " << fixed(m.precision) << "  recall " << fixed(m.recall)
      << "  f1 " << fixed(m.f1) << "  targets " << m.targets << '\n';
}

inline std::string metrics_csv(const MetricsReport& m) {
  std::ostringstream s;
  s << "class,tp,fp,fn,precision,recall,f1\n";
  s << "micro," << m.targets << ",,," << m.precision << ',' << m.recall << ',' << m.f1 << '\n';
  for (const auto& c : m.per_class)
    s << '"' << c.label << "\"," << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.precision << ',' << c.recall << ','
      << c.f1 << '\n';
  return s.str();
}

inline std::string with_suffix(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

// Corpus part selected by --part, split with the model's or the given seed.
inline Corpus select_part(const Corpus& corpus, const std::string& part, std::uint64_t split_seed) {
  if (part == "all") return corpus;
  const auto split = split_by_machine(corpus, {}, split_seed);
  if (part == "test") return split.test;
  if (part == "validation") return split.validation;
  if (part == "train") return split.train;
  throw ConfigError("--part must be train, validation, test or all");
}

inline ModelConfig model_config(const RunConfig& rc, const Json& file_cfg) {
  ModelConfig c;
  c.epochs = 100;
  if (file_cfg.contains("model")) c.merge_json(file_cfg["model"]);
  c.seed = rc.seed;
  if (rc.epochs) c.epochs = rc.epochs;
  if (rc.hidden) c.hidden_size = rc.hidden;
  if (rc.k) c.arrays = rc.k;
  if (rc.window) c.window = rc.window;
  if (rc.batch) c.batch_size = rc.batch;
  if (rc.embed) c.embed_size = rc.embed;
  if (rc.learning_rate) c.learning_rate = *rc.learning_rate;
  if (rc.stochastic) c.stochastic_train = true;
  if (!rc.precision.empty()) c.precision = precision_from_string(rc.precision);
  c.threads = rc.threads;
  return c;
}

inline int cmd_gen(const RunConfig& rc, std::ostream& out) {
  GeneratorConfig cfg;
  if (std::filesystem::exists(rc.scenario)) {
    cfg = GeneratorConfig::from_json(read_json_file(rc.scenario));
  } else {
    cfg = builtin_scenario(rc.scenario);
  }
  if (rc.machines) cfg.machines = rc.machines;
  cfg.seed = rc.seed;
  require_writable(rc.out);
  require_writable(rc.manifest);
  if (rc.dump_scenario) {
    emit(rc, "scenario.json", cfg.to_json().dump(2) + "\n", out);
    return kExitOk;
  }
  const auto g = generate_corpus(cfg, rc.threads);
  std::ostringstream text;
  write_corpus_jsonl(text, g.corpus);
  if (rc.out.empty()) {
    out << text.str();
  } else {
    write_text(rc.out, text.str());
    out << "wrote " << g.corpus.event_count() << " events on " << g.corpus.traces.size() << " machines to " << rc.out
        << '\n';
  }
  if (!rc.manifest.empty()) write_text(rc.manifest, g.manifest.to_json().dump() + "\n");
  return kExitOk;
}

inline int cmd_train(const RunConfig& rc, const Json& file_cfg, std::ostream& out, std::ostream& err) {
  require_readable(rc.data, "data");
  if (rc.out.empty()) throw ConfigError("missing --out for the model file");
  require_writable(rc.out);
  const auto corpus = load_corpus(rc.data, {nullptr, UnknownLabelPolicy::Strict, true});
  const auto split_seed = rc.split_seed.value_or(rc.seed);
  const auto split = split_by_machine(corpus, {}, split_seed);
  auto cfg = model_config(rc, file_cfg);
  cfg.vocab_size = corpus.vocab_size();
  auto model = train_model(split, cfg, [&](const EpochStats& s) {
    err << "epoch " << s.epoch << "  train_loss " << fixed(s.train_loss) << "  train_precision "
        << fixed(s.train_precision);
    if (s.validation_precision) err << "  val_precision " << fixed(*s.validation_precision);
    err << '\n';
  });
  model.metadata.extra["split_seed"] = split_seed;
  model.metadata.extra["data"] = std::filesystem::path(rc.data).filename().string();
  save_model(model, rc.out);
  out << "chosen epoch " << model.metadata.chosen_epoch;
  if (model.metadata.validation_precision) out << "  validation precision " << fixed(*model.metadata.validation_precision);
  out << "\nwrote " << rc.out << '\n';
  return kExitOk;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out) {
  require_readable(rc.model, "model");
  require_readable(rc.data, "data");
  if (!rc.categories.empty()) require_readable(rc.categories, "categories");
  require_writable(rc.out);
  const auto model = load_model(rc.model);
  const auto corpus = load_for_model(rc.data, model, rc.lenient);
  const auto split_seed =
      rc.split_seed.value_or(model.metadata.extra.value("split_seed", std::uint64_t{rc.seed}));
  const auto part = select_part(corpus, rc.part, split_seed);

  std::size_t skipped = 0;
  const auto records = last_event_predictions(model, part, &skipped);
  auto metrics = metrics_from_records(records, model.vocab.get());
  metrics.skipped = skipped;
  Json report{{"part", rc.part}, {"split_seed", split_seed}, {"metrics", metrics.to_json()}};
  std::optional<ConfidenceReport> conf;
  std::optional<UniquenessReport> uniq;
  if (rc.confidence) {
    conf = confidence_report(records);
    report["confidence"] = conf->to_json();
  }
  if (rc.uniqueness) {
    uniq = uniqueness_report(part, records);
    report["uniqueness"] = uniq->to_json();
  }
  std::optional<CategoryEvaluation> cat;
  std::optional<MetricsReport> verdict;
  if (!rc.categories.empty()) {
    auto in = open_in(rc.categories);
    const auto map = CategoryMap::load(in);
    cat = category_relaxed_eval(records, *model.vocab, map, rc.lenient ? MappingPolicy::Lenient : MappingPolicy::Strict);
    report["category"] = cat->to_json();
    verdict = block_allow_eval(records, *model.vocab, map);
    report["block_allow"] = verdict->to_json();
  }

  const bool to_file = report_path(rc, "eval.json").has_value();
  if (rc.format == "csv") {
    emit(rc, "eval.csv", metrics_csv(metrics), out);
    if (const auto p = report_path(rc, "eval.csv")) {
      if (conf) {
        std::ostringstream s;
        conf->write_csv(s);
        write_text(with_suffix(*p, ".confidence.csv"), s.str());
      }
      if (uniq) {
        std::ostringstream s;
        uniq->write_csv(s);
        write_text(with_suffix(*p, ".uniqueness.csv"), s.str());
      }
    }
  } else {
    emit(rc, "eval.json", report.dump(2) + "\n", out);
  }
  if (to_file) {
    print_metrics(out, "exact", metrics);
    if (cat) {
      print_metrics(out, "category", cat->category);
      out << "category-rescued failures " << cat->category_rescued << " of " << cat->exact_failures << '\n';
    }
    if (verdict) print_metrics(out, "block/allow", *verdict);
  }
  return kExitOk;
}

inline int cmd_predict(const RunConfig& rc, std::ostream& out) {
  require_readable(rc.model, "model");
  require_writable(rc.out);
  const auto model = load_model(rc.model);
  if (!rc.context.empty()) {
    std::vector<EventId> ctx;
    std::stringstream ss(rc.context);
    std::string label;
    while (std::getline(ss, label, ',')) {
      const auto id = model.vocab->find(label);
      if (!id) throw VocabularyError("unknown event '" + label + "'");
      ctx.push_back(*id);
    }
    const auto p = predict_next(model, ctx);
    const Json j{{"event", model.vocab->label(p.event)}, {"probability", p.probability}};
    emit(rc, "predict.json", j.dump() + "\n", out);
    return kExitOk;
  }
  require_readable(rc.data, "data");
  const auto corpus = load_for_model(rc.data, model, rc.lenient);
  std::ostringstream log;
  std::size_t steps = 0, hits = 0, green = 0, orange = 0, red = 0;
  for (const auto& t : corpus.traces) {
    if (t.events.empty()) continue;
    PredictionSession session(model, model.window());
    session.seed(t.events[0]);
    for (std::size_t i = 1; i < t.events.size(); ++i) session.step(t.events[i]);
    for (const auto& r : session.log()) {
      Json j{{"machine", t.machine},
             {"step", r.step},
             {"predicted", model.vocab->label(r.predicted)},
             {"probability", r.probability},
             {"actual", model.vocab->label(r.actual)},
             {"correct", r.correct},
             {"color", to_string(r.color)}};
      log << j.dump() << '\n';
      ++steps;
      hits += r.correct;
      green += r.color == StepColor::Green;
      orange += r.color == StepColor::Orange;
      red += r.color == StepColor::Red;
    }
  }
  emit(rc, "predict.jsonl", log.str(), out);
  if (report_path(rc, "predict.jsonl")) {
    out << "steps " << steps << "  precision " << fixed(steps ? static_cast<double>(hits) / static_cast<double>(steps) : 0.0)
        << "  green " << green << "  orange " << orange << "  red " << red << '\n';
  }
  return kExitOk;
}

inline int cmd_mine(const RunConfig& rc, std::ostream& out) {
  require_readable(rc.data, "data");
  require_writable(rc.out);
  const auto corpus = load_corpus(rc.data);
  auto found = mine_candidates(corpus, {rc.margin, rc.support});
  annotate_sources(found, corpus);
  const Json report{{"margin", rc.margin},
                    {"support_threshold", rc.support},
                    {"machines", corpus.traces.size()},
                    {"candidates", candidates_to_json(found, *corpus.vocabulary)}};
  if (rc.format == "csv") {
    std::ostringstream csv;
    csv << "events,support,band_low,band_median,band_high,source_consistency\n";
    for (const auto& c : found) {
      std::string labels;
      for (auto e : c.events) labels += (labels.empty() ? "" : ";") + corpus.vocabulary->label(e);
      csv << '"' << labels << "\"," << c.support << ',' << c.band_low << ',' << c.band_median << ',' << c.band_high << ',';
      if (c.source_consistency) csv << *c.source_consistency;
      csv << '\n';
    }
    emit(rc, "mine.csv", csv.str(), out);
  } else {
    emit(rc, "mine.json", report.dump(2) + "\n", out);
  }
  if (report_path(rc, "mine.json")) out << found.size() << " candidate attacks\n";
  return kExitOk;
}

inline std::vector<double> read_precision_stream(const std::string& path) {
  auto in = open_in(path);
  std::vector<double> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    try {
      std::size_t used = 0;
      samples.push_back(std::stod(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw ParseError(line_no, "expected one precision sample per line");
    }
  }
  return samples;
}

inline int cmd_monitor(const RunConfig& rc, const Json& file_cfg, std::ostream& out, std::ostream& err) {
  DriftMonitorConfig cfg;
  cfg.window = rc.sample_window;
  if (rc.floor) cfg.floor = *rc.floor < 0 ? std::nullopt : rc.floor;
  if (rc.delta) cfg.delta = *rc.delta < 0 ? std::nullopt : rc.delta;
  cfg.validate();
  require_writable(rc.out);
  require_writable(rc.retrain_out);

  std::vector<double> samples;
  std::optional<TrainedModel> model;
  if (!rc.stream.empty()) {
    require_readable(rc.stream, "stream");
    samples = read_precision_stream(rc.stream);
  } else {
    // Precision of teacher-forced sessions over the data, sampled in blocks.
    require_readable(rc.model, "model");
    require_readable(rc.data, "data");
    model = load_model(rc.model);
    const auto corpus = load_for_model(rc.data, *model, rc.lenient);
    PrecisionSampler sampler(cfg.window);
    for (const auto& t : corpus.traces) {
      if (t.events.empty()) continue;
      PredictionSession session(*model, model->window());
      session.seed(t.events[0]);
      for (std::size_t i = 1; i < t.events.size(); ++i)
        if (const auto s = sampler.add(session.step(t.events[i]).correct)) samples.push_back(*s);
    }
  }

  DriftMonitor monitor(cfg);
  Json records = Json::array();
  std::optional<RetrainRequest> first_request;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto status = monitor.check(samples[i]);
    Json r{{"index", i}, {"sample", samples[i]}, {"status", to_string(status)}};
    if (status == DriftStatus::Triggered) {
      r["request"] = monitor.last_request()->to_json();
      if (!first_request) first_request = monitor.last_request();
    }
    records.push_back(std::move(r));
  }
  std::size_t triggers = 0;
  for (const auto& r : records) triggers += r["status"] == "retrain-triggered";
  if (rc.format == "csv") {
    std::ostringstream csv;
    csv << "index,sample,status\n";
    for (const auto& r : records)
      csv << r["index"].get<std::size_t>() << ',' << r["sample"].get<double>() << ',' << r["status"].get<std::string>() << '\n';
    emit(rc, "monitor.csv", csv.str(), out);
  } else {
    emit(rc, "monitor.json", Json{{"samples", records}, {"triggers", triggers}}.dump(2) + "\n", out);
  }
  if (report_path(rc, "monitor.json")) out << samples.size() << " samples, " << triggers << " retrain triggers\n";

  if (first_request && !rc.retrain_out.empty()) {
    require_readable(rc.data, "data");
    const auto corpus = load_corpus(rc.data, {nullptr, UnknownLabelPolicy::Strict, true});
    const auto split_seed = rc.split_seed.value_or(rc.seed);
    auto mcfg = model ? model->config : model_config(rc, file_cfg);
    mcfg.vocab_size = corpus.vocab_size();
    mcfg.seed = rc.seed;
    mcfg.threads = rc.threads;
    if (rc.epochs) mcfg.epochs = rc.epochs;
    err << "retraining after drift at sample " << first_request->sample_index << '\n';
    auto fresh = train_model(split_by_machine(corpus, {}, split_seed), mcfg);
    fresh.metadata.extra["split_seed"] = split_seed;
    fresh.metadata.extra["retrain_request"] = first_request->to_json();
    save_model(fresh, rc.retrain_out);
  }
  return kExitOk;
}

inline int cmd_baseline(const RunConfig& rc, std::ostream& out) {
  require_readable(rc.data, "data");
  require_writable(rc.out);
  if (rc.kind != "markov" && rc.kind != "ngram" && rc.kind != "both") throw ConfigError("--kind must be markov, ngram or both");
  const auto corpus = load_corpus(rc.data);
  const auto split_seed = rc.split_seed.value_or(rc.seed);
  const auto split = split_by_machine(corpus, {}, split_seed);
  const Corpus& test = rc.part == "all" ? corpus : split.test;
  Json report{{"split_seed", split_seed}, {"alpha", rc.alpha}};
  std::vector<std::pair<std::string, MetricsReport>> rows;
  if (rc.kind != "ngram") {
    const auto m = fit_markov(split.train, rc.alpha);
    rows.emplace_back("markov", evaluate_last_event(MarkovPredictor{&m}, test));
    report["markov"] = {{"metrics", rows.back().second.to_json()}, {"model", m.to_json()}};
  }
  if (rc.kind != "markov") {
    const auto g = fit_ngram(split.train, rc.alpha);
    rows.emplace_back("3-gram", evaluate_last_event(NGramPredictor{&g}, test));
    report["ngram"] = {{"metrics", rows.back().second.to_json()}, {"model", g.to_json()}};
  }
  if (rc.format == "csv") {
    std::ostringstream csv;
    csv << "model,precision,recall,f1,targets\n";
    for (const auto& [name, m] : rows) csv << name << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',' << m.targets << '\n';
    emit(rc, "baseline.csv", csv.str(), out);
  } else {
    emit(rc, "baseline.json", report.dump(2) + "\n", out);
  }
  if (report_path(rc, "baseline.json"))
    for (const auto& [name, m] : rows) print_metrics(out, name, m);
  return kExitOk;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  RunConfig rc;
  CLI::App app{"Next-event prediction for security event streams"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "alertcast 1.0");

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", rc.seed, "Seed for every random choice");
    c->add_option("--threads", rc.threads, "Worker threads")->check(CLI::PositiveNumber);
    c->add_option("--config", rc.config, "JSON config file; flags override it");
    c->add_option("--out", rc.out, "Output path");
    c->add_option("--format", rc.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  };
  auto model_flags = [&](CLI::App* c) {
    c->add_option("--epochs", rc.epochs, "Training epochs")->check(CLI::PositiveNumber);
    c->add_option("--hidden", rc.hidden, "Hidden units")->check(CLI::PositiveNumber);
    c->add_option("--k", rc.k, "Memory arrays per cell")->check(CLI::PositiveNumber);
    c->add_option("--window", rc.window, "Unrolling window w")->check(CLI::PositiveNumber);
    c->add_option("--batch", rc.batch, "Targets per mini-batch")->check(CLI::PositiveNumber);
    c->add_option("--embed", rc.embed, "Input embedding size (default: hidden)");
    c->add_option("--lr", rc.learning_rate, "Step size");
    c->add_flag("--stochastic", rc.stochastic, "Sample one memory array per step while training");
    c->add_option("--precision", rc.precision, "Training precision")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic event corpus");
  common(gen);
  gen->add_option("--scenario", rc.scenario, "Built-in scenario (default, long-memory) or scenario JSON file");
  gen->add_option("--machines", rc.machines, "Machine count override");
  gen->add_option("--manifest", rc.manifest, "Write the ground-truth manifest here");
  gen->add_flag("--dump-scenario", rc.dump_scenario, "Write the scenario JSON instead of a corpus");

  auto* train = app.add_subcommand("train", "Split a corpus by machine and train a model");
  common(train);
  model_flags(train);
  train->add_option("--data", rc.data, "Event JSONL");
  train->add_option("--split-seed", rc.split_seed, "Seed of the machine split (default: --seed)");

  auto* eval = app.add_subcommand("eval", "Evaluate a model with last-event holdout");
  common(eval);
  eval->add_option("--model", rc.model, "Model file");
  eval->add_option("--data", rc.data, "Event JSONL");
  eval->add_option("--split-seed", rc.split_seed, "Seed of the machine split (default: the model's)");
  eval->add_option("--part", rc.part, "Corpus part to score")->check(CLI::IsMember({"train", "validation", "test", "all"}));
  eval->add_option("--categories", rc.categories, "Category map JSON (adds category and block/allow scores)");
  eval->add_flag("--lenient", rc.lenient, "Map unknown labels to <unk> and unmapped events to their own category");
  eval->add_flag("--confidence", rc.confidence, "Add the confidence histogram");
  eval->add_flag("--uniqueness", rc.uniqueness, "Add the sequence uniqueness table");

  auto* predict = app.add_subcommand("predict", "Stepwise prediction sessions or a single prediction");
  common(predict);
  predict->add_option("--model", rc.model, "Model file");
  predict->add_option("--data", rc.data, "Event JSONL to replay, one session per machine");
  predict->add_option("--context", rc.context, "Comma-separated event labels for a single prediction");
  predict->add_flag("--lenient", rc.lenient, "Map unknown labels to <unk>");

  auto* mine = app.add_subcommand("mine", "Find candidate multi-step attacks");
  common(mine);
  mine->add_option("--data", rc.data, "Event JSONL");
  mine->add_option("--margin", rc.margin, "Relative frequency band")->check(CLI::Range(0.0, 1.0));
  mine->add_option("--support", rc.support, "Minimum machines carrying every member")->check(CLI::PositiveNumber);

  auto* monitor = app.add_subcommand("monitor", "Drift check over a precision stream");
  common(monitor);
  model_flags(monitor);
  monitor->add_option("--stream", rc.stream, "Precision samples, one per line");
  monitor->add_option("--model", rc.model, "Model file (with --data, samples come from replayed sessions)");
  monitor->add_option("--data", rc.data, "Event JSONL");
  monitor->add_option("--sample-window", rc.sample_window, "Predictions per precision sample")->check(CLI::PositiveNumber);
  monitor->add_option("--floor", rc.floor, "Absolute precision floor (negative disables)");
  monitor->add_option("--delta", rc.delta, "Allowed drop from the reference (negative disables)");
  monitor->add_option("--retrain-out", rc.retrain_out, "On a trigger, retrain on --data and write the model here");
  monitor->add_option("--split-seed", rc.split_seed, "Seed of the machine split for retraining");
  monitor->add_flag("--lenient", rc.lenient, "Map unknown labels to <unk>");

  auto* baseline = app.add_subcommand("baseline", "Fit and evaluate the Markov and 3-gram baselines");
  common(baseline);
  baseline->add_option("--data", rc.data, "Event JSONL");
  baseline->add_option("--split-seed", rc.split_seed, "Seed of the machine split (default: --seed)");
  baseline->add_option("--kind", rc.kind, "Which baseline")->check(CLI::IsMember({"markov", "ngram", "both"}));
  baseline->add_option("--alpha", rc.alpha, "Additive smoothing")->check(CLI::NonNegativeNumber);
  baseline->add_option("--part", rc.part, "Score the test part or all machines")->check(CLI::IsMember({"test", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Json file_cfg = Json::object();
    if (!rc.config.empty()) {
      require_readable(rc.config, "config");
      file_cfg = read_json_file(rc.config);
      if (!file_cfg.is_object()) throw ConfigError("config file must hold a JSON object");
    }
    if (gen->parsed()) return cmd_gen(rc, out);
    if (train->parsed()) return cmd_train(rc, file_cfg, out, err);
    if (eval->parsed()) return cmd_eval(rc, out);
    if (predict->parsed()) return cmd_predict(rc, out);
    if (mine->parsed()) return cmd_mine(rc, out);
    if (monitor->parsed()) return cmd_monitor(rc, file_cfg, out, err);
    if (baseline->parsed()) return cmd_baseline(rc, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.error_class());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("alertcast");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace alertcast
