#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "prosparse/prosparse.hpp"

namespace fs = std::filesystem;
using namespace prosparse;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
};

void log_line(const std::string& m) { std::cerr << m << std::endl; }

ExperimentConfig load_config(const Common& common, bool required) {
  if (common.config.empty()) {
    if (required) fail(ErrorKind::kConfig, "--config is required");
    ExperimentConfig c;
    json j = json::object();
    apply_overrides(j, common.overrides);
    c = experiment_from_json(j, fs::current_path().string());
    return c;
  }
  auto c = load_experiment(common.config, common.overrides);
  if (common.seed) c.training.seeds = {*common.seed};
  if (common.jobs) c.training.jobs = *common.jobs;
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  if (!path.empty() && fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kData, "cannot write " + path);
  out << text;
}

// features -----------------------------------------------------------------

struct FeaturesArgs {
  std::string out_dir;
};

int run_features(const Common& common, const FeaturesArgs& a) {
  auto c = load_config(common, true);
  validate_paths(c, false);
  auto stats = training_duration_stats(c.train);
  std::string out_dir = a.out_dir.empty() ? (fs::path(c.output_dir.empty() ? "." : c.output_dir) / "features").string()
                                          : a.out_dir;
  std::vector<const NamedCorpus*> corpora;
  for (const auto& t : c.train) corpora.push_back(&t);
  if (c.dev) corpora.push_back(&*c.dev);
  if (c.test) corpora.push_back(&*c.test);
  std::vector<std::string> warnings;
  for (const auto* nc : corpora) {
    if (nc->paths.alignments.empty() || nc->paths.frames_dir.empty()) {
      log_line("skipping " + nc->name + ": no alignments or frames_dir");
      continue;
    }
    CorpusPaths p = nc->paths;
    p.features.clear();
    auto f = features_for(p, stats, c.model.prosody_options, c.cache_dir, &warnings);
    auto path = (fs::path(out_dir) / (nc->name + ".features.txt")).string();
    fs::create_directories(out_dir);
    write_feature_file(path, f, c.model.prosody_options);
    std::cout << path << '\t' << f.size() << " sentences\n";
  }
  for (const auto& w : warnings) log_line("warning: " + w);
  return 0;
}

// train --------------------------------------------------------------------

struct TrainArgs {
  std::string fine_tune_from;
  std::string run_dir;
};

std::string timestamp_dir() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "run-%Y%m%d-%H%M%S", std::gmtime(&t));
  return buf;
}

int run_train(const Common& common, const TrainArgs& a) {
  auto c = load_config(common, true);
  if (!a.fine_tune_from.empty()) c.training.fine_tune_from = a.fine_tune_from;
  c.training.validate(c.train.size());
  auto data = load_data(c, true);
  for (const auto& w : data.warnings) log_line("warning: " + w);
  std::string run_dir = a.run_dir;
  if (run_dir.empty()) run_dir = (fs::path(c.output_dir.empty() ? "runs" : c.output_dir) / timestamp_dir()).string();
  auto summary = run_experiment(c, data, run_dir, log_line);
  std::size_t failed = 0;
  for (const auto& r : summary.records) failed += r.failed ? 1 : 0;
  std::cout << "run directory: " << run_dir << '\n';
  std::cout << "median seed " << summary.median.seed << " dev F1 " << format_f1(summary.median.dev_f1) << '\n';
  if (summary.median.test) std::cout << "test F1 " << format_f1(summary.median.test->f1()) << '\n';
  if (failed) std::cout << failed << " of " << summary.records.size() << " seeds failed\n";
  return 0;
}

// parse --------------------------------------------------------------------

struct ParseArgs {
  std::string checkpoint;
  std::string input;
  bool input_trees = false;
  std::string ids;
  std::string alignments;
  std::string frames_dir;
  std::string features;
  std::string vectors;
  std::string output;
};

std::vector<SentenceInput> read_sentences(const ParseArgs& a) {
  std::vector<SentenceInput> out;
  if (a.input_trees) {
    auto trees = read_tree_file(a.input);
    auto ids = read_ids(a.ids, trees.size());
    for (std::size_t i = 0; i < trees.size(); ++i) {
      SentenceInput s;
      s.id = ids[i];
      s.words = trees[i].words();
      s.tags = trees[i].tags();
      out.push_back(std::move(s));
    }
    return out;
  }
  std::ifstream in(a.input);
  if (!in) fail(ErrorKind::kData, "cannot open input file: " + a.input);
  std::string line;
  std::vector<std::vector<std::string>> sents;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) words.push_back(w);
    if (words.empty()) fail(ErrorKind::kData, a.input + ":" + std::to_string(lineno) + ": empty sentence");
    sents.push_back(std::move(words));
  }
  auto ids = read_ids(a.ids, sents.size());
  for (std::size_t i = 0; i < sents.size(); ++i) {
    SentenceInput s;
    s.id = ids[i];
    s.words = std::move(sents[i]);
    out.push_back(std::move(s));
  }
  return out;
}

int run_parse(const Common& common, const ParseArgs& a) {
  ExperimentConfig c = load_config(common, false);
  for (const auto* p : {&a.checkpoint, &a.input}) {
    if (!fs::exists(*p)) fail(ErrorKind::kConfig, "path does not exist: " + *p);
  }
  for (const auto* p : {&a.ids, &a.alignments, &a.frames_dir, &a.features, &a.vectors}) {
    if (!p->empty() && !fs::exists(*p)) fail(ErrorKind::kConfig, "path does not exist: " + *p);
  }
  std::shared_ptr<VectorStore> store;
  if (!a.vectors.empty()) store = std::make_shared<VectorStore>(load_vector_store(a.vectors));
  auto model = ModelT::load(a.checkpoint, store.get());
  auto sentences = read_sentences(a);
  for (auto& s : sentences) s.vectors = store.get();
  if (model->uses_prosody()) {
    std::vector<Example> examples;
    for (auto& s : sentences) examples.push_back({s, Tree{}});
    CorpusPaths paths;
    paths.alignments = a.alignments;
    paths.frames_dir = a.frames_dir;
    paths.features = a.features;
    if (paths.features.empty() && (paths.alignments.empty() || paths.frames_dir.empty())) {
      fail(ErrorKind::kData, a.checkpoint + ": checkpoint uses prosody; pass --features or --alignments and --frames-dir");
    }
    check_alignment_words(examples, paths.alignments);
    std::vector<std::string> warnings;
    auto features = features_for(paths, model->duration_stats(), model->config().prosody_options, c.cache_dir, &warnings);
    attach_features(examples, features, paths.features.empty() ? paths.alignments : paths.features);
    for (std::size_t i = 0; i < sentences.size(); ++i) sentences[i].prosody = examples[i].input.prosody;
    for (const auto& w : warnings) log_line("warning: " + w);
  }
  std::ostringstream out;
  for (const auto& s : sentences) out << serialize(model->parse(s).tree) << '\n';
  if (a.output.empty()) {
    std::cout << out.str();
  } else {
    write_text(a.output, out.str());
  }
  return 0;
}

// evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string gold;
  std::string pred;
  std::string ids;
  std::string out_prefix;
  bool delete_punctuation = false;
};

int run_evaluate(const Common& common, const EvaluateArgs& a) {
  ExperimentConfig c = load_config(common, false);
  auto gold = read_tree_file(a.gold);
  auto pred = read_tree_file(a.pred);
  EvalOptions opts;
  opts.delete_punctuation = a.delete_punctuation || c.eval.delete_punctuation;
  auto report = parseval(gold, pred, opts, read_ids(a.ids, gold.size()));
  auto table = counts_table(report);
  std::cout << render_aligned(table);
  if (!a.out_prefix.empty()) {
    write_text(a.out_prefix + ".tsv", render_tsv(table));
    write_text(a.out_prefix + ".txt", render_aligned(table));
    write_text(a.out_prefix + ".json", eval_to_json(report).dump(2) + "\n");
  }
  return 0;
}

// significance -------------------------------------------------------------

struct SignificanceArgs {
  std::string gold;
  std::string pred_a;
  std::string pred_b;
  std::optional<std::size_t> resamples;
  std::string output;
  bool delete_punctuation = false;
};

int run_significance(const Common& common, const SignificanceArgs& a) {
  ExperimentConfig c = load_config(common, false);
  std::size_t n = a.resamples.value_or(c.eval.bootstrap_resamples);
  std::uint64_t seed = common.seed.value_or(c.eval.bootstrap_seed);
  EvalOptions opts;
  opts.delete_punctuation = a.delete_punctuation || c.eval.delete_punctuation;
  auto r = paired_bootstrap(read_tree_file(a.gold), read_tree_file(a.pred_a), read_tree_file(a.pred_b), n, seed, opts,
                            common.jobs.value_or(1));
  json j{{"f1_a", r.f1_a},           {"f1_b", r.f1_b},       {"observed_delta", r.observed_delta},
         {"p_value", r.p_value},     {"n_resamples", r.n_resamples}, {"exceed", r.exceed}, {"ties", r.ties},
         {"seed", seed},             {"marker", significance_marker(r.p_value)}};
  std::cout << "F1(A) " << format_f1(r.f1_a) << "  F1(B) " << format_f1(r.f1_b) << "  delta " << format_f1(r.observed_delta)
            << "  p " << r.p_value << " (" << r.n_resamples << " resamples)\n";
  if (!a.output.empty()) write_text(a.output, j.dump(2) + "\n");
  return 0;
}

// report -------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::vector<std::string> names;
  std::string out_prefix;
  std::optional<std::size_t> resamples;
};

struct LoadedRun {
  std::string name;
  json summary;
  std::vector<Tree> gold;
  std::vector<Tree> pred;
  bool has_test = false;
};

LoadedRun load_run(const std::string& dir, const std::string& name) {
  auto path = (fs::path(dir) / "summary.json").string();
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "not a run directory (no summary.json): " + dir);
  LoadedRun r;
  try {
    r.summary = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, path + ": " + e.what());
  }
  if (r.summary.value("format", "") != kSummaryFormat) fail(ErrorKind::kData, path + ": unknown summary format");
  r.name = name.empty() ? fs::path(dir).lexically_normal().filename().string() : name;
  if (r.name.empty()) r.name = fs::path(dir).lexically_normal().parent_path().filename().string();
  if (r.summary.contains("test_predictions")) {
    r.gold = read_tree_file((fs::path(dir) / r.summary["test_gold"].get<std::string>()).string());
    r.pred = read_tree_file((fs::path(dir) / r.summary["test_predictions"].get<std::string>()).string());
    r.has_test = true;
  }
  return r;
}

int run_report(const Common& common, const ReportArgs& a) {
  ExperimentConfig c = load_config(common, false);
  if (a.runs.empty()) fail(ErrorKind::kConfig, "report: at least one run directory required");
  if (!a.names.empty() && a.names.size() != a.runs.size()) {
    fail(ErrorKind::kConfig, "report: --name given " + std::to_string(a.names.size()) + " times for " +
                                 std::to_string(a.runs.size()) + " runs");
  }
  std::vector<LoadedRun> runs;
  for (std::size_t i = 0; i < a.runs.size(); ++i) runs.push_back(load_run(a.runs[i], a.names.empty() ? "" : a.names[i]));

  std::size_t n = a.resamples.value_or(c.eval.bootstrap_resamples);
  std::uint64_t seed = common.seed.value_or(c.eval.bootstrap_seed);
  EvalOptions opts;
  opts.delete_punctuation = c.eval.delete_punctuation;

  // Summary: runs with test predictions, compared with the first such run on
  // the same test corpus.
  std::vector<ReportRow> rows;
  const LoadedRun* baseline = nullptr;
  std::vector<GridCell> grid;
  for (const auto& r : runs) {
    std::string tune;
    for (const auto& t : r.summary["train_corpora"]) tune += (tune.empty() ? "" : "+") + t.get<std::string>();
    if (!r.has_test) {
      grid.push_back({tune, "dev:" + r.summary.value("dev_corpus", ""), r.summary.value("median_dev_f1", 0.0), {}});
      continue;
    }
    ReportRow row;
    row.condition = r.name;
    row.report = parseval(r.gold, r.pred, opts);
    if (!baseline) {
      baseline = &r;
    } else if (baseline->summary.value("test_corpus", "") == r.summary.value("test_corpus", "") &&
               baseline->gold.size() == r.gold.size()) {
      row.p_value = paired_bootstrap(r.gold, r.pred, baseline->pred, n, seed, opts, common.jobs.value_or(1)).p_value;
    }
    grid.push_back({tune, r.summary.value("test_corpus", ""), row.report.f1(), row.p_value});
    rows.push_back(std::move(row));
  }
  std::string text, tsv;
  if (!rows.empty()) {
    auto t = summary_table(rows);
    text += render_aligned(t) + "\n";
    tsv += render_tsv(t) + "\n";
  }
  auto g = grid_table(grid, "tuned on \\ tested on");
  text += render_aligned(g);
  tsv += render_tsv(g);
  std::cout << text;
  if (!a.out_prefix.empty()) {
    write_text(a.out_prefix + ".txt", text);
    write_text(a.out_prefix + ".tsv", tsv);
  }
  return 0;
}

// synth --------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  std::size_t sentences = 200;
  std::size_t dev_sentences = 0;
  std::size_t ambiguous_pairs = 0;
  double ambiguous_fraction = 0.3;
  std::size_t vector_dim = 16;
};

int run_synth(const Common& common, const SynthArgs& a) {
  std::uint64_t seed = common.seed.value_or(7);
  SyntheticOptions o;
  o.sentences = a.sentences;
  o.seed = seed;
  o.ambiguous_fraction = a.ambiguous_fraction;
  o.vector_dim = a.vector_dim;
  o.id_prefix = "train";
  write_synthetic(generate_synthetic(o), (fs::path(a.out_dir) / "train").string());
  if (a.dev_sentences) {
    o.sentences = a.dev_sentences;
    o.seed = splitmix64(seed + 1);
    o.id_prefix = "dev";
    write_synthetic(generate_synthetic(o), (fs::path(a.out_dir) / "dev").string());
  }
  if (a.ambiguous_pairs) {
    SyntheticOptions b = o;
    b.id_prefix = "amb";
    write_synthetic(generate_ambiguous_pairs(a.ambiguous_pairs, splitmix64(seed + 2), b),
                    (fs::path(a.out_dir) / "ambiguous").string());
  }
  std::cout << "wrote " << a.out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prosparse: constituency parsing from text and prosody"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "experiment config (JSON)");
  app.add_option("--set", common.overrides, "override a config value, e.g. train.max_epochs=3")
      ->allow_extra_args(false)
      ->take_all();
  app.add_option("--seed", common.seed, "seed (train: single seed run; significance: bootstrap seed)");
  app.add_option("--jobs", common.jobs, "parallel workers");

  FeaturesArgs fa;
  auto* features = app.add_subcommand("features", "compute prosodic feature files for every corpus in the config");
  features->add_option("--out", fa.out_dir, "output directory (default <output_dir>/features)");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "multi-seed training");
  trainc->add_option("--fine-tune-from", ta.fine_tune_from, "checkpoint to continue from");
  trainc->add_option("--run-dir", ta.run_dir, "run directory (default <output_dir>/run-<time>)");

  ParseArgs pa;
  auto* parse = app.add_subcommand("parse", "parse sentences with a checkpoint");
  parse->add_option("--checkpoint", pa.checkpoint)->required();
  parse->add_option("--input", pa.input, "one whitespace-tokenized sentence per line")->required();
  parse->add_flag("--input-trees", pa.input_trees, "read words from bracketed trees instead");
  parse->add_option("--ids", pa.ids, "sentence ids, one per line");
  parse->add_option("--alignments", pa.alignments);
  parse->add_option("--frames-dir", pa.frames_dir);
  parse->add_option("--features", pa.features, "precomputed feature file");
  parse->add_option("--vectors", pa.vectors, "contextual vector store");
  parse->add_option("--output", pa.output);

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Parseval scores for gold and predicted tree files");
  evaluate->add_option("--gold", ea.gold)->required();
  evaluate->add_option("--pred", ea.pred)->required();
  evaluate->add_option("--ids", ea.ids);
  evaluate->add_option("--out", ea.out_prefix, "write <out>.tsv, <out>.txt and <out>.json");
  evaluate->add_flag("--delete-punctuation", ea.delete_punctuation);

  SignificanceArgs sa;
  auto* significance = app.add_subcommand("significance", "paired bootstrap test of A over B");
  significance->add_option("--gold", sa.gold)->required();
  significance->add_option("--pred-a", sa.pred_a)->required();
  significance->add_option("--pred-b", sa.pred_b)->required();
  significance->add_option("--resamples", sa.resamples);
  significance->add_option("--out", sa.output, "JSON result file");
  significance->add_flag("--delete-punctuation", sa.delete_punctuation);

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "tables from run directories (first run is the baseline)");
  report->add_option("runs", ra.runs)->required();
  report->add_option("--name", ra.names, "display name per run");
  report->add_option("--out", ra.out_prefix, "write <out>.txt and <out>.tsv");
  report->add_option("--resamples", ra.resamples);

  SynthArgs ya;
  auto* synth = app.add_subcommand("synth", "write the synthetic spoken treebank");
  synth->add_option("--out", ya.out_dir)->required();
  synth->add_option("--sentences", ya.sentences);
  synth->add_option("--dev-sentences", ya.dev_sentences);
  synth->add_option("--ambiguous-pairs", ya.ambiguous_pairs);
  synth->add_option("--ambiguous-fraction", ya.ambiguous_fraction);
  synth->add_option("--vector-dim", ya.vector_dim);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*features) return run_features(common, fa);
    if (*trainc) return run_train(common, ta);
    if (*parse) return run_parse(common, pa);
    if (*evaluate) return run_evaluate(common, ea);
    if (*significance) return run_significance(common, sa);
    if (*report) return run_report(common, ra);
    if (*synth) return run_synth(common, ya);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
