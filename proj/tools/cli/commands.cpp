#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "CLI11.hpp"
#include "quad/checkpoint.hpp"
#include "quad/errors.hpp"
#include "quad/evaluator.hpp"
#include "quad/synthetic.hpp"
#include "quad/trainer.hpp"

namespace quad::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

// "subject relation ? qual_relation qual_entity ..." with the masked slot as "?".
std::string query_text(const Statement& s, MaskSlot slot, const Vocab& vocab) {
  std::string out = slot.kind == MaskSlot::kSubject ? "?" : vocab.entity_label(s.subject);
  out += ' ' + vocab.relation_label(s.relation) + ' ';
  out += slot.kind == MaskSlot::kObject ? "?" : vocab.entity_label(s.object);
  for (std::size_t i = 0; i < s.qualifiers.size(); ++i) {
    const bool masked = slot.kind == MaskSlot::kQualifier && slot.index == i;
    out += ' ' + vocab.relation_label(s.qualifiers[i].relation) + ' ';
    out += masked ? "?" : vocab.entity_label(s.qualifiers[i].entity);
  }
  return out;
}

void write_ranks(const fs::path& path, const EvalResult& result, std::span<const Statement> statements,
                 const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "query,gold,rank\n";
  for (const auto& r : result.ranks) {
    const auto& q = result.queries[r.query];
    out << csv_field(query_text(statements[q.statement], q.slot, vocab)) << ','
        << csv_field(vocab.entity_label(r.gold)) << ',' << r.rank << '\n';
  }
}

bool has_queries(std::span<const Statement> statements, Task task) {
  if (statements.empty()) return false;
  if (task == Task::kBase) return true;
  for (const auto& s : statements)
    if (!s.qualifiers.empty()) return true;
  return false;
}

json config_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& [k, v] : run_config_entries(c)) j[k] = v;
  return j;
}

json dataset_json(const RunConfig& c, const Dataset& data) {
  json j;
  j["source"] = c.synthetic ? "synthetic" : c.data;
  if (c.synthetic) j["generator_seed"] = c.data_seed;
  j["hash"] = dataset_hash(data);
  j["vocab_fingerprint"] = data.vocab.fingerprint();
  j["train"] = data.train.size();
  j["valid"] = data.valid.size();
  j["test"] = data.test.size();
  return j;
}

void print_epoch(std::ostream& err, const EpochLog& log, std::size_t epochs) {
  err << "epoch " << log.epoch << '/' << epochs << " loss " << log.loss;
  if (log.val_mrr) err << " val_mrr " << *log.val_mrr;
  err << '\n';
}

// train

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const Dataset data = obtain_dataset(config);
  const fs::path dir = config.out;
  fs::create_directories(dir);
  write_text(dir / "config.ini", run_config_ini(config));
  if (config.synthetic) save_dataset(data, dir / "data");
  data.vocab.save(dir / "vocab");

  std::ofstream epochs_log(dir / "epochs.jsonl");
  const TrainResult result = train(config.train, config.model, data, [&](const EpochLog& log) {
    epochs_log << epoch_json(log) << '\n' << std::flush;
    print_epoch(err, log, config.train.epochs);
  });

  const std::size_t max_pairs = data.max_qualifiers();
  const ConfigEntries meta{{"seed", std::to_string(config.train.seed)},
                           {"epochs", std::to_string(result.epochs.size())},
                           {"data_hash", dataset_hash(data)}};
  save_checkpoint(dir / "model.ckpt", config.model, result.params, data.vocab, max_pairs, meta);
  ConfigEntries best_meta = meta;
  best_meta.emplace_back("best_epoch", std::to_string(result.best_epoch));
  save_checkpoint(dir / "best.ckpt", config.model, result.best, data.vocab, max_pairs, best_meta);

  const EncoderGraph graph = build_encoder_graph(data.vocab, data.train);
  const std::vector<Statement> everything = data.all();
  const FilterIndex filter(data.vocab, everything, config.train.filter_level);
  json metrics = json::array();
  const std::pair<const char*, const std::vector<Statement>*> splits[] = {
      {"train", &data.train}, {"valid", &data.valid}, {"test", &data.test}};
  for (const auto& [split, statements] : splits) {
    for (Directions d : {Directions::kBoth, Directions::kObject, Directions::kSubject}) {
      if (!has_queries(*statements, Task::kBase)) break;
      const EvalResult r = evaluate(result.params, config.model, graph, data.vocab, *statements, filter,
                                    {Task::kBase, d});
      metrics.push_back(json::parse(metrics_json(r.metrics, split, Task::kBase, directions_name(d))));
      if (d == Directions::kBoth && std::string_view(split) == "test")
        write_ranks(dir / "ranks_test.csv", r, *statements, data.vocab);
    }
    if (has_queries(*statements, Task::kQual)) {
      const EvalResult r =
          evaluate(result.params, config.model, graph, data.vocab, *statements, filter, {Task::kQual});
      metrics.push_back(json::parse(metrics_json(r.metrics, split, Task::kQual)));
    }
  }
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  json manifest;
  manifest["command"] = "train";
  manifest["version"] = kVersion;
  manifest["seed"] = config.train.seed;
  manifest["data"] = dataset_json(config, data);
  manifest["config"] = config_json(config);
  manifest["max_pairs"] = max_pairs;
  manifest["best_epoch"] = result.best_epoch;
  manifest["best_val_mrr"] = result.best_val_mrr ? json(*result.best_val_mrr) : json(nullptr);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  out << metrics.dump(2) << '\n';
  return kExitOk;
}

// eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string vocab;
  std::string split = "test";
  std::string task = "base";
  std::string direction = "both";
  std::string filter_level = "statement";
  std::string ranks;
  std::size_t batch_size = 256;
};

int cmd_eval(const EvalArgs& args, bool filter_given, std::ostream& out) {
  const fs::path checkpoint = args.checkpoint;
  if (!fs::is_regular_file(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  const fs::path run_dir = checkpoint.has_parent_path() ? checkpoint.parent_path() : fs::path(".");

  json manifest;
  if (fs::exists(run_dir / "manifest.json")) manifest = read_json(run_dir / "manifest.json");

  fs::path data_dir = args.data;
  if (data_dir.empty()) {
    if (fs::exists(run_dir / "data" / "train.txt")) {
      data_dir = run_dir / "data";
    } else if (manifest.contains("config") && !manifest["config"].value("data", "").empty()) {
      data_dir = manifest["config"]["data"].get<std::string>();
    } else {
      throw ConfigError("no --data given and " + run_dir.string() + " holds no dataset reference");
    }
  }
  fs::path vocab_dir = args.vocab.empty() ? run_dir / "vocab" : fs::path(args.vocab);
  Vocab vocab;
  if (fs::exists(vocab_dir / "entities.tsv")) vocab = Vocab::load(vocab_dir);
  const std::size_t known_entities = vocab.num_entities(), known_relations = vocab.num_relations();
  const Dataset data = load_dataset(data_dir, std::move(vocab));
  if (known_entities + known_relations > 0 &&
      (data.vocab.num_entities() != known_entities || data.vocab.num_relations() != known_relations)) {
    throw ConfigError("dataset " + data_dir.string() + " has labels missing from the vocabulary in " +
                      vocab_dir.string());
  }

  const Checkpoint ck = load_checkpoint(checkpoint, data.vocab);
  FilterLevel level = parse_filter_level(args.filter_level);
  if (!filter_given && manifest.contains("config") && manifest["config"].contains("filter-level"))
    level = parse_filter_level(manifest["config"]["filter-level"].get<std::string>());

  const std::vector<Statement>* statements = nullptr;
  if (args.split == "train") statements = &data.train;
  else if (args.split == "valid") statements = &data.valid;
  else if (args.split == "test") statements = &data.test;
  else throw ConfigError("unknown split '" + args.split + "'");
  const Task task = parse_task(args.task);
  const Directions directions = parse_directions(args.direction);
  if (!has_queries(*statements, task))
    throw ConfigError("split " + args.split + " has no " + std::string(task_name(task)) + " queries");

  const EncoderGraph graph = build_encoder_graph(data.vocab, data.train);
  const std::vector<Statement> everything = data.all();
  const FilterIndex filter(data.vocab, everything, level);
  EvalOptions options{task, directions, args.batch_size};
  const EvalResult r = evaluate(ck.params, ck.config, graph, data.vocab, *statements, filter, options);
  if (!args.ranks.empty()) write_ranks(args.ranks, r, *statements, data.vocab);
  out << metrics_json(r.metrics, args.split, task, task == Task::kBase ? directions_name(directions) : "")
      << '\n';
  return kExitOk;
}

// stats

int cmd_stats(const std::string& path, std::ostream& out) {
  if (fs::is_directory(path)) {
    ParseReport report;
    const Dataset data = load_dataset(path, &report);
    const auto all = data.all();
    json j = json::parse(stats_json(dataset_stats(all)));
    j["duplicate_qualifiers"] = report.duplicate_qualifiers;
    json splits;
    splits["train"] = json::parse(stats_json(dataset_stats(data.train)));
    splits["valid"] = json::parse(stats_json(dataset_stats(data.valid)));
    splits["test"] = json::parse(stats_json(dataset_stats(data.test)));
    j["splits"] = splits;
    out << j.dump(2) << '\n';
  } else {
    if (!fs::exists(path)) throw ConfigError("no such file or directory: " + path);
    Vocab vocab;
    ParseReport report;
    const auto statements = parse_statements(fs::path(path), vocab, &report);
    json j = json::parse(stats_json(dataset_stats(statements)));
    j["duplicate_qualifiers"] = report.duplicate_qualifiers;
    out << j.dump(2) << '\n';
  }
  return kExitOk;
}

// generate

int cmd_generate(const SyntheticConfig& generator, std::uint64_t seed, const std::string& dir, std::ostream& out) {
  const Dataset data = generate_synthetic(generator, seed);
  save_dataset(data, dir);
  json j = json::parse(stats_json(dataset_stats(data.all())));
  j["hash"] = dataset_hash(data);
  j["train"] = data.train.size();
  j["valid"] = data.valid.size();
  j["test"] = data.test.size();
  out << j.dump(2) << '\n';
  return kExitOk;
}

// ablate

int cmd_ablate(const RunConfig& config, const std::vector<std::uint64_t>& seeds, std::ostream& out,
               std::ostream& err) {
  const Dataset data = obtain_dataset(config);
  const fs::path dir = config.out;
  fs::create_directories(dir);
  write_text(dir / "config.ini", run_config_ini(config));
  if (config.synthetic) save_dataset(data, dir / "data");

  const auto variants = run_ablation(config, data, seeds, &err);
  write_text(dir / "ablation.json", ablation_json(variants) + "\n");
  const std::string table = ablation_table(variants);
  write_text(dir / "ablation.txt", table);

  json manifest;
  manifest["command"] = "ablate";
  manifest["version"] = kVersion;
  manifest["seeds"] = seeds;
  manifest["data"] = dataset_json(config, data);
  manifest["config"] = config_json(config);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  out << table;
  return kExitOk;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

Dataset obtain_dataset(const RunConfig& config) {
  if (config.synthetic) return generate_synthetic(config.generator, config.data_seed);
  return load_dataset(config.data);
}

std::string dataset_hash(const Dataset& data) {
  std::uint64_t h = 14695981039346656037ULL;
  auto feed = [&](const std::string& text) {
    for (unsigned char c : text) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto* split : {&data.train, &data.valid, &data.test}) {
    std::ostringstream text;
    write_statements(text, *split, data.vocab);
    feed(text.str());
    feed("\x1e");
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double AblationVariant::mean_mrr() const {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.mrr);
  return mean(v);
}

double AblationVariant::std_mrr() const {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.mrr);
  return sample_std(v);
}

std::optional<double> AblationVariant::mean_qual_mrr() const {
  std::vector<double> v;
  for (const auto& r : runs)
    if (r.qual_mrr) v.push_back(*r.qual_mrr);
  if (v.empty()) return std::nullopt;
  return mean(v);
}

std::optional<double> AblationVariant::std_qual_mrr() const {
  std::vector<double> v;
  for (const auto& r : runs)
    if (r.qual_mrr) v.push_back(*r.qual_mrr);
  if (v.empty()) return std::nullopt;
  return sample_std(v);
}

std::vector<AblationVariant> run_ablation(const RunConfig& config, const Dataset& data,
                                          const std::vector<std::uint64_t>& seeds, std::ostream* progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (data.test.empty()) throw ConfigError("ablation needs a non-empty test split");
  const EncoderMode full_mode = config.model.encoder.mode;
  std::vector<AblationVariant> variants{
      {"full", config.train.beta, full_mode, {}},
      {"w/o-qual-mask", 0.0, full_mode, {}},
      {"w/o-qual-agg", config.train.beta, EncoderMode::kBaseOnly, {}},
      {"w/o-both", 0.0, EncoderMode::kBaseOnly, {}},
  };
  const EncoderGraph graph = build_encoder_graph(data.vocab, data.train);
  const std::vector<Statement> everything = data.all();
  const FilterIndex filter(data.vocab, everything, config.train.filter_level);
  const bool qual_queries = has_queries(data.test, Task::kQual);

  for (auto& variant : variants) {
    for (std::uint64_t seed : seeds) {
      TrainConfig t = config.train;
      t.seed = seed;
      t.beta = variant.beta;
      ModelConfig m = config.model;
      m.encoder.mode = variant.encoder_mode;
      const TrainResult result = train(t, m, data);
      AblationRun run;
      run.seed = seed;
      const EvalResult base = evaluate(result.params, m, graph, data.vocab, data.test, filter);
      run.mrr = base.metrics.mrr;
      run.h1 = base.metrics.h1;
      run.h10 = base.metrics.h10;
      if (qual_queries) {
        run.qual_mrr =
            evaluate(result.params, m, graph, data.vocab, data.test, filter, {Task::kQual}).metrics.mrr;
      }
      if (progress) {
        *progress << variant.name << " seed " << seed << " test_mrr " << fixed(run.mrr);
        if (run.qual_mrr) *progress << " qual_mrr " << fixed(*run.qual_mrr);
        *progress << '\n' << std::flush;
      }
      variant.runs.push_back(run);
    }
  }
  return variants;
}

std::string ablation_json(const std::vector<AblationVariant>& variants) {
  json out = json::array();
  for (const auto& v : variants) {
    json j;
    j["variant"] = v.name;
    j["beta"] = v.beta;
    j["encoder_mode"] = encoder_mode_name(v.encoder_mode);
    json runs = json::array();
    for (const auto& r : v.runs) {
      json rj;
      rj["seed"] = r.seed;
      rj["mrr"] = r.mrr;
      rj["h1"] = r.h1;
      rj["h10"] = r.h10;
      rj["qual_mrr"] = r.qual_mrr ? json(*r.qual_mrr) : json(nullptr);
      runs.push_back(rj);
    }
    j["runs"] = runs;
    j["mean_mrr"] = v.mean_mrr();
    j["std_mrr"] = v.std_mrr();
    const auto qm = v.mean_qual_mrr();
    const auto qs = v.std_qual_mrr();
    j["mean_qual_mrr"] = qm ? json(*qm) : json(nullptr);
    j["std_qual_mrr"] = qs ? json(*qs) : json(nullptr);
    out.push_back(j);
  }
  return out.dump(2);
}

std::string ablation_table(const std::vector<AblationVariant>& variants) {
  std::ostringstream s;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d,
                 const std::string& e, const std::string& f) {
    s << std::left << std::setw(15) << a << std::right << std::setw(6) << b << std::setw(10) << c << std::setw(10)
      << d << std::setw(10) << e << std::setw(10) << f << '\n';
  };
  row("variant", "seed", "mrr", "h1", "h10", "qual_mrr");
  for (const auto& v : variants)
    for (const auto& r : v.runs)
      row(v.name, std::to_string(r.seed), fixed(r.mrr), fixed(r.h1), fixed(r.h10),
          r.qual_mrr ? fixed(*r.qual_mrr) : "-");
  s << '\n';
  s << std::left << std::setw(15) << "variant" << std::right << std::setw(20) << "mrr mean+-std" << std::setw(22)
    << "qual_mrr mean+-std" << '\n';
  for (const auto& v : variants) {
    const auto qm = v.mean_qual_mrr();
    const auto qs = v.std_qual_mrr();
    s << std::left << std::setw(15) << v.name << std::right << std::setw(20)
      << (fixed(v.mean_mrr()) + " +- " + fixed(v.std_mrr())) << std::setw(22)
      << (qm ? fixed(*qm) + " +- " + fixed(*qs) : std::string("-")) << '\n';
  }
  return s.str();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyper-relational knowledge graph completion", "quad"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", kVersion);

  RunConfig train_config;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  add_run_options(*train_cmd, train_config);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file (model.ckpt or best.ckpt)")
      ->required();
  eval_cmd->add_option("--data", eval_args.data, "dataset directory (default: the run's data)");
  eval_cmd->add_option("--vocab", eval_args.vocab, "vocabulary directory (default: <run>/vocab)");
  eval_cmd->add_option("--split", eval_args.split, "train|valid|test")->capture_default_str();
  eval_cmd->add_option("--task", eval_args.task, "base|qual")->capture_default_str();
  eval_cmd->add_option("--direction", eval_args.direction, "base queries: both|object|subject")
      ->capture_default_str();
  auto* filter_opt = eval_cmd->add_option("--filter-level", eval_args.filter_level,
                                          "statement|triple (default: the run's setting)");
  eval_cmd->add_option("--ranks", eval_args.ranks, "write per-query ranks as CSV (query,gold,rank)");
  eval_cmd->add_option("--batch", eval_args.batch_size, "queries per forward pass")->capture_default_str();

  RunConfig ablate_config;
  ablate_config.out = "ablation";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  auto* ablate_cmd = app.add_subcommand("ablate", "train the four qualifier ablations over several seeds");
  add_run_options(*ablate_cmd, ablate_config);
  ablate_cmd->add_option("--seeds", seeds, "training seeds")->delimiter(',')->capture_default_str();

  std::string stats_path;
  auto* stats_cmd = app.add_subcommand("stats", "print statistics of a dataset directory or statement file");
  stats_cmd->add_option("path", stats_path, "dataset directory or statement file")->required();

  SyntheticConfig generator;
  std::uint64_t generator_seed = 1;
  std::string generate_out;
  auto* generate_cmd = app.add_subcommand("generate", "write a synthetic dataset");
  generate_cmd->add_option("--out", generate_out, "output directory")->required();
  generate_cmd->add_option("--entities", generator.entities, "entity count")->capture_default_str();
  generate_cmd->add_option("--relations", generator.relations, "forward relation count")->capture_default_str();
  generate_cmd->add_option("--statements", generator.statements, "statement count")->capture_default_str();
  generate_cmd->add_option("--qual-frac", generator.qualifier_fraction, "fraction of qualified statements")
      ->capture_default_str();
  generate_cmd->add_option("--max-quals", generator.max_qualifiers, "max qualifier pairs per statement")
      ->capture_default_str();
  generate_cmd->add_option("--seed", generator_seed, "generator seed")->capture_default_str();

  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
  try {
    if (!args.empty() && (args.back() == "train" || args.back() == "ablate")) {
      std::vector<std::string> rest(args.rbegin() + 1, args.rend());
      rest = expand_config_file(rest);
      args.assign(rest.rbegin(), rest.rend());
      args.emplace_back(argc > 1 ? argv[1] : "");
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    // CLI11 takes the arguments in reverse order.
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*train_cmd) {
      finalize(train_config);
      return cmd_train(train_config, out, err);
    }
    if (*eval_cmd) return cmd_eval(eval_args, filter_opt->count() > 0, out);
    if (*ablate_cmd) {
      finalize(ablate_config);
      return cmd_ablate(ablate_config, seeds, out, err);
    }
    if (*stats_cmd) return cmd_stats(stats_path, out);
    if (*generate_cmd) return cmd_generate(generator, generator_seed, generate_out, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace quad::cli
