#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "quad/errors.hpp"

namespace quad::cli {

namespace {

std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string flag(bool b) { return b ? "true" : "false"; }

// Enum-valued option parsed through one of the library's parse_* functions.
template <typename E, typename Parse>
void enum_option(CLI::App& app, const std::string& name, E& target, Parse parse, const std::string& help,
                 std::string shown_default) {
  app.add_option_function<std::string>(
         name,
         [&target, parse, name](const std::string& text) {
           try {
             target = parse(text);
           } catch (const ConfigError& e) {
             throw CLI::ValidationError(name, e.what());
           }
         },
         help)
      ->default_str(std::move(shown_default));
}

}  // namespace

void add_run_options(CLI::App& app, RunConfig& c) {
  // Expanded before parsing by expand_config_file; registered for --help.
  app.add_option("--config", "key=value settings file; command-line flags take precedence");

  auto* data = app.add_option("--data", c.data, "dataset directory with train.txt, valid.txt, test.txt");
  auto* synthetic = app.add_flag("--synthetic", c.synthetic, "generate a synthetic dataset instead of --data");
  data->excludes(synthetic);
  app.add_option("--entities", c.generator.entities, "synthetic: entity count")->capture_default_str();
  app.add_option("--relations", c.generator.relations, "synthetic: forward relation count")->capture_default_str();
  app.add_option("--statements", c.generator.statements, "synthetic: statement count")->capture_default_str();
  app.add_option("--qual-frac", c.generator.qualifier_fraction, "synthetic: fraction of qualified statements")
      ->capture_default_str();
  app.add_option("--max-quals", c.generator.max_qualifiers, "synthetic: max qualifier pairs per statement")
      ->capture_default_str();
  app.add_option("--data-seed", c.data_seed, "synthetic: generator seed")->capture_default_str();
  app.add_option("--out", c.out, "output directory")->capture_default_str();

  auto& t = c.train;
  app.add_option("--seed", t.seed, "training seed")->capture_default_str();
  app.add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
  app.add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
  app.add_option("--lr-decay", t.lr_decay, "per-epoch learning-rate factor (1 = none)")->capture_default_str();
  app.add_option("--batch", t.batch_size, "samples per batch")->capture_default_str();
  app.add_option("--label-smoothing", t.label_smoothing, "label smoothing")->capture_default_str();
  app.add_option("--beta", t.beta, "weight of the qualifier-entity loss")->capture_default_str();
  app.add_option("--grad-clip", t.grad_clip, "global gradient-norm bound (0 = off)")->capture_default_str();
  app.add_option("--eval-every", t.eval_every, "validate every N epochs (0 = never)")->capture_default_str();
  enum_option(app, "--select", t.select, parse_selection, "parameters saved as model.ckpt: final|best", "final");

  auto& m = c.model;
  app.add_option("--dim", m.dim, "embedding width (even)")->capture_default_str();
  enum_option(app, "--encoder-mode", m.encoder.mode, parse_encoder_mode,
              "sequential|parallel|base-only|layernorm-only|identity", "sequential");
  app.add_option("--base-layers", m.encoder.base_layers, "base aggregation layers")->capture_default_str();
  app.add_option("--qual-layers", m.encoder.qual_layers, "qualifier aggregation layers")->capture_default_str();
  enum_option(app, "--mix", m.encoder.mix, parse_qualifier_mix, "quad-mix|stare-gamma", "quad-mix");
  app.add_option("--alpha", m.encoder.alpha, "base/qualifier mixing weight")->capture_default_str();
  app.add_option("--encoder-dropout", m.encoder.dropout, "dropout after each aggregation layer")
      ->capture_default_str();
  app.add_option("--parallel-dropout", m.encoder.parallel_dropout, "dropout after the parallel combiner")
      ->capture_default_str();
  enum_option(app, "--activation", m.encoder.activation, parse_activation,
              "aggregator nonlinearity: tanh|relu|sigmoid|gelu|identity", "tanh");
  app.add_option("--degree-norm", m.encoder.degree_norm, "average neighbor messages instead of summing")
      ->capture_default_str();
  app.add_option("--scale-plain-edges", m.encoder.scale_plain_edges, "apply alpha to unqualified edges too")
      ->capture_default_str();
  app.add_option("--decoder-layers", m.decoder.layers, "transformer layers")->capture_default_str();
  app.add_option("--heads", m.decoder.heads, "attention heads")->capture_default_str();
  app.add_option("--hidden", m.decoder.hidden, "transformer feed-forward width")->capture_default_str();
  app.add_option("--decoder-dropout", m.decoder.dropout, "transformer residual dropout")->capture_default_str();
  enum_option(app, "--ffn-activation", m.decoder.ffn_activation, parse_activation, "feed-forward nonlinearity",
              "gelu");
  enum_option(app, "--head-activation", m.decoder.head_activation, parse_activation,
              "output-head nonlinearity", "gelu");
  enum_option(app, "--positions", m.decoder.positions, parse_position_kind, "role|absolute", "role");
  app.add_option("--tie-weights", m.decoder.tie_weights, "score against the encoded entity table")
      ->capture_default_str();
  enum_option(app, "--filter-level", t.filter_level, parse_filter_level, "statement|triple", "statement");
}

void finalize(RunConfig& c) {
  if (c.data.empty() && !c.synthetic) throw ConfigError("either --data or --synthetic is required");
  if (c.synthetic) validate(c.generator);
  validate(c.train);
  validate(c.model);
}

std::vector<std::string> expand_config_file(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::vector<std::string> from_file;
  bool seen = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config") {
      if (i + 1 == args.size()) throw ConfigError("--config needs a file name");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
      continue;
    }
    if (seen) throw ConfigError("--config given more than once");
    seen = true;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#' || line[first] == ';') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
      auto trim = [](std::string v) {
        const auto b = v.find_first_not_of(" \t\r");
        const auto e = v.find_last_not_of(" \t\r");
        v = b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
        return v;
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || key == "config")
        throw ConfigError(path + ":" + std::to_string(line_no) + ": invalid key '" + key + "'");
      if (value.empty()) continue;
      from_file.push_back("--" + key + "=" + value);
    }
  }
  // File settings go first so that command-line flags win.
  out.insert(out.begin(), from_file.begin(), from_file.end());
  return out;
}

std::vector<std::pair<std::string, std::string>> run_config_entries(const RunConfig& c) {
  const auto& t = c.train;
  const auto& m = c.model;
  return {
      {"data", c.data},
      {"synthetic", flag(c.synthetic)},
      {"entities", std::to_string(c.generator.entities)},
      {"relations", std::to_string(c.generator.relations)},
      {"statements", std::to_string(c.generator.statements)},
      {"qual-frac", number(c.generator.qualifier_fraction)},
      {"max-quals", std::to_string(c.generator.max_qualifiers)},
      {"data-seed", std::to_string(c.data_seed)},
      {"out", c.out},
      {"seed", std::to_string(t.seed)},
      {"epochs", std::to_string(t.epochs)},
      {"lr", number(t.learning_rate)},
      {"lr-decay", number(t.lr_decay)},
      {"batch", std::to_string(t.batch_size)},
      {"label-smoothing", number(t.label_smoothing)},
      {"beta", number(t.beta)},
      {"grad-clip", number(t.grad_clip)},
      {"eval-every", std::to_string(t.eval_every)},
      {"select", std::string(selection_name(t.select))},
      {"dim", std::to_string(m.dim)},
      {"encoder-mode", std::string(encoder_mode_name(m.encoder.mode))},
      {"base-layers", std::to_string(m.encoder.base_layers)},
      {"qual-layers", std::to_string(m.encoder.qual_layers)},
      {"mix", std::string(qualifier_mix_name(m.encoder.mix))},
      {"alpha", number(m.encoder.alpha)},
      {"encoder-dropout", number(m.encoder.dropout)},
      {"parallel-dropout", number(m.encoder.parallel_dropout)},
      {"activation", std::string(activation_name(m.encoder.activation))},
      {"degree-norm", flag(m.encoder.degree_norm)},
      {"scale-plain-edges", flag(m.encoder.scale_plain_edges)},
      {"decoder-layers", std::to_string(m.decoder.layers)},
      {"heads", std::to_string(m.decoder.heads)},
      {"hidden", std::to_string(m.decoder.hidden)},
      {"decoder-dropout", number(m.decoder.dropout)},
      {"ffn-activation", std::string(activation_name(m.decoder.ffn_activation))},
      {"head-activation", std::string(activation_name(m.decoder.head_activation))},
      {"positions", std::string(position_kind_name(m.decoder.positions))},
      {"tie-weights", flag(m.decoder.tie_weights)},
      {"filter-level", std::string(filter_level_name(t.filter_level))},
  };
}

std::string run_config_ini(const RunConfig& c) {
  std::ostringstream out;
  for (const auto& [k, v] : run_config_entries(c)) {
    if (k == "data" && v.empty()) continue;
    if (k == "synthetic" && v == "false") continue;
    out << k << '=' << (v.empty() ? "\"\"" : v) << '\n';
  }
  return out.str();
}

}  // namespace quad::cli
