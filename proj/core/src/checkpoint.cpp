#include "quad/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "quad/errors.hpp"

namespace quad {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ConfigError("invalid number '" + text + "' for " + key);
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ConfigError("invalid count '" + text + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

ConfigEntries model_config_entries(const ModelConfig& c) {
  return {
      {"dim", std::to_string(c.dim)},
      {"encoder.mode", std::string(encoder_mode_name(c.encoder.mode))},
      {"encoder.base_layers", std::to_string(c.encoder.base_layers)},
      {"encoder.qual_layers", std::to_string(c.encoder.qual_layers)},
      {"encoder.mix", std::string(qualifier_mix_name(c.encoder.mix))},
      {"encoder.alpha", format_double(c.encoder.alpha)},
      {"encoder.dropout", format_double(c.encoder.dropout)},
      {"encoder.parallel_dropout", format_double(c.encoder.parallel_dropout)},
      {"encoder.activation", std::string(activation_name(c.encoder.activation))},
      {"encoder.degree_norm", bool_text(c.encoder.degree_norm)},
      {"encoder.scale_plain_edges", bool_text(c.encoder.scale_plain_edges)},
      {"decoder.layers", std::to_string(c.decoder.layers)},
      {"decoder.heads", std::to_string(c.decoder.heads)},
      {"decoder.hidden", std::to_string(c.decoder.hidden)},
      {"decoder.dropout", format_double(c.decoder.dropout)},
      {"decoder.ffn_activation", std::string(activation_name(c.decoder.ffn_activation))},
      {"decoder.head_activation", std::string(activation_name(c.decoder.head_activation))},
      {"decoder.positions", std::string(position_kind_name(c.decoder.positions))},
      {"decoder.tie_weights", bool_text(c.decoder.tie_weights)},
  };
}

void apply_model_entry(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "dim") c.dim = parse_size(key, value);
  else if (key == "encoder.mode") c.encoder.mode = parse_encoder_mode(value);
  else if (key == "encoder.base_layers") c.encoder.base_layers = parse_size(key, value);
  else if (key == "encoder.qual_layers") c.encoder.qual_layers = parse_size(key, value);
  else if (key == "encoder.mix") c.encoder.mix = parse_qualifier_mix(value);
  else if (key == "encoder.alpha") c.encoder.alpha = parse_double(key, value);
  else if (key == "encoder.dropout") c.encoder.dropout = parse_double(key, value);
  else if (key == "encoder.parallel_dropout") c.encoder.parallel_dropout = parse_double(key, value);
  else if (key == "encoder.activation") c.encoder.activation = parse_activation(value);
  else if (key == "encoder.degree_norm") c.encoder.degree_norm = parse_bool(key, value);
  else if (key == "encoder.scale_plain_edges") c.encoder.scale_plain_edges = parse_bool(key, value);
  else if (key == "decoder.layers") c.decoder.layers = parse_size(key, value);
  else if (key == "decoder.heads") c.decoder.heads = parse_size(key, value);
  else if (key == "decoder.hidden") c.decoder.hidden = parse_size(key, value);
  else if (key == "decoder.dropout") c.decoder.dropout = parse_double(key, value);
  else if (key == "decoder.ffn_activation") c.decoder.ffn_activation = parse_activation(value);
  else if (key == "decoder.head_activation") c.decoder.head_activation = parse_activation(value);
  else if (key == "decoder.positions") c.decoder.positions = parse_position_kind(value);
  else if (key == "decoder.tie_weights") c.decoder.tie_weights = parse_bool(key, value);
  else throw ConfigError("unknown model setting '" + key + "'");
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params,
                     const Vocab& vocab, std::size_t max_pairs, const ConfigEntries& meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << "QUAD-CHECKPOINT " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : model_config_entries(config)) out << "config " << k << ' ' << v << '\n';
  for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << '\n';
  out << "vocab " << vocab.num_entities() << ' ' << vocab.num_relations() << ' ' << vocab.fingerprint() << '\n';
  out << "max_pairs " << max_pairs << '\n';
  for (const auto& [name, t] : params.named()) {
    out << "tensor " << name << ' ' << t.rank();
    for (auto dim : t.shape()) out << ' ' << dim;
    out << '\n';
    const auto values = t.values();
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << format_double(values[i]);
    out << '\n';
  }
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& vocab) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("checkpoint not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  const std::string name = path.string();
  std::size_t line_no = 0;
  std::string line;
  auto next = [&]() -> std::string {
    if (!std::getline(in, line)) throw ParseError(name, line_no + 1, "unexpected end of checkpoint");
    ++line_no;
    return line;
  };

  {
    std::istringstream head(next());
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != "QUAD-CHECKPOINT") throw ParseError(name, line_no, "not a checkpoint file");
    if (version != kCheckpointVersion)
      throw ParseError(name, line_no, "unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ck;
  std::map<std::string, std::pair<Shape, std::vector<double>>> tensors;
  bool saw_vocab = false;
  while (true) {
    std::istringstream fields(next());
    std::string tag;
    fields >> tag;
    if (tag == "end") break;
    if (tag == "config" || tag == "meta") {
      std::string key, value;
      fields >> key;
      std::getline(fields >> std::ws, value);
      if (tag == "config") {
        try {
          apply_model_entry(ck.config, key, value);
        } catch (const ConfigError& e) {
          throw ParseError(name, line_no, e.what());
        }
      } else {
        ck.meta.emplace_back(key, value);
      }
    } else if (tag == "vocab") {
      std::size_t entities = 0, relations = 0;
      std::uint64_t fp = 0;
      if (!(fields >> entities >> relations >> fp)) throw ParseError(name, line_no, "malformed vocab line");
      if (entities != vocab.num_entities() || relations != vocab.num_relations() || fp != vocab.fingerprint()) {
        throw ConfigError("checkpoint " + name + " was trained on a vocabulary of " + std::to_string(entities) +
                          " entities / " + std::to_string(relations) + " relations (fingerprint " +
                          std::to_string(fp) + "), the data has " + std::to_string(vocab.num_entities()) + " / " +
                          std::to_string(vocab.num_relations()) + " (fingerprint " +
                          std::to_string(vocab.fingerprint()) + ")");
      }
      saw_vocab = true;
    } else if (tag == "max_pairs") {
      if (!(fields >> ck.max_pairs)) throw ParseError(name, line_no, "malformed max_pairs line");
    } else if (tag == "tensor") {
      std::string tensor_name;
      std::size_t rank = 0;
      if (!(fields >> tensor_name >> rank)) throw ParseError(name, line_no, "malformed tensor header");
      Shape shape(rank);
      for (auto& d : shape)
        if (!(fields >> d)) throw ParseError(name, line_no, "malformed tensor shape");
      std::vector<double> values;
      values.reserve(shape_numel(shape));
      const std::string body = next();
      const char* p = body.data();
      const char* end = body.data() + body.size();
      while (p < end) {
        while (p < end && *p == ' ') ++p;
        if (p == end) break;
        double v = 0.0;
        auto [q, ec] = std::from_chars(p, end, v);
        if (ec != std::errc()) throw ParseError(name, line_no, "bad number in tensor " + tensor_name);
        values.push_back(v);
        p = q;
      }
      if (values.size() != shape_numel(shape))
        throw ParseError(name, line_no, "tensor " + tensor_name + " holds " + std::to_string(values.size()) +
                                            " values, shape " + shape_string(shape) + " needs " +
                                            std::to_string(shape_numel(shape)));
      tensors[tensor_name] = {std::move(shape), std::move(values)};
    } else {
      throw ParseError(name, line_no, "unknown record '" + tag + "'");
    }
  }
  if (!saw_vocab) throw ParseError(name, line_no, "checkpoint has no vocab record");

  validate(ck.config);
  Rng rng(0);
  ck.params = init_model(ck.config, vocab, ck.max_pairs, rng);
  std::size_t used = 0;
  visit_model_tensors(ck.params, [&](const std::string& tensor_name, Tensor& t) {
    auto it = tensors.find(tensor_name);
    if (it == tensors.end()) throw ConfigError("checkpoint " + name + " lacks tensor " + tensor_name);
    if (it->second.first != t.shape()) {
      throw DimensionError("checkpoint tensor " + tensor_name + " has shape " + shape_string(it->second.first) +
                           ", the model expects " + shape_string(t.shape()));
    }
    std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_values().begin());
    ++used;
  });
  if (used != tensors.size()) throw ConfigError("checkpoint " + name + " holds tensors the model does not use");
  return ck;
}

}  // namespace quad
