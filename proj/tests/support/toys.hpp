#pragma once

// Small graphs, tables and parameter sets shared by the unit tests and the
// acceptance binary.

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "quad/kg_data.hpp"
#include "quad/model.hpp"
#include "quad/ops.hpp"
#include "quad/tensor.hpp"

namespace quad::toys {

inline std::vector<Statement> parse(const std::string& text, Vocab& vocab) {
  std::istringstream in(text);
  return parse_statements(in, vocab);
}

inline Tensor random_tensor(Shape shape, Rng& rng, double bound = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

inline Tables random_tables(const Vocab& vocab, std::size_t dim, Rng& rng) {
  return Tables{random_tensor({vocab.entity_rows(), dim}, rng), random_tensor({vocab.relation_rows(), dim}, rng)};
}

// Overwrites every parameter with U(-bound, bound) so that zero biases and
// unit gains do not hide mistakes.
template <typename P>
void randomize(P& params, Rng& rng, double bound = 0.5) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  visit_model_tensors(params, [&](const std::string&, Tensor& t) {
    if (!t.defined()) return;
    for (double& v : t.mutable_values()) v = dist(rng);
  });
}

// The pseudonym example: a work written under a pen name, plus a second
// qualified fact and a plain one so that every edge kind occurs.
inline const char* kFigureOne =
    "StephenKing,AuthorOf,TheRunningMan,UnderPseudonym,RichardBachman\n"
    "StephenKing,AuthorOf,Carrie\n"
    "RichardBachman,AuthorOf,Rage,UnderPseudonym,RichardBachman,PublishedBy,Signet\n"
    "Carrie,PublishedBy,Doubleday\n";

// Three entities, two statements, one of them qualified.
inline const char* kThreeEntities =
    "a,r,b,q,c\n"
    "b,s,c\n";

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.dim = 4;
  c.encoder.dropout = 0.0;
  c.encoder.parallel_dropout = 0.0;
  c.decoder.heads = 2;
  c.decoder.hidden = 6;
  c.decoder.dropout = 0.0;
  return c;
}

}  // namespace quad::toys
