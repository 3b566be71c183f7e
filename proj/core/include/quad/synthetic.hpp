#pragma once

#include <cstddef>
#include <cstdint>

#include "quad/kg_data.hpp"

namespace quad {

struct SyntheticConfig {
  std::size_t entities = 50;
  // Forward relations: four structural ones plus (relations - 4) attributes.
  std::size_t relations = 8;
  std::size_t statements = 400;
  double qualifier_fraction = 1.0;
  std::size_t max_qualifiers = 2;
};

// Throws ConfigError when the configuration cannot be realized.
void validate(const SyntheticConfig& config);

// Builds a pseudonym-style hyper-relational graph.
//
// Authors write works; every (author, wrote, work) statement names the
// author's alias through an (under_name, alias) qualifier pair, and the
// alias is credited for the same works via (alias, credited_for, work).
// Authors and works also carry attribute values (relations beyond the
// first four), and facts cite "source" entities as qualifiers.
//
// Valid and test first take every credited_for statement of up to half of
// the aliases, so those aliases reach their works only through their
// qualifier occurrences; attribute statements fill the remaining 10% each.
// Statements sharing a base triple land in the same split, and every
// entity or relation used by a held-out statement also occurs in train.
//
// Deterministic for a given (config, seed) within one build.
Dataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace quad
