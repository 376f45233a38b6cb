#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spear/backend.hpp"

namespace spear {

// One synthetic tweet. Each text starts with a unique "@u<id>" handle (as
// real tweets often do), which also guarantees distinct leading tokens.
struct CorpusItem {
  std::string id;
  std::string text;
  bool negative = false;    // intended sentiment class
  bool school_topic = false;
};

// Seeded tweet generator with a controllable negative fraction. Texts are
// built from the mock lexicon so the classifier agrees with the intended
// class on every item; a run with negative_fraction = s therefore measures
// filter selectivity exactly s (up to count rounding).
class CorpusGenerator {
 public:
  CorpusGenerator(std::uint64_t seed, const MockRuleSet& rules);

  std::vector<CorpusItem> generate(std::size_t n, double negative_fraction,
                                   double school_fraction = 0.4);

 private:
  std::uint64_t next();
  std::size_t pick(std::size_t bound);

  std::uint64_t rng_state_;
  const MockRuleSet& rules_;
};

double mean_token_count(const std::vector<CorpusItem>& items);

}  // namespace spear
