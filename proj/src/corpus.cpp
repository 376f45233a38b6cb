#include "spear/corpus.hpp"

#include <algorithm>

#include "spear/tokenizer.hpp"

namespace spear {

namespace {

// Word banks kept free of sentiment-lexicon words so the phrase bank alone
// decides the class; the generator's intended label then always agrees with
// the classifier.
const std::vector<std::string> kOpeners = {
    "just got back from", "spent all morning on",  "thinking about",
    "cannot believe",     "quick update on",       "another day with",
    "finally done with",  "still waiting through", "one more round of",
};

const std::vector<std::string> kSchoolSubjects = {
    "math class",        "the chemistry exam", "school today",     "my homework pile",
    "the lecture hall",  "the study group",    "the term paper",   "the biology lab",
};

const std::vector<std::string> kOtherSubjects = {
    "the morning commute", "the corner cafe",  "the football game", "my weekend plans",
    "the garden project",  "the old laptop",   "the bus schedule",  "the kitchen remodel",
};

const std::vector<std::string> kNegativePhrases = {
    "it was awful and i hate every minute",
    "feeling sad and stressed about the whole thing",
    "a total fail and i am angry now",
    "so boring and i am tired of this mess",
    "ugh what a terrible slog from start to end",
    "everything broke and the result is gross",
};

const std::vector<std::string> kPositivePhrases = {
    "it was great and i love every minute",
    "feeling happy and excited about the whole thing",
    "a big win and i am proud now",
    "so fun and nice to enjoy for once",
    "what an awesome run from start to end",
    "everything clicked and the best part came last",
};

const std::vector<std::string> kFillers = {
    "anyway more details later",  "see you all next time", "that is the whole story",
    "more news again tomorrow",   "back to it in a minute", "sharing this for the record",
};

}  // namespace

CorpusGenerator::CorpusGenerator(std::uint64_t seed, const MockRuleSet& rules)
    : rng_state_(seed ? seed : 0x9e3779b97f4a7c15ull), rules_(rules) {}

std::uint64_t CorpusGenerator::next() {
  // splitmix64: deterministic across platforms
  std::uint64_t z = (rng_state_ += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::size_t CorpusGenerator::pick(std::size_t bound) { return next() % bound; }

std::vector<CorpusItem> CorpusGenerator::generate(std::size_t n, double negative_fraction,
                                                  double school_fraction) {
  std::vector<CorpusItem> items;
  items.reserve(n);
  // Exact class counts: the filter's measured selectivity equals the
  // requested fraction up to count rounding.
  std::size_t negatives = static_cast<std::size_t>(negative_fraction * static_cast<double>(n) + 0.5);

  for (std::size_t i = 0; i < n; ++i) {
    CorpusItem item;
    item.id = "u" + std::to_string(1000 + i);
    item.negative = i < negatives;
    item.school_topic = pick(1000) < static_cast<std::size_t>(school_fraction * 1000.0);

    const auto& subjects = item.school_topic ? kSchoolSubjects : kOtherSubjects;
    const auto& phrases = item.negative ? kNegativePhrases : kPositivePhrases;
    std::string text = "@" + item.id + " " + kOpeners[pick(kOpeners.size())] + " " +
                       subjects[pick(subjects.size())] + " " + phrases[pick(phrases.size())] +
                       " " + kFillers[pick(kFillers.size())];
    if (pick(10) < 3) {
      text += " https://t.co/x" + std::to_string(100 + pick(900));
    }
    item.text = text;
    items.push_back(std::move(item));
  }

  // Deterministic shuffle so classes interleave.
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[pick(i)]);
  }
  return items;
}

double mean_token_count(const std::vector<CorpusItem>& items) {
  if (items.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto& item : items) total += token_count(item.text);
  return static_cast<double>(total) / static_cast<double>(items.size());
}

}  // namespace spear
