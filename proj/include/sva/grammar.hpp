#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sva/corpus.hpp"

namespace sva {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct WordPair {
  std::string singular;
  std::string plural;
  const std::string& form(GrammNumber n) const { return n == GrammNumber::Singular ? singular : plural; }
  friend bool operator==(const WordPair&, const WordPair&) = default;
};

struct Lexicon {
  std::vector<WordPair> animate_nouns;
  std::vector<WordPair> inanimate_nouns;
  std::vector<WordPair> trans_verbs;
  std::vector<WordPair> intrans_verbs;
  std::vector<std::string> prepositions;  // may be multi-word, e.g. "next to"
  std::string relativizer = "that";

  // Ten nouns per category, ten verbs per category, five prepositions.
  static Lexicon builtin();
  static Lexicon from_json(const std::string& text);
  static Lexicon load(const std::string& path);
  std::string to_json() const;

  void validate() const;
  InflectionLexicon inflections() const;
  friend bool operator==(const Lexicon&, const Lexicon&) = default;
};

enum class Condition {
  Simple,
  ShortVP,
  LongVP,
  WithinORC,
  WithinORCNoThat,
  AcrossPP,
  AcrossSRC,
  AcrossORC,
  AcrossORCNoThat,
};
enum class Animacy { None, Animate, Inanimate };
// First letter: main (first) noun; second: embedded noun.
enum class NumberCase { SS, SP, PS, PP };

std::string_view to_string(Condition c);
std::string_view to_string(Animacy a);  // "-", "A", "IA"
std::string_view to_string(NumberCase c);
Condition parse_condition(std::string_view s);
Animacy parse_animacy(std::string_view s);
NumberCase parse_number_case(std::string_view s);

struct TseCondition {
  Condition condition = Condition::Simple;
  Animacy animacy = Animacy::None;
  std::string label() const;  // e.g. "Across PP (A)"
  friend bool operator==(const TseCondition&, const TseCondition&) = default;
};

// The fourteen evaluated rows, in table order.
std::vector<TseCondition> tse_conditions();

struct TseItem {
  std::vector<std::string> tokens;  // carries the correct verb at verb_index
  std::size_t subject_index = 0;    // the noun the tested verb agrees with
  std::size_t verb_index = 0;
  std::string correct_verb;
  std::string incorrect_verb;
  TseCondition condition;
  NumberCase number_case = NumberCase::SS;
  std::size_t attractor_count = 0;
  GrammNumber subject_number = GrammNumber::Singular;
  // Intervening nouns (between subject_index and verb_index) with their numbers.
  std::vector<NounAnnotation> intervening;

  AnnotatedSentence to_annotated() const;
  friend bool operator==(const TseItem&, const TseItem&) = default;
};

// Exhaustive cross product over the condition's template slots and number
// cases, ordered by (number case, slot indices).
std::vector<TseItem> generate_condition(const Lexicon& lex, const TseCondition& c);
// Product-of-slot-sizes count for the same condition.
std::size_t expected_item_count(const Lexicon& lex, const TseCondition& c);

std::string tse_item_to_jsonl(const TseItem& item);
TseItem tse_item_from_json_line(const std::string& line, std::size_t line_no);
std::vector<TseItem> load_tse_jsonl(const std::string& path);
void save_tse_jsonl(const std::string& path, const std::vector<TseItem>& items);

// Distribution over attractor counts 0..3.
using AttractorProfile = std::array<double, 4>;
inline constexpr AttractorProfile kNaturalProfile{0.93, 0.056, 0.011, 0.003};
// Attractor-bearing part of the natural profile, renormalized.
inline constexpr AttractorProfile kSelectiveProfile{0.0, 0.79 / 0.977, 0.15 / 0.977, 0.037 / 0.977};

struct CorpusShape {
  std::size_t max_intervening = 3;
  double singular_fraction = 0.5;
  // Share of attractor-free sentences with no intervening noun at all.
  double bare_fraction = 0.2;
  // Share of attractor-bearing sentences whose intervening nouns are all attractors.
  double exact_fraction = 0.7;
  // Share of sentences followed by a coordinated clause "and the N V"; its
  // verb agrees with the closest noun, as most verbs in running text do.
  double clause_fraction = 0.3;
  // Share of sentences opening with a prepositional phrase before the subject.
  double fronted_fraction = 0.3;
  // Word frequencies fall off as rank^-zipf_exponent; 0 gives uniform choice.
  double zipf_exponent = 1.0;
  // Share of intervening material opened by a relative clause (split evenly
  // between subject and object relatives); the rest is a prepositional chain.
  double relative_fraction = 0.67;
  // Share of object relatives without the relativizer.
  double bare_orc_fraction = 0.5;
};

Corpus generate_training_corpus(const Lexicon& lex, const AttractorProfile& distribution, std::size_t n,
                                std::uint64_t seed, const CorpusShape& shape = {});

// n distinct one-attractor prepositional-phrase sentences.
Corpus finetune_set(const Lexicon& lex, std::size_t n, std::uint64_t seed);

}  // namespace sva
