#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sva {

enum class GrammNumber { Singular, Plural };
enum class Label { Grammatical, Ungrammatical };

inline GrammNumber flip(GrammNumber n) {
  return n == GrammNumber::Singular ? GrammNumber::Plural : GrammNumber::Singular;
}
std::string_view to_string(GrammNumber n);  // "sing" / "plur"
std::string_view to_string(Label l);        // "gram" / "ungram"

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CapacityError : public std::runtime_error {
 public:
  CapacityError(const std::string& what, std::size_t available)
      : std::runtime_error(what), available_(available) {}
  std::size_t available() const { return available_; }

 private:
  std::size_t available_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct NounAnnotation {
  std::size_t position = 0;
  GrammNumber number = GrammNumber::Singular;
  friend bool operator==(const NounAnnotation&, const NounAnnotation&) = default;
};

// One pre-annotated sentence. `nouns` covers the subject and every noun
// strictly between subject and verb.
struct AnnotatedSentence {
  std::vector<std::string> tokens;
  std::size_t subject_index = 0;
  std::size_t verb_index = 0;
  std::vector<NounAnnotation> nouns;
  Label label = Label::Grammatical;

  GrammNumber subject_number() const;
  friend bool operator==(const AnnotatedSentence&, const AnnotatedSentence&) = default;
};

using Corpus = std::vector<AnnotatedSentence>;

void validate(const AnnotatedSentence& s);
bool is_valid(const AnnotatedSentence& s);

// Intervening annotated nouns whose number differs from the subject's.
std::size_t count_attractors(const AnnotatedSentence& s);

// Whitespace tokenization of pre-tokenized lowercase text.
std::vector<std::string> tokenize(std::string_view text);

// Singular <-> plural pairings for verbs and nouns.
class InflectionLexicon {
 public:
  void add_verb(const std::string& singular, const std::string& plural);
  void add_noun(const std::string& singular, const std::string& plural);

  std::optional<std::string> flip_verb(const std::string& form) const;
  std::optional<std::string> flip_noun(const std::string& form) const;
  std::optional<GrammNumber> verb_number(const std::string& form) const;
  std::optional<GrammNumber> noun_number(const std::string& form) const;
  std::size_t verb_pairs() const { return verb_sing_.size(); }
  std::size_t noun_pairs() const { return noun_sing_.size(); }

  // Two-column TSV (singular TAB plural); blank lines and '#' comments skipped.
  static InflectionLexicon from_tsv(const std::string& verbs_tsv, const std::string& nouns_tsv);
  static InflectionLexicon load_tsv(const std::string& verbs_path, const std::string& nouns_path);

 private:
  static void add_pair(std::map<std::string, std::string>& sing, std::map<std::string, std::string>& plur,
                       const std::string& s, const std::string& p, const char* what);
  std::map<std::string, std::string> verb_sing_, verb_plur_;  // form -> counterpart
  std::map<std::string, std::string> noun_sing_, noun_plur_;
};

enum class SamplingPolicy { Natural, Selective };
std::string_view to_string(SamplingPolicy p);
SamplingPolicy parse_sampling(std::string_view name);

// natural: uniform sample of n; selective: uniform sample of n among
// sentences with at least one attractor.
Corpus sample_split(const Corpus& corpus, SamplingPolicy policy, std::size_t n, std::uint64_t seed);

// Flips the main verb's number and the label. nullopt means the verb is not
// in the lexicon and the caller should drop the sentence.
std::optional<AnnotatedSentence> counterfactual_augment(const AnnotatedSentence& s, const InflectionLexicon& lex);

struct ClassifierSet {
  Corpus sentences;
  std::size_t eligible = 0;
  std::size_t skipped = 0;
};

// With augmentation every eligible sentence contributes itself and its
// counterfactual (2 instances); without, each eligible sentence is kept or
// flipped with probability 1/2 (1 instance).
ClassifierSet build_classifier_set(const Corpus& corpus, const InflectionLexicon& lex, bool augment,
                                   std::uint64_t seed);

class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kPad = 1;
  static constexpr std::size_t kEos = 2;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);  // reserved symbols must lead

  // Sorted by descending frequency then lexicographically; words seen fewer
  // than min_count times are left out (they map to <unk>).
  static Vocabulary build(const Corpus& corpus, std::size_t min_count = 1);

  std::size_t size() const { return words_.size(); }
  std::size_t id(const std::string& word) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

std::string sentence_to_jsonl(const AnnotatedSentence& s);
AnnotatedSentence sentence_from_json_line(const std::string& line, std::size_t line_no);
// Structural problems throw ParseError; well-formed lines that fail
// validation are dropped and tallied in `dropped`.
Corpus parse_jsonl(const std::string& text, std::size_t* dropped = nullptr);
Corpus load_jsonl(const std::string& path, std::size_t* dropped = nullptr);
void save_jsonl(const std::string& path, const Corpus& corpus);

}  // namespace sva
