#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "sva/corpus.hpp"
#include "sva/grammar.hpp"
#include "sva/io.hpp"
#include "test_util.hpp"

using namespace sva;
using namespace sva::testing;

namespace {

AnnotatedSentence keys_sentence() {
  // "the keys to the cabinet is ..." with one attractor.
  AnnotatedSentence s;
  s.tokens = tokenize("the keys to the cabinet are on the table");
  s.subject_index = 1;
  s.verb_index = 5;
  s.nouns = {{1, GrammNumber::Plural}, {4, GrammNumber::Singular}};
  return s;
}

InflectionLexicon small_lex() {
  InflectionLexicon lex;
  lex.add_verb("is", "are");
  lex.add_verb("barks", "bark");
  lex.add_noun("key", "keys");
  lex.add_noun("cabinet", "cabinets");
  return lex;
}

}  // namespace

TEST_CASE("count_attractors on a textbook example") {
  AnnotatedSentence s = keys_sentence();
  CHECK(count_attractors(s) == 1);
  s.nouns[1].number = GrammNumber::Plural;
  CHECK(count_attractors(s) == 0);
}

TEST_CASE("count_attractors agrees with a token-scanning oracle") {
  const Lexicon lex = Lexicon::builtin();
  const InflectionLexicon infl = lex.inflections();
  const Corpus hand = hand_assembled(lex);
  REQUIRE(hand.size() == 200);
  std::set<std::size_t> seen;
  for (const AnnotatedSentence& s : hand) {
    REQUIRE(is_valid(s));
    const std::size_t n = count_attractors(s);
    CHECK(n == attractor_oracle(s.tokens, s.subject_index, s.verb_index, infl));
    seen.insert(n);
  }
  CHECK(seen == std::set<std::size_t>{0, 1, 2, 3});

  const Corpus gen = generate_training_corpus(lex, kNaturalProfile, 2000, 5);
  for (const AnnotatedSentence& s : gen)
    CHECK(count_attractors(s) == attractor_oracle(s.tokens, s.subject_index, s.verb_index, infl));
}

TEST_CASE("validation catches malformed annotations") {
  AnnotatedSentence s = keys_sentence();
  CHECK(is_valid(s));
  AnnotatedSentence bad = s;
  bad.verb_index = 1;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = s;
  bad.verb_index = 42;
  CHECK_FALSE(is_valid(bad));
  bad = s;
  bad.nouns.erase(bad.nouns.begin());
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = s;
  bad.nouns.push_back({4, GrammNumber::Plural});
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = s;
  bad.nouns.push_back({7, GrammNumber::Singular});  // past the verb
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("counterfactual augmentation is a label-inverting involution") {
  const Lexicon lex = Lexicon::builtin();
  const InflectionLexicon infl = lex.inflections();
  const Corpus corpus = generate_training_corpus(lex, kNaturalProfile, 1000, 9);
  for (const AnnotatedSentence& s : corpus) {
    const auto once = counterfactual_augment(s, infl);
    REQUIRE(once);
    CHECK(once->label != s.label);
    CHECK(once->tokens[s.verb_index] != s.tokens[s.verb_index]);
    const auto twice = counterfactual_augment(*once, infl);
    REQUIRE(twice);
    CHECK(*twice == s);
  }
  AnnotatedSentence unknown = keys_sentence();
  unknown.tokens[5] = "seem";
  CHECK_FALSE(counterfactual_augment(unknown, infl));
}

TEST_CASE("augmented classifier set is exactly twice the eligible inputs") {
  const Lexicon lex = Lexicon::builtin();
  const InflectionLexicon infl = lex.inflections();
  Corpus corpus = generate_training_corpus(lex, kNaturalProfile, 500, 2);
  AnnotatedSentence odd = corpus.front();
  odd.tokens[odd.verb_index] = "seem";
  corpus.push_back(odd);

  const ClassifierSet with = build_classifier_set(corpus, infl, true, 1);
  const ClassifierSet without = build_classifier_set(corpus, infl, false, 1);
  CHECK(with.eligible == 500);
  CHECK(with.skipped == 1);
  CHECK(with.sentences.size() == 2 * with.eligible);
  CHECK(without.sentences.size() == without.eligible);
  std::size_t gram = 0;
  for (const AnnotatedSentence& s : with.sentences) gram += s.label == Label::Grammatical;
  CHECK(gram == 500);
}

TEST_CASE("selective sampling keeps only attractor-bearing sentences") {
  const Lexicon lex = Lexicon::builtin();
  const Corpus pool = generate_training_corpus(lex, kNaturalProfile, 4000, 3);
  const Corpus sel = sample_split(pool, SamplingPolicy::Selective, 100, 1);
  CHECK(sel.size() == 100);
  for (const AnnotatedSentence& s : sel) CHECK(count_attractors(s) >= 1);
  CHECK(sample_split(pool, SamplingPolicy::Natural, 50, 7) == sample_split(pool, SamplingPolicy::Natural, 50, 7));
  CHECK(sample_split(pool, SamplingPolicy::Natural, 50, 7) != sample_split(pool, SamplingPolicy::Natural, 50, 8));

  std::size_t with = 0;
  for (const AnnotatedSentence& s : pool) with += count_attractors(s) >= 1;
  try {
    sample_split(pool, SamplingPolicy::Selective, with + 1, 1);
    FAIL("expected CapacityError");
  } catch (const CapacityError& e) {
    CHECK(e.available() == with);
  }
}

TEST_CASE("inflection lexicon pairs and TSV parsing") {
  const InflectionLexicon lex = small_lex();
  CHECK(lex.flip_verb("is") == "are");
  CHECK(lex.flip_verb("are") == "is");
  CHECK(lex.verb_number("bark") == GrammNumber::Plural);
  CHECK_FALSE(lex.flip_verb("key"));
  CHECK(lex.noun_number("cabinet") == GrammNumber::Singular);

  const InflectionLexicon t = InflectionLexicon::from_tsv("# verbs\nis\tare\n\nbarks\tbark\n", "key\tkeys\n");
  CHECK(t.verb_pairs() == 2);
  CHECK(t.noun_pairs() == 1);
  CHECK_THROWS_AS(InflectionLexicon::from_tsv("is are\n", ""), ParseError);
  CHECK_THROWS_AS(InflectionLexicon::from_tsv("is\tis\n", ""), ParseError);
  InflectionLexicon dup;
  dup.add_verb("is", "are");
  CHECK_THROWS(dup.add_verb("is", "were"));
}

TEST_CASE("vocabulary ordering and reserved symbols") {
  Corpus c(2);
  c[0].tokens = {"b", "a", "a"};
  c[1].tokens = {"c", "a", "b"};
  const Vocabulary v = Vocabulary::build(c);
  CHECK(v.words() == std::vector<std::string>{"<unk>", "<pad>", "<eos>", "a", "b", "c"});
  CHECK(v.id("zzz") == Vocabulary::kUnk);
  CHECK(v.encode({"c", "q"}) == std::vector<std::size_t>{5, 0});
  CHECK(Vocabulary::build(c, 2).size() == 5);
  CHECK_THROWS(Vocabulary(std::vector<std::string>{"a", "<unk>"}));
}

TEST_CASE("JSONL round trip and error reporting") {
  const Lexicon lex = Lexicon::builtin();
  const Corpus corpus = generate_training_corpus(lex, kNaturalProfile, 50, 4);
  const auto dir = scratch_dir("jsonl");
  const std::string path = (dir / "c.jsonl").string();
  save_jsonl(path, corpus);
  CHECK(load_jsonl(path) == corpus);

  std::string text = sentence_to_jsonl(keys_sentence()) + "\n\n";
  AnnotatedSentence bad = keys_sentence();
  bad.verb_index = 0;
  text += sentence_to_jsonl(bad) + "\n";
  std::size_t dropped = 0;
  CHECK(parse_jsonl(text, &dropped).size() == 1);
  CHECK(dropped == 1);

  try {
    parse_jsonl(sentence_to_jsonl(keys_sentence()) + "\n{\"tokens\": [\"x\"]}\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_jsonl("not json\n"), ParseError);
}

TEST_CASE("tokenize splits on whitespace") {
  CHECK(tokenize("  the  dog\tbarks \n") == std::vector<std::string>{"the", "dog", "barks"});
  CHECK(tokenize("").empty());
}

TEST_CASE("atomic writes replace the file") {
  const auto dir = scratch_dir("atomic");
  const std::string p = (dir / "f.txt").string();
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  CHECK(read_file(p) == "two");
  CHECK_THROWS(read_file((dir / "missing").string()));
}
