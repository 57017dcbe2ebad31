#include "sva/corpus.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "sva/io.hpp"

namespace sva {

std::string_view to_string(GrammNumber n) { return n == GrammNumber::Singular ? "sing" : "plur"; }
std::string_view to_string(Label l) { return l == Label::Grammatical ? "gram" : "ungram"; }

std::string_view to_string(SamplingPolicy p) { return p == SamplingPolicy::Natural ? "natural" : "selective"; }

SamplingPolicy parse_sampling(std::string_view name) {
  if (name == "natural") return SamplingPolicy::Natural;
  if (name == "selective") return SamplingPolicy::Selective;
  throw std::invalid_argument("unknown sampling policy '" + std::string(name) + "'");
}

GrammNumber AnnotatedSentence::subject_number() const {
  for (const NounAnnotation& n : nouns)
    if (n.position == subject_index) return n.number;
  throw ValidationError("subject at position " + std::to_string(subject_index) + " is not annotated");
}

void validate(const AnnotatedSentence& s) {
  if (!(s.subject_index < s.verb_index)) {
    throw ValidationError("subject_index " + std::to_string(s.subject_index) + " must precede verb_index " +
                          std::to_string(s.verb_index));
  }
  if (!(s.verb_index < s.tokens.size())) {
    throw ValidationError("verb_index " + std::to_string(s.verb_index) + " outside sentence of length " +
                          std::to_string(s.tokens.size()));
  }
  bool subject_seen = false;
  std::set<std::size_t> seen;
  for (const NounAnnotation& n : s.nouns) {
    if (!seen.insert(n.position).second) {
      throw ValidationError("noun position " + std::to_string(n.position) + " annotated twice");
    }
    if (n.position == s.subject_index) {
      subject_seen = true;
    } else if (!(n.position > s.subject_index && n.position < s.verb_index)) {
      throw ValidationError("annotated noun at " + std::to_string(n.position) +
                            " is not between subject and verb");
    }
  }
  if (!subject_seen) throw ValidationError("subject is missing from the noun annotations");
}

bool is_valid(const AnnotatedSentence& s) {
  try {
    validate(s);
    return true;
  } catch (const ValidationError&) {
    return false;
  }
}

std::size_t count_attractors(const AnnotatedSentence& s) {
  validate(s);
  const GrammNumber subj = s.subject_number();
  return static_cast<std::size_t>(std::count_if(s.nouns.begin(), s.nouns.end(), [&](const NounAnnotation& n) {
    return n.position != s.subject_index && n.number != subj;
  }));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// ------------------------------------------------------------ lexicon

void InflectionLexicon::add_pair(std::map<std::string, std::string>& sing, std::map<std::string, std::string>& plur,
                                 const std::string& s, const std::string& p, const char* what) {
  if (s == p) throw std::invalid_argument(std::string(what) + " forms must differ: '" + s + "'");
  auto clash = [&](const std::string& w) { return sing.count(w) || plur.count(w); };
  if (clash(s) || clash(p)) {
    throw std::invalid_argument(std::string(what) + " pair '" + s + "'/'" + p + "' reuses an existing form");
  }
  sing.emplace(s, p);
  plur.emplace(p, s);
}

void InflectionLexicon::add_verb(const std::string& singular, const std::string& plural) {
  add_pair(verb_sing_, verb_plur_, singular, plural, "verb");
}

void InflectionLexicon::add_noun(const std::string& singular, const std::string& plural) {
  add_pair(noun_sing_, noun_plur_, singular, plural, "noun");
}

namespace {

std::optional<std::string> lookup(const std::map<std::string, std::string>& a,
                                  const std::map<std::string, std::string>& b, const std::string& w) {
  if (auto it = a.find(w); it != a.end()) return it->second;
  if (auto it = b.find(w); it != b.end()) return it->second;
  return std::nullopt;
}

std::optional<GrammNumber> number_of(const std::map<std::string, std::string>& sing,
                                     const std::map<std::string, std::string>& plur, const std::string& w) {
  if (sing.count(w)) return GrammNumber::Singular;
  if (plur.count(w)) return GrammNumber::Plural;
  return std::nullopt;
}

void read_pairs(const std::string& text, const std::string& what,
                const std::function<void(const std::string&, const std::string&)>& add) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(what + " lexicon: expected 'singular<TAB>plural'", line_no);
    }
    try {
      add(line.substr(0, tab), line.substr(tab + 1));
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
}

}  // namespace

std::optional<std::string> InflectionLexicon::flip_verb(const std::string& form) const {
  return lookup(verb_sing_, verb_plur_, form);
}
std::optional<std::string> InflectionLexicon::flip_noun(const std::string& form) const {
  return lookup(noun_sing_, noun_plur_, form);
}
std::optional<GrammNumber> InflectionLexicon::verb_number(const std::string& form) const {
  return number_of(verb_sing_, verb_plur_, form);
}
std::optional<GrammNumber> InflectionLexicon::noun_number(const std::string& form) const {
  return number_of(noun_sing_, noun_plur_, form);
}

InflectionLexicon InflectionLexicon::from_tsv(const std::string& verbs_tsv, const std::string& nouns_tsv) {
  InflectionLexicon lex;
  read_pairs(verbs_tsv, "verb", [&](const std::string& s, const std::string& p) { lex.add_verb(s, p); });
  read_pairs(nouns_tsv, "noun", [&](const std::string& s, const std::string& p) { lex.add_noun(s, p); });
  return lex;
}

InflectionLexicon InflectionLexicon::load_tsv(const std::string& verbs_path, const std::string& nouns_path) {
  return from_tsv(read_file(verbs_path), read_file(nouns_path));
}

// ------------------------------------------------------------ sampling

Corpus sample_split(const Corpus& corpus, SamplingPolicy policy, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (policy == SamplingPolicy::Natural || count_attractors(corpus[i]) >= 1) eligible.push_back(i);
  if (eligible.size() < n) {
    throw CapacityError("sample_split: requested " + std::to_string(n) + " " + std::string(to_string(policy)) +
                            " sentences but only " + std::to_string(eligible.size()) + " are available",
                        eligible.size());
  }
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first n slots become the sample.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  Corpus out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(corpus[eligible[i]]);
  return out;
}

std::optional<AnnotatedSentence> counterfactual_augment(const AnnotatedSentence& s, const InflectionLexicon& lex) {
  validate(s);
  auto flipped = lex.flip_verb(s.tokens[s.verb_index]);
  if (!flipped) return std::nullopt;
  AnnotatedSentence out = s;
  out.tokens[s.verb_index] = *flipped;
  out.label = s.label == Label::Grammatical ? Label::Ungrammatical : Label::Grammatical;
  return out;
}

ClassifierSet build_classifier_set(const Corpus& corpus, const InflectionLexicon& lex, bool augment,
                                   std::uint64_t seed) {
  ClassifierSet set;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  for (const AnnotatedSentence& s : corpus) {
    auto cf = counterfactual_augment(s, lex);
    if (!cf) {
      ++set.skipped;
      continue;
    }
    ++set.eligible;
    if (augment) {
      set.sentences.push_back(s);
      set.sentences.push_back(std::move(*cf));
    } else {
      set.sentences.push_back(coin(rng) ? std::move(*cf) : s);
    }
  }
  return set;
}

// ------------------------------------------------------------ vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<unk>", "<pad>", "<eos>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 3 || words_[kUnk] != "<unk>" || words_[kPad] != "<pad>" || words_[kEos] != "<eos>") {
    throw std::invalid_argument("Vocabulary: reserved symbols <unk> <pad> <eos> must come first");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) throw std::invalid_argument("Vocabulary: duplicate word '" + words_[i] + "'");
  }
}

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> freq;
  for (const AnnotatedSentence& s : corpus)
    for (const std::string& t : s.tokens) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> items;
  for (auto& [w, c] : freq)
    if (c >= std::max<std::size_t>(min_count, 1) && w != "<unk>" && w != "<pad>" && w != "<eos>") items.emplace_back(w, c);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> words{"<unk>", "<pad>", "<eos>"};
  for (auto& [w, c] : items) words.push_back(w);
  return Vocabulary(std::move(words));
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(id(t));
  return ids;
}

// ------------------------------------------------------------ JSONL

using ojson = nlohmann::ordered_json;

std::string sentence_to_jsonl(const AnnotatedSentence& s) {
  ojson j;
  j["tokens"] = s.tokens;
  j["subject_index"] = s.subject_index;
  j["verb_index"] = s.verb_index;
  ojson nouns = ojson::array();
  for (const NounAnnotation& n : s.nouns) nouns.push_back(ojson::array({n.position, std::string(to_string(n.number))}));
  j["nouns"] = std::move(nouns);
  j["label"] = std::string(to_string(s.label));
  return j.dump();
}

AnnotatedSentence sentence_from_json_line(const std::string& line, std::size_t line_no) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const ojson::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
  }
  auto need = [&](const char* key) -> const ojson& {
    if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line_no);
    return j.at(key);
  };
  AnnotatedSentence s;
  try {
    s.tokens = need("tokens").get<std::vector<std::string>>();
    s.subject_index = need("subject_index").get<std::size_t>();
    s.verb_index = need("verb_index").get<std::size_t>();
    for (const ojson& n : need("nouns")) {
      if (!n.is_array() || n.size() != 2) throw ParseError("noun entries must be [position, \"sing\"|\"plur\"]", line_no);
      const auto num = n.at(1).get<std::string>();
      if (num != "sing" && num != "plur") throw ParseError("noun number must be \"sing\" or \"plur\"", line_no);
      s.nouns.push_back({n.at(0).get<std::size_t>(), num == "sing" ? GrammNumber::Singular : GrammNumber::Plural});
    }
    const auto label = need("label").get<std::string>();
    if (label != "gram" && label != "ungram") throw ParseError("label must be \"gram\" or \"ungram\"", line_no);
    s.label = label == "gram" ? Label::Grammatical : Label::Ungrammatical;
  } catch (const ojson::exception& e) {
    throw ParseError(std::string("bad field type: ") + e.what(), line_no);
  }
  return s;
}

Corpus parse_jsonl(const std::string& text, std::size_t* dropped) {
  Corpus out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    AnnotatedSentence s = sentence_from_json_line(line, line_no);
    if (is_valid(s)) {
      out.push_back(std::move(s));
    } else if (dropped) {
      ++*dropped;
    }
  }
  return out;
}

Corpus load_jsonl(const std::string& path, std::size_t* dropped) { return parse_jsonl(read_file(path), dropped); }

void save_jsonl(const std::string& path, const Corpus& corpus) {
  std::string text;
  for (const AnnotatedSentence& s : corpus) {
    text += sentence_to_jsonl(s);
    text += '\n';
  }
  write_file_atomic(path, text);
}

}  // namespace sva
