#include "sva/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sva/io.hpp"

namespace sva {

using ojson = nlohmann::ordered_json;

// ------------------------------------------------------------ lexicon

Lexicon Lexicon::builtin() {
  Lexicon lex;
  lex.animate_nouns = {{"author", "authors"},   {"chef", "chefs"},       {"minister", "ministers"},
                       {"guard", "guards"},     {"pilot", "pilots"},     {"surgeon", "surgeons"},
                       {"farmer", "farmers"},   {"senator", "senators"}, {"dancer", "dancers"},
                       {"teacher", "teachers"}};
  lex.inanimate_nouns = {{"key", "keys"},     {"cabinet", "cabinets"},   {"movie", "movies"}, {"book", "books"},
                         {"table", "tables"}, {"painting", "paintings"}, {"car", "cars"},     {"song", "songs"},
                         {"door", "doors"},   {"window", "windows"}};
  lex.trans_verbs = {{"likes", "like"},   {"admires", "admire"}, {"hates", "hate"},   {"loves", "love"},
                     {"knows", "know"},   {"sees", "see"},       {"meets", "meet"},   {"trusts", "trust"},
                     {"helps", "help"},   {"follows", "follow"}};
  lex.intrans_verbs = {{"laughs", "laugh"}, {"swims", "swim"},   {"smiles", "smile"}, {"sleeps", "sleep"},
                       {"waits", "wait"},   {"falls", "fall"},   {"works", "work"},   {"runs", "run"},
                       {"shines", "shine"}, {"moves", "move"}};
  lex.prepositions = {"near", "behind", "beside", "next to", "above"};
  return lex;
}

namespace {

std::vector<WordPair> pairs_from(const ojson& j, const char* key) {
  std::vector<WordPair> out;
  if (!j.contains(key)) throw ConfigError(std::string("lexicon: missing '") + key + "'");
  for (const ojson& e : j.at(key)) {
    if (!e.is_array() || e.size() != 2) throw ConfigError(std::string("lexicon: '") + key + "' entries must be [singular, plural]");
    out.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>()});
  }
  return out;
}

ojson pairs_to(const std::vector<WordPair>& v) {
  ojson a = ojson::array();
  for (const WordPair& p : v) a.push_back(ojson::array({p.singular, p.plural}));
  return a;
}

}  // namespace

Lexicon Lexicon::from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("lexicon: invalid JSON: ") + e.what());
  }
  Lexicon lex;
  try {
    lex.animate_nouns = pairs_from(j, "animate_nouns");
    lex.inanimate_nouns = pairs_from(j, "inanimate_nouns");
    lex.trans_verbs = pairs_from(j, "trans_verbs");
    lex.intrans_verbs = pairs_from(j, "intrans_verbs");
    if (!j.contains("prepositions")) throw ConfigError("lexicon: missing 'prepositions'");
    lex.prepositions = j.at("prepositions").get<std::vector<std::string>>();
    if (j.contains("relativizer")) lex.relativizer = j.at("relativizer").get<std::string>();
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("lexicon: bad field: ") + e.what());
  }
  lex.validate();
  return lex;
}

Lexicon Lexicon::load(const std::string& path) { return from_json(read_file(path)); }

std::string Lexicon::to_json() const {
  ojson j;
  j["animate_nouns"] = pairs_to(animate_nouns);
  j["inanimate_nouns"] = pairs_to(inanimate_nouns);
  j["trans_verbs"] = pairs_to(trans_verbs);
  j["intrans_verbs"] = pairs_to(intrans_verbs);
  j["prepositions"] = prepositions;
  j["relativizer"] = relativizer;
  return j.dump(2);
}

void Lexicon::validate() const {
  auto check_category = [](const std::vector<WordPair>& v, const char* name) {
    std::set<std::string> seen;
    for (const WordPair& p : v) {
      if (p.singular.empty() || p.plural.empty()) throw ConfigError(std::string("lexicon: empty form in ") + name);
      if (p.singular == p.plural) throw ConfigError(std::string("lexicon: identical number forms in ") + name + ": " + p.singular);
      if (!seen.insert(p.singular).second || !seen.insert(p.plural).second) {
        throw ConfigError(std::string("lexicon: duplicate form in ") + name + ": " + p.singular + "/" + p.plural);
      }
    }
  };
  check_category(animate_nouns, "animate_nouns");
  check_category(inanimate_nouns, "inanimate_nouns");
  check_category(trans_verbs, "trans_verbs");
  check_category(intrans_verbs, "intrans_verbs");
  std::set<std::string> preps(prepositions.begin(), prepositions.end());
  if (preps.size() != prepositions.size()) throw ConfigError("lexicon: duplicate preposition");
  // Building the inflection tables rejects forms shared across categories.
  try {
    (void)inflections();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("lexicon: ") + e.what());
  }
}

InflectionLexicon Lexicon::inflections() const {
  InflectionLexicon inf;
  for (const auto* cat : {&trans_verbs, &intrans_verbs})
    for (const WordPair& p : *cat) inf.add_verb(p.singular, p.plural);
  for (const auto* cat : {&animate_nouns, &inanimate_nouns})
    for (const WordPair& p : *cat) inf.add_noun(p.singular, p.plural);
  return inf;
}

// ------------------------------------------------------------ names

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::Simple: return "simple";
    case Condition::ShortVP: return "short_vp";
    case Condition::LongVP: return "long_vp";
    case Condition::WithinORC: return "within_orc";
    case Condition::WithinORCNoThat: return "within_orc_no_that";
    case Condition::AcrossPP: return "across_pp";
    case Condition::AcrossSRC: return "across_src";
    case Condition::AcrossORC: return "across_orc";
    case Condition::AcrossORCNoThat: return "across_orc_no_that";
  }
  return "?";
}

std::string_view to_string(Animacy a) {
  switch (a) {
    case Animacy::None: return "-";
    case Animacy::Animate: return "A";
    case Animacy::Inanimate: return "IA";
  }
  return "?";
}

std::string_view to_string(NumberCase c) {
  switch (c) {
    case NumberCase::SS: return "SS";
    case NumberCase::SP: return "SP";
    case NumberCase::PS: return "PS";
    case NumberCase::PP: return "PP";
  }
  return "?";
}

Condition parse_condition(std::string_view s) {
  for (Condition c : {Condition::Simple, Condition::ShortVP, Condition::LongVP, Condition::WithinORC,
                      Condition::WithinORCNoThat, Condition::AcrossPP, Condition::AcrossSRC, Condition::AcrossORC,
                      Condition::AcrossORCNoThat})
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown condition '" + std::string(s) + "'");
}

Animacy parse_animacy(std::string_view s) {
  for (Animacy a : {Animacy::None, Animacy::Animate, Animacy::Inanimate})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown animacy '" + std::string(s) + "'");
}

NumberCase parse_number_case(std::string_view s) {
  for (NumberCase c : {NumberCase::SS, NumberCase::SP, NumberCase::PS, NumberCase::PP})
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown number case '" + std::string(s) + "'");
}

std::string TseCondition::label() const {
  std::string name;
  switch (condition) {
    case Condition::Simple: name = "Simple"; break;
    case Condition::ShortVP: name = "Short VP"; break;
    case Condition::LongVP: name = "Long VP"; break;
    case Condition::WithinORC: name = "Within ORC"; break;
    case Condition::WithinORCNoThat: name = "Within no that ORC"; break;
    case Condition::AcrossPP: name = "Across PP"; break;
    case Condition::AcrossSRC: name = "Across SRC"; break;
    case Condition::AcrossORC: name = "Across ORC"; break;
    case Condition::AcrossORCNoThat: name = "Across no that ORC"; break;
  }
  if (animacy != Animacy::None) name += " (" + std::string(to_string(animacy)) + ")";
  return name;
}

std::vector<TseCondition> tse_conditions() {
  using C = Condition;
  using A = Animacy;
  return {{C::Simple, A::None},          {C::ShortVP, A::None},         {C::WithinORC, A::Animate},
          {C::WithinORC, A::Inanimate},  {C::WithinORCNoThat, A::Animate}, {C::WithinORCNoThat, A::Inanimate},
          {C::LongVP, A::None},          {C::AcrossPP, A::Animate},     {C::AcrossPP, A::Inanimate},
          {C::AcrossSRC, A::None},       {C::AcrossORC, A::Animate},    {C::AcrossORC, A::Inanimate},
          {C::AcrossORCNoThat, A::Animate}, {C::AcrossORCNoThat, A::Inanimate}};
}

// ------------------------------------------------------------ TSE generation

namespace {

struct Builder {
  std::vector<std::string> tokens;
  // Appends (possibly multi-word) text; returns the index of its last token.
  std::size_t add(const std::string& text) {
    for (std::string& t : tokenize(text)) tokens.push_back(std::move(t));
    return tokens.size() - 1;
  }
  std::size_t noun(const std::string& form) {
    add("the");
    return add(form);
  }
};

const std::string kLongVpFiller = "very often and also";

bool single_noun(Condition c) { return c == Condition::Simple || c == Condition::ShortVP || c == Condition::LongVP; }

GrammNumber main_number(NumberCase nc) {
  return nc == NumberCase::SS || nc == NumberCase::SP ? GrammNumber::Singular : GrammNumber::Plural;
}
GrammNumber embedded_number(NumberCase nc) {
  return nc == NumberCase::SS || nc == NumberCase::PS ? GrammNumber::Singular : GrammNumber::Plural;
}

std::vector<NumberCase> cases_for(Condition c) {
  if (single_noun(c)) return {NumberCase::SS, NumberCase::PP};
  return {NumberCase::SS, NumberCase::SP, NumberCase::PS, NumberCase::PP};
}

void check_condition(const TseCondition& c) {
  const bool has_animacy = c.animacy != Animacy::None;
  const bool wants_animacy = !(single_noun(c.condition) || c.condition == Condition::AcrossSRC);
  if (has_animacy != wants_animacy) {
    throw ConfigError("condition " + std::string(to_string(c.condition)) + " does not take animacy " +
                      std::string(to_string(c.animacy)));
  }
}

const std::vector<WordPair>& main_nouns(const Lexicon& lex, const TseCondition& c) {
  return c.animacy == Animacy::Inanimate ? lex.inanimate_nouns : lex.animate_nouns;
}

struct Slots {
  std::vector<std::string> names;
  std::vector<std::size_t> sizes;
};

Slots slots_for(const Lexicon& lex, const TseCondition& c) {
  const std::size_t mains = main_nouns(lex, c).size();
  const std::size_t an = lex.animate_nouns.size(), inan = lex.inanimate_nouns.size();
  const std::size_t vt = lex.trans_verbs.size(), vi = lex.intrans_verbs.size(), pp = lex.prepositions.size();
  switch (c.condition) {
    case Condition::Simple: return {{"main_noun", "main_verb"}, {mains, vi}};
    case Condition::ShortVP:
    case Condition::LongVP: return {{"main_noun", "first_verb", "main_verb"}, {mains, vi, vi}};
    case Condition::WithinORC:
    case Condition::WithinORCNoThat:
    case Condition::AcrossORC:
    case Condition::AcrossORCNoThat:
      return {{"main_noun", "embedded_noun", "embedded_verb", "main_verb"}, {mains, an, vt, vi}};
    case Condition::AcrossSRC: return {{"main_noun", "embedded_verb", "embedded_noun", "main_verb"}, {mains, vt, an, vi}};
    case Condition::AcrossPP: return {{"main_noun", "preposition", "embedded_noun", "main_verb"}, {mains, pp, inan, vi}};
  }
  return {};
}

TseItem build_item(const Lexicon& lex, const TseCondition& c, NumberCase nc, const std::vector<std::size_t>& idx) {
  const GrammNumber m = main_number(nc);
  const GrammNumber e = embedded_number(nc);
  const auto& mains = main_nouns(lex, c);
  Builder b;
  TseItem item;
  item.condition = c;
  item.number_case = nc;
  const std::string& rel = lex.relativizer;

  auto finish_across = [&](std::size_t subj, std::size_t emb_pos, const WordPair& verb) {
    item.subject_index = subj;
    item.subject_number = m;
    item.intervening = {{emb_pos, e}};
    item.verb_index = b.add(verb.form(m));
    item.correct_verb = verb.form(m);
    item.incorrect_verb = verb.form(flip(m));
    item.attractor_count = m != e ? 1 : 0;
  };

  switch (c.condition) {
    case Condition::Simple: {
      item.subject_index = b.noun(mains[idx[0]].form(m));
      const WordPair& v = lex.intrans_verbs[idx[1]];
      item.verb_index = b.add(v.form(m));
      item.correct_verb = v.form(m);
      item.incorrect_verb = v.form(flip(m));
      item.subject_number = m;
      break;
    }
    case Condition::ShortVP:
    case Condition::LongVP: {
      item.subject_index = b.noun(mains[idx[0]].form(m));
      b.add(lex.intrans_verbs[idx[1]].form(m));
      b.add(c.condition == Condition::LongVP ? kLongVpFiller : "and");
      const WordPair& v = lex.intrans_verbs[idx[2]];
      item.verb_index = b.add(v.form(m));
      item.correct_verb = v.form(m);
      item.incorrect_verb = v.form(flip(m));
      item.subject_number = m;
      break;
    }
    case Condition::WithinORC:
    case Condition::WithinORCNoThat: {
      b.noun(mains[idx[0]].form(m));
      if (c.condition == Condition::WithinORC) b.add(rel);
      item.subject_index = b.noun(lex.animate_nouns[idx[1]].form(e));
      item.subject_number = e;
      const WordPair& v = lex.trans_verbs[idx[2]];
      item.verb_index = b.add(v.form(e));
      item.correct_verb = v.form(e);
      item.incorrect_verb = v.form(flip(e));
      b.add(lex.intrans_verbs[idx[3]].form(m));
      break;
    }
    case Condition::AcrossORC:
    case Condition::AcrossORCNoThat: {
      const std::size_t subj = b.noun(mains[idx[0]].form(m));
      if (c.condition == Condition::AcrossORC) b.add(rel);
      const std::size_t emb = b.noun(lex.animate_nouns[idx[1]].form(e));
      b.add(lex.trans_verbs[idx[2]].form(e));
      finish_across(subj, emb, lex.intrans_verbs[idx[3]]);
      break;
    }
    case Condition::AcrossSRC: {
      const std::size_t subj = b.noun(mains[idx[0]].form(m));
      b.add(rel);
      b.add(lex.trans_verbs[idx[1]].form(m));
      const std::size_t emb = b.noun(lex.animate_nouns[idx[2]].form(e));
      finish_across(subj, emb, lex.intrans_verbs[idx[3]]);
      break;
    }
    case Condition::AcrossPP: {
      const std::size_t subj = b.noun(mains[idx[0]].form(m));
      b.add(lex.prepositions[idx[1]]);
      const std::size_t emb = b.noun(lex.inanimate_nouns[idx[2]].form(e));
      finish_across(subj, emb, lex.intrans_verbs[idx[3]]);
      break;
    }
  }
  item.tokens = std::move(b.tokens);
  return item;
}

}  // namespace

AnnotatedSentence TseItem::to_annotated() const {
  AnnotatedSentence s;
  s.tokens = tokens;
  s.subject_index = subject_index;
  s.verb_index = verb_index;
  s.nouns.push_back({subject_index, subject_number});
  for (const NounAnnotation& n : intervening) s.nouns.push_back(n);
  s.label = Label::Grammatical;
  return s;
}

std::size_t expected_item_count(const Lexicon& lex, const TseCondition& c) {
  check_condition(c);
  const Slots s = slots_for(lex, c);
  std::size_t n = cases_for(c.condition).size();
  for (std::size_t k : s.sizes) n *= k;
  return n;
}

std::vector<TseItem> generate_condition(const Lexicon& lex, const TseCondition& c) {
  check_condition(c);
  const Slots slots = slots_for(lex, c);
  for (std::size_t k = 0; k < slots.sizes.size(); ++k) {
    if (slots.sizes[k] == 0) {
      throw ConfigError("condition " + c.label() + ": lexicon slot '" + slots.names[k] + "' is empty");
    }
  }
  std::vector<TseItem> items;
  std::vector<std::size_t> idx(slots.sizes.size());
  for (NumberCase nc : cases_for(c.condition)) {
    std::fill(idx.begin(), idx.end(), 0);
    // Odometer over slot indices, last slot fastest.
    while (true) {
      items.push_back(build_item(lex, c, nc, idx));
      std::size_t k = idx.size();
      while (k > 0) {
        --k;
        if (++idx[k] < slots.sizes[k]) break;
        idx[k] = 0;
        if (k == 0) {
          k = idx.size() + 1;
          break;
        }
      }
      if (k == idx.size() + 1) break;
    }
  }
  return items;
}

std::string tse_item_to_jsonl(const TseItem& item) {
  ojson j;
  j["tokens"] = item.tokens;
  j["subject_index"] = item.subject_index;
  j["verb_index"] = item.verb_index;
  j["correct_verb"] = item.correct_verb;
  j["incorrect_verb"] = item.incorrect_verb;
  j["condition"] = std::string(to_string(item.condition.condition));
  j["animacy"] = std::string(to_string(item.condition.animacy));
  j["number_case"] = std::string(to_string(item.number_case));
  j["attractor_count"] = item.attractor_count;
  j["subject_number"] = std::string(to_string(item.subject_number));
  ojson inter = ojson::array();
  for (const NounAnnotation& n : item.intervening) inter.push_back(ojson::array({n.position, std::string(to_string(n.number))}));
  j["intervening"] = std::move(inter);
  return j.dump();
}

TseItem tse_item_from_json_line(const std::string& line, std::size_t line_no) {
  try {
    const ojson j = ojson::parse(line);
    TseItem item;
    item.tokens = j.at("tokens").get<std::vector<std::string>>();
    item.subject_index = j.at("subject_index").get<std::size_t>();
    item.verb_index = j.at("verb_index").get<std::size_t>();
    item.correct_verb = j.at("correct_verb").get<std::string>();
    item.incorrect_verb = j.at("incorrect_verb").get<std::string>();
    item.condition = {parse_condition(j.at("condition").get<std::string>()),
                      parse_animacy(j.at("animacy").get<std::string>())};
    item.number_case = parse_number_case(j.at("number_case").get<std::string>());
    item.attractor_count = j.at("attractor_count").get<std::size_t>();
    item.subject_number = j.at("subject_number").get<std::string>() == "sing" ? GrammNumber::Singular : GrammNumber::Plural;
    for (const ojson& n : j.at("intervening"))
      item.intervening.push_back({n.at(0).get<std::size_t>(),
                                  n.at(1).get<std::string>() == "sing" ? GrammNumber::Singular : GrammNumber::Plural});
    if (item.verb_index >= item.tokens.size() || item.tokens[item.verb_index] != item.correct_verb) {
      throw ParseError("tokens must carry correct_verb at verb_index", line_no);
    }
    return item;
  } catch (const ojson::exception& e) {
    throw ParseError(std::string("bad TSE item: ") + e.what(), line_no);
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), line_no);
  }
}

std::vector<TseItem> load_tse_jsonl(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<TseItem> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(tse_item_from_json_line(line, line_no));
  }
  return out;
}

void save_tse_jsonl(const std::string& path, const std::vector<TseItem>& items) {
  std::string text;
  for (const TseItem& it : items) {
    text += tse_item_to_jsonl(it);
    text += '\n';
  }
  write_file_atomic(path, text);
}

// ------------------------------------------------------------ training corpora

namespace {

enum class Attachment { PrepChain, SubjectRelative, ObjectRelative };

struct SentenceGen {
  const Lexicon& lex;
  const CorpusShape& shape;
  std::mt19937_64& rng;
  std::vector<const WordPair*> all_nouns;

  SentenceGen(const Lexicon& l, const CorpusShape& s, std::mt19937_64& r) : lex(l), shape(s), rng(r) {
    // Interleave the two noun classes so frequency ranks alternate between them.
    const std::size_t na = lex.animate_nouns.size(), ni = lex.inanimate_nouns.size();
    for (std::size_t i = 0; i < std::max(na, ni); ++i) {
      if (i < na) all_nouns.push_back(&lex.animate_nouns[i]);
      if (i < ni) all_nouns.push_back(&lex.inanimate_nouns[i]);
    }
  }

  std::size_t uniform(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }
  double unit() { return std::uniform_real_distribution<double>(0, 1)(rng); }
  // Word choice follows a Zipf law over lexicon order (uniform at exponent 0).
  std::map<std::size_t, std::discrete_distribution<std::size_t>> zipf;
  template <class T>
  const T& pick(const std::vector<T>& v) {
    if (shape.zipf_exponent == 0) return v[uniform(v.size())];
    auto it = zipf.find(v.size());
    if (it == zipf.end()) {
      std::vector<double> w(v.size());
      for (std::size_t r = 0; r < w.size(); ++r) w[r] = std::pow(static_cast<double>(r + 1), -shape.zipf_exponent);
      it = zipf.emplace(v.size(), std::discrete_distribution<std::size_t>(w.begin(), w.end())).first;
    }
    return v[it->second(rng)];
  }

  AnnotatedSentence make(std::size_t attractors) {
    const GrammNumber subj = unit() < shape.singular_fraction ? GrammNumber::Singular : GrammNumber::Plural;
    std::size_t inter = attractors;
    if (attractors == 0) {
      inter = unit() < shape.bare_fraction ? 0 : 1 + uniform(shape.max_intervening);
    } else if (attractors < shape.max_intervening && unit() >= shape.exact_fraction) {
      inter = attractors + 1 + uniform(shape.max_intervening - attractors);
    }
    std::vector<bool> is_attr(inter, false);
    std::fill(is_attr.begin(), is_attr.begin() + static_cast<std::ptrdiff_t>(attractors), true);
    std::shuffle(is_attr.begin(), is_attr.end(), rng);
    std::vector<GrammNumber> nums(inter);
    for (std::size_t i = 0; i < inter; ++i) nums[i] = is_attr[i] ? flip(subj) : subj;

    Builder b;
    AnnotatedSentence s;
    if (unit() < shape.fronted_fraction) {
      b.add(pick(lex.prepositions));
      b.noun(pick(all_nouns)->form(unit() < 0.5 ? GrammNumber::Singular : GrammNumber::Plural));
    }
    s.subject_index = b.noun(pick(all_nouns)->form(subj));
    s.nouns.push_back({s.subject_index, subj});
    auto prep_noun = [&](GrammNumber n) {
      b.add(pick(lex.prepositions));
      s.nouns.push_back({b.noun(pick(all_nouns)->form(n)), n});
    };

    if (inter > 0) {
      const double r = unit();
      const double pp = 1 - shape.relative_fraction;
      const Attachment how = r < pp                                 ? Attachment::PrepChain
                             : r < pp + shape.relative_fraction / 2 ? Attachment::SubjectRelative
                                                                    : Attachment::ObjectRelative;
      switch (how) {
        case Attachment::PrepChain:
          for (GrammNumber n : nums) prep_noun(n);
          break;
        case Attachment::SubjectRelative:
          b.add(lex.relativizer);
          b.add(pick(lex.trans_verbs).form(subj));
          s.nouns.push_back({b.noun(pick(lex.animate_nouns).form(nums[0])), nums[0]});
          for (std::size_t i = 1; i < inter; ++i) prep_noun(nums[i]);
          break;
        case Attachment::ObjectRelative:
          if (unit() >= shape.bare_orc_fraction) b.add(lex.relativizer);
          s.nouns.push_back({b.noun(pick(lex.animate_nouns).form(nums[0])), nums[0]});
          for (std::size_t i = 1; i < inter; ++i) prep_noun(nums[i]);
          b.add(pick(lex.trans_verbs).form(nums[0]));
          break;
      }
    }
    if (unit() < 0.5) {
      s.verb_index = b.add(pick(lex.intrans_verbs).form(subj));
    } else {
      s.verb_index = b.add(pick(lex.trans_verbs).form(subj));
      b.noun(pick(all_nouns)->form(unit() < 0.5 ? GrammNumber::Singular : GrammNumber::Plural));
    }
    if (unit() < shape.clause_fraction) {
      const GrammNumber n = unit() < 0.5 ? GrammNumber::Singular : GrammNumber::Plural;
      b.add("and");
      b.noun(pick(all_nouns)->form(n));
      b.add(pick(lex.intrans_verbs).form(n));
    }
    s.tokens = std::move(b.tokens);
    s.label = Label::Grammatical;
    return s;
  }
};

void require_nonempty(const Lexicon& lex) {
  if (lex.animate_nouns.empty() || lex.inanimate_nouns.empty() || lex.trans_verbs.empty() || lex.intrans_verbs.empty() ||
      lex.prepositions.empty()) {
    throw ConfigError("training corpus generation needs every lexicon category to be nonempty");
  }
}

}  // namespace

Corpus generate_training_corpus(const Lexicon& lex, const AttractorProfile& distribution, std::size_t n,
                                std::uint64_t seed, const CorpusShape& shape) {
  require_nonempty(lex);
  double total = 0;
  for (double p : distribution) {
    if (p < 0) throw ConfigError("attractor distribution has a negative entry");
    total += p;
  }
  if (std::abs(total - 1) > 1e-6) throw ConfigError("attractor distribution must sum to 1 (got " + std::to_string(total) + ")");
  for (std::size_t k = 0; k < distribution.size(); ++k) {
    if (distribution[k] > 0 && k > shape.max_intervening) {
      throw ConfigError("cannot realize " + std::to_string(k) + " attractors with at most " +
                        std::to_string(shape.max_intervening) + " intervening nouns");
    }
  }
  if (shape.max_intervening == 0 && distribution[0] < 1) throw ConfigError("max_intervening must be positive");

  std::mt19937_64 rng(seed);
  SentenceGen gen(lex, shape, rng);
  std::discrete_distribution<std::size_t> draw(distribution.begin(), distribution.end());
  Corpus out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen.make(draw(rng)));
  return out;
}

Corpus finetune_set(const Lexicon& lex, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("finetune_set: n must be positive");
  require_nonempty(lex);
  std::vector<const WordPair*> nouns;
  for (const auto& w : lex.animate_nouns) nouns.push_back(&w);
  for (const auto& w : lex.inanimate_nouns) nouns.push_back(&w);
  const std::size_t capacity =
      nouns.size() * 2 * lex.prepositions.size() * lex.inanimate_nouns.size() * lex.intrans_verbs.size();
  if (n > capacity) {
    throw ConfigError("finetune_set: only " + std::to_string(capacity) + " distinct items exist for this lexicon");
  }
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t k) { return std::uniform_int_distribution<std::size_t>(0, k - 1)(rng); };
  std::set<std::vector<std::string>> seen;
  Corpus out;
  while (out.size() < n) {
    const GrammNumber m = pick(2) == 0 ? GrammNumber::Singular : GrammNumber::Plural;
    const GrammNumber e = flip(m);
    Builder b;
    AnnotatedSentence s;
    s.subject_index = b.noun(nouns[pick(nouns.size())]->form(m));
    b.add(lex.prepositions[pick(lex.prepositions.size())]);
    const std::size_t emb = b.noun(lex.inanimate_nouns[pick(lex.inanimate_nouns.size())].form(e));
    s.verb_index = b.add(lex.intrans_verbs[pick(lex.intrans_verbs.size())].form(m));
    s.nouns = {{s.subject_index, m}, {emb, e}};
    s.tokens = std::move(b.tokens);
    if (!seen.insert(s.tokens).second) continue;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace sva
