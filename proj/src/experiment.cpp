#include "sva/experiment.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sva/io.hpp"
#include "sva/rsa.hpp"

namespace sva {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::mutex log_mutex;

template <class... Args>
void log(const Args&... args) {
  std::ostringstream s;
  s << "[sva] ";
  (s << ... << args);
  s << '\n';
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << s.str();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string arch_name(CellKind k) { return std::string(to_string(k)); }

// ------------------------------------------------------------ config parsing

void check_keys(const ojson& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

AttractorProfile profile_from(const ojson& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw ConfigError(where + ": expected four shares for 0..3 attractors");
  AttractorProfile p{};
  for (std::size_t i = 0; i < 4; ++i) p[i] = j.at(i).get<double>();
  return p;
}

ojson profile_to(const AttractorProfile& p) { return ojson::array({p[0], p[1], p[2], p[3]}); }

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    check_keys(j,
               {"out", "preset", "lexicon", "tse_lexicon", "verbs_tsv", "nouns_tsv", "corpus", "architectures", "objectives",
                "sampling", "seeds", "train", "finetune", "jobs", "mds_seed"},
               "config");
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("preset")) c.preset = j["preset"].get<std::string>();
    if (j.contains("lexicon")) c.lexicon = j["lexicon"].get<std::string>();
    if (j.contains("tse_lexicon")) c.tse_lexicon = j["tse_lexicon"].get<std::string>();
    if (j.contains("verbs_tsv")) c.verbs_tsv = j["verbs_tsv"].get<std::string>();
    if (j.contains("nouns_tsv")) c.nouns_tsv = j["nouns_tsv"].get<std::string>();
    if (j.contains("corpus")) {
      const ojson& k = j["corpus"];
      check_keys(k,
                 {"pool_size", "train_size", "test_size", "probe_size", "seed", "pool_profile", "test_profile",
                  "selective_profile", "jsonl"},
                 "config.corpus");
      if (k.contains("pool_size")) c.corpus.pool_size = k["pool_size"].get<std::size_t>();
      if (k.contains("train_size")) c.corpus.train_size = k["train_size"].get<std::size_t>();
      if (k.contains("test_size")) c.corpus.test_size = k["test_size"].get<std::size_t>();
      if (k.contains("probe_size")) c.corpus.probe_size = k["probe_size"].get<std::size_t>();
      if (k.contains("seed")) c.corpus.seed = k["seed"].get<std::uint64_t>();
      if (k.contains("pool_profile")) c.corpus.pool_profile = profile_from(k["pool_profile"], "config.corpus.pool_profile");
      if (k.contains("test_profile")) c.corpus.test_profile = profile_from(k["test_profile"], "config.corpus.test_profile");
      if (k.contains("selective_profile"))
        c.corpus.selective_profile = profile_from(k["selective_profile"], "config.corpus.selective_profile");
      if (k.contains("jsonl")) c.corpus.jsonl = k["jsonl"].get<std::string>();
    }
    if (j.contains("architectures")) {
      c.architectures.clear();
      for (const auto& a : j["architectures"]) c.architectures.push_back(parse_cell_kind(a.get<std::string>()));
    }
    if (j.contains("objectives")) {
      c.objectives.clear();
      for (const auto& a : j["objectives"]) c.objectives.push_back(parse_head(a.get<std::string>()));
    }
    if (j.contains("sampling")) {
      c.sampling.clear();
      for (const auto& a : j["sampling"]) c.sampling.push_back(parse_sampling(a.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("train")) {
      const ojson& t = j["train"];
      check_keys(t,
                 {"layers", "hidden", "embed", "batch", "epochs", "dropout", "lr", "clip_norm", "clip",
                  "augmentation"},
                 "config.train");
      auto sz = [&](const char* key, std::optional<std::size_t>& dst) {
        if (t.contains(key)) dst = t[key].get<std::size_t>();
      };
      auto rl = [&](const char* key, std::optional<real>& dst) {
        if (t.contains(key)) dst = t[key].get<real>();
      };
      sz("layers", c.train.layers);
      sz("hidden", c.train.hidden);
      sz("embed", c.train.embed);
      sz("batch", c.train.batch);
      sz("epochs", c.train.epochs);
      rl("dropout", c.train.dropout);
      rl("lr", c.train.lr);
      rl("clip_norm", c.train.clip_norm);
      if (t.contains("clip")) c.train.clip = t["clip"].get<bool>();
      if (t.contains("augmentation")) c.train.augmentation = t["augmentation"].get<bool>();
    }
    if (j.contains("finetune")) {
      const ojson& f = j["finetune"];
      check_keys(f, {"sizes", "epochs", "seed"}, "config.finetune");
      if (f.contains("sizes")) c.finetune.sizes = f["sizes"].get<std::vector<std::size_t>>();
      if (f.contains("epochs")) c.finetune.epochs = f["epochs"].get<std::vector<std::size_t>>();
      if (f.contains("seed")) c.finetune.seed = f["seed"].get<std::uint64_t>();
    }
    if (j.contains("jobs")) c.jobs = j["jobs"].get<std::size_t>();
    if (j.contains("mds_seed")) c.mds_seed = j["mds_seed"].get<std::uint64_t>();
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("config: bad value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return from_json(read_file(path)); }

std::string ExperimentConfig::to_json() const {
  ojson j;
  j["out"] = out;
  j["preset"] = preset;
  if (lexicon) j["lexicon"] = *lexicon;
  if (tse_lexicon) j["tse_lexicon"] = *tse_lexicon;
  if (verbs_tsv) j["verbs_tsv"] = *verbs_tsv;
  if (nouns_tsv) j["nouns_tsv"] = *nouns_tsv;
  ojson k;
  k["pool_size"] = corpus.pool_size;
  k["train_size"] = corpus.train_size;
  k["test_size"] = corpus.test_size;
  k["probe_size"] = corpus.probe_size;
  k["seed"] = corpus.seed;
  k["pool_profile"] = profile_to(corpus.pool_profile);
  k["test_profile"] = profile_to(corpus.test_profile);
  if (corpus.selective_profile) k["selective_profile"] = profile_to(*corpus.selective_profile);
  if (corpus.jsonl) k["jsonl"] = *corpus.jsonl;
  j["corpus"] = k;
  j["architectures"] = ojson::array();
  for (CellKind a : architectures) j["architectures"].push_back(lower(to_string(a)));
  j["objectives"] = ojson::array();
  for (Head h : objectives) j["objectives"].push_back(std::string(to_string(h)));
  j["sampling"] = ojson::array();
  for (SamplingPolicy s : sampling) j["sampling"].push_back(std::string(to_string(s)));
  j["seeds"] = seeds;
  ojson t = ojson::object();
  if (train.layers) t["layers"] = *train.layers;
  if (train.hidden) t["hidden"] = *train.hidden;
  if (train.embed) t["embed"] = *train.embed;
  if (train.batch) t["batch"] = *train.batch;
  if (train.epochs) t["epochs"] = *train.epochs;
  if (train.dropout) t["dropout"] = *train.dropout;
  if (train.lr) t["lr"] = *train.lr;
  if (train.clip_norm) t["clip_norm"] = *train.clip_norm;
  if (train.clip) t["clip"] = *train.clip;
  if (train.augmentation) t["augmentation"] = *train.augmentation;
  j["train"] = t;
  j["finetune"] = {{"sizes", finetune.sizes}, {"epochs", finetune.epochs}, {"seed", finetune.seed}};
  j["jobs"] = jobs;
  j["mds_seed"] = mds_seed;
  return j.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
  if (out.empty()) throw ConfigError("config: output directory is empty");
  if (preset != "desk" && preset != "paper") throw ConfigError("config: preset must be 'desk' or 'paper'");
  if (architectures.empty() || objectives.empty() || sampling.empty() || seeds.empty()) {
    throw ConfigError("config: architectures, objectives, sampling and seeds must be nonempty");
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("config: seeds must be distinct");
  }
  for (const auto* p : {&lexicon, &verbs_tsv, &nouns_tsv, &corpus.jsonl}) {
    if (*p && !fs::exists(**p)) throw ConfigError("config: file not found: " + **p);
  }
  if (tse_lexicon && *tse_lexicon != "builtin" && !fs::exists(*tse_lexicon)) {
    throw ConfigError("config: file not found: " + *tse_lexicon);
  }
  if (verbs_tsv.has_value() != nouns_tsv.has_value()) throw ConfigError("config: verbs_tsv and nouns_tsv go together");
  if (corpus.train_size == 0 || corpus.test_size == 0) throw ConfigError("config: train_size and test_size must be positive");
  if (corpus.probe_size < 2 || corpus.probe_size > corpus.test_size) {
    throw ConfigError("config: probe_size must lie in [2, test_size]");
  }
  if (!corpus.jsonl && corpus.pool_size < corpus.train_size) throw ConfigError("config: pool_size is below train_size");
  if (corpus.selective_profile && (*corpus.selective_profile)[0] > 0) {
    throw ConfigError("config: a selective profile cannot put mass on sentences without attractors");
  }
  for (std::size_t e : finetune.epochs)
    if (e == 0) throw ConfigError("config: fine-tuning epochs must be positive");
  for (std::size_t n : finetune.sizes)
    if (n == 0) throw ConfigError("config: fine-tuning sizes must be positive");
  // Surface bad hyperparameters before any work starts.
  for (CellKind k : architectures)
    for (Head h : objectives) train_config(k, h, seeds.front()).validate();
}

TrainConfig ExperimentConfig::train_config(CellKind kind, Head objective, std::uint64_t seed) const {
  TrainConfig c = preset == "paper" ? TrainConfig::paper(objective, kind) : TrainConfig::desk(objective, kind);
  if (train.layers) c.layers = *train.layers;
  if (train.hidden) c.hidden = *train.hidden;
  if (train.embed) c.embed = *train.embed;
  if (train.batch) c.batch = *train.batch;
  if (train.epochs) c.epochs = *train.epochs;
  if (train.dropout) c.dropout = *train.dropout;
  if (train.lr) c.lr = *train.lr;
  if (train.clip_norm) c.clip_norm = *train.clip_norm;
  if (train.clip && !*train.clip) c.clip_norm.reset();
  if (train.augmentation) c.augmentation = *train.augmentation;
  c.seed = seed;
  return c;
}

std::string GridCell::id() const {
  return lower(to_string(kind)) + "-" + std::string(to_string(objective)) + "-" + std::string(to_string(sampling)) +
         "-s" + std::to_string(seed);
}

std::vector<GridCell> grid(const ExperimentConfig& cfg) {
  std::vector<GridCell> cells;
  for (Head h : cfg.objectives)
    for (CellKind k : cfg.architectures)
      for (SamplingPolicy s : cfg.sampling)
        for (std::uint64_t seed : cfg.seeds) cells.push_back({k, h, s, seed});
  return cells;
}

std::string Layout::data(const std::string& name) const { return (fs::path(root) / "data" / name).string(); }
std::string Layout::report(const std::string& name) const { return (fs::path(root) / "reports" / name).string(); }
std::string Layout::cell_dir(const GridCell& c) const { return (fs::path(root) / "models" / c.id()).string(); }
std::string Layout::checkpoint(const GridCell& c) const { return (fs::path(cell_dir(c)) / "checkpoint.json").string(); }
std::string Layout::loss_trace(const GridCell& c) const { return (fs::path(cell_dir(c)) / "loss.csv").string(); }

std::string attractor_summary_csv(const Corpus& natural, const Corpus& selective) {
  auto shares = [](const Corpus& c) {
    std::array<std::size_t, kAttractorBuckets> n{};
    for (const AnnotatedSentence& s : c) n[std::min(count_attractors(s), kAttractorBuckets - 1)] += 1;
    return n;
  };
  const auto a = shares(natural), b = shares(selective);
  std::string out = "attractor_count,natural_n,natural_share,selective_n,selective_share\n";
  for (std::size_t k = 0; k < kAttractorBuckets; ++k) {
    auto share = [](std::size_t x, std::size_t total) {
      return total == 0 ? 0.0 : static_cast<double>(x) / static_cast<double>(total);
    };
    out += std::to_string(k) + "," + std::to_string(a[k]) + "," + fmt_real(share(a[k], natural.size())) + "," +
           std::to_string(b[k]) + "," + fmt_real(share(b[k], selective.size())) + "\n";
  }
  return out;
}

namespace {

// ------------------------------------------------------------ shared data

Lexicon load_lexicon(const ExperimentConfig& cfg) {
  return cfg.lexicon ? Lexicon::load(*cfg.lexicon) : Lexicon::builtin();
}

InflectionLexicon load_inflections(const ExperimentConfig& cfg, const Lexicon& lex) {
  if (cfg.verbs_tsv) return InflectionLexicon::load_tsv(*cfg.verbs_tsv, *cfg.nouns_tsv);
  return lex.inflections();
}

std::string train_file(SamplingPolicy s) { return "train_" + std::string(to_string(s)) + ".jsonl"; }
std::string finetune_file(std::size_t n) { return "finetune_" + std::to_string(n) + ".jsonl"; }

struct Data {
  Lexicon lex;
  InflectionLexicon infl;
  Vocabulary vocab;
  Layout layout;
};

Data load_data(const ExperimentConfig& cfg) {
  Data d{load_lexicon(cfg), {}, {}, {cfg.out}};
  d.infl = load_inflections(cfg, d.lex);
  const std::string vpath = d.layout.data("vocab.txt");
  if (!fs::exists(vpath)) throw ConfigError("missing " + vpath + "; run `gen` first");
  std::vector<std::string> words;
  std::istringstream in(read_file(vpath));
  for (std::string w; std::getline(in, w);)
    if (!w.empty()) words.push_back(w);
  d.vocab = Vocabulary(std::move(words));
  return d;
}

Corpus load_corpus(const Layout& layout, const std::string& name) {
  const std::string path = layout.data(name);
  if (!fs::exists(path)) throw ConfigError("missing " + path + "; run `gen` first");
  std::size_t dropped = 0;
  Corpus c = load_jsonl(path, &dropped);
  if (dropped > 0) log(name, ": dropped ", dropped, " sentences that failed validation");
  return c;
}

// Counterfactually balanced classifier test set.
Corpus balanced_test(const Corpus& test, const InflectionLexicon& infl) {
  Corpus out;
  for (const AnnotatedSentence& s : test) {
    if (auto flipped = counterfactual_augment(s, infl)) {
      out.push_back(s);
      out.push_back(std::move(*flipped));
    }
  }
  return out;
}

std::optional<Checkpoint> try_load(const std::string& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    log(path, ": unreadable checkpoint (", e.what(), ")");
    return std::nullopt;
  }
}

bool matches(const Checkpoint& ck, const GridCell& cell, const TrainConfig& tc, const Vocabulary& vocab) {
  const StackedModel& m = ck.model;
  return m.kind == cell.kind && m.head == cell.objective && m.seed == cell.seed &&
         m.sizes == ModelSizes{vocab.size(), tc.embed, tc.hidden, tc.layers} && ck.vocab == vocab.words();
}

// Loads every checkpoint in `cells`; absent ones are listed on stderr.
struct Loaded {
  std::vector<GridCell> cells;
  std::vector<Checkpoint> models;
  std::vector<std::string> missing;
};

Loaded load_cells(const std::vector<GridCell>& cells, const Layout& layout) {
  Loaded l;
  for (const GridCell& c : cells) {
    if (auto ck = try_load(layout.checkpoint(c))) {
      l.cells.push_back(c);
      l.models.push_back(std::move(*ck));
    } else {
      l.missing.push_back(c.id());
    }
  }
  if (!l.missing.empty()) {
    std::string list;
    for (const std::string& m : l.missing) list += " " + m;
    log("missing checkpoints (", l.missing.size(), "):", list);
  }
  return l;
}

std::vector<GridCell> lm_cells(const ExperimentConfig& cfg) {
  std::vector<GridCell> out;
  for (const GridCell& c : grid(cfg))
    if (c.objective == Head::LanguageModel) out.push_back(c);
  return out;
}

// Runs fn(i) for i in [0, n) on a bounded pool of workers. With more than one
// worker each gets a single OpenMP thread.
void run_pool(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      omp_set_num_threads(1);
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (std::thread& t : workers) t.join();
}

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

template <class F>
int guarded(const char* name, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    log(name, ": ", e.what());
    return 1;
  }
}

}  // namespace

// ------------------------------------------------------------ gen

int cmd_gen(const ExperimentConfig& cfg) {
  return guarded("gen", [&] {
    cfg.validate();
    const Layout layout{cfg.out};
    const Lexicon lex = load_lexicon(cfg);
    lex.validate();
    const CorpusSpec& cs = cfg.corpus;

    Corpus pool, test;
    if (cs.jsonl) {
      std::size_t dropped = 0;
      Corpus all = load_jsonl(*cs.jsonl, &dropped);
      if (dropped > 0) log("corpus: dropped ", dropped, " sentences that failed validation");
      if (all.size() <= cs.test_size) throw ConfigError("corpus: JSONL pool is too small to hold out a test set");
      std::vector<std::size_t> idx(all.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::mt19937_64 rng(cs.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t i = 0; i < idx.size(); ++i) (i < cs.test_size ? test : pool).push_back(all[idx[i]]);
    } else {
      pool = generate_training_corpus(lex, cs.pool_profile, cs.pool_size, cs.seed);
      test = generate_training_corpus(lex, cs.test_profile, cs.test_size, cs.seed + 3);
    }

    std::map<SamplingPolicy, Corpus> splits;
    for (SamplingPolicy s : {SamplingPolicy::Natural, SamplingPolicy::Selective}) {
      if (s == SamplingPolicy::Selective && cs.selective_profile) {
        splits[s] = generate_training_corpus(lex, *cs.selective_profile, cs.train_size, cs.seed + 2);
      } else {
        try {
          splits[s] = sample_split(pool, s, cs.train_size, cs.seed + 1);
        } catch (const CapacityError& e) {
          throw ConfigError(std::string(to_string(s)) + " split: " + e.what() + " (only " +
                            std::to_string(e.available()) + " eligible sentences)");
        }
      }
    }
    const Corpus probe = sample_split(test, SamplingPolicy::Natural, cs.probe_size, cs.seed + 4);

    const Lexicon tse_lex = !cfg.tse_lexicon                ? lex
                            : *cfg.tse_lexicon == "builtin" ? Lexicon::builtin()
                                                            : Lexicon::load(*cfg.tse_lexicon);
    std::vector<TseItem> tse;
    for (const TseCondition& c : tse_conditions()) {
      std::vector<TseItem> items = generate_condition(tse_lex, c);
      tse.insert(tse.end(), items.begin(), items.end());
    }
    std::map<std::size_t, Corpus> ft;
    for (std::size_t n : cfg.finetune.sizes) ft[n] = finetune_set(lex, n, cfg.finetune.seed);

    // Vocabulary over everything the models can meet, plus every lexicon form.
    Corpus everything = pool;
    everything.insert(everything.end(), test.begin(), test.end());
    for (const auto& [s, c] : splits) everything.insert(everything.end(), c.begin(), c.end());
    for (const TseItem& it : tse) everything.push_back(it.to_annotated());
    for (const auto& [n, c] : ft) everything.insert(everything.end(), c.begin(), c.end());
    AnnotatedSentence forms;
    for (const Lexicon* l : {&lex, &tse_lex})
      for (const auto* cat : {&l->animate_nouns, &l->inanimate_nouns, &l->trans_verbs, &l->intrans_verbs})
        for (const WordPair& p : *cat) {
          forms.tokens.push_back(p.singular);
          forms.tokens.push_back(p.plural);
        }
    everything.push_back(forms);
    const Vocabulary vocab = Vocabulary::build(everything);

    std::string vtext;
    for (const std::string& w : vocab.words()) vtext += w + "\n";
    write_file_atomic(layout.data("vocab.txt"), vtext);
    write_file_atomic(layout.data("lexicon.json"), lex.to_json() + "\n");
    for (const auto& [s, c] : splits) save_jsonl(layout.data(train_file(s)), c);
    save_jsonl(layout.data("test.jsonl"), test);
    save_jsonl(layout.data("probe.jsonl"), probe);
    save_tse_jsonl(layout.data("tse.jsonl"), tse);
    for (const auto& [n, c] : ft) save_jsonl(layout.data(finetune_file(n)), c);
    const std::string summary =
        attractor_summary_csv(splits.at(SamplingPolicy::Natural), splits.at(SamplingPolicy::Selective));
    write_file_atomic(layout.data("attractor_summary.csv"), summary);
    write_file_atomic((fs::path(cfg.out) / "config.json").string(), cfg.to_json());

    std::cout << summary;
    log("gen: vocab ", vocab.size(), ", test ", test.size(), ", probes ", probe.size(), ", TSE items ", tse.size());
    return 0;
  });
}

// ------------------------------------------------------------ train

int cmd_train(const ExperimentConfig& cfg) {
  return guarded("train", [&] {
    cfg.validate();
    const Data d = load_data(cfg);
    const std::vector<GridCell> cells = grid(cfg);

    std::map<SamplingPolicy, Corpus> splits;
    for (SamplingPolicy s : cfg.sampling) splits[s] = load_corpus(d.layout, train_file(s));

    std::vector<char> ok(cells.size(), 0);
    run_pool(cells.size(), cfg.jobs, [&](std::size_t i) {
      const GridCell& cell = cells[i];
      const TrainConfig tc = cfg.train_config(cell.kind, cell.objective, cell.seed);
      try {
        if (auto ck = try_load(d.layout.checkpoint(cell))) {
          if (matches(*ck, cell, tc, d.vocab)) {
            log(cell.id(), ": up to date");
            ok[i] = 1;
            return;
          }
          log(cell.id(), ": checkpoint does not match the config; retraining");
        }
        std::vector<Example> data;
        if (cell.objective == Head::LanguageModel) {
          data = encode_corpus(splits.at(cell.sampling), d.vocab);
        } else {
          const ClassifierSet set = build_classifier_set(splits.at(cell.sampling), d.infl, tc.augmentation, cell.seed);
          if (set.skipped > 0) log(cell.id(), ": ", set.skipped, " sentences without an inflectable verb skipped");
          data = encode_corpus(set.sentences, d.vocab);
        }
        StackedModel model = init_for(cell.kind, tc, d.vocab.size());
        const TrainResult r = train(model, data, tc);
        write_file_atomic(d.layout.loss_trace(cell), loss_trace_csv(r));
        save_checkpoint(d.layout.checkpoint(cell), model, d.vocab.words());
        log(cell.id(), ": trained ", tc.epochs, " epochs on ", data.size(), " instances, final loss ",
            fmt_real(r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back(), 4));
        ok[i] = 1;
      } catch (const std::exception& e) {
        log(cell.id(), ": failed: ", e.what());
      }
    });
    const auto good = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
    log("train: ", good, "/", cells.size(), " cells ready");
    return good == cells.size() ? 0 : 1;
  });
}

// ------------------------------------------------------------ eval

int cmd_eval(const ExperimentConfig& cfg) {
  return guarded("eval", [&] {
    cfg.validate();
    const Data d = load_data(cfg);
    const Corpus test = load_corpus(d.layout, "test.jsonl");
    const Corpus balanced = balanced_test(test, d.infl);
    const Loaded l = load_cells(grid(cfg), d.layout);

    std::vector<EvalReport> reports(l.cells.size());
    run_pool(l.cells.size(), cfg.jobs, [&](std::size_t i) {
      const StackedModel& m = l.models[i].model;
      reports[i] = m.head == Head::LanguageModel ? eval_lm_agreement(m, d.vocab, test, d.infl)
                                                 : eval_classifier(m, d.vocab, balanced);
    });

    std::string rows = eval_csv_header();
    std::map<std::array<std::string, 3>, std::vector<EvalReport>> groups;
    std::vector<std::array<std::string, 3>> order;
    for (std::size_t i = 0; i < l.cells.size(); ++i) {
      const GridCell& c = l.cells[i];
      const std::array<std::string, 3> key{arch_name(c.kind), std::string(to_string(c.objective)),
                                           std::string(to_string(c.sampling))};
      rows += eval_csv_rows(key[0], key[1], key[2], c.seed, reports[i]);
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(reports[i]);
    }
    std::string summary = "architecture,objective,sampling,attractor_count,mean_accuracy,std_accuracy,seeds\n";
    for (const auto& key : order) {
      const auto s = summarize(groups[key]);
      for (std::size_t b = 0; b < kAttractorBuckets; ++b) {
        summary += key[0] + "," + key[1] + "," + key[2] + "," + std::to_string(b) + "," + fmt_real(s[b].mean) + "," +
                   fmt_real(s[b].std) + "," + std::to_string(s[b].n) + "\n";
      }
    }
    write_file_atomic(d.layout.report("eval.csv"), rows);
    write_file_atomic(d.layout.report("eval_summary.csv"), summary);
    log("eval: ", l.cells.size(), " models evaluated");
    return l.missing.empty() ? 0 : 1;
  });
}

// ------------------------------------------------------------ tse

int cmd_tse(const ExperimentConfig& cfg) {
  return guarded("tse", [&] {
    cfg.validate();
    const Data d = load_data(cfg);
    const std::string path = d.layout.data("tse.jsonl");
    if (!fs::exists(path)) throw ConfigError("missing " + path + "; run `gen` first");
    const std::vector<TseItem> items = load_tse_jsonl(path);
    std::vector<AgreementProbe> probes;
    std::vector<std::size_t> probe_item;
    std::size_t excluded = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (auto p = make_probe(items[i], d.vocab)) {
        probes.push_back(std::move(*p));
        probe_item.push_back(i);
      } else {
        ++excluded;
      }
    }
    if (excluded > 0) log("tse: ", excluded, " items excluded (verb form outside the vocabulary)");

    const Loaded l = load_cells(lm_cells(cfg), d.layout);
    std::vector<std::vector<bool>> verdicts(l.cells.size());
    run_pool(l.cells.size(), cfg.jobs, [&](std::size_t i) { verdicts[i] = judge_probes(l.models[i].model, probes); });

    // (architecture, sampling) -> (condition row, number case) -> per-seed accuracy
    using RowKey = std::tuple<std::size_t, std::size_t>;  // tse_conditions() index, NumberCase
    const std::vector<TseCondition> conds = tse_conditions();
    auto cond_index = [&](const TseCondition& c) {
      return static_cast<std::size_t>(std::find(conds.begin(), conds.end(), c) - conds.begin());
    };
    std::map<std::pair<std::string, std::string>, std::map<RowKey, std::vector<double>>> per_case;
    std::map<std::pair<std::string, std::string>, std::map<std::size_t, std::vector<double>>> per_cond;
    std::vector<std::pair<std::string, std::string>> order;
    std::map<RowKey, std::size_t> case_n;
    std::map<std::size_t, std::size_t> cond_n;
    for (std::size_t i = 0; i < l.cells.size(); ++i) {
      const auto key = std::make_pair(arch_name(l.cells[i].kind), std::string(to_string(l.cells[i].sampling)));
      if (!per_case.count(key)) order.push_back(key);
      std::map<RowKey, std::pair<std::size_t, std::size_t>> hits;
      std::map<std::size_t, std::pair<std::size_t, std::size_t>> chits;
      for (std::size_t p = 0; p < probes.size(); ++p) {
        const TseItem& it = items[probe_item[p]];
        const std::size_t ci = cond_index(it.condition);
        auto& h = hits[{ci, static_cast<std::size_t>(it.number_case)}];
        h.first += verdicts[i][p];
        h.second += 1;
        auto& ch = chits[ci];
        ch.first += verdicts[i][p];
        ch.second += 1;
      }
      for (const auto& [rk, h] : hits) {
        per_case[key][rk].push_back(static_cast<double>(h.first) / static_cast<double>(h.second));
        case_n[rk] = h.second;
      }
      for (const auto& [ci, h] : chits) {
        per_cond[key][ci].push_back(static_cast<double>(h.first) / static_cast<double>(h.second));
        cond_n[ci] = h.second;
      }
    }

    std::string rows = "architecture,sampling,condition,animacy,number_case,accuracy,std,n,seeds\n";
    std::string summary = "architecture,sampling,condition,animacy,accuracy,std,n,seeds\n";
    for (const auto& key : order) {
      for (const auto& [rk, accs] : per_case[key]) {
        const TseCondition& c = conds[std::get<0>(rk)];
        rows += key.first + "," + key.second + "," + std::string(to_string(c.condition)) + "," +
                std::string(to_string(c.animacy)) + "," +
                std::string(to_string(static_cast<NumberCase>(std::get<1>(rk)))) + "," + fmt_real(mean_of(accs)) +
                "," + fmt_real(sample_std(accs)) + "," + std::to_string(case_n[rk]) + "," +
                std::to_string(accs.size()) + "\n";
      }
      for (const auto& [ci, accs] : per_cond[key]) {
        const TseCondition& c = conds[ci];
        summary += key.first + "," + key.second + "," + std::string(to_string(c.condition)) + "," +
                   std::string(to_string(c.animacy)) + "," + fmt_real(mean_of(accs)) + "," +
                   fmt_real(sample_std(accs)) + "," + std::to_string(cond_n[ci]) + "," +
                   std::to_string(accs.size()) + "\n";
      }
    }
    write_file_atomic(d.layout.report("tse.csv"), rows);
    write_file_atomic(d.layout.report("tse_summary.csv"), summary);
    log("tse: ", l.cells.size(), " models on ", probes.size(), " items");
    return l.missing.empty() ? 0 : 1;
  });
}

// ------------------------------------------------------------ confidence

int cmd_confidence(const ExperimentConfig& cfg) {
  return guarded("confidence", [&] {
    cfg.validate();
    const Data d = load_data(cfg);
    const Corpus test = load_corpus(d.layout, "test.jsonl");
    // Simple agreement: the verb directly follows the subject.
    std::vector<AgreementProbe> probes;
    std::size_t excluded = 0;
    for (const AnnotatedSentence& s : test) {
      if (s.verb_index != s.subject_index + 1) continue;
      if (auto p = make_probe(s, d.vocab, d.infl)) {
        probes.push_back(std::move(*p));
      } else {
        ++excluded;
      }
    }
    const Loaded l = load_cells(lm_cells(cfg), d.layout);
    std::vector<ConfidenceReport> reports(l.cells.size());
    run_pool(l.cells.size(), cfg.jobs,
             [&](std::size_t i) { reports[i] = confidence_report(l.models[i].model, probes, excluded); });

    std::string items = "architecture,sampling,seed,item,surprisal_correct,surprisal_incorrect,confidence,ratio\n";
    std::map<std::pair<std::string, std::string>, ConfidenceReport> pooled;
    std::vector<std::pair<std::string, std::string>> order;
    for (std::size_t i = 0; i < l.cells.size(); ++i) {
      const auto key = std::make_pair(arch_name(l.cells[i].kind), std::string(to_string(l.cells[i].sampling)));
      if (!pooled.count(key)) order.push_back(key);
      ConfidenceReport& p = pooled[key];
      for (std::size_t k = 0; k < reports[i].items.size(); ++k) {
        const ConfidenceItem& c = reports[i].items[k];
        items += key.first + "," + key.second + "," + std::to_string(l.cells[i].seed) + "," + std::to_string(k) + "," +
                 g17(c.surprisal_correct) + "," + g17(c.surprisal_incorrect) + "," + g17(c.confidence) + "," +
                 g17(c.ratio) + "\n";
        p.items.push_back(c);
      }
    }
    std::string summary = confidence_csv_header();
    for (const auto& key : order) {
      ConfidenceReport& p = pooled[key];
      for (const ConfidenceItem& c : p.items) {
        p.mean_confidence += c.confidence;
        p.mean_ratio += c.ratio;
      }
      if (!p.items.empty()) {
        p.mean_confidence /= static_cast<real>(p.items.size());
        p.mean_ratio /= static_cast<real>(p.items.size());
      }
      summary += confidence_csv_row(key.first, key.second, p);
    }
    write_file_atomic(d.layout.report("confidence.csv"), summary);
    write_file_atomic(d.layout.report("confidence_items.csv"), items);
    log("confidence: ", l.cells.size(), " models on ", probes.size(), " simple items (", excluded, " excluded)");
    return l.missing.empty() ? 0 : 1;
  });
}

// ------------------------------------------------------------ finetune

int cmd_finetune(const ExperimentConfig& cfg) {
  return guarded("finetune", [&] {
    cfg.validate();
    const Data d = load_data(cfg);
    const Corpus test = load_corpus(d.layout, "test.jsonl");
    Corpus zero;
    for (const AnnotatedSentence& s : test)
      if (count_attractors(s) == 0) zero.push_back(s);
    std::map<std::size_t, Corpus> sets;
    for (std::size_t n : cfg.finetune.sizes) sets[n] = load_corpus(d.layout, finetune_file(n));

    const Loaded l = load_cells(lm_cells(cfg), d.layout);
    struct Job {
      std::size_t cell;
      std::size_t size;
      std::size_t epochs;
      FineTuneResult result;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < l.cells.size(); ++i)
      for (std::size_t n : cfg.finetune.sizes)
        for (std::size_t e : cfg.finetune.epochs) jobs.push_back({i, n, e, {}});

    run_pool(jobs.size(), cfg.jobs, [&](std::size_t j) {
      Job& job = jobs[j];
      const GridCell& c = l.cells[job.cell];
      StackedModel model = l.models[job.cell].model;
      const TrainConfig tc = cfg.train_config(c.kind, c.objective, c.seed);
      job.result = fine_tune(model, d.vocab, sets.at(job.size), zero, d.infl, job.epochs, tc);
    });

    std::string rows = "architecture,sampling,seed,finetune_size,epochs,accuracy_before,accuracy_after,n\n";
    std::map<std::tuple<std::string, std::string, std::size_t, std::size_t>, std::pair<std::vector<double>, std::vector<double>>>
        groups;
    std::vector<std::tuple<std::string, std::string, std::size_t, std::size_t>> order;
    for (const Job& job : jobs) {
      const GridCell& c = l.cells[job.cell];
      const auto key = std::make_tuple(arch_name(c.kind), std::string(to_string(c.sampling)), job.size, job.epochs);
      const double before = job.result.before.buckets[0].accuracy();
      const double after = job.result.after.buckets[0].accuracy();
      rows += std::get<0>(key) + "," + std::get<1>(key) + "," + std::to_string(c.seed) + "," +
              std::to_string(job.size) + "," + std::to_string(job.epochs) + "," + fmt_real(before) + "," +
              fmt_real(after) + "," + std::to_string(job.result.before.buckets[0].n) + "\n";
      if (!groups.count(key)) order.push_back(key);
      groups[key].first.push_back(before);
      groups[key].second.push_back(after);
    }
    std::string summary = "architecture,sampling,finetune_size,epochs,mean_before,mean_after,mean_change,seeds\n";
    for (const auto& key : order) {
      const auto& [b, a] = groups[key];
      summary += std::get<0>(key) + "," + std::get<1>(key) + "," + std::to_string(std::get<2>(key)) + "," +
                 std::to_string(std::get<3>(key)) + "," + fmt_real(mean_of(b)) + "," + fmt_real(mean_of(a)) + "," +
                 fmt_real(mean_of(a) - mean_of(b)) + "," + std::to_string(b.size()) + "\n";
    }
    write_file_atomic(d.layout.report("finetune.csv"), rows);
    write_file_atomic(d.layout.report("finetune_summary.csv"), summary);
    log("finetune: ", jobs.size(), " runs");
    return l.missing.empty() ? 0 : 1;
  });
}

// ------------------------------------------------------------ rsa

int cmd_rsa(const ExperimentConfig& cfg) {
  return guarded("rsa", [&] {
    cfg.validate();
    const Data d = load_data(cfg);
    const Corpus probe = load_corpus(d.layout, "probe.jsonl");
    std::vector<std::vector<std::size_t>> encoded;
    for (const AnnotatedSentence& s : probe) encoded.push_back(d.vocab.encode(s.tokens));

    std::string points = "model_id,architecture,objective,sampling,seed,x,y\n";
    std::string sep = "objective,models,accuracy,separable\n";
    std::map<SpreadKey, double> spreads;
    bool complete = true;
    for (Head h : cfg.objectives) {
      std::vector<GridCell> cells;
      for (const GridCell& c : grid(cfg))
        if (c.objective == h) cells.push_back(c);
      const Loaded l = load_cells(cells, d.layout);
      complete = complete && l.missing.empty();
      if (l.cells.size() < 2) {
        log("rsa: fewer than two ", to_string(h), " models; skipped");
        continue;
      }
      std::vector<RepMatrix> reps(l.cells.size());
      run_pool(l.cells.size(), cfg.jobs, [&](std::size_t i) {
        const StackedModel& m = l.models[i].model;
        RepMatrix x(encoded.size(), m.sizes.hidden);
        for (std::size_t p = 0; p < encoded.size(); ++p) {
          const SequenceOutput out = run_sequence(m, encoded[p], Mode::Eval);
          const auto h_top = out.final_hidden.back().span();
          std::copy(h_top.begin(), h_top.end(), x.row_span(p).begin());
        }
        reps[i] = std::move(x);
      });
      std::size_t degenerate = 0;
      const Matrix sim = second_order_similarity(reps, &degenerate);
      if (degenerate > 0) log("rsa: ", degenerate, " zero-variance similarity rows left as zeros");
      const Embedding2D emb = mds_embed(sim, cfg.mds_seed);

      std::vector<ModelTag> tags;
      std::vector<int> labels;
      for (const GridCell& c : l.cells) {
        tags.push_back({c.id(), arch_name(c.kind), std::string(to_string(c.objective)),
                        std::string(to_string(c.sampling)), c.seed});
        labels.push_back(c.sampling == SamplingPolicy::Selective ? 1 : 0);
      }
      const std::string csv = mds_csv(tags, emb);
      points += csv.substr(csv.find('\n') + 1);
      for (auto& [k, v] : spreads_by_group(tags, emb)) spreads[k] = v;

      std::string simcsv = "model_id";
      for (const ModelTag& t : tags) simcsv += "," + t.model_id;
      simcsv += "\n";
      for (std::size_t i = 0; i < tags.size(); ++i) {
        simcsv += tags[i].model_id;
        for (std::size_t j = 0; j < tags.size(); ++j) simcsv += "," + g17(sim(i, j));
        simcsv += "\n";
      }
      write_file_atomic(d.layout.report("rsa_similarity_" + std::string(to_string(h)) + ".csv"), simcsv);

      const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
      if (both) {
        const LinearSplit split = perceptron_split(emb.points, labels);
        sep += std::string(to_string(h)) + "," + std::to_string(tags.size()) + "," + fmt_real(split.accuracy) + "," +
               (split.separable() ? "yes" : "no") + "\n";
      }
      log("rsa: ", to_string(h), " MDS stress ", fmt_real(emb.stress, 9), " after ", emb.iterations, " iterations");
    }
    write_file_atomic(d.layout.report("rsa_points.csv"), points);
    write_file_atomic(d.layout.report("rsa_spread.csv"), spread_table_csv(spreads));
    write_file_atomic(d.layout.report("rsa_separability.csv"), sep);
    return complete ? 0 : 1;
  });
}

// ------------------------------------------------------------ report

int cmd_report(const ExperimentConfig& cfg) {
  return guarded("report", [&] {
    const Layout layout{cfg.out};
    int status = 0;
    const std::pair<const char*, std::string> parts[] = {
        {"Attractor profile of the training splits", layout.data("attractor_summary.csv")},
        {"Agreement accuracy by attractor count", layout.report("eval_summary.csv")},
        {"Targeted evaluation by construction", layout.report("tse_summary.csv")},
        {"Targeted evaluation by number case", layout.report("tse.csv")},
        {"Prediction confidence on simple agreement", layout.report("confidence.csv")},
        {"Fine-tuning on one-attractor items", layout.report("finetune_summary.csv")},
        {"Seed spread in the MDS plane", layout.report("rsa_spread.csv")},
        {"Regime separability in the MDS plane", layout.report("rsa_separability.csv")},
    };
    for (const auto& [title, path] : parts) {
      std::cout << "## " << title << "\n";
      if (fs::exists(path)) {
        std::cout << read_file(path);
      } else {
        std::cout << "(missing: " << path << ")\n";
        log("report: missing ", path);
        status = 1;
      }
      std::cout << "\n";
    }
    return status;
  });
}

}  // namespace sva
