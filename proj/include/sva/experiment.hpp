#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sva/cells.hpp"
#include "sva/corpus.hpp"
#include "sva/grammar.hpp"
#include "sva/training.hpp"

namespace sva {

struct CorpusSpec {
  std::size_t pool_size = 80000;  // natural-profile pool both regimes are drawn from
  std::size_t train_size = 5000;
  std::size_t test_size = 2000;
  std::size_t probe_size = 200;
  std::uint64_t seed = 1234;
  AttractorProfile pool_profile = kNaturalProfile;
  AttractorProfile test_profile{0.4, 0.3, 0.2, 0.1};
  // When set, the selective split is generated directly from this profile
  // instead of being filtered out of the pool. Must put no mass on 0.
  std::optional<AttractorProfile> selective_profile;
  std::optional<std::string> jsonl;  // use this pool instead of generating one
};

struct TrainOverrides {
  std::optional<std::size_t> layers, hidden, embed, batch, epochs;
  std::optional<real> dropout, lr, clip_norm;
  std::optional<bool> clip;  // false disables clipping
  std::optional<bool> augmentation;
};

struct FinetuneSpec {
  std::vector<std::size_t> sizes{535};
  std::vector<std::size_t> epochs{1, 5};
  std::uint64_t seed = 77;
};

struct ExperimentConfig {
  std::string out = "runs/default";
  std::string preset = "desk";
  std::optional<std::string> lexicon;  // JSON; built-in lexicon when absent
  // Lexicon for the targeted items, which grow as the product of slot sizes.
  // "builtin" selects the built-in lexicon; absent means `lexicon`.
  std::optional<std::string> tse_lexicon;
  std::optional<std::string> verbs_tsv, nouns_tsv;
  CorpusSpec corpus;
  std::vector<CellKind> architectures{CellKind::LSTM, CellKind::GRU, CellKind::ONLSTM, CellKind::DRNN};
  std::vector<Head> objectives{Head::LanguageModel};
  std::vector<SamplingPolicy> sampling{SamplingPolicy::Natural, SamplingPolicy::Selective};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  TrainOverrides train;
  FinetuneSpec finetune;
  std::size_t jobs = 0;  // 0: available parallelism
  std::uint64_t mds_seed = 7;

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  std::string to_json() const;
  void validate() const;  // throws ConfigError

  TrainConfig train_config(CellKind kind, Head objective, std::uint64_t seed) const;
};

struct GridCell {
  CellKind kind;
  Head objective;
  SamplingPolicy sampling;
  std::uint64_t seed;

  std::string id() const;  // e.g. "lstm-lm-natural-s1"
};

std::vector<GridCell> grid(const ExperimentConfig& cfg);

// Paths inside the output directory.
struct Layout {
  std::string root;
  std::string data(const std::string& name) const;
  std::string report(const std::string& name) const;
  std::string cell_dir(const GridCell& c) const;
  std::string checkpoint(const GridCell& c) const;
  std::string loss_trace(const GridCell& c) const;
};

// Every command returns a process exit status and logs to stderr.
int cmd_gen(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_eval(const ExperimentConfig& cfg);
int cmd_tse(const ExperimentConfig& cfg);
int cmd_rsa(const ExperimentConfig& cfg);
int cmd_confidence(const ExperimentConfig& cfg);
int cmd_finetune(const ExperimentConfig& cfg);
int cmd_report(const ExperimentConfig& cfg);

// Table-1-style rows: attractor count and share of sentences.
std::string attractor_summary_csv(const Corpus& natural, const Corpus& selective);

}  // namespace sva
