#include "sva/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>

namespace sva {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

}  // namespace

// ------------------------------------------------------------ config

TrainConfig TrainConfig::desk(Head objective, CellKind kind) {
  TrainConfig c;
  c.objective = objective;
  c.epochs = 20;
  if (objective == Head::Classifier) {
    c.lr = (kind == CellKind::LSTM || kind == CellKind::ONLSTM) ? 0.005 : 0.01;
    c.clip_norm.reset();
    c.dropout = 0;
  } else {
    c.lr = 0.003;
  }
  return c;
}

TrainConfig TrainConfig::paper(Head objective, CellKind kind) {
  TrainConfig c;
  c.objective = objective;
  if (objective == Head::LanguageModel) {
    c.layers = 2;
    c.hidden = 650;
    c.embed = 200;
    c.dropout = 0.2;
    c.batch = 128;
    c.lr = 0.001;
    c.epochs = 40;
    c.clip_norm = 5.0;
  } else {
    c.layers = 1;
    c.hidden = 50;
    c.embed = 50;
    c.dropout = 0;
    c.batch = 64;
    c.lr = (kind == CellKind::LSTM || kind == CellKind::ONLSTM) ? 0.005 : 0.01;
    c.epochs = 20;
    c.clip_norm.reset();
  }
  return c;
}

void TrainConfig::validate() const {
  if (layers == 0 || hidden == 0 || embed == 0 || batch == 0) {
    throw ConfigError("train config: layers, hidden, embed and batch must be positive");
  }
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("train config: dropout must lie in [0, 1)");
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be a finite nonnegative number");
  if (clip_norm && !(*clip_norm > 0)) throw ConfigError("train config: clip_norm must be positive when set");
}

std::vector<Example> encode_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const AnnotatedSentence& s : corpus) {
    out.push_back({vocab.encode(s.tokens), s.label == Label::Grammatical ? 1 : 0});
  }
  return out;
}

StackedModel init_for(CellKind kind, const TrainConfig& cfg, std::size_t vocab_size) {
  ModelSizes sizes{vocab_size, cfg.embed, cfg.hidden, cfg.layers};
  InitOptions opts;
  opts.dropout = cfg.dropout;
  return init_model(kind, cfg.objective, sizes, cfg.seed, opts);
}

// ------------------------------------------------------------ training

TrainResult train(StackedModel& model, const std::vector<Example>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty corpus");
  if (cfg.objective != model.head) throw ConfigError("train: objective does not match the model head");
  for (const Example& e : data)
    if (e.ids.empty()) throw ConfigError("train: empty sentence");

  std::vector<Parameter*> params = model.parameters();
  std::vector<AdamState> adam;
  adam.reserve(params.size());
  for (Parameter* p : params) adam.emplace_back(p->value.rows(), p->value.cols(), cfg.lr);

  const std::size_t B = std::min(cfg.batch, data.size());
  std::vector<ModelGrads> slots(B, make_model_grads(model));
  std::vector<real> slot_loss(B), slot_count(B);

  std::vector<std::size_t> order(data.size());
  TrainResult result;
  const bool lm = model.head == Head::LanguageModel;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix(cfg.seed, 0x5eed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    real epoch_loss = 0, epoch_count = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += B, ++batch_index) {
      const std::size_t n = std::min(B, order.size() - start);
      const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t k = 0; k < ni; ++k) {
        const std::size_t idx = order[start + static_cast<std::size_t>(k)];
        const Example& ex = data[idx];
        ModelGrads& g = slots[static_cast<std::size_t>(k)];
        g.zero();
        SequenceTrace tr = forward_sequence(model, ex.ids, Mode::Train, mix(cfg.seed, epoch, idx));
        Matrix dl;
        real loss;
        if (lm) {
          loss = lm_loss(tr.logits, ex.ids, Vocabulary::kEos, &dl);
          slot_count[static_cast<std::size_t>(k)] = static_cast<real>(ex.ids.size());
        } else {
          loss = classifier_loss(tr.logits, ex.label, &dl);
          slot_count[static_cast<std::size_t>(k)] = 1;
        }
        slot_loss[static_cast<std::size_t>(k)] = loss;
        backward_sequence(model, tr, dl, g);
      }

      real loss = 0, count = 0;
      for (std::size_t k = 0; k < n; ++k) {
        loss += slot_loss[k];
        count += slot_count[k];
      }
      model.zero_grad();
      for (std::size_t k = 0; k < n; ++k) slots[k].add_to(model, 1 / count);

      LossRecord rec;
      rec.epoch = epoch;
      rec.batch = batch_index;
      rec.loss = loss / count;
      rec.grad_norm = global_grad_norm(params);
      if (cfg.clip_norm) clip_global_norm(params, *cfg.clip_norm);
      for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i], adam[i]);
      model.bump_revision();
      result.trace.push_back(rec);
      epoch_loss += loss;
      epoch_count += count;
    }
    result.epoch_loss.push_back(epoch_loss / epoch_count);
  }
  model.zero_grad();
  return result;
}

std::string loss_trace_csv(const TrainResult& result) {
  std::string out = "epoch,batch,loss,grad_norm\n";
  for (const LossRecord& r : result.trace) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.batch) + "," + fmt_real(r.loss, 9) + "," +
           fmt_real(r.grad_norm, 9) + "\n";
  }
  return out;
}

// ------------------------------------------------------------ evaluation

std::size_t EvalReport::evaluated() const {
  std::size_t n = 0;
  for (const Bucket& b : buckets) n += b.n;
  return n;
}

double EvalReport::overall() const {
  std::size_t c = 0;
  for (const Bucket& b : buckets) c += b.correct;
  const std::size_t n = evaluated();
  return n == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(n);
}

void EvalReport::add(std::size_t attractors, bool correct) {
  Bucket& b = buckets[std::min(attractors, kAttractorBuckets - 1)];
  b.n += 1;
  if (correct) b.correct += 1;
}

std::optional<AgreementProbe> make_probe(const AnnotatedSentence& s, const Vocabulary& vocab,
                                         const InflectionLexicon& lex) {
  validate(s);
  const std::string& verb = s.tokens[s.verb_index];
  const auto number = lex.verb_number(verb);
  const auto other = lex.flip_verb(verb);
  if (!number || !other) return std::nullopt;
  const bool agrees = *number == s.subject_number();
  const std::string& correct = agrees ? verb : *other;
  const std::string& incorrect = agrees ? *other : verb;
  if (!vocab.contains(correct) || !vocab.contains(incorrect)) return std::nullopt;
  AgreementProbe p;
  p.prefix = vocab.encode(std::vector<std::string>(s.tokens.begin(), s.tokens.begin() + static_cast<std::ptrdiff_t>(s.verb_index)));
  p.correct = vocab.id(correct);
  p.incorrect = vocab.id(incorrect);
  p.attractors = count_attractors(s);
  return p;
}

std::optional<AgreementProbe> make_probe(const TseItem& item, const Vocabulary& vocab) {
  if (!vocab.contains(item.correct_verb) || !vocab.contains(item.incorrect_verb)) return std::nullopt;
  AgreementProbe p;
  p.prefix = vocab.encode(
      std::vector<std::string>(item.tokens.begin(), item.tokens.begin() + static_cast<std::ptrdiff_t>(item.verb_index)));
  p.correct = vocab.id(item.correct_verb);
  p.incorrect = vocab.id(item.incorrect_verb);
  p.attractors = item.attractor_count;
  return p;
}

namespace {

// Logits predicting the token that follows `prefix`.
std::vector<real> next_logits(const StackedModel& model, const std::vector<std::size_t>& prefix) {
  if (model.head != Head::LanguageModel) throw ContractError("next-token scores need a language model");
  if (prefix.empty()) throw ContractError("next-token scores need a nonempty prefix");
  SequenceOutput out = run_sequence(model, prefix, Mode::Eval);
  auto row = out.logits.row_span(prefix.size() - 1);
  return {row.begin(), row.end()};
}

}  // namespace

std::vector<bool> judge_probes(const StackedModel& model, const std::vector<AgreementProbe>& probes) {
  // Minimal pairs often share a prefix; score each distinct prefix once.
  std::map<std::vector<std::size_t>, std::size_t> index;
  std::vector<const std::vector<std::size_t>*> unique;
  std::vector<std::size_t> which(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    auto [it, fresh] = index.emplace(probes[i].prefix, unique.size());
    if (fresh) unique.push_back(&it->first);
    which[i] = it->second;
  }
  std::vector<std::vector<real>> logits(unique.size());
  const auto n = static_cast<std::ptrdiff_t>(unique.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t u = 0; u < n; ++u) {
    logits[static_cast<std::size_t>(u)] = next_logits(model, *unique[static_cast<std::size_t>(u)]);
  }
  std::vector<bool> ok(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const std::vector<real>& z = logits[which[i]];
    ok[i] = z[probes[i].correct] > z[probes[i].incorrect];
  }
  return ok;
}

EvalReport eval_lm_agreement(const StackedModel& model, const Vocabulary& vocab, const Corpus& test,
                             const InflectionLexicon& lex) {
  EvalReport report;
  std::vector<AgreementProbe> probes;
  for (const AnnotatedSentence& s : test) {
    if (auto p = make_probe(s, vocab, lex)) {
      probes.push_back(std::move(*p));
    } else {
      report.excluded += 1;
    }
  }
  const std::vector<bool> ok = judge_probes(model, probes);
  for (std::size_t i = 0; i < probes.size(); ++i) report.add(probes[i].attractors, ok[i]);
  return report;
}

EvalReport eval_classifier(const StackedModel& model, const Vocabulary& vocab, const Corpus& test) {
  if (model.head != Head::Classifier) throw ContractError("eval_classifier: model is not a classifier");
  std::vector<char> ok(test.size(), 0);
  std::vector<std::size_t> attractors(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) attractors[i] = count_attractors(test[i]);
  const auto n = static_cast<std::ptrdiff_t>(test.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const AnnotatedSentence& s = test[static_cast<std::size_t>(i)];
    SequenceOutput out = run_sequence(model, vocab.encode(s.tokens), Mode::Eval);
    const bool says_grammatical = out.logits[0] >= 0;
    ok[static_cast<std::size_t>(i)] = says_grammatical == (s.label == Label::Grammatical);
  }
  EvalReport report;
  for (std::size_t i = 0; i < test.size(); ++i) report.add(attractors[i], ok[i]);
  return report;
}

real surprisal(const StackedModel& model, const std::vector<std::size_t>& tokens, std::size_t position) {
  if (position == 0) throw ContractError("surprisal: position 0 has no conditioning prefix");
  if (position >= tokens.size()) throw IndexError("surprisal: position past the end of the sequence");
  const std::vector<std::size_t> prefix(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(position));
  const std::vector<real> z = next_logits(model, prefix);
  return cross_entropy(std::span<const real>(z), tokens[position]);
}

ConfidenceItem prediction_confidence(const StackedModel& model, const AgreementProbe& probe) {
  const std::vector<real> z = next_logits(model, probe.prefix);
  ConfidenceItem c;
  c.surprisal_correct = cross_entropy(std::span<const real>(z), probe.correct);
  c.surprisal_incorrect = cross_entropy(std::span<const real>(z), probe.incorrect);
  c.confidence = c.surprisal_incorrect - c.surprisal_correct;
  c.ratio = std::exp(-c.surprisal_correct) / std::exp(-c.surprisal_incorrect);
  return c;
}

ConfidenceReport confidence_report(const StackedModel& model, const std::vector<AgreementProbe>& probes,
                                   std::size_t excluded) {
  ConfidenceReport r;
  r.excluded = excluded;
  r.items.resize(probes.size());
  const auto n = static_cast<std::ptrdiff_t>(probes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    r.items[static_cast<std::size_t>(i)] = prediction_confidence(model, probes[static_cast<std::size_t>(i)]);
  }
  for (const ConfidenceItem& c : r.items) {
    r.mean_confidence += c.confidence;
    r.mean_ratio += c.ratio;
  }
  if (!r.items.empty()) {
    r.mean_confidence /= static_cast<real>(r.items.size());
    r.mean_ratio /= static_cast<real>(r.items.size());
  }
  return r;
}

FineTuneResult fine_tune(StackedModel& model, const Vocabulary& vocab, const Corpus& finetune,
                         const Corpus& zero_attractor_test, const InflectionLexicon& lex, std::size_t epochs,
                         const TrainConfig& cfg) {
  FineTuneResult r;
  r.before = eval_lm_agreement(model, vocab, zero_attractor_test, lex);
  if (epochs > 0) {
    TrainConfig c = cfg;
    c.epochs = epochs;
    r.trace = train(model, encode_corpus(finetune, vocab), c);
    r.after = eval_lm_agreement(model, vocab, zero_attractor_test, lex);
  } else {
    r.after = r.before;
  }
  return r;
}

// ------------------------------------------------------------ aggregation and CSV

std::array<BucketSummary, kAttractorBuckets> summarize(const std::vector<EvalReport>& per_seed) {
  std::array<BucketSummary, kAttractorBuckets> out{};
  for (std::size_t b = 0; b < kAttractorBuckets; ++b) {
    std::vector<double> acc;
    for (const EvalReport& r : per_seed)
      if (r.buckets[b].n > 0) acc.push_back(r.buckets[b].accuracy());
    out[b].n = acc.size();
    if (acc.empty()) continue;
    out[b].mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    if (acc.size() > 1) {
      double ss = 0;
      for (double a : acc) ss += (a - out[b].mean) * (a - out[b].mean);
      out[b].std = std::sqrt(ss / static_cast<double>(acc.size() - 1));
    }
  }
  return out;
}

std::string fmt_real(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string eval_csv_header() { return "architecture,objective,sampling,seed,attractor_count,accuracy,n,excluded\n"; }

std::string eval_csv_rows(const std::string& architecture, const std::string& objective, const std::string& sampling,
                          std::uint64_t seed, const EvalReport& report) {
  std::string out;
  for (std::size_t b = 0; b < kAttractorBuckets; ++b) {
    out += architecture + "," + objective + "," + sampling + "," + std::to_string(seed) + "," + std::to_string(b) + "," +
           fmt_real(report.buckets[b].accuracy()) + "," + std::to_string(report.buckets[b].n) + "," +
           std::to_string(report.excluded) + "\n";
  }
  return out;
}

std::string confidence_csv_header() { return "architecture,sampling,mean_confidence,mean_ratio,n\n"; }

std::string confidence_csv_row(const std::string& architecture, const std::string& sampling,
                               const ConfidenceReport& report) {
  return architecture + "," + sampling + "," + fmt_real(report.mean_confidence) + "," + fmt_real(report.mean_ratio) +
         "," + std::to_string(report.items.size()) + "\n";
}

}  // namespace sva
