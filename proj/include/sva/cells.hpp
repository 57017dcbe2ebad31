#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sva/numcore.hpp"

namespace sva {

enum class CellKind { LSTM, GRU, ONLSTM, DRNN };

std::string_view to_string(CellKind kind);
CellKind parse_cell_kind(std::string_view name);
inline constexpr CellKind kAllCellKinds[] = {CellKind::LSTM, CellKind::GRU, CellKind::ONLSTM, CellKind::DRNN};

// Parameter slots. Gated kinds store G weight matrices of shape H x (H+D)
// acting on [h_prev; x] followed by G biases of shape 1 x H.
namespace slot {
enum Lstm : std::size_t { kWi, kWf, kWg, kWo, kBi, kBf, kBg, kBo };
enum Gru : std::size_t { kWr, kWz, kWx, kBr, kBz, kBx };
enum Onlstm : std::size_t { kOWf, kOWi, kOWo, kOWc, kOWft, kOWit, kOBf, kOBi, kOBo, kOBc, kOBft, kOBit };
// W: H x H recurrent, U: H x D input, b: 1 x H, a: 1 x 1 with alpha = sigmoid(a).
enum Drnn : std::size_t { kW, kU, kB, kA };
}  // namespace slot

std::size_t gate_count(CellKind kind);
bool has_cell_vector(CellKind kind);
std::vector<std::string> param_names(CellKind kind);

struct CellParams {
  CellKind kind = CellKind::LSTM;
  std::size_t hidden = 0;
  std::size_t input = 0;
  std::vector<Parameter> p;
  // DRNN sign diagonal (+1 excitatory, -1 inhibitory); never trained.
  std::vector<real> dale;
  std::uint64_t revision = 0;

  Parameter& operator[](std::size_t i) { return p[i]; }
  const Parameter& operator[](std::size_t i) const { return p[i]; }
  real alpha() const;  // DRNN only
};

// Zero-valued parameters of the right shapes; dale defaults to all +1.
CellParams make_cell_params(CellKind kind, std::size_t hidden, std::size_t input);

struct CellState {
  Matrix h;
  Matrix c;  // empty for GRU and DRNN

  static CellState zeros(CellKind kind, std::size_t hidden);
};

// Everything cell_backward needs from one forward step.
struct StepCache {
  CellKind kind = CellKind::LSTM;
  const CellParams* owner = nullptr;
  std::uint64_t revision = 0;
  std::vector<real> h_prev, c_prev, x;
  std::vector<real> z;                   // [h_prev; x]
  std::vector<std::vector<real>> gates;  // post-activation gate values
  std::vector<std::vector<real>> aux;    // kind-specific intermediates
  std::vector<real> c, tanh_c, h;
};

// Named views of the ONLSTM forward cache.
struct OnlstmGates {
  std::span<const real> master_forget;  // f~, nondecreasing
  std::span<const real> master_input;   // i~, nonincreasing
};
OnlstmGates onlstm_master_gates(const StepCache& cache);

void cell_forward_into(const CellParams& params, const CellState& state, std::span<const real> x,
                       CellState& next, StepCache& cache);
std::pair<CellState, StepCache> cell_forward(const CellParams& params, const CellState& state,
                                             const Matrix& x);

// Gradient buffers aligned with CellParams::p.
using CellGrads = std::vector<Matrix>;
CellGrads make_cell_grads(const CellParams& params);

struct CellBackward {
  std::vector<real> dh_prev;
  std::vector<real> dc_prev;  // empty for kinds without a cell vector
  std::vector<real> dx;
};

// Accumulates parameter gradients into `grads` and returns gradients w.r.t.
// the previous state and the input. dc may be empty for GRU/DRNN.
CellBackward cell_backward(const CellParams& params, const StepCache& cache, std::span<const real> dh,
                           std::span<const real> dc, CellGrads& grads);

enum class Head { LanguageModel, Classifier };
std::string_view to_string(Head head);
Head parse_head(std::string_view name);

struct ModelSizes {
  std::size_t vocab = 0;
  std::size_t embed = 0;
  std::size_t hidden = 0;
  std::size_t layers = 1;
  friend bool operator==(const ModelSizes&, const ModelSizes&) = default;
};

struct StackedModel {
  CellKind kind = CellKind::LSTM;
  Head head = Head::LanguageModel;
  ModelSizes sizes;
  std::uint64_t seed = 0;
  real dropout = 0.2;
  real excitatory_fraction = 0.5;

  Parameter embedding;  // vocab x embed
  std::vector<CellParams> layers;
  Parameter output;       // hidden x vocab, or hidden x 1 for the classifier
  Parameter output_bias;  // 1 x vocab, or 1 x 1

  std::size_t output_dim() const { return head == Head::LanguageModel ? sizes.vocab : 1; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
  // Marks outstanding forward caches as stale; call after any value update.
  void bump_revision();
};

struct InitOptions {
  real dropout = 0.2;
  real excitatory_fraction = 0.5;
};

StackedModel init_model(CellKind kind, Head head, const ModelSizes& sizes, std::uint64_t seed,
                        const InitOptions& opts = {});

enum class Mode { Train, Eval };

// Gradient buffers for a whole model, used so several sequences can be
// differentiated concurrently and reduced in a fixed order.
struct ModelGrads {
  Matrix embedding;
  std::vector<CellGrads> layers;
  Matrix output;
  Matrix output_bias;

  void zero();
  void add_to(StackedModel& model, real scale = 1) const;
  void add(const ModelGrads& other);
};
ModelGrads make_model_grads(const StackedModel& model);

// Forward record of one sequence: per layer per step caches plus dropout masks.
struct SequenceTrace {
  std::vector<std::size_t> tokens;
  std::vector<std::vector<StepCache>> steps;          // [layer][t]
  std::vector<std::vector<std::vector<real>>> masks;  // [layer][t], empty when no dropout
  std::vector<std::vector<real>> top_hidden;          // [t]
  Matrix logits;  // T x vocab (LM) or 1 x 1 (classifier, final step)
  std::vector<Matrix> final_hidden;  // per layer
};

struct SequenceOutput {
  Matrix logits;
  std::vector<Matrix> final_hidden;
};

// Teacher-forced unroll. Dropout masks are drawn from `mask_seed` in Train
// mode only; Eval is deterministic.
SequenceTrace forward_sequence(const StackedModel& model, std::span<const std::size_t> tokens, Mode mode,
                               std::uint64_t mask_seed = 0);
SequenceOutput run_sequence(const StackedModel& model, std::span<const std::size_t> tokens, Mode mode,
                            std::uint64_t mask_seed = 0);

// Backpropagates d(loss)/d(logits) (same shape as trace.logits) through the trace.
void backward_sequence(const StackedModel& model, const SequenceTrace& trace, const Matrix& dlogits,
                       ModelGrads& grads);

// Next-token cross-entropy summed over positions; targets are tokens[1..] then `eos`.
real lm_loss(const Matrix& logits, std::span<const std::size_t> tokens, std::size_t eos,
             Matrix* dlogits = nullptr);
// Binary cross-entropy on the sigmoid readout; label 1 = grammatical.
real classifier_loss(const Matrix& logits, int label, Matrix* dlogits = nullptr);

// Checkpoint: one JSON document; doubles round-trip bit-exactly.
inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  StackedModel model;
  std::vector<std::string> vocab;
};

std::string checkpoint_to_json(const StackedModel& model, const std::vector<std::string>& vocab);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const StackedModel& model, const std::vector<std::string>& vocab);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sva
