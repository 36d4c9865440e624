#pragma once

// Toy pre-norm transformer block (multi-head softmax attention, then a SwiGLU
// FFN) with pluggable scale-vector designs and hand-written reverse mode.
//
// Every linear branch (Q, K, V, gate, up) computes
//   h = g_in ⊙ Norm_eps(x)          input side, absent under AP
//   z = W h
//   z = Norm_eps(z)                  DNP only; per head for Q/K/V
//   out = g_out ⊙ z                  output side, AP/DP/DNP only
// where Norm_eps(x) = x / sqrt(mean(x^2) + eps). Without HG the three
// attention branches share one input-side vector and so do gate/up. Under
// OR/ER every scale vector g is stored as (alpha, beta):
//   OR  g = beta Norm(alpha)          (exact sphere normalization)
//   ER  g = e^beta e^{alpha - mean(alpha)}

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scalevec/linalg.hpp"

namespace scalevec {

class Rng;

enum class Placement { Standard, AP, DP, DNP };
enum class Reparam { None, OR, ER };

struct BlockConfig {
  std::size_t d_model = 32;
  std::size_t n_head = 4;
  std::size_t d_ffn = 64;
  bool heterogeneous = false;
  Placement placement = Placement::Standard;
  Reparam reparam = Reparam::None;
  double rms_eps = 1e-6;
  bool causal = false;

  std::size_t d_head() const noexcept { return d_model / n_head; }
  /// "standard", "hg+dnp+or", "dp+er", ... (placement standard is implied).
  std::string label() const;
};

/// Inverse of label(); ConfigError on unknown or repeated tokens.
BlockConfig parse_design(std::string_view label, BlockConfig base = {});

/// Throws ConfigError unless n_head divides d_model and sizes are positive.
void validate(const BlockConfig& config);

enum class NormRole { InputNorm, OutputNorm };
enum class ParamKind { Matrix, Scale };

struct ParamSpec {
  std::string name;  ///< "W_Q", "attn_norm.gamma", "q_out.alpha", ...
  std::size_t rows = 0;
  std::size_t cols = 0;
  ParamKind kind = ParamKind::Matrix;
  NormRole role = NormRole::InputNorm;  ///< meaningful for scales only
  std::size_t size() const noexcept { return rows * cols; }
};

/// Matrices first (W_Q, W_K, W_V, W_O, W_gate, W_up, W_down), then the scale
/// parameters slot by slot.
std::vector<ParamSpec> param_layout(const BlockConfig& config);

struct BlockParams {
  BlockConfig config;
  std::vector<ParamSpec> specs;
  std::vector<Vector> values;  ///< row-major, parallel to specs

  std::size_t index(std::string_view name) const;  ///< ConfigError if absent
  Vector& at(std::string_view name) { return values[index(name)]; }
  const Vector& at(std::string_view name) const { return values[index(name)]; }
  std::size_t total_size() const;
};

/// Matrices i.i.d. N(0, matrix_std^2); every scale vector at its unit
/// value (gamma = 1; OR alpha = 1, beta = 1; ER alpha = 0, beta = 0).
/// Draws from rng only for the matrices.
BlockParams init_params(const BlockConfig& config, Rng& rng, double matrix_std = 0.02);

/// Moves every parameter off its unit value: matrices 0.4 N, gamma and OR
/// (alpha, beta) entries 1 + 0.3 N, ER entries 0.3 N.
void randomize_params(BlockParams& params, Rng& rng);

/// Effective scale vector of a slot such as "attn_norm", "q_in" or "up_out".
Vector effective_scale(const BlockParams& params, std::string_view slot);
/// Scale-slot names in layout order.
std::vector<std::string> scale_slots(const BlockConfig& config);

/// Rows of X are tokens. Each returns X plus the sublayer output.
Matrix attn_forward(const BlockParams& params, const Matrix& x);
Matrix ffn_forward(const BlockParams& params, const Matrix& x);
/// ffn_forward(attn_forward(x)).
Matrix block_forward(const BlockParams& params, const Matrix& x);

/// Gradients of sum(upstream ⊙ block_forward(x)) for every parameter,
/// parallel to params.values.
std::vector<Vector> block_backward(const BlockParams& params, const Matrix& x,
                                   const Matrix& upstream);

/// Folds every input-side scale vector into the matrix that follows it and
/// resets the slot to its unit value. Outputs are unchanged.
BlockParams absorb_input_scales(const BlockParams& params);

struct GradCheckRow {
  std::string param_name;
  double max_rel_err = 0.0;
};

/// Central differences of sum(R ⊙ block_forward(x)) for random R against
/// block_backward, per parameter tensor. The relative error of an entry is
/// |a - f| / max(|a|, |f|, 1e-3 max|a| over the tensor, 1e-4 max|a| over
/// all parameters, 1e-12).
std::vector<GradCheckRow> gradient_check(const BlockParams& params, const Matrix& x,
                                         const Matrix& upstream, double h = 1e-5);

enum class Architecture { LlamaLike, GemmaLike, LlamaDNP };

struct NormRoleEntry {
  std::string norm;
  NormRole role = NormRole::InputNorm;
  bool decay = true;  ///< IWD: decay InputNorm scales only
};

/// Roles follow from topology alone: a norm whose scale is immediately
/// followed by a linear map is an InputNorm. LlamaLike is the config's block
/// with standard placement; LlamaDNP forces DNP; GemmaLike is the standard
/// block with Q/K-Norm and attention/FFN output norms added.
std::vector<NormRoleEntry> classify_norms(const BlockConfig& config, Architecture arch);

struct ParamCount {
  std::size_t scale_count = 0;
  std::optional<double> ratio;
};

/// d_model (layers * norms_per_layer + final_norms), with ratio = count / total.
ParamCount count_params(std::size_t layers, std::size_t d_model, std::size_t norms_per_layer = 2,
                        std::size_t final_norms = 1, std::optional<std::size_t> total = {});

/// Scale parameters of the block: sum of scale-vector dimensions plus one
/// magnitude per (alpha, beta) pair.
std::size_t scale_overhead(const BlockConfig& config);

enum class DecayPolicy {
  MatricesOnly,  ///< decay matrices, no scale vectors
  Iwd,           ///< also decay InputNorm scale parameters
  All,           ///< decay everything
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t seq_len = 8;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  DecayPolicy policy = DecayPolicy::MatricesOnly;
  std::size_t log_every = 50;
};

/// Frozen random block of the baseline design (Standard, shared scales):
/// matrices N(0, 1/fan_in), scale vectors exp(N(0, 1/4)).
BlockParams make_teacher(const BlockConfig& shape, std::uint64_t teacher_seed);

struct TrainCurve {
  std::string design;
  std::uint64_t seed = 0;
  std::vector<std::size_t> steps;
  Vector losses;
  double final_loss = 0.0;  ///< mean loss over the last 10% of steps
};

/// Decoupled-weight-decay Adam on mean squared error against the teacher on
/// fresh N(0, 1) token batches. The student starts from init_params(std 0.02)
/// with `seed`; batches come from the same seed, so designs see identical
/// data. Throws Diverged on a non-finite loss.
TrainCurve train_toy(const BlockConfig& student, const BlockParams& teacher,
                     const TrainConfig& train, std::uint64_t seed);

/// Mean squared error of the student against the teacher on one batch.
double batch_mse(const BlockParams& student, const BlockParams& teacher,
                 const std::vector<Matrix>& batch);

}  // namespace scalevec
