#pragma once

// Mixture-of-facial-experts reference math at configurable toy scale.
// Three shared input projections feed per-block expert pairs-of-affine
// layers (GELU between), a softmax gate fuses the three expert outputs
// per token, and the fused tokens join a three-stream single-head
// cross-attention (context + image + fused). Everything runs in 64-bit
// floats so the analytic backward pass can be held to finite-difference
// tolerances.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lfa/errors.hpp"

namespace lfa::mofe {

// Minimal row-major double matrix; enough linear algebra for this module.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    bool empty() const { return a.empty(); }
};

enum class GateKind { Linear, Mlp };
enum class GateGranularity { PerToken, Pooled };

struct MofeConfig {
    std::size_t d_model = 64;
    std::size_t n_tokens = 4;
    std::size_t d_id = 512, d_sem = 768, d_det = 768;
    std::size_t n_blocks = 4;
    std::size_t inject_every = 2;
    GateKind gate_kind = GateKind::Linear;
    GateGranularity gate_granularity = GateGranularity::PerToken;
    std::size_t expert_hidden = 0;  // 0 = 2 * d_model
    // Shapes for the attention harness (queries and the two external
    // key/value streams).
    std::size_t n_queries = 2;
    std::size_t n_ctx_tokens = 3;
    std::size_t n_img_tokens = 2;
    std::uint64_t seed = 0;

    std::size_t hidden() const { return expert_hidden ? expert_hidden : 2 * d_model; }
    std::size_t gate_hidden() const { return d_model; }
    std::size_t n_injected() const { return (n_blocks + inject_every - 1) / inject_every; }
    bool is_injected(std::size_t block) const { return block % inject_every == 0; }
    void validate() const;
};

struct Affine {
    Matrix w;               // in x out
    std::vector<double> b;  // out; empty = no bias term
};

struct Expert {
    Affine l1, l2;  // d_model -> hidden -> d_model, GELU between
};

struct GateNet {
    GateKind kind = GateKind::Linear;
    Affine l1;  // linear: 3d -> 3; mlp: 3d -> gate_hidden
    Affine l2;  // mlp only: gate_hidden -> 3
};

struct BlockParams {
    Expert e_id, e_sem, e_det;
    GateNet gate;
    Matrix w_k, w_v;  // d_model x d_model, bias-free
};

struct MofeParams {
    MofeConfig cfg;
    Affine p_id, p_sem, p_det;  // shared projections d_attr -> d_model
    std::vector<BlockParams> blocks;  // one per injected block
};

// Scaled-uniform (+-1/sqrt(fan_in)) initialization, fully determined by
// cfg.seed.
MofeParams init_params(const MofeConfig& cfg);

struct ExpertBundle {
    Matrix f_id, f_sem, f_det;  // n_tokens x d_attr
};

struct AttentionInputs {
    Matrix q;             // n_queries x d_model
    Matrix k_ctx, v_ctx;  // n_ctx_tokens x d_model
    Matrix k_img, v_img;  // n_img_tokens x d_model
};

// Deterministic synthetic inputs for the verification harness.
ExpertBundle random_bundle(const MofeConfig& cfg, std::uint64_t seed);
AttentionInputs random_attention_inputs(const MofeConfig& cfg, std::uint64_t seed);

struct BlockActivations {
    std::size_t block_index = 0;
    Matrix h_id, h_sem, h_det;  // expert hidden pre-activation
    Matrix g_id, g_sem, g_det;  // gelu(h)
    Matrix e_id, e_sem, e_det;  // expert outputs, n_tokens x d_model
    Matrix e_c;                 // n_tokens x 3*d_model
    Matrix gate_in;             // gate input (= e_c, or its token mean when pooled)
    Matrix gate_h, gate_g;      // mlp gate hidden pre/post activation
    Matrix gate_z;              // gate logits
    Matrix w;                   // n_tokens x 3, rows sum to 1
    Matrix f_fused;             // n_tokens x d_model
    Matrix k_fused, v_fused;
    Matrix p_ctx, p_img, p_fused;  // attention row-softmax probabilities
    Matrix o;                      // n_queries x d_model
};

struct ForwardResult {
    Matrix p_id, p_sem, p_det;  // shared projections (computed once)
    std::vector<BlockActivations> blocks;
};

// e_attr = E_attr(P_attr(f_attr)) for one injected block; errors on a
// block index that carries no facial stream.
void expert_forward(const ExpertBundle& bundle, const MofeParams& params, std::size_t block,
                    Matrix& e_id, Matrix& e_sem, Matrix& e_det);

// Per-token softmax of the gate logits (max-subtracted).
Matrix gate_forward(const Matrix& e_c, const MofeParams& params, std::size_t block);

// f_fused[t] = w_id[t]*e_id[t] + w_sem[t]*e_sem[t] + w_det[t]*e_det[t].
Matrix fuse(const Matrix& w, const Matrix& e_id, const Matrix& e_sem, const Matrix& e_det);

// Sum of three independent scaled-dot-product attentions; k/v for the
// fused stream are projected from f_fused.
Matrix facial_cross_attention(const AttentionInputs& attn, const Matrix& f_fused,
                              const Matrix& w_k, const Matrix& w_v);

ForwardResult mofe_forward(const ExpertBundle& bundle, const AttentionInputs& attn,
                           const MofeParams& params);

struct MofeGradients {
    MofeParams params;       // same shapes as the parameters
    ExpertBundle bundle;     // d loss / d f_attr
    AttentionInputs inputs;  // d loss / d {q, k_ctx, v_ctx, k_img, v_img}
};

// Reverse-mode gradients for loss = sum over injected blocks of
// sum(d_o[b] * o[b]). Pass empty d_o for all-ones (plain sum).
MofeGradients mofe_backward(const ExpertBundle& bundle, const AttentionInputs& attn,
                            const MofeParams& params, const ForwardResult& fwd,
                            const std::vector<Matrix>& d_o);

struct OverheadReport {
    std::uint64_t mofe_params = 0;
    double ratio = 0.0;
};

std::uint64_t count_params(const MofeConfig& cfg);
OverheadReport parameter_overhead(const MofeConfig& cfg, std::uint64_t base_params);

// Central-difference check of every parameter gradient (h = 1e-5).
// Returns the maximum relative error. The default loss projects o onto a
// seeded probe vector with entries bounded away from zero; a plain
// sum(o) loss leaves some parameters with nearly cancelled gradients,
// smaller than what h = 1e-5 central differences in 64-bit can resolve.
double gradient_check(const MofeConfig& cfg, double fd_step = 1e-5, bool plain_sum = false);

struct CheckVerdict {
    double grad_max_rel_err = 0.0;
    double gate_row_sum_err = 0.0;
    std::size_t blocks_injected = 0;
    double param_ratio = 0.0;
};

CheckVerdict run_check(const MofeConfig& cfg, std::uint64_t base_params);

}  // namespace lfa::mofe
