#include "lfa/mofe.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lfa/rng.hpp"

namespace lfa::mofe {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
    if (m.rows != rows || m.cols != cols) {
        throw ValidationError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                              std::to_string(m.cols));
    }
}

// out = x * y
Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows) throw ValidationError("matmul: inner dimensions differ");
    Matrix out(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t k = 0; k < x.cols; ++k) {
            double v = x(i, k);
            for (std::size_t j = 0; j < y.cols; ++j) out(i, j) += v * y(k, j);
        }
    }
    return out;
}

// out += x^T * y
void add_matmul_tn(Matrix& out, const Matrix& x, const Matrix& y) {
    for (std::size_t k = 0; k < x.rows; ++k) {
        for (std::size_t i = 0; i < x.cols; ++i) {
            double v = x(k, i);
            for (std::size_t j = 0; j < y.cols; ++j) out(i, j) += v * y(k, j);
        }
    }
}

// out += x * y^T
void add_matmul_nt(Matrix& out, const Matrix& x, const Matrix& y) {
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < y.rows; ++j) {
            double v = 0.0;
            for (std::size_t k = 0; k < x.cols; ++k) v += x(i, k) * y(j, k);
            out(i, j) += v;
        }
    }
}

Matrix affine_forward(const Matrix& x, const Affine& f) {
    Matrix out = matmul(x, f.w);
    if (!f.b.empty()) {
        for (std::size_t i = 0; i < out.rows; ++i) {
            for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += f.b[j];
        }
    }
    return out;
}

// Accumulates dW, db and returns dX.
Matrix affine_backward(const Matrix& x, const Affine& f, const Matrix& dy, Affine& grad) {
    add_matmul_tn(grad.w, x, dy);
    if (!f.b.empty()) {
        for (std::size_t i = 0; i < dy.rows; ++i) {
            for (std::size_t j = 0; j < dy.cols; ++j) grad.b[j] += dy(i, j);
        }
    }
    Matrix dx(x.rows, x.cols);
    add_matmul_nt(dx, dy, f.w);
    return dx;
}

Matrix softmax_rows(const Matrix& z) {
    Matrix out(z.rows, z.cols);
    for (std::size_t i = 0; i < z.rows; ++i) {
        double mx = z(i, 0);
        for (std::size_t j = 1; j < z.cols; ++j) mx = std::max(mx, z(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < z.cols; ++j) {
            double e = std::exp(z(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < z.cols; ++j) out(i, j) /= sum;
    }
    return out;
}

// dz = p .* (dp - rowsum(dp .* p))
Matrix softmax_backward_rows(const Matrix& p, const Matrix& dp) {
    Matrix dz(p.rows, p.cols);
    for (std::size_t i = 0; i < p.rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) dot += dp(i, j) * p(i, j);
        for (std::size_t j = 0; j < p.cols; ++j) dz(i, j) = p(i, j) * (dp(i, j) - dot);
    }
    return dz;
}

void fill_uniform(std::mt19937_64& rng, double bound, std::vector<double>& v) {
    for (double& x : v) x = uniform_range(rng, -bound, bound);
}

Affine init_affine(std::mt19937_64& rng, std::size_t in, std::size_t out, bool bias) {
    Affine f;
    f.w = Matrix(in, out);
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(rng, bound, f.w.a);
    if (bias) {
        f.b.resize(out);
        fill_uniform(rng, bound, f.b);
    }
    return f;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (double& x : m.a) x = scale * normal(rng);
    return m;
}

std::size_t injected_slot(const MofeConfig& cfg, std::size_t block) {
    if (block >= cfg.n_blocks || !cfg.is_injected(block)) {
        throw ValidationError("block " + std::to_string(block) + " carries no facial stream");
    }
    return block / cfg.inject_every;
}

}  // namespace

void MofeConfig::validate() const {
    if (d_model < 1 || n_tokens < 1 || d_id < 1 || d_sem < 1 || d_det < 1) {
        throw ValidationError("mofe config: widths and token counts must be >= 1");
    }
    if (n_blocks < 1 || inject_every < 1) {
        throw ValidationError("mofe config: n_blocks and inject_every must be >= 1");
    }
    if (n_queries < 1 || n_ctx_tokens < 1 || n_img_tokens < 1) {
        throw ValidationError("mofe config: attention shapes must be >= 1");
    }
}

MofeParams init_params(const MofeConfig& cfg) {
    cfg.validate();
    MofeParams p;
    p.cfg = cfg;
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.d_model;
    const std::size_t h = cfg.hidden();

    p.p_id = init_affine(rng, cfg.d_id, d, true);
    p.p_sem = init_affine(rng, cfg.d_sem, d, true);
    p.p_det = init_affine(rng, cfg.d_det, d, true);

    p.blocks.resize(cfg.n_injected());
    for (auto& blk : p.blocks) {
        for (Expert* e : {&blk.e_id, &blk.e_sem, &blk.e_det}) {
            e->l1 = init_affine(rng, d, h, true);
            e->l2 = init_affine(rng, h, d, true);
        }
        blk.gate.kind = cfg.gate_kind;
        if (cfg.gate_kind == GateKind::Linear) {
            blk.gate.l1 = init_affine(rng, 3 * d, 3, true);
        } else {
            blk.gate.l1 = init_affine(rng, 3 * d, cfg.gate_hidden(), true);
            blk.gate.l2 = init_affine(rng, cfg.gate_hidden(), 3, true);
        }
        double bound = 1.0 / std::sqrt(static_cast<double>(d));
        blk.w_k = Matrix(d, d);
        blk.w_v = Matrix(d, d);
        fill_uniform(rng, bound, blk.w_k.a);
        fill_uniform(rng, bound, blk.w_v.a);
    }
    return p;
}

ExpertBundle random_bundle(const MofeConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ExpertBundle b;
    b.f_id = random_matrix(rng, cfg.n_tokens, cfg.d_id, 1.0);
    b.f_sem = random_matrix(rng, cfg.n_tokens, cfg.d_sem, 1.0);
    b.f_det = random_matrix(rng, cfg.n_tokens, cfg.d_det, 1.0);
    return b;
}

AttentionInputs random_attention_inputs(const MofeConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    AttentionInputs a;
    a.q = random_matrix(rng, cfg.n_queries, cfg.d_model, 1.0);
    a.k_ctx = random_matrix(rng, cfg.n_ctx_tokens, cfg.d_model, 1.0);
    a.v_ctx = random_matrix(rng, cfg.n_ctx_tokens, cfg.d_model, 1.0);
    a.k_img = random_matrix(rng, cfg.n_img_tokens, cfg.d_model, 1.0);
    a.v_img = random_matrix(rng, cfg.n_img_tokens, cfg.d_model, 1.0);
    return a;
}

namespace {

struct AttnPiece {
    Matrix probs;
    Matrix out;
};

AttnPiece attn_forward(const Matrix& q, const Matrix& k, const Matrix& v, double scale) {
    Matrix logits(q.rows, k.rows);
    for (std::size_t i = 0; i < q.rows; ++i) {
        for (std::size_t j = 0; j < k.rows; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < q.cols; ++c) dot += q(i, c) * k(j, c);
            logits(i, j) = dot * scale;
        }
    }
    AttnPiece piece;
    piece.probs = softmax_rows(logits);
    piece.out = matmul(piece.probs, v);
    return piece;
}

void attn_backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& probs,
                   const Matrix& d_out, double scale, Matrix& dq, Matrix& dk, Matrix& dv) {
    add_matmul_tn(dv, probs, d_out);
    Matrix dp(probs.rows, probs.cols);
    add_matmul_nt(dp, d_out, v);
    Matrix da = softmax_backward_rows(probs, dp);
    for (double& x : da.a) x *= scale;
    for (std::size_t i = 0; i < q.rows; ++i) {
        for (std::size_t j = 0; j < probs.cols; ++j) {
            double v_da = da(i, j);
            for (std::size_t c = 0; c < q.cols; ++c) dq(i, c) += v_da * k(j, c);
        }
    }
    add_matmul_tn(dk, da, q);
}

Matrix gate_forward_impl(const Matrix& e_c, const BlockParams& blk, const MofeConfig& cfg,
                         BlockActivations* acts) {
    // Pooled granularity feeds the token-mean of e_c through the gate and
    // broadcasts the resulting weights to every token.
    Matrix gate_in;
    if (cfg.gate_granularity == GateGranularity::Pooled) {
        gate_in = Matrix(1, e_c.cols);
        for (std::size_t j = 0; j < e_c.cols; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < e_c.rows; ++t) s += e_c(t, j);
            gate_in(0, j) = s / static_cast<double>(e_c.rows);
        }
    } else {
        gate_in = e_c;
    }

    Matrix z;
    Matrix gate_h, gate_g;
    if (blk.gate.kind == GateKind::Linear) {
        z = affine_forward(gate_in, blk.gate.l1);
    } else {
        gate_h = affine_forward(gate_in, blk.gate.l1);
        gate_g = Matrix(gate_h.rows, gate_h.cols);
        for (std::size_t i = 0; i < gate_h.a.size(); ++i) gate_g.a[i] = gelu(gate_h.a[i]);
        z = affine_forward(gate_g, blk.gate.l2);
    }
    Matrix w_small = softmax_rows(z);

    Matrix w;
    if (cfg.gate_granularity == GateGranularity::Pooled) {
        w = Matrix(e_c.rows, 3);
        for (std::size_t t = 0; t < e_c.rows; ++t) {
            for (std::size_t j = 0; j < 3; ++j) w(t, j) = w_small(0, j);
        }
    } else {
        w = w_small;
    }
    if (acts) {
        acts->gate_in = std::move(gate_in);
        acts->gate_h = std::move(gate_h);
        acts->gate_g = std::move(gate_g);
        acts->gate_z = std::move(z);
    }
    return w;
}

void expert_forward_impl(const Matrix& projected, const Expert& e, Matrix& h, Matrix& g,
                         Matrix& out) {
    h = affine_forward(projected, e.l1);
    g = Matrix(h.rows, h.cols);
    for (std::size_t i = 0; i < h.a.size(); ++i) g.a[i] = gelu(h.a[i]);
    out = affine_forward(g, e.l2);
}

}  // namespace

void expert_forward(const ExpertBundle& bundle, const MofeParams& params, std::size_t block,
                    Matrix& e_id, Matrix& e_sem, Matrix& e_det) {
    const MofeConfig& cfg = params.cfg;
    std::size_t slot = injected_slot(cfg, block);
    check_shape(bundle.f_id, cfg.n_tokens, cfg.d_id, "f_id");
    check_shape(bundle.f_sem, cfg.n_tokens, cfg.d_sem, "f_sem");
    check_shape(bundle.f_det, cfg.n_tokens, cfg.d_det, "f_det");
    Matrix h, g;
    expert_forward_impl(affine_forward(bundle.f_id, params.p_id), params.blocks[slot].e_id, h, g, e_id);
    expert_forward_impl(affine_forward(bundle.f_sem, params.p_sem), params.blocks[slot].e_sem, h, g, e_sem);
    expert_forward_impl(affine_forward(bundle.f_det, params.p_det), params.blocks[slot].e_det, h, g, e_det);
}

Matrix gate_forward(const Matrix& e_c, const MofeParams& params, std::size_t block) {
    for (double v : e_c.a) {
        if (!std::isfinite(v)) throw ValidationError("gate_forward: non-finite input");
    }
    std::size_t slot = injected_slot(params.cfg, block);
    check_shape(e_c, e_c.rows, 3 * params.cfg.d_model, "e_c");
    return gate_forward_impl(e_c, params.blocks[slot], params.cfg, nullptr);
}

Matrix fuse(const Matrix& w, const Matrix& e_id, const Matrix& e_sem, const Matrix& e_det) {
    check_shape(w, e_id.rows, 3, "gate weights");
    check_shape(e_sem, e_id.rows, e_id.cols, "e_sem");
    check_shape(e_det, e_id.rows, e_id.cols, "e_det");
    Matrix out(e_id.rows, e_id.cols);
    for (std::size_t t = 0; t < e_id.rows; ++t) {
        for (std::size_t c = 0; c < e_id.cols; ++c) {
            out(t, c) = w(t, 0) * e_id(t, c) + w(t, 1) * e_sem(t, c) + w(t, 2) * e_det(t, c);
        }
    }
    return out;
}

Matrix facial_cross_attention(const AttentionInputs& attn, const Matrix& f_fused,
                              const Matrix& w_k, const Matrix& w_v) {
    const std::size_t d = attn.q.cols;
    check_shape(attn.k_ctx, attn.k_ctx.rows, d, "k_ctx");
    check_shape(attn.v_ctx, attn.k_ctx.rows, d, "v_ctx");
    check_shape(attn.k_img, attn.k_img.rows, d, "k_img");
    check_shape(attn.v_img, attn.k_img.rows, d, "v_img");
    check_shape(f_fused, f_fused.rows, d, "f_fused");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix k_fused = matmul(f_fused, w_k);
    Matrix v_fused = matmul(f_fused, w_v);
    AttnPiece ctx = attn_forward(attn.q, attn.k_ctx, attn.v_ctx, scale);
    AttnPiece img = attn_forward(attn.q, attn.k_img, attn.v_img, scale);
    AttnPiece fused = attn_forward(attn.q, k_fused, v_fused, scale);
    Matrix o(attn.q.rows, d);
    for (std::size_t i = 0; i < o.a.size(); ++i) {
        o.a[i] = ctx.out.a[i] + img.out.a[i] + fused.out.a[i];
    }
    return o;
}

ForwardResult mofe_forward(const ExpertBundle& bundle, const AttentionInputs& attn,
                           const MofeParams& params) {
    const MofeConfig& cfg = params.cfg;
    cfg.validate();
    check_shape(bundle.f_id, cfg.n_tokens, cfg.d_id, "f_id");
    check_shape(bundle.f_sem, cfg.n_tokens, cfg.d_sem, "f_sem");
    check_shape(bundle.f_det, cfg.n_tokens, cfg.d_det, "f_det");
    check_shape(attn.q, cfg.n_queries, cfg.d_model, "q");

    ForwardResult fwd;
    fwd.p_id = affine_forward(bundle.f_id, params.p_id);
    fwd.p_sem = affine_forward(bundle.f_sem, params.p_sem);
    fwd.p_det = affine_forward(bundle.f_det, params.p_det);

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (std::size_t block = 0; block < cfg.n_blocks; ++block) {
        if (!cfg.is_injected(block)) continue;
        const BlockParams& blk = params.blocks[block / cfg.inject_every];
        BlockActivations acts;
        acts.block_index = block;
        expert_forward_impl(fwd.p_id, blk.e_id, acts.h_id, acts.g_id, acts.e_id);
        expert_forward_impl(fwd.p_sem, blk.e_sem, acts.h_sem, acts.g_sem, acts.e_sem);
        expert_forward_impl(fwd.p_det, blk.e_det, acts.h_det, acts.g_det, acts.e_det);

        acts.e_c = Matrix(cfg.n_tokens, 3 * cfg.d_model);
        for (std::size_t t = 0; t < cfg.n_tokens; ++t) {
            for (std::size_t c = 0; c < cfg.d_model; ++c) {
                acts.e_c(t, c) = acts.e_id(t, c);
                acts.e_c(t, cfg.d_model + c) = acts.e_sem(t, c);
                acts.e_c(t, 2 * cfg.d_model + c) = acts.e_det(t, c);
            }
        }
        acts.w = gate_forward_impl(acts.e_c, blk, cfg, &acts);
        acts.f_fused = fuse(acts.w, acts.e_id, acts.e_sem, acts.e_det);

        acts.k_fused = matmul(acts.f_fused, blk.w_k);
        acts.v_fused = matmul(acts.f_fused, blk.w_v);
        AttnPiece ctx = attn_forward(attn.q, attn.k_ctx, attn.v_ctx, scale);
        AttnPiece img = attn_forward(attn.q, attn.k_img, attn.v_img, scale);
        AttnPiece fused = attn_forward(attn.q, acts.k_fused, acts.v_fused, scale);
        acts.p_ctx = std::move(ctx.probs);
        acts.p_img = std::move(img.probs);
        acts.p_fused = std::move(fused.probs);
        acts.o = Matrix(cfg.n_queries, cfg.d_model);
        for (std::size_t i = 0; i < acts.o.a.size(); ++i) {
            acts.o.a[i] = ctx.out.a[i] + img.out.a[i] + fused.out.a[i];
        }
        fwd.blocks.push_back(std::move(acts));
    }
    return fwd;
}

namespace {

MofeParams zero_like(const MofeParams& p) {
    MofeParams z = p;
    auto wipe_affine = [](Affine& f) {
        std::fill(f.w.a.begin(), f.w.a.end(), 0.0);
        std::fill(f.b.begin(), f.b.end(), 0.0);
    };
    wipe_affine(z.p_id);
    wipe_affine(z.p_sem);
    wipe_affine(z.p_det);
    for (auto& blk : z.blocks) {
        for (Expert* e : {&blk.e_id, &blk.e_sem, &blk.e_det}) {
            wipe_affine(e->l1);
            wipe_affine(e->l2);
        }
        wipe_affine(blk.gate.l1);
        wipe_affine(blk.gate.l2);
        std::fill(blk.w_k.a.begin(), blk.w_k.a.end(), 0.0);
        std::fill(blk.w_v.a.begin(), blk.w_v.a.end(), 0.0);
    }
    return z;
}

// Backward through one expert: d(projected input) accumulated into dproj.
void expert_backward(const Matrix& projected, const Expert& e, const Matrix& h, const Matrix& g,
                     const Matrix& d_out, Expert& grad, Matrix& dproj) {
    Matrix dg = affine_backward(g, e.l2, d_out, grad.l2);
    Matrix dh(h.rows, h.cols);
    for (std::size_t i = 0; i < h.a.size(); ++i) dh.a[i] = dg.a[i] * gelu_grad(h.a[i]);
    Matrix dx = affine_backward(projected, e.l1, dh, grad.l1);
    for (std::size_t i = 0; i < dproj.a.size(); ++i) dproj.a[i] += dx.a[i];
}

}  // namespace

MofeGradients mofe_backward(const ExpertBundle& bundle, const AttentionInputs& attn,
                            const MofeParams& params, const ForwardResult& fwd,
                            const std::vector<Matrix>& d_o) {
    const MofeConfig& cfg = params.cfg;
    if (!d_o.empty() && d_o.size() != fwd.blocks.size()) {
        throw ValidationError("mofe_backward: upstream gradient count mismatch");
    }
    if (fwd.p_id.empty() && cfg.n_injected() > 0 && fwd.blocks.empty()) {
        throw ValidationError("mofe_backward: missing cached forward activations");
    }

    MofeGradients grads;
    grads.params = zero_like(params);
    grads.bundle.f_id = Matrix(cfg.n_tokens, cfg.d_id);
    grads.bundle.f_sem = Matrix(cfg.n_tokens, cfg.d_sem);
    grads.bundle.f_det = Matrix(cfg.n_tokens, cfg.d_det);
    grads.inputs.q = Matrix(attn.q.rows, attn.q.cols);
    grads.inputs.k_ctx = Matrix(attn.k_ctx.rows, attn.k_ctx.cols);
    grads.inputs.v_ctx = Matrix(attn.v_ctx.rows, attn.v_ctx.cols);
    grads.inputs.k_img = Matrix(attn.k_img.rows, attn.k_img.cols);
    grads.inputs.v_img = Matrix(attn.v_img.rows, attn.v_img.cols);

    Matrix dp_id(cfg.n_tokens, cfg.d_model);
    Matrix dp_sem(cfg.n_tokens, cfg.d_model);
    Matrix dp_det(cfg.n_tokens, cfg.d_model);

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (std::size_t bi = 0; bi < fwd.blocks.size(); ++bi) {
        const BlockActivations& acts = fwd.blocks[bi];
        std::size_t slot = acts.block_index / cfg.inject_every;
        const BlockParams& blk = params.blocks[slot];
        BlockParams& gblk = grads.params.blocks[slot];

        Matrix ones;
        const Matrix* dout = nullptr;
        if (d_o.empty()) {
            ones = Matrix(acts.o.rows, acts.o.cols);
            std::fill(ones.a.begin(), ones.a.end(), 1.0);
            dout = &ones;
        } else {
            dout = &d_o[bi];
        }

        // Three attention streams.
        Matrix dk_fused(acts.k_fused.rows, acts.k_fused.cols);
        Matrix dv_fused(acts.v_fused.rows, acts.v_fused.cols);
        attn_backward(attn.q, attn.k_ctx, attn.v_ctx, acts.p_ctx, *dout, scale, grads.inputs.q,
                      grads.inputs.k_ctx, grads.inputs.v_ctx);
        attn_backward(attn.q, attn.k_img, attn.v_img, acts.p_img, *dout, scale, grads.inputs.q,
                      grads.inputs.k_img, grads.inputs.v_img);
        attn_backward(attn.q, acts.k_fused, acts.v_fused, acts.p_fused, *dout, scale,
                      grads.inputs.q, dk_fused, dv_fused);

        // Fused-stream projections.
        Matrix df(acts.f_fused.rows, acts.f_fused.cols);
        add_matmul_tn(gblk.w_k, acts.f_fused, dk_fused);
        add_matmul_tn(gblk.w_v, acts.f_fused, dv_fused);
        add_matmul_nt(df, dk_fused, blk.w_k);
        add_matmul_nt(df, dv_fused, blk.w_v);

        // Fusion: f_fused[t] = sum_a w[t,a] * e_a[t].
        Matrix dw(acts.w.rows, 3);
        Matrix de_id(cfg.n_tokens, cfg.d_model);
        Matrix de_sem(cfg.n_tokens, cfg.d_model);
        Matrix de_det(cfg.n_tokens, cfg.d_model);
        const Matrix* experts[3] = {&acts.e_id, &acts.e_sem, &acts.e_det};
        Matrix* dexperts[3] = {&de_id, &de_sem, &de_det};
        for (std::size_t t = 0; t < cfg.n_tokens; ++t) {
            for (int a = 0; a < 3; ++a) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cfg.d_model; ++c) {
                    dot += df(t, c) * (*experts[a])(t, c);
                    (*dexperts[a])(t, c) += acts.w(t, a) * df(t, c);
                }
                dw(t, a) = dot;
            }
        }

        // Gate softmax (+ optional pooling) back to e_c.
        Matrix de_c(cfg.n_tokens, 3 * cfg.d_model);
        {
            Matrix dz;
            if (cfg.gate_granularity == GateGranularity::Pooled) {
                Matrix w_row(1, 3);
                for (int a = 0; a < 3; ++a) w_row(0, a) = acts.w(0, a);
                dz = Matrix(1, 3);
                for (std::size_t t = 0; t < cfg.n_tokens; ++t) {
                    Matrix dwt(1, 3);
                    for (int a = 0; a < 3; ++a) dwt(0, a) = dw(t, a);
                    Matrix dzt = softmax_backward_rows(w_row, dwt);
                    for (int a = 0; a < 3; ++a) dz(0, a) += dzt(0, a);
                }
            } else {
                dz = softmax_backward_rows(acts.w, dw);
            }

            Matrix dgate_in;
            if (blk.gate.kind == GateKind::Linear) {
                dgate_in = affine_backward(acts.gate_in, blk.gate.l1, dz, gblk.gate.l1);
            } else {
                Matrix dgg = affine_backward(acts.gate_g, blk.gate.l2, dz, gblk.gate.l2);
                Matrix dgh(acts.gate_h.rows, acts.gate_h.cols);
                for (std::size_t i = 0; i < dgh.a.size(); ++i) {
                    dgh.a[i] = dgg.a[i] * gelu_grad(acts.gate_h.a[i]);
                }
                dgate_in = affine_backward(acts.gate_in, blk.gate.l1, dgh, gblk.gate.l1);
            }

            if (cfg.gate_granularity == GateGranularity::Pooled) {
                double inv = 1.0 / static_cast<double>(cfg.n_tokens);
                for (std::size_t t = 0; t < cfg.n_tokens; ++t) {
                    for (std::size_t j = 0; j < de_c.cols; ++j) de_c(t, j) += dgate_in(0, j) * inv;
                }
            } else {
                de_c = std::move(dgate_in);
            }
        }

        // e_c chunks feed back into the expert outputs.
        for (std::size_t t = 0; t < cfg.n_tokens; ++t) {
            for (std::size_t c = 0; c < cfg.d_model; ++c) {
                de_id(t, c) += de_c(t, c);
                de_sem(t, c) += de_c(t, cfg.d_model + c);
                de_det(t, c) += de_c(t, 2 * cfg.d_model + c);
            }
        }

        expert_backward(fwd.p_id, blk.e_id, acts.h_id, acts.g_id, de_id, gblk.e_id, dp_id);
        expert_backward(fwd.p_sem, blk.e_sem, acts.h_sem, acts.g_sem, de_sem, gblk.e_sem, dp_sem);
        expert_backward(fwd.p_det, blk.e_det, acts.h_det, acts.g_det, de_det, gblk.e_det, dp_det);
    }

    // Shared projections accumulate across blocks.
    Matrix dx = affine_backward(bundle.f_id, params.p_id, dp_id, grads.params.p_id);
    grads.bundle.f_id = std::move(dx);
    dx = affine_backward(bundle.f_sem, params.p_sem, dp_sem, grads.params.p_sem);
    grads.bundle.f_sem = std::move(dx);
    dx = affine_backward(bundle.f_det, params.p_det, dp_det, grads.params.p_det);
    grads.bundle.f_det = std::move(dx);
    return grads;
}

std::uint64_t count_params(const MofeConfig& cfg) {
    const std::uint64_t d = cfg.d_model;
    const std::uint64_t h = cfg.hidden();
    auto affine = [](std::uint64_t in, std::uint64_t out) { return in * out + out; };

    std::uint64_t shared = affine(cfg.d_id, d) + affine(cfg.d_sem, d) + affine(cfg.d_det, d);
    std::uint64_t expert = affine(d, h) + affine(h, d);
    std::uint64_t gate = cfg.gate_kind == GateKind::Linear
                             ? affine(3 * d, 3)
                             : affine(3 * d, cfg.gate_hidden()) + affine(cfg.gate_hidden(), 3);
    std::uint64_t per_block = 3 * expert + gate + d * d + d * d;  // w_k, w_v bias-free
    return shared + cfg.n_injected() * per_block;
}

OverheadReport parameter_overhead(const MofeConfig& cfg, std::uint64_t base_params) {
    if (base_params == 0) throw ValidationError("parameter_overhead: base_params must be > 0");
    OverheadReport rep;
    rep.mofe_params = count_params(cfg);
    rep.ratio = static_cast<double>(rep.mofe_params) / static_cast<double>(base_params);
    return rep;
}

namespace {

// Deterministic iteration over every parameter scalar.
std::vector<double*> param_ptrs(MofeParams& p) {
    std::vector<double*> out;
    auto add_affine = [&](Affine& f) {
        for (double& v : f.w.a) out.push_back(&v);
        for (double& v : f.b) out.push_back(&v);
    };
    add_affine(p.p_id);
    add_affine(p.p_sem);
    add_affine(p.p_det);
    for (auto& blk : p.blocks) {
        for (Expert* e : {&blk.e_id, &blk.e_sem, &blk.e_det}) {
            add_affine(e->l1);
            add_affine(e->l2);
        }
        add_affine(blk.gate.l1);
        add_affine(blk.gate.l2);
        for (double& v : blk.w_k.a) out.push_back(&v);
        for (double& v : blk.w_v.a) out.push_back(&v);
    }
    return out;
}

double forward_loss(const ExpertBundle& bundle, const AttentionInputs& attn,
                    const MofeParams& params, const std::vector<Matrix>& probe) {
    ForwardResult fwd = mofe_forward(bundle, attn, params);
    double loss = 0.0;
    for (std::size_t b = 0; b < fwd.blocks.size(); ++b) {
        const auto& o = fwd.blocks[b].o;
        for (std::size_t i = 0; i < o.a.size(); ++i) loss += probe[b].a[i] * o.a[i];
    }
    return loss;
}

}  // namespace

double gradient_check(const MofeConfig& cfg, double fd_step, bool plain_sum) {
    MofeParams params = init_params(cfg);
    ExpertBundle bundle = random_bundle(cfg, mix_seed(cfg.seed, 1));
    AttentionInputs attn = random_attention_inputs(cfg, mix_seed(cfg.seed, 2));

    std::vector<Matrix> probe(cfg.n_injected());
    std::mt19937_64 probe_rng(mix_seed(cfg.seed, 3));
    for (auto& p : probe) {
        p = Matrix(cfg.n_queries, cfg.d_model);
        for (double& v : p.a) {
            v = plain_sum ? 1.0
                          : (probe_rng() & 1 ? 1.0 : -1.0) * uniform_range(probe_rng, 0.5, 1.5);
        }
    }

    ForwardResult fwd = mofe_forward(bundle, attn, params);
    MofeGradients grads = mofe_backward(bundle, attn, params, fwd, probe);

    std::vector<double*> theta = param_ptrs(params);
    std::vector<double*> analytic = param_ptrs(grads.params);
    double max_rel = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double orig = *theta[i];
        *theta[i] = orig + fd_step;
        double up = forward_loss(bundle, attn, params, probe);
        *theta[i] = orig - fd_step;
        double down = forward_loss(bundle, attn, params, probe);
        *theta[i] = orig;
        double fd = (up - down) / (2.0 * fd_step);
        double an = *analytic[i];
        // Floor at 1e-5: central differences carry ~eps*|L|/h of absolute
        // noise, so gradients below that cannot be resolved relatively.
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-5});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

CheckVerdict run_check(const MofeConfig& cfg, std::uint64_t base_params) {
    CheckVerdict v;
    v.grad_max_rel_err = gradient_check(cfg);
    MofeParams params = init_params(cfg);
    ExpertBundle bundle = random_bundle(cfg, mix_seed(cfg.seed, 1));
    AttentionInputs attn = random_attention_inputs(cfg, mix_seed(cfg.seed, 2));
    ForwardResult fwd = mofe_forward(bundle, attn, params);
    double worst = 0.0;
    for (const auto& blk : fwd.blocks) {
        for (std::size_t t = 0; t < blk.w.rows; ++t) {
            double sum = 0.0;
            for (std::size_t j = 0; j < blk.w.cols; ++j) sum += blk.w(t, j);
            worst = std::max(worst, std::abs(sum - 1.0));
        }
    }
    v.gate_row_sum_err = worst;
    v.blocks_injected = cfg.n_injected();
    v.param_ratio = parameter_overhead(cfg, base_params).ratio;
    return v;
}

}  // namespace lfa::mofe
