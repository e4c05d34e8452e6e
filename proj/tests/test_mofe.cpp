#include <doctest.h>

#include <cmath>

#include "lfa/mofe.hpp"
#include "lfa/rng.hpp"

using namespace lfa::mofe;

namespace {

MofeConfig toy_config(std::size_t d_model = 4, std::size_t n_tokens = 2, std::uint64_t seed = 0) {
    MofeConfig cfg;
    cfg.d_model = d_model;
    cfg.n_tokens = n_tokens;
    cfg.d_id = 5;
    cfg.d_sem = 6;
    cfg.d_det = 7;
    cfg.n_blocks = 4;
    cfg.inject_every = 2;
    cfg.n_queries = 2;
    cfg.n_ctx_tokens = 3;
    cfg.n_img_tokens = 2;
    cfg.seed = seed;
    return cfg;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_SUITE_BEGIN("mofe");

TEST_CASE("zero inputs and zero biases produce zero expert outputs") {
    auto cfg = toy_config();
    auto params = init_params(cfg);
    for (auto* a : {&params.p_id, &params.p_sem, &params.p_det}) {
        std::fill(a->b.begin(), a->b.end(), 0.0);
    }
    for (auto& blk : params.blocks) {
        for (Expert* e : {&blk.e_id, &blk.e_sem, &blk.e_det}) {
            std::fill(e->l1.b.begin(), e->l1.b.end(), 0.0);
            std::fill(e->l2.b.begin(), e->l2.b.end(), 0.0);
        }
    }
    ExpertBundle zero;
    zero.f_id = Matrix(cfg.n_tokens, cfg.d_id);
    zero.f_sem = Matrix(cfg.n_tokens, cfg.d_sem);
    zero.f_det = Matrix(cfg.n_tokens, cfg.d_det);
    Matrix e_id, e_sem, e_det;
    expert_forward(zero, params, 0, e_id, e_sem, e_det);
    for (double v : e_id.a) CHECK(v == 0.0);
    for (double v : e_sem.a) CHECK(v == 0.0);
    for (double v : e_det.a) CHECK(v == 0.0);
}

TEST_CASE("identity projection feeds the expert unchanged") {
    auto cfg = toy_config();
    cfg.d_id = cfg.d_model;  // P_id can be the identity
    auto params = init_params(cfg);
    params.p_id.w = Matrix(cfg.d_model, cfg.d_model);
    for (std::size_t i = 0; i < cfg.d_model; ++i) params.p_id.w(i, i) = 1.0;
    std::fill(params.p_id.b.begin(), params.p_id.b.end(), 0.0);

    ExpertBundle bundle = random_bundle(cfg, 3);
    Matrix e_id, e_sem, e_det;
    expert_forward(bundle, params, 2, e_id, e_sem, e_det);

    // Recompute E_id(f_id) by hand.
    const Expert& e = params.blocks[1].e_id;
    for (std::size_t t = 0; t < cfg.n_tokens; ++t) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
            double out = e.l2.b[c];
            for (std::size_t k = 0; k < cfg.hidden(); ++k) {
                double h = e.l1.b[k];
                for (std::size_t j = 0; j < cfg.d_model; ++j) {
                    h += bundle.f_id(t, j) * e.l1.w(j, k);
                }
                out += gelu_ref(h) * e.l2.w(k, c);
            }
            CHECK(e_id(t, c) == doctest::Approx(out).epsilon(1e-12));
        }
    }
}

TEST_CASE("expert_forward rejects non-injected blocks") {
    auto cfg = toy_config();
    auto params = init_params(cfg);
    auto bundle = random_bundle(cfg, 1);
    Matrix a, b, c;
    CHECK_THROWS_AS(expert_forward(bundle, params, 1, a, b, c), lfa::ValidationError);
    CHECK_THROWS_AS(expert_forward(bundle, params, 99, a, b, c), lfa::ValidationError);
}

TEST_CASE("forward is deterministic for a fixed seed") {
    auto cfg = toy_config(8, 4, 11);
    auto params = init_params(cfg);
    auto bundle = random_bundle(cfg, 7);
    auto attn = random_attention_inputs(cfg, 8);
    auto f1 = mofe_forward(bundle, attn, params);
    auto f2 = mofe_forward(bundle, attn, params);
    REQUIRE(f1.blocks.size() == f2.blocks.size());
    for (std::size_t b = 0; b < f1.blocks.size(); ++b) {
        CHECK(f1.blocks[b].o.a == f2.blocks[b].o.a);
        CHECK(f1.blocks[b].w.a == f2.blocks[b].w.a);
    }
}

namespace {

// A params object whose gate ignores its input and emits fixed logits.
MofeParams constant_gate_params(const MofeConfig& cfg, double z0, double z1, double z2) {
    auto params = init_params(cfg);
    for (auto& blk : params.blocks) {
        std::fill(blk.gate.l1.w.a.begin(), blk.gate.l1.w.a.end(), 0.0);
        blk.gate.l1.b = {z0, z1, z2};
    }
    return params;
}

}  // namespace

TEST_CASE("gate softmax values") {
    auto cfg = toy_config();
    ExpertBundle bundle = random_bundle(cfg, 5);
    auto attn = random_attention_inputs(cfg, 6);

    SUBCASE("equal logits give uniform weights") {
        auto params = constant_gate_params(cfg, 0.7, 0.7, 0.7);
        auto fwd = mofe_forward(bundle, attn, params);
        for (const auto& blk : fwd.blocks) {
            for (double v : blk.w.a) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        }
    }
    SUBCASE("logits (ln 2, 0, 0) give (0.5, 0.25, 0.25)") {
        auto params = constant_gate_params(cfg, std::log(2.0), 0.0, 0.0);
        auto fwd = mofe_forward(bundle, attn, params);
        for (const auto& blk : fwd.blocks) {
            for (std::size_t t = 0; t < blk.w.rows; ++t) {
                CHECK(blk.w(t, 0) == doctest::Approx(0.5).epsilon(1e-12));
                CHECK(blk.w(t, 1) == doctest::Approx(0.25).epsilon(1e-12));
                CHECK(blk.w(t, 2) == doctest::Approx(0.25).epsilon(1e-12));
            }
        }
    }
    SUBCASE("adding a constant to all three logits leaves weights unchanged") {
        auto base = constant_gate_params(cfg, 0.3, -1.1, 0.8);
        auto shifted = constant_gate_params(cfg, 0.3 + 5.0, -1.1 + 5.0, 0.8 + 5.0);
        auto f1 = mofe_forward(bundle, attn, base);
        auto f2 = mofe_forward(bundle, attn, shifted);
        for (std::size_t b = 0; b < f1.blocks.size(); ++b) {
            for (std::size_t i = 0; i < f1.blocks[b].w.a.size(); ++i) {
                CHECK(f1.blocks[b].w.a[i] == doctest::Approx(f2.blocks[b].w.a[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("gate rows are a distribution for random inputs") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        auto cfg = toy_config(8, 4, seed);
        auto params = init_params(cfg);
        auto fwd = mofe_forward(random_bundle(cfg, seed + 10),
                                random_attention_inputs(cfg, seed + 20), params);
        for (const auto& blk : fwd.blocks) {
            for (std::size_t t = 0; t < blk.w.rows; ++t) {
                double sum = 0.0;
                for (std::size_t j = 0; j < 3; ++j) {
                    CHECK(blk.w(t, j) >= 0.0);
                    sum += blk.w(t, j);
                }
                CHECK(std::abs(sum - 1.0) <= 1e-6);
            }
        }
    }
}

TEST_CASE("fusion behavior") {
    Matrix e_id(1, 2), e_sem(1, 2), e_det(1, 2);
    e_id(0, 0) = 3;
    e_id(0, 1) = 0;
    e_sem(0, 0) = 0;
    e_sem(0, 1) = 3;
    e_det(0, 0) = 3;
    e_det(0, 1) = 3;

    SUBCASE("one-hot recovers the selected expert exactly") {
        Matrix w(1, 3);
        w(0, 0) = 1.0;
        auto f = fuse(w, e_id, e_sem, e_det);
        CHECK(f(0, 0) == 3.0);
        CHECK(f(0, 1) == 0.0);
    }
    SUBCASE("uniform weights average") {
        Matrix w(1, 3);
        w(0, 0) = w(0, 1) = w(0, 2) = 1.0 / 3.0;
        auto f = fuse(w, e_id, e_sem, e_det);
        CHECK(f(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(f(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
    }
    SUBCASE("equal experts are a fixed point for any weights") {
        Matrix w(1, 3);
        w(0, 0) = 0.2;
        w(0, 1) = 0.5;
        w(0, 2) = 0.3;
        auto f = fuse(w, e_id, e_id, e_id);
        CHECK(f(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
        CHECK(f(0, 1) == doctest::Approx(0.0));
    }
}

TEST_CASE("fused output stays in the per-coordinate expert hull") {
    auto cfg = toy_config(8, 4, 21);
    auto params = init_params(cfg);
    auto fwd = mofe_forward(random_bundle(cfg, 31), random_attention_inputs(cfg, 32), params);
    for (const auto& blk : fwd.blocks) {
        for (std::size_t t = 0; t < cfg.n_tokens; ++t) {
            for (std::size_t c = 0; c < cfg.d_model; ++c) {
                double lo = std::min({blk.e_id(t, c), blk.e_sem(t, c), blk.e_det(t, c)});
                double hi = std::max({blk.e_id(t, c), blk.e_sem(t, c), blk.e_det(t, c)});
                CHECK(blk.f_fused(t, c) >= lo - 1e-9);
                CHECK(blk.f_fused(t, c) <= hi + 1e-9);
                double recon = blk.w(t, 0) * blk.e_id(t, c) + blk.w(t, 1) * blk.e_sem(t, c) +
                               blk.w(t, 2) * blk.e_det(t, c);
                CHECK(std::abs(recon - blk.f_fused(t, c)) <= 1e-9);
            }
        }
    }
}

TEST_CASE("attention with one kv token per stream returns the value sum exactly") {
    auto cfg = toy_config(4, 1);
    cfg.n_ctx_tokens = 1;
    cfg.n_img_tokens = 1;
    cfg.n_queries = 2;
    auto attn = random_attention_inputs(cfg, 9);
    Matrix f_fused(1, 4);
    for (std::size_t c = 0; c < 4; ++c) f_fused(0, c) = 0.5 * (c + 1);
    Matrix w_k(4, 4), w_v(4, 4);
    std::mt19937_64 rng(2);
    for (auto& v : w_k.a) v = lfa::uniform_range(rng, -1, 1);
    for (auto& v : w_v.a) v = lfa::uniform_range(rng, -1, 1);

    auto o = facial_cross_attention(attn, f_fused, w_k, w_v);
    for (std::size_t i = 0; i < cfg.n_queries; ++i) {
        for (std::size_t c = 0; c < 4; ++c) {
            double v_fused = 0.0;
            for (std::size_t k = 0; k < 4; ++k) v_fused += f_fused(0, k) * w_v(k, c);
            CHECK(o(i, c) == attn.v_ctx(0, c) + attn.v_img(0, c) + v_fused);
        }
    }
}

TEST_CASE("zero fused values reduce to the two-stream sum") {
    auto cfg = toy_config(4, 2);
    auto attn = random_attention_inputs(cfg, 14);
    Matrix f_fused(2, 4);
    std::mt19937_64 rng(3);
    for (auto& v : f_fused.a) v = lfa::uniform_range(rng, -1, 1);
    Matrix w_k(4, 4), w_v(4, 4);
    for (auto& v : w_k.a) v = lfa::uniform_range(rng, -1, 1);
    // w_v stays zero -> v_fused = 0

    auto o = facial_cross_attention(attn, f_fused, w_k, w_v);

    Matrix no_fused_kv = w_v;  // also zero
    // Two-stream sum computed via a fused stream whose values are zero:
    // compare against ctx+img attention done by hand.
    const double scale = 0.5;  // 1/sqrt(4)
    for (std::size_t i = 0; i < cfg.n_queries; ++i) {
        std::vector<double> expect(4, 0.0);
        for (auto [k, v] : {std::pair{&attn.k_ctx, &attn.v_ctx}, {&attn.k_img, &attn.v_img}}) {
            std::vector<double> logits(k->rows);
            double mx = -1e300;
            for (std::size_t j = 0; j < k->rows; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < 4; ++c) dot += attn.q(i, c) * (*k)(j, c);
                logits[j] = dot * scale;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (std::size_t j = 0; j < k->rows; ++j) {
                for (std::size_t c = 0; c < 4; ++c) expect[c] += logits[j] / denom * (*v)(j, c);
            }
        }
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(o(i, c) == doctest::Approx(expect[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("duplicating a fused kv token does not change the output") {
    auto cfg = toy_config(4, 1);
    auto attn = random_attention_inputs(cfg, 15);
    Matrix w_k(4, 4), w_v(4, 4);
    std::mt19937_64 rng(4);
    for (auto& v : w_k.a) v = lfa::uniform_range(rng, -1, 1);
    for (auto& v : w_v.a) v = lfa::uniform_range(rng, -1, 1);

    Matrix one(1, 4), two(2, 4);
    for (std::size_t c = 0; c < 4; ++c) {
        one(0, c) = 0.3 * (c + 1);
        two(0, c) = two(1, c) = one(0, c);
    }
    auto o1 = facial_cross_attention(attn, one, w_k, w_v);
    auto o2 = facial_cross_attention(attn, two, w_k, w_v);
    for (std::size_t i = 0; i < o1.a.size(); ++i) {
        CHECK(o1.a[i] == doctest::Approx(o2.a[i]).epsilon(1e-12));
    }
}

TEST_CASE("injection layout") {
    auto cfg = toy_config();
    cfg.n_blocks = 4;
    cfg.inject_every = 2;
    auto fwd = mofe_forward(random_bundle(cfg, 1), random_attention_inputs(cfg, 2),
                            init_params(cfg));
    REQUIRE(fwd.blocks.size() == 2);
    CHECK(fwd.blocks[0].block_index == 0);
    CHECK(fwd.blocks[1].block_index == 2);

    cfg.inject_every = 1;
    auto all = mofe_forward(random_bundle(cfg, 1), random_attention_inputs(cfg, 2),
                            init_params(cfg));
    CHECK(all.blocks.size() == 4);

    cfg.n_blocks = 30;
    cfg.inject_every = 2;
    CHECK(cfg.n_injected() == 15);
    cfg.n_blocks = 7;
    cfg.inject_every = 3;
    CHECK(cfg.n_injected() == 3);  // blocks 0, 3, 6
}

TEST_CASE("analytic gradients match central differences") {
    for (std::size_t d_model : {4, 8}) {
        for (std::size_t n_tokens : {2, 4}) {
            auto cfg = toy_config(d_model, n_tokens, 1000 + d_model * 10 + n_tokens);
            CHECK(gradient_check(cfg) <= 1e-4);
        }
    }
}

TEST_CASE("the documented sum-loss case holds at seed 0") {
    // loss = sum(o), d_model=4, n_tokens=2, n_q=2, h=1e-5.
    auto cfg = toy_config(4, 2, 0);
    CHECK(gradient_check(cfg, 1e-5, /*plain_sum=*/true) <= 1e-4);
}

TEST_CASE("gradcheck covers the mlp gate and pooled granularity") {
    auto cfg = toy_config(4, 2, 5);
    cfg.gate_kind = GateKind::Mlp;
    CHECK(gradient_check(cfg) <= 1e-4);

    cfg.gate_kind = GateKind::Linear;
    cfg.gate_granularity = GateGranularity::Pooled;
    CHECK(gradient_check(cfg) <= 1e-4);

    cfg.gate_kind = GateKind::Mlp;
    cfg.gate_granularity = GateGranularity::Pooled;
    CHECK(gradient_check(cfg) <= 1e-4);
}

TEST_CASE("input gradients also match central differences") {
    auto cfg = toy_config(4, 2, 77);
    auto params = init_params(cfg);
    auto bundle = random_bundle(cfg, 78);
    auto attn = random_attention_inputs(cfg, 79);
    auto fwd = mofe_forward(bundle, attn, params);
    auto grads = mofe_backward(bundle, attn, params, fwd, {});

    auto loss_of = [&](const ExpertBundle& b, const AttentionInputs& a) {
        auto f = mofe_forward(b, a, params);
        double loss = 0.0;
        for (const auto& blk : f.blocks) {
            for (double v : blk.o.a) loss += v;
        }
        return loss;
    };

    const double h = 1e-5;
    auto check_matrix = [&](Matrix& target, const Matrix& analytic, auto&& eval) {
        for (std::size_t i = 0; i < target.a.size(); ++i) {
            double orig = target.a[i];
            target.a[i] = orig + h;
            double up = eval();
            target.a[i] = orig - h;
            double down = eval();
            target.a[i] = orig;
            double fd = (up - down) / (2 * h);
            double rel = std::abs(fd - analytic.a[i]) /
                         std::max({std::abs(fd), std::abs(analytic.a[i]), 1e-5});
            CHECK(rel <= 1e-4);
        }
    };
    check_matrix(bundle.f_id, grads.bundle.f_id, [&] { return loss_of(bundle, attn); });
    check_matrix(bundle.f_det, grads.bundle.f_det, [&] { return loss_of(bundle, attn); });
    check_matrix(attn.q, grads.inputs.q, [&] { return loss_of(bundle, attn); });
    check_matrix(attn.v_img, grads.inputs.v_img, [&] { return loss_of(bundle, attn); });
    check_matrix(attn.k_ctx, grads.inputs.k_ctx, [&] { return loss_of(bundle, attn); });
}

TEST_CASE("zero upstream gradient zeroes every parameter gradient") {
    auto cfg = toy_config(4, 2, 9);
    auto params = init_params(cfg);
    auto bundle = random_bundle(cfg, 10);
    auto attn = random_attention_inputs(cfg, 11);
    auto fwd = mofe_forward(bundle, attn, params);
    std::vector<Matrix> zeros;
    for (const auto& blk : fwd.blocks) zeros.emplace_back(blk.o.rows, blk.o.cols);
    auto grads = mofe_backward(bundle, attn, params, fwd, zeros);
    for (double v : grads.params.p_id.w.a) CHECK(v == 0.0);
    for (const auto& blk : grads.params.blocks) {
        for (double v : blk.e_id.l1.w.a) CHECK(v == 0.0);
        for (double v : blk.gate.l1.w.a) CHECK(v == 0.0);
        for (double v : blk.w_k.a) CHECK(v == 0.0);
    }
    for (double v : grads.bundle.f_id.a) CHECK(v == 0.0);
    for (double v : grads.inputs.q.a) CHECK(v == 0.0);
}

TEST_CASE("uniform logit shifts carry zero gradient through the gate") {
    // dL/dz of a softmax always sums to zero per row, so the directional
    // derivative along (1,1,1) of the gate's final bias must vanish.
    auto cfg = toy_config(8, 4, 13);
    auto params = init_params(cfg);
    auto bundle = random_bundle(cfg, 14);
    auto attn = random_attention_inputs(cfg, 15);
    auto fwd = mofe_forward(bundle, attn, params);
    auto grads = mofe_backward(bundle, attn, params, fwd, {});
    for (const auto& blk : grads.params.blocks) {
        double shift = blk.gate.l1.b[0] + blk.gate.l1.b[1] + blk.gate.l1.b[2];
        CHECK(std::abs(shift) <= 1e-10);
    }
}

TEST_CASE("parameter accounting") {
    SUBCASE("hand-counted expert of d_model=8, hidden=16 is 280 params") {
        // (8*16 + 16) + (16*8 + 8) = 280, the two affine layers.
        MofeConfig cfg;
        cfg.d_model = 8;
        cfg.expert_hidden = 16;
        cfg.d_id = cfg.d_sem = cfg.d_det = 1;
        cfg.n_blocks = 1;
        cfg.inject_every = 1;
        cfg.gate_kind = GateKind::Linear;
        std::uint64_t shared = 3 * (1 * 8 + 8);
        std::uint64_t gate = 24 * 3 + 3;
        std::uint64_t kv = 2 * 8 * 8;
        CHECK(count_params(cfg) == shared + 3 * 280 + gate + kv);
    }
    SUBCASE("count matches the tensors init_params actually allocates") {
        auto cfg = toy_config(8, 4, 3);
        cfg.gate_kind = GateKind::Mlp;
        auto params = init_params(cfg);
        std::uint64_t total = 0;
        auto count_affine = [&](const Affine& a) { total += a.w.a.size() + a.b.size(); };
        count_affine(params.p_id);
        count_affine(params.p_sem);
        count_affine(params.p_det);
        for (const auto& blk : params.blocks) {
            for (const Expert* e : {&blk.e_id, &blk.e_sem, &blk.e_det}) {
                count_affine(e->l1);
                count_affine(e->l2);
            }
            count_affine(blk.gate.l1);
            count_affine(blk.gate.l2);
            total += blk.w_k.a.size() + blk.w_v.a.size();
        }
        CHECK(count_params(cfg) == total);
    }
    SUBCASE("per-block parameters are counted once per injected block") {
        auto cfg = toy_config();
        cfg.n_blocks = 8;
        cfg.inject_every = 2;
        auto c4 = count_params(cfg);
        cfg.n_blocks = 16;
        auto c8 = count_params(cfg);
        cfg.n_blocks = 8;
        cfg.inject_every = 8;
        auto c1 = count_params(cfg);
        std::uint64_t per_block = (c8 - c4) / 4;
        CHECK(c4 == c1 + 3 * per_block);
    }
    SUBCASE("doubling the base halves the ratio") {
        auto cfg = toy_config();
        std::uint64_t base = 1ull << 20;
        auto a = parameter_overhead(cfg, base);
        auto b = parameter_overhead(cfg, 2 * base);
        CHECK(b.ratio == a.ratio / 2.0);  // exact: power-of-two base
        CHECK_THROWS_AS(parameter_overhead(cfg, 0), lfa::ValidationError);
    }
}

TEST_CASE("run_check verdict fields") {
    auto cfg = toy_config(4, 2, 1);
    auto v = run_check(cfg, 1'000'000);
    CHECK(v.grad_max_rel_err <= 1e-4);
    CHECK(v.gate_row_sum_err <= 1e-6);
    CHECK(v.blocks_injected == 2);
    CHECK(v.param_ratio > 0.0);
}

TEST_SUITE_END();
