#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "musechat/contrastive.hpp"
#include "musechat/fusion.hpp"
#include "musechat/gradcheck.hpp"
#include "musechat/reasoner.hpp"

namespace musechat {

struct GradPathResult {
    std::string path;
    std::size_t seeds = 0;
    std::size_t entries = 0;
    double max_rel_err = 0.0;
    double tol = 0.0;

    bool passed() const { return max_rel_err < tol; }
};

struct GradSuiteConfig {
    std::size_t dims = 8;    // base width of every checked model (clamped to [1, 16])
    std::size_t seeds = 20;  // random restarts per path
    std::size_t entries_per_param = 16;  // seeded subsample; 0 checks everything
    double tol = 1e-4;
    // Step for the fourth-order stencil: truncation ~ eps^4 is negligible
    // and roundoff ~ |loss| * 2^-52 / eps stays near 1e-11.
    double eps = 1e-4;
    // Entries whose gradients sit below this are compared absolutely;
    // finite differences cannot resolve gradients at the roundoff scale.
    double denom_floor = 1e-5;
};

namespace detail {

inline void accumulate(GradPathResult& into, const GradCheckReport& rep) {
    ++into.seeds;
    into.entries += rep.entries_checked;
    if (rep.max_rel_err > into.max_rel_err) into.max_rel_err = rep.max_rel_err;
}

inline GradCheckOptions grad_opts(const GradSuiteConfig& cfg, std::uint64_t seed) {
    GradCheckOptions o;
    o.eps = cfg.eps;
    o.tol = cfg.tol;
    o.denom_floor = cfg.denom_floor;
    o.max_entries_per_param = cfg.entries_per_param;
    o.sample_seed = mix_seed(seed, "gradcheck.sample");
    return o;
}

/// A composite graph crossing every differentiable tape operation; the
/// terminal sums are weighted with fixed random inputs (a LayerNorm row
/// sums to a constant, so an unweighted sum would hide upstream errors).
inline GradCheckReport check_tape_ops(const GradSuiteConfig& cfg, std::uint64_t seed) {
    std::size_t d = std::max<std::size_t>(1, std::min<std::size_t>(cfg.dims, 16));
    std::size_t rows = 3;
    Rng rng(mix_seed(seed, "gradcheck.tape"));
    ParameterStore store;
    Parameter& a = store.add("a", Matrix::randn(rng, rows, d, 0.8));
    Parameter& w1 = store.add("w1", Matrix::randn(rng, d, d, 0.8));
    Parameter& w2 = store.add("w2", Matrix::randn(rng, d, d, 0.8));
    Parameter& gain = store.add("gain", Matrix::randn(rng, 1, d, 0.5));
    Parameter& bias = store.add("bias", Matrix::randn(rng, 1, d, 0.5));
    Parameter& table = store.add("table", Matrix::randn(rng, 4, d, 0.8));

    Matrix wsum1 = Matrix::randn(rng, rows, d);
    Matrix wsum2 = Matrix::randn(rng, 1, d);
    std::vector<std::size_t> gather_ids{1, 3, 0};
    std::vector<std::size_t> targets(rows + 3);
    std::vector<double> weights(rows + 3);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        targets[i] = rng.uniform_index(d);
        weights[i] = 0.25 + rng.uniform();
    }

    auto loss = [&](bool with_grad) {
        Tape t;
        Node x = t.softmax_rows(t.matmul(t.param(a), t.param(w1)));
        Node ln = t.layer_norm_rows(t.matmul(x, t.param(w2)), t.param(gain), t.param(bias));
        Node act = t.tanh_elem(ln);
        Node unit = t.l2_normalize_rows(t.add(act, x));
        Node cat = t.concat_rows({unit, t.gather_rows(t.param(table), gather_ids)});
        Node nll = t.select_nll(t.log_softmax_rows(cat), targets, weights);
        Node sl = t.slice_rows(cat, 1, rows);
        Node part1 = t.sum_all(t.mul_elem(sl, t.input(wsum1)));
        Node part2 = t.sum_all(t.mul_elem(t.exp_elem(t.scale(t.mean_rows(cat), 0.3)), t.input(wsum2)));
        Node total = t.add(nll, t.add(part1, part2));
        double v = t.value(total).at(0, 0);
        if (with_grad) t.backward(total);
        return v;
    };
    return check_gradients(store, loss, grad_opts(cfg, seed));
}

struct RandomQuartetInputs {
    std::vector<std::vector<Matrix>> videos;  // per item: segment list
    std::vector<Matrix> music;
    std::vector<Matrix> text;
};

inline RandomQuartetInputs random_quartet_inputs(Rng& rng, const EncoderConfig& enc, std::size_t b) {
    RandomQuartetInputs in;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<Matrix> segs;
        for (std::size_t s = 0; s < enc.segments_per_video; ++s)
            segs.push_back(Matrix::randn(rng, enc.frames_per_segment, enc.d_in));
        in.videos.push_back(std::move(segs));
        in.music.push_back(Matrix::randn(rng, enc.music_tokens, enc.d_in));
        in.text.push_back(Matrix::randn(rng, enc.max_text_tokens, enc.d_in));
    }
    return in;
}

/// The full retrieval path for one fusion strategy: random raw inputs go
/// through fuse_query and target_embed into the contrastive loss, so the
/// check covers the attention stacks, the fusion combination, and the loss
/// including the trainable temperature.
inline GradCheckReport check_fusion_path(const GradSuiteConfig& cfg, FusionStrategy strategy,
                                         std::uint64_t seed) {
    std::size_t heads = cfg.dims >= 2 ? 2 : 1;
    std::size_t d = std::max<std::size_t>(heads, std::min<std::size_t>(cfg.dims, 16) / heads * heads);
    EncoderConfig enc;
    enc.d_in = std::max<std::size_t>(2, std::min<std::size_t>(cfg.dims, 16));
    enc.max_text_tokens = 4;
    enc.music_tokens = 3;
    enc.frames_per_segment = 2;
    enc.segments_per_video = 2;
    FusionConfig fcfg;
    fcfg.d = d;
    fcfg.self_attn_layers = 1;
    fcfg.heads = heads;
    fcfg.strategy = strategy;
    FusionModel model = FusionModel::create(fcfg, enc, mix_seed(seed, "gradcheck.fusion"));
    // Check at a generic point: symmetric inits (zero norm biases) can make a
    // width-1 branch constant, where the true gradient vanishes but the
    // normalization backward amplifies rounding noise by its 1/eps slope.
    Rng jitter(mix_seed(seed, "gradcheck.fusion.jitter"));
    for (Parameter& p : model.store())
        for (double& v : p.value.data) v += 0.1 * jitter.normal();

    std::size_t b = 3;
    Rng rng(mix_seed(seed, "gradcheck.fusion.inputs"));
    RandomQuartetInputs in = random_quartet_inputs(rng, enc, b);

    auto loss = [&](bool with_grad) {
        Tape t;
        std::vector<Node> qs, ms;
        for (std::size_t i = 0; i < b; ++i) {
            FusionInputs fi;
            fi.video_segments = &in.videos[i];
            fi.music = &in.music[i];
            fi.text = &in.text[i];
            qs.push_back(model.fuse_query(t, fi));
            ms.push_back(model.target_embed(t, in.music[i]));
        }
        Node q = b == 1 ? qs[0] : t.concat_rows(qs);
        Node m = b == 1 ? ms[0] : t.concat_rows(ms);
        Node l = cmc_loss(t, q, m, model.log_tau(), true);
        double v = t.value(l).at(0, 0);
        if (with_grad) t.backward(l);
        return v;
    };
    return check_gradients(model.store(), loss, grad_opts(cfg, seed));
}

/// Eq. 3 in isolation, with the embeddings themselves as the parameters.
inline GradCheckReport check_contrastive_path(const GradSuiteConfig& cfg, bool normalize,
                                              std::uint64_t seed) {
    std::size_t d = std::max<std::size_t>(1, std::min<std::size_t>(cfg.dims, 16));
    std::size_t b = 4;
    Rng rng(mix_seed(seed, "gradcheck.cmc"));
    ParameterStore store;
    Parameter& q = store.add("q", Matrix::randn(rng, b, d));
    Parameter& m = store.add("m", Matrix::randn(rng, b, d));
    Parameter& log_tau = store.add("log_tau", Matrix::full(1, 1, std::log(0.3)));

    auto loss = [&](bool with_grad) {
        Tape t;
        Node l = cmc_loss(t, t.param(q), t.param(m), log_tau, normalize);
        double v = t.value(l).at(0, 0);
        if (with_grad) t.backward(l);
        return v;
    };
    return check_gradients(store, loss, grad_opts(cfg, seed));
}

/// The decoder loss including the music-prefix projection f_l. The head
/// and the constant-initialized gains/biases are randomized first so no
/// parameter sits at a gradient-free point.
inline GradCheckReport check_reasoner_path(const GradSuiteConfig& cfg, std::uint64_t seed) {
    std::size_t heads = cfg.dims >= 2 ? 2 : 1;
    std::size_t w = std::max<std::size_t>(heads, std::min<std::size_t>(cfg.dims, 16) / heads * heads);
    Vocabulary vocab = Vocabulary::build({"alpha beta gamma delta epsilon zeta"});
    ReasonerConfig rc;
    rc.width = w;
    rc.layers = 1;
    rc.heads = heads;
    rc.context = 16;
    rc.music_width = std::max<std::size_t>(1, cfg.dims);
    Reasoner model = Reasoner::create(vocab, rc, mix_seed(seed, "gradcheck.reasoner"));
    Rng rng(mix_seed(seed, "gradcheck.reasoner.inputs"));
    for (auto& p : model.store()) p.value = Matrix::randn(rng, p.value.rows, p.value.cols, 0.6);

    Matrix branch = Matrix::randn(rng, 3, rc.music_width);
    std::vector<int> ids = scaffold_train(vocab);
    ids.push_back(vocab.id("beta"));
    ids.push_back(vocab.id("delta"));
    ids.push_back(Vocabulary::kEos);
    std::vector<double> mask(ids.size(), 1.0);
    for (std::size_t i = 0; i < scaffold_train(vocab).size(); ++i) mask[i] = 0.0;

    auto loss = [&](bool with_grad) {
        Tape t;
        Node l = model.loss_node(t, branch, ids, mask);
        double v = t.value(l).at(0, 0);
        if (with_grad) t.backward(l);
        return v;
    };
    return check_gradients(model.store(), loss, grad_opts(cfg, seed));
}

}  // namespace detail

/// Finite-difference checks over every differentiable path, aggregated
/// across seeds; each row reports the worst relative error seen.
inline std::vector<GradPathResult> run_gradcheck_suite(const GradSuiteConfig& cfg) {
    std::vector<GradPathResult> results;
    auto run = [&](const std::string& name, auto&& fn) {
        GradPathResult r;
        r.path = name;
        r.tol = cfg.tol;
        for (std::size_t s = 0; s < cfg.seeds; ++s) detail::accumulate(r, fn(mix_seed(101 + s, name)));
        results.push_back(std::move(r));
    };

    run("tape-ops", [&](std::uint64_t s) { return detail::check_tape_ops(cfg, s); });
    for (const auto& [name, strategy] : fusion_strategy_names()) {
        run("fusion/" + name,
            [&, strat = strategy](std::uint64_t s) { return detail::check_fusion_path(cfg, strat, s); });
    }
    run("contrastive/normalized",
        [&](std::uint64_t s) { return detail::check_contrastive_path(cfg, true, s); });
    run("contrastive/raw",
        [&](std::uint64_t s) { return detail::check_contrastive_path(cfg, false, s); });
    run("reasoner", [&](std::uint64_t s) { return detail::check_reasoner_path(cfg, s); });
    return results;
}

inline bool gradcheck_all_passed(const std::vector<GradPathResult>& results) {
    for (const auto& r : results)
        if (!r.passed()) return false;
    return true;
}

inline std::string gradcheck_table(const std::vector<GradPathResult>& results) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-26s %6s %8s %14s %10s\n", "path", "seeds", "entries",
                  "max_rel_err", "status");
    out += buf;
    for (const auto& r : results) {
        std::snprintf(buf, sizeof(buf), "%-26s %6zu %8zu %14.3e %10s\n", r.path.c_str(), r.seeds,
                      r.entries, r.max_rel_err, r.passed() ? "pass" : "FAIL");
        out += buf;
    }
    return out;
}

}  // namespace musechat
