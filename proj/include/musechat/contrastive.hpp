#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "musechat/datasim.hpp"
#include "musechat/encoders.hpp"
#include "musechat/errors.hpp"
#include "musechat/fusion.hpp"
#include "musechat/optim.hpp"
#include "musechat/rng.hpp"
#include "musechat/tape.hpp"

namespace musechat {

inline constexpr double kLogTauMin = -6.907755278982137;  // ln 1e-3
inline constexpr double kLogTauMax = 4.605170185988092;   // ln 1e2

/// h(x, y) = exp(x.y / tau), optionally after L2-normalizing both sides.
inline double discriminate(const Matrix& x, const Matrix& y, double tau, bool normalize = true) {
    if (x.size() != y.size())
        throw DimensionError("discriminate: width mismatch " + x.shape_str() + " vs " + y.shape_str());
    if (!(tau > 0.0)) throw ContractError("discriminate: tau must be positive");
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x.data[i] * y.data[i];
        nx += x.data[i] * x.data[i];
        ny += y.data[i] * y.data[i];
    }
    if (normalize) dot /= std::sqrt(nx + Tape::kNormEps2) * std::sqrt(ny + Tape::kNormEps2);
    return std::exp(dot / tau);
}

/// For each anchor row i of `queries`, the loss term is the negative log of
/// the softmax probability of target row i against every target in the
/// batch; terms are summed (not averaged) over the batch.
inline Node cmc_loss(Tape& t, Node queries, Node targets, Parameter& log_tau, bool normalize = true) {
    if (t.value(queries).rows != t.value(targets).rows)
        throw DimensionError("cmc_loss: batch mismatch " + t.value(queries).shape_str() + " vs " +
                             t.value(targets).shape_str());
    Node q = queries, m = targets;
    if (normalize) {
        q = t.l2_normalize_rows(q);
        m = t.l2_normalize_rows(m);
    }
    Node sims = t.matmul(q, t.transpose(m));
    Node inv_tau = t.exp_elem(t.scale(t.param(log_tau), -1.0));
    Node scaled = t.scale_by(sims, inv_tau);
    Node logp = t.log_softmax_rows(scaled);
    std::size_t b = t.value(queries).rows;
    std::vector<std::size_t> diag(b);
    for (std::size_t i = 0; i < b; ++i) diag[i] = i;
    return t.select_nll(logp, diag, std::vector<double>(b, 1.0));
}

/// A quartet set bound to its feature catalogs and the text featurizer.
struct RetrievalDataset {
    std::vector<DialogueQuartet> quartets;
    const FeatureCatalog* videos = nullptr;
    const FeatureCatalog* music = nullptr;
    const SynthEncoder* encoder = nullptr;

    void validate() const {
        if (!videos || !music || !encoder)
            throw ContractError("retrieval dataset missing catalogs or encoder");
        for (const auto& q : quartets) {
            videos->require(q.video_id);
            // an empty candidate id means "not pinned": evaluation fills it
            // from the first turn, training requires it at batch time
            if (!q.candidate_id.empty()) music->require(q.candidate_id);
            music->require(q.target_id);
        }
    }
};

struct BatchGraph {
    Node queries;  // B x d fusion vectors
    Node targets;  // B x d target embeddings
};

/// Builds the fused query and target embedding for each selected quartet
/// and stacks them into aligned B x d nodes.
inline BatchGraph build_batch(Tape& t, const FusionModel& model, const RetrievalDataset& data,
                              const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ContractError("empty training batch");
    std::vector<Node> qs, ms;
    qs.reserve(indices.size());
    ms.reserve(indices.size());
    std::vector<std::string> seen;
    for (std::size_t idx : indices) {
        if (idx >= data.quartets.size())
            throw ContractError("batch index " + std::to_string(idx) + " out of range");
        const DialogueQuartet& q = data.quartets[idx];
        if (std::find(seen.begin(), seen.end(), q.target_id) != seen.end())
            throw DataError("duplicate target " + q.target_id + " within one batch");
        seen.push_back(q.target_id);
        if (q.candidate_id.empty())
            throw DataError("quartet for video " + q.video_id +
                            " has no pinned candidate; training requires one");
        const CatalogItem& video = data.videos->require(q.video_id);
        const CatalogItem& cand = data.music->require(q.candidate_id);
        const CatalogItem& target = data.music->require(q.target_id);
        Matrix text = data.encoder->encode_prompt(q.prompt);
        FusionInputs in;
        in.video_segments = &video.segments;
        in.music = &cand.segments.at(0);
        in.text = &text;
        qs.push_back(model.fuse_query(t, in));
        ms.push_back(model.target_embed(t, target.segments.at(0)));
    }
    BatchGraph g;
    g.queries = qs.size() == 1 ? qs[0] : t.concat_rows(qs);
    g.targets = ms.size() == 1 ? ms[0] : t.concat_rows(ms);
    return g;
}

struct ContrastiveConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double lr = 3e-3;
    double weight_decay = 1e-4;
    bool normalize = true;
    double tau0 = 0.1;
    std::uint64_t seed = 7;

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
        if (!(tau0 > 0.0)) throw ConfigError("tau0 must be > 0");
    }
};

struct TrainResult {
    std::vector<double> losses;
    std::vector<double> taus;
    std::size_t steps = 0;
};

inline std::string metrics_line(std::size_t step, double loss, double tau) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g", step, loss, tau);
    return buf;
}

/// Applies epoch k's seeded shuffle to `order` in place. Epoch orders
/// compose: replaying epochs 0..k-1 on an identity permutation reproduces
/// the exact order a single uninterrupted run would use at epoch k.
inline void shuffle_for_epoch(std::vector<std::size_t>& order, std::uint64_t seed,
                              std::size_t epoch) {
    Rng shuffler(mix_seed(mix_seed(seed, "train.shuffle"), epoch));
    shuffler.shuffle(order);
}

/// One epoch of shuffled mini-batches (tail batches smaller than
/// batch_size are dropped); one AdamW step per batch; log tau is clamped
/// after every step. `step_base` numbers the metrics rows "step,loss,tau".
inline void train_epoch(FusionModel& model, const RetrievalDataset& data,
                        const ContrastiveConfig& cfg, const std::vector<std::size_t>& order,
                        AdamW& opt, TrainResult& result, std::size_t step_base,
                        std::ostream* metrics = nullptr) {
    std::size_t n = order.size();
    std::size_t b = cfg.batch_size;
    Parameter& log_tau = model.log_tau();
    std::size_t batch_i = 0;
    for (std::size_t start = 0; start + b <= n; start += b, ++batch_i) {
        std::size_t step = step_base + batch_i;
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(start + b));
        Tape t;
        BatchGraph g = build_batch(t, model, data, idx);
        Node loss = cmc_loss(t, g.queries, g.targets, log_tau, cfg.normalize);
        double lval = t.value(loss).at(0, 0);
        if (!std::isfinite(lval)) throw ContractError("non-finite loss at step " + std::to_string(step));
        model.store().zero_grad();
        t.backward(loss);
        opt.step();
        log_tau.value.at(0, 0) = std::clamp(log_tau.value.at(0, 0), kLogTauMin, kLogTauMax);
        double tau = std::exp(log_tau.value.at(0, 0));
        result.losses.push_back(lval);
        result.taus.push_back(tau);
        if (metrics) (*metrics) << metrics_line(step, lval, tau) << "\n";
        ++result.steps;
    }
}

/// Seeded epochs of train_epoch starting from `start_epoch` (resuming a
/// checkpointed run replays the earlier epochs' shuffles but none of their
/// arithmetic). `opt_in`, when given, carries moments across the resume.
inline TrainResult train_retrieval_from(FusionModel& model, const RetrievalDataset& data,
                                        const ContrastiveConfig& cfg, std::size_t start_epoch,
                                        AdamW* opt_in, std::ostream* metrics = nullptr) {
    cfg.validate();
    data.validate();
    std::size_t n = data.quartets.size();
    if (n == 0) throw DataError("training dataset is empty");
    std::size_t b = cfg.batch_size;
    if (n / b == 0)
        throw ConfigError("batch size " + std::to_string(b) + " exceeds dataset size " +
                          std::to_string(n));
    if (start_epoch > cfg.epochs)
        throw ConfigError("resume epoch " + std::to_string(start_epoch) + " is past " +
                          std::to_string(cfg.epochs) + " configured epochs");

    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW local(model.store(), ocfg);
    AdamW& opt = opt_in ? *opt_in : local;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < start_epoch; ++epoch) shuffle_for_epoch(order, cfg.seed, epoch);

    std::size_t steps_per_epoch = n / b;
    TrainResult result;
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        shuffle_for_epoch(order, cfg.seed, epoch);
        train_epoch(model, data, cfg, order, opt, result, epoch * steps_per_epoch, metrics);
    }
    return result;
}

inline TrainResult train_retrieval(FusionModel& model, const RetrievalDataset& data,
                                   const ContrastiveConfig& cfg, std::ostream* metrics = nullptr) {
    return train_retrieval_from(model, data, cfg, 0, nullptr, metrics);
}

}  // namespace musechat
