#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "musechat/contrastive.hpp"
#include "musechat/encoders.hpp"
#include "musechat/errors.hpp"
#include "musechat/fusion.hpp"
#include "musechat/nn.hpp"
#include "musechat/optim.hpp"
#include "musechat/params.hpp"
#include "musechat/rng.hpp"
#include "musechat/tape.hpp"

namespace musechat {

/// Word-level token table. Ids are dense from zero with the special tokens
/// reserved up front, then the scaffold words, then the sorted corpus words.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kMusic = 3;       // the projected-embedding slot
    static constexpr int kTitleOpen = 4;   // title delimiter
    static constexpr int kTitleClose = 5;  // title delimiter

    static const std::vector<std::string>& special_tokens() {
        static const std::vector<std::string> s{"<pad>", "<bos>", "<eos>",
                                                "<music>", "<title>", "</title>"};
        return s;
    }

    static const std::vector<std::string>& scaffold_words() {
        static const std::vector<std::string> s{"music", "feature", "generate", "recommendation",
                                                "title"};
        return s;
    }

    static Vocabulary build(const std::vector<std::string>& corpus) {
        Vocabulary v;
        for (const std::string& t : special_tokens()) v.push(t);
        for (const std::string& t : scaffold_words()) v.push(t);
        std::vector<std::string> words;
        for (const std::string& text : corpus)
            for (std::string& w : tokenize_words(text)) words.push_back(std::move(w));
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
        for (const std::string& w : words)
            if (!v.index_.count(w)) v.push(w);
        return v;
    }

    std::size_t size() const { return tokens_.size(); }
    bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        if (it == index_.end()) throw DataError("token not in vocabulary: " + tok);
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw DataError("token id " + std::to_string(id) + " out of vocabulary of " +
                            std::to_string(tokens_.size()));
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::vector<int> encode_words(const std::vector<std::string>& words) const {
        std::vector<int> ids;
        ids.reserve(words.size());
        for (const std::string& w : words) ids.push_back(id(w));
        return ids;
    }

    std::vector<int> encode(const std::string& text) const {
        return encode_words(tokenize_words(text));
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int i : ids) {
            if (!out.empty()) out += ' ';
            out += token(i);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw FormatError("cannot open " + path + " for writing");
        for (const std::string& t : tokens_) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError("cannot open " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(in, line)) v.push(line);
        const auto& specials = special_tokens();
        if (v.tokens_.size() < specials.size())
            throw FormatError("vocabulary file " + path + " is missing special tokens");
        for (std::size_t i = 0; i < specials.size(); ++i)
            if (v.tokens_[i] != specials[i])
                throw FormatError("vocabulary file " + path + " has wrong special token at line " +
                                  std::to_string(i + 1));
        return v;
    }

  private:
    void push(const std::string& tok) {
        if (index_.count(tok)) throw DataError("duplicate vocabulary token: " + tok);
        index_.emplace(tok, static_cast<int>(tokens_.size()));
        tokens_.push_back(tok);
    }

    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

/// Training scaffold: the music slot sits in the first input position,
/// followed by the fixed instruction words.
inline std::vector<int> scaffold_train(const Vocabulary& v) {
    return {Vocabulary::kMusic, v.id("music"), v.id("feature"), v.id("generate"),
            v.id("recommendation")};
}

/// Inference scaffold. Without a title it matches the training scaffold;
/// with one, the delimited title block precedes the music slot.
inline std::vector<int> scaffold_infer(const Vocabulary& v, const std::optional<std::string>& title) {
    if (!title) return scaffold_train(v);
    std::vector<int> ids{v.id("music"), v.id("title"), Vocabulary::kTitleOpen};
    for (int t : v.encode(*title)) ids.push_back(t);
    ids.push_back(Vocabulary::kTitleClose);
    ids.push_back(v.id("music"));
    ids.push_back(v.id("feature"));
    ids.push_back(Vocabulary::kMusic);
    ids.push_back(v.id("generate"));
    ids.push_back(v.id("recommendation"));
    return ids;
}

struct ReasonerConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t width = 64;
    std::size_t context = 128;
    double temperature = 0.1;
    std::size_t music_width = 32;  // width of the frozen target-music branch

    void validate() const {
        if (heads == 0 || width % heads != 0)
            throw ConfigError("reasoner width " + std::to_string(width) +
                              " not divisible by heads " + std::to_string(heads));
        if (context < 2) throw ConfigError("reasoner context must be at least 2");
        if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
    }
};

/// Small causal decoder conditioned on the averaged, projected target-music
/// branch output occupying the music slot of the scaffold.
class Reasoner {
  public:
    struct Layer {
        SelfAttentionLayer attn;
        Linear ff1, ff2;
        Parameter* ffn_g = nullptr;
        Parameter* ffn_b = nullptr;
    };

    static Reasoner create(Vocabulary vocab, ReasonerConfig cfg, std::uint64_t seed) {
        cfg.validate();
        Reasoner r;
        r.vocab_ = std::move(vocab);
        r.cfg_ = cfg;
        std::size_t w = cfg.width;
        r.tok_emb_ = add_randn(r.store_, seed, "emb.tok", r.vocab_.size(), w,
                               1.0 / std::sqrt(static_cast<double>(w)));
        r.pos_emb_ = add_randn(r.store_, seed, "emb.pos", cfg.context, w,
                               1.0 / std::sqrt(static_cast<double>(w)));
        r.f_l_ = Linear::create(r.store_, "f_l", cfg.music_width, w, seed);
        for (std::size_t i = 0; i < cfg.layers; ++i) {
            std::string p = "layer" + std::to_string(i);
            Layer l;
            l.attn = SelfAttentionLayer::create(r.store_, p + ".attn", w, cfg.heads, seed);
            l.ff1 = Linear::create(r.store_, p + ".ff1", w, w, seed);
            l.ff2 = Linear::create(r.store_, p + ".ff2", w, w, seed);
            l.ffn_g = add_const(r.store_, p + ".ffn_g", 1, w, 1.0);
            l.ffn_b = add_const(r.store_, p + ".ffn_b", 1, w, 0.0);
            r.layers_.push_back(l);
        }
        // zero-initialized head: an untrained model is exactly uniform
        r.head_ = Linear::create(r.store_, "head", w, r.vocab_.size(), seed, /*zero_init=*/true);
        return r;
    }

    const Vocabulary& vocab() const { return vocab_; }
    const ReasonerConfig& config() const { return cfg_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    /// f_l applied to the arithmetic mean over all branch-output rows.
    Node music_prefix(Tape& t, const Matrix& branch_out) const {
        if (branch_out.rows == 0) throw ContractError("music prefix of an empty sequence");
        if (branch_out.cols != cfg_.music_width)
            throw DimensionError("music branch width " + branch_out.shape_str() + " vs configured " +
                                 std::to_string(cfg_.music_width));
        return f_l_.apply(t, t.mean_rows(t.input(branch_out)));
    }

    /// Per-position vocabulary logits for the id sequence, with the music
    /// slot's input embedding replaced by the projected prefix.
    Node logits(Tape& t, const std::vector<int>& ids, Node prefix) const {
        if (ids.empty()) throw ContractError("empty decoder input");
        if (ids.size() > cfg_.context)
            throw ContractError("sequence of " + std::to_string(ids.size()) +
                                " tokens exceeds context " + std::to_string(cfg_.context));
        for (int id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size())
                throw DataError("token id " + std::to_string(id) + " out of vocabulary of " +
                                std::to_string(vocab_.size()));

        Node table = t.param(*tok_emb_);
        std::vector<Node> pieces;
        std::vector<std::size_t> run;
        auto flush = [&]() {
            if (!run.empty()) {
                pieces.push_back(t.gather_rows(table, run));
                run.clear();
            }
        };
        for (int id : ids) {
            if (id == Vocabulary::kMusic) {
                flush();
                pieces.push_back(prefix);
            } else {
                run.push_back(static_cast<std::size_t>(id));
            }
        }
        flush();
        Node x = pieces.size() == 1 ? pieces[0] : t.concat_rows(pieces);
        x = t.add(x, t.slice_rows(t.param(*pos_emb_), 0, ids.size()));

        Node mask = t.input(causal_mask(ids.size()));
        for (const Layer& l : layers_) {
            Node h = l.attn.apply(t, x, mask);
            Node ff = l.ff2.apply(t, t.tanh_elem(l.ff1.apply(t, h)));
            x = t.layer_norm_rows(t.add(h, ff), t.param(*l.ffn_g), t.param(*l.ffn_b));
        }
        return head_.apply(t, x);
    }

    /// Sum of next-token negative log-likelihoods over positions whose
    /// target weight is nonzero (the response; scaffold predictions are
    /// masked out). `target_mask` aligns with `ids`.
    Node loss_node(Tape& t, const Matrix& branch_out, const std::vector<int>& ids,
                   const std::vector<double>& target_mask) const {
        if (target_mask.size() != ids.size())
            throw DimensionError("mask of " + std::to_string(target_mask.size()) + " for " +
                                 std::to_string(ids.size()) + " tokens");
        if (ids.size() < 2) throw ContractError("loss needs at least two tokens");
        Node lg = t.log_softmax_rows(logits(t, ids, music_prefix(t, branch_out)));
        Node steps = t.slice_rows(lg, 0, ids.size() - 1);  // position i predicts token i+1
        std::vector<std::size_t> targets(ids.size() - 1);
        std::vector<double> weights(ids.size() - 1);
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            targets[i] = static_cast<std::size_t>(ids[i + 1]);
            weights[i] = target_mask[i + 1];
        }
        return t.select_nll(steps, targets, weights);
    }

    struct LossValue {
        double total = 0.0;   // Eq.-style summed NLL
        double tokens = 0.0;  // total target weight
        double mean() const { return tokens > 0.0 ? total / tokens : 0.0; }
    };

    LossValue generation_loss(const Matrix& branch_out, const std::vector<int>& ids,
                              const std::vector<double>& target_mask) const {
        LossValue v;
        for (std::size_t i = 1; i < target_mask.size(); ++i) v.tokens += target_mask[i];
        if (v.tokens == 0.0) return v;  // zero-length response: empty sum
        Tape t;
        v.total = t.value(loss_node(t, branch_out, ids, target_mask)).at(0, 0);
        return v;
    }

    struct Generation {
        std::vector<int> ids;  // generated response ids, excluding the scaffold and EOS
        std::string text;
    };

    /// Decodes from the inference scaffold until EOS or the context limit.
    /// Temperatures at or below 0.1 decode greedily (ties to the lowest
    /// id); higher temperatures sample from the scaled softmax.
    Generation generate(const Matrix& branch_out, const std::optional<std::string>& title,
                        std::uint64_t sample_seed = 0) const {
        std::vector<int> ids = scaffold_infer(vocab_, title);
        std::size_t scaffold_len = ids.size();
        Rng rng(mix_seed(sample_seed, "reasoner.sample"));
        while (ids.size() < cfg_.context) {
            Tape t;
            Node lg = logits(t, ids, music_prefix(t, branch_out));
            const Matrix& L = t.value(lg);
            std::size_t last = L.rows - 1;
            int next;
            if (cfg_.temperature <= 0.1) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < L.cols; ++c)
                    if (L.at(last, c) > L.at(last, best)) best = c;
                next = static_cast<int>(best);
            } else {
                std::vector<double> probs(L.cols);
                double mx = L.at(last, 0);
                for (std::size_t c = 1; c < L.cols; ++c) mx = std::max(mx, L.at(last, c));
                double denom = 0.0;
                for (std::size_t c = 0; c < L.cols; ++c) {
                    probs[c] = std::exp((L.at(last, c) - mx) / cfg_.temperature);
                    denom += probs[c];
                }
                double u = rng.uniform() * denom, acc = 0.0;
                std::size_t pick = L.cols - 1;
                for (std::size_t c = 0; c < L.cols; ++c) {
                    acc += probs[c];
                    if (u < acc) {
                        pick = c;
                        break;
                    }
                }
                next = static_cast<int>(pick);
            }
            if (next == Vocabulary::kEos) break;
            ids.push_back(next);
        }
        Generation g;
        g.ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(scaffold_len), ids.end());
        g.text = vocab_.decode(g.ids);
        return g;
    }

  private:
    Vocabulary vocab_;
    ReasonerConfig cfg_;
    ParameterStore store_;
    Parameter* tok_emb_ = nullptr;
    Parameter* pos_emb_ = nullptr;
    Linear f_l_;
    std::vector<Layer> layers_;
    Linear head_;
};

/// One training example: the frozen branch output, the full id sequence
/// (scaffold + response + EOS) and the prediction mask over it.
struct ReasonerItem {
    Matrix branch_out;
    std::vector<int> ids;
    std::vector<double> mask;
};

/// Encodes a reasoning corpus against a frozen retrieval model: the target
/// branch is evaluated without gradients, the text becomes scaffolded ids.
inline std::vector<ReasonerItem> build_reasoner_items(const FusionModel& frozen,
                                                      const RetrievalDataset& data,
                                                      const Vocabulary& vocab,
                                                      std::size_t context) {
    data.validate();
    std::vector<ReasonerItem> items;
    items.reserve(data.quartets.size());
    std::vector<int> scaffold = scaffold_train(vocab);
    for (const auto& q : data.quartets) {
        ReasonerItem item;
        Tape t;
        item.branch_out = t.value(frozen.music_t_branch(t, data.music->require(q.target_id).segments.at(0)));
        item.ids = scaffold;
        for (int id : vocab.encode(q.reasoning)) item.ids.push_back(id);
        item.ids.push_back(Vocabulary::kEos);
        if (item.ids.size() > context)
            throw DataError("reasoning for " + q.target_id + " needs " +
                            std::to_string(item.ids.size()) + " tokens, context is " +
                            std::to_string(context));
        item.mask.assign(item.ids.size(), 1.0);
        for (std::size_t i = 0; i < scaffold.size(); ++i) item.mask[i] = 0.0;
        items.push_back(std::move(item));
    }
    return items;
}

struct ReasonerTrainConfig {
    std::size_t steps = 500;
    std::size_t batch_size = 8;
    double lr = 3e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 7;

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    }
};

/// Seeded batch-selection state machine: shuffled passes over the items,
/// re-shuffling whenever fewer than a batch remain. Replaying `next` calls
/// is pure index arithmetic, which is how a resumed run reconstructs the
/// exact batch sequence of an uninterrupted one.
class ReasonerBatchCursor {
  public:
    ReasonerBatchCursor(std::size_t n, std::uint64_t seed) : seed_(seed), order_(n) {
        if (n == 0) throw DataError("reasoner training set is empty");
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        reshuffle();
    }

    std::vector<std::size_t> next(std::size_t b) {
        if (cursor_ + b > order_.size()) {
            cursor_ = 0;
            ++epoch_;
            reshuffle();
        }
        std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + b));
        cursor_ += b;
        return idx;
    }

  private:
    void reshuffle() {
        Rng r(mix_seed(mix_seed(seed_, "reasoner.shuffle"), epoch_));
        r.shuffle(order_);
    }

    std::uint64_t seed_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

/// Seeded mini-batch training on the mean per-token NLL, running steps
/// [first_step, cfg.steps). Only the decoder's own parameter store is
/// touched; the music encoder inputs are frozen matrices baked into the
/// items. `opt_in`, when given, carries moments across a resume.
inline TrainResult train_reasoner_from(Reasoner& model, const std::vector<ReasonerItem>& items,
                                       const ReasonerTrainConfig& cfg, std::size_t first_step,
                                       AdamW* opt_in, std::ostream* metrics = nullptr) {
    cfg.validate();
    if (items.empty()) throw DataError("reasoner training set is empty");
    if (first_step > cfg.steps)
        throw ConfigError("resume step " + std::to_string(first_step) + " is past " +
                          std::to_string(cfg.steps) + " configured steps");
    std::size_t b = std::min(cfg.batch_size, items.size());

    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW local(model.store(), ocfg);
    AdamW& opt = opt_in ? *opt_in : local;

    ReasonerBatchCursor batches(items.size(), cfg.seed);
    for (std::size_t step = 0; step < first_step; ++step) batches.next(b);

    TrainResult result;
    for (std::size_t step = first_step; step < cfg.steps; ++step) {
        std::vector<std::size_t> idx = batches.next(b);
        Tape t;
        Node total{0};
        double tokens = 0.0;
        for (std::size_t k = 0; k < b; ++k) {
            const ReasonerItem& item = items[idx[k]];
            Node l = model.loss_node(t, item.branch_out, item.ids, item.mask);
            total = k == 0 ? l : t.add(total, l);
            for (std::size_t i = 1; i < item.mask.size(); ++i) tokens += item.mask[i];
        }
        if (tokens == 0.0) throw DataError("training batch has no response tokens");
        Node mean = t.scale(total, 1.0 / tokens);
        double lval = t.value(mean).at(0, 0);
        if (!std::isfinite(lval))
            throw ContractError("non-finite loss at step " + std::to_string(step));
        model.store().zero_grad();
        t.backward(mean);
        opt.step();
        result.losses.push_back(lval);
        if (metrics) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%zu,%.17g", step, lval);
            (*metrics) << buf << "\n";
        }
        ++result.steps;
    }
    return result;
}

inline TrainResult train_reasoner(Reasoner& model, const std::vector<ReasonerItem>& items,
                                  const ReasonerTrainConfig& cfg, std::ostream* metrics = nullptr) {
    return train_reasoner_from(model, items, cfg, 0, nullptr, metrics);
}

}  // namespace musechat
