#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "musechat/encoders.hpp"
#include "musechat/errors.hpp"
#include "musechat/nn.hpp"
#include "musechat/params.hpp"
#include "musechat/tape.hpp"

namespace musechat {

enum class FusionStrategy {
    mvt,
    sum,
    self_attn,
    cross_attn,
    mvp,
    music_video_order,
    text_video_order,
    no_video,
    no_candidate_music,
};

inline const std::vector<std::pair<std::string, FusionStrategy>>& fusion_strategy_names() {
    static const std::vector<std::pair<std::string, FusionStrategy>> v{
        {"mvt", FusionStrategy::mvt},
        {"sum", FusionStrategy::sum},
        {"self-attn", FusionStrategy::self_attn},
        {"cross-attn", FusionStrategy::cross_attn},
        {"mvp", FusionStrategy::mvp},
        {"music-video-order", FusionStrategy::music_video_order},
        {"text-video-order", FusionStrategy::text_video_order},
        {"no-video", FusionStrategy::no_video},
        {"no-candidate-music", FusionStrategy::no_candidate_music},
    };
    return v;
}

inline std::string fusion_strategy_name(FusionStrategy s) {
    for (const auto& [name, val] : fusion_strategy_names())
        if (val == s) return name;
    throw ConfigError("unknown fusion strategy code");
}

inline FusionStrategy parse_fusion_strategy(const std::string& name) {
    std::string all;
    for (const auto& [n, val] : fusion_strategy_names()) {
        if (n == name) return val;
        all += all.empty() ? n : ", " + n;
    }
    throw ConfigError("unknown fusion strategy \"" + name + "\"; valid: " + all);
}

struct FusionConfig {
    std::size_t d = 32;
    std::size_t self_attn_layers = 2;
    std::size_t heads = 4;
    FusionStrategy strategy = FusionStrategy::mvt;

    void validate() const {
        if (heads == 0 || d % heads != 0)
            throw ConfigError("fusion width " + std::to_string(d) + " not divisible by heads " +
                              std::to_string(heads));
    }

    /// sum/mvp use no branch stacks; cross-attn is Eq. 2 with 0 layers.
    std::size_t effective_layers() const {
        switch (strategy) {
            case FusionStrategy::sum:
            case FusionStrategy::cross_attn:
            case FusionStrategy::mvp:
                return 0;
            default:
                return self_attn_layers;
        }
    }
};

struct FusionInputs {
    const std::vector<Matrix>* video_segments = nullptr;  // raw d_in frames per segment
    const Matrix* music = nullptr;                        // raw candidate-music sequence, cls first
    const Matrix* text = nullptr;                         // raw prompt sequence, cls first
};

/// The retrieval model: per-modality projections, branch self-attention
/// stacks, the cross-attention fusion producing the query vector, the
/// separate target-music encoder, and the loss temperature.
class FusionModel {
  public:
    static FusionModel create(FusionConfig fcfg, EncoderConfig ecfg, std::uint64_t seed,
                              double tau0 = 0.1) {
        fcfg.validate();
        FusionModel m;
        m.fcfg_ = fcfg;
        m.ecfg_ = ecfg;
        std::size_t d = fcfg.d;
        std::size_t d_in = ecfg.d_in;
        double ps = 1.0 / std::sqrt(static_cast<double>(d_in));
        FusionStrategy s = fcfg.strategy;

        bool has_video = s != FusionStrategy::no_video;
        bool has_text = s != FusionStrategy::mvp;
        bool has_music_c = s != FusionStrategy::mvp && s != FusionStrategy::no_candidate_music;

        if (has_video) m.proj_video_ = add_randn(m.store_, seed, "proj.video.w", d_in, d, ps);
        if (has_text) {
            m.proj_text_ = add_randn(m.store_, seed, "proj.text.w", d_in, d, ps);
            m.text_pos_ = add_const(m.store_, "text.pos", 1 + ecfg.max_text_tokens, d, 0.0);
        }
        if (has_music_c) m.proj_music_c_ = add_randn(m.store_, seed, "proj.music_c.w", d_in, d, ps);
        m.proj_music_t_ = add_randn(m.store_, seed, "proj.music_t.w", d_in, d, ps);

        std::size_t layers = fcfg.effective_layers();
        for (std::size_t i = 0; i < layers; ++i) {
            std::string n = ".layer" + std::to_string(i);
            if (has_text)
                m.branch_text_.push_back(
                    SelfAttentionLayer::create(m.store_, "branch.text" + n, d, fcfg.heads, seed));
            if (has_music_c)
                m.branch_music_c_.push_back(
                    SelfAttentionLayer::create(m.store_, "branch.music_c" + n, d, fcfg.heads, seed));
        }
        // the target-music stack always runs at the configured depth
        for (std::size_t i = 0; i < fcfg.self_attn_layers; ++i) {
            std::string n = ".layer" + std::to_string(i);
            m.branch_music_t_.push_back(
                SelfAttentionLayer::create(m.store_, "branch.music_t" + n, d, fcfg.heads, seed));
        }

        if (s == FusionStrategy::mvt || s == FusionStrategy::cross_attn || s == FusionStrategy::no_video) {
            m.cross_t2a_ = MultiHeadAttention::create(m.store_, "cross.t2a", d, fcfg.heads, seed);
            m.cross_a2t_ = MultiHeadAttention::create(m.store_, "cross.a2t", d, fcfg.heads, seed);
        }
        if (s == FusionStrategy::music_video_order)
            m.cross_video_ = MultiHeadAttention::create(m.store_, "cross.v2m", d, fcfg.heads, seed);
        if (s == FusionStrategy::text_video_order)
            m.cross_video_ = MultiHeadAttention::create(m.store_, "cross.v2t", d, fcfg.heads, seed);

        m.log_tau_ = add_const(m.store_, "loss.log_tau", 1, 1, std::log(tau0));
        return m;
    }

    const FusionConfig& fusion_config() const { return fcfg_; }
    const EncoderConfig& encoder_config() const { return ecfg_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    Parameter& log_tau() { return *log_tau_; }

    /// x^{v_bar}: each segment is projected and mean-pooled over frames,
    /// then segment vectors are averaged.
    Node video_query(Tape& t, const std::vector<Matrix>& segments) const {
        if (!proj_video_) throw ConfigError(strategy_str() + " strategy has no video branch");
        if (segments.empty()) throw ContractError("video has no segments");
        std::vector<Node> pooled;
        pooled.reserve(segments.size());
        for (const Matrix& seg : segments)
            pooled.push_back(pool_video(t, project_modality(t, t.input(seg), *proj_video_)));
        if (pooled.size() == 1) return pooled[0];
        return t.mean_rows(t.concat_rows(pooled));
    }

    /// First turn ranks by the video vector alone.
    Node first_turn_embed(Tape& t, const std::vector<Matrix>& segments) const {
        return video_query(t, segments);
    }

    /// x^{t3}: project, add learned positions, run the text stack.
    Node text_branch(Tape& t, const Matrix& raw_text) const {
        if (!proj_text_) throw ConfigError(strategy_str() + " strategy has no text branch");
        if (raw_text.rows == 0 || raw_text.rows > text_pos_->value.rows)
            throw DimensionError("text sequence of " + std::to_string(raw_text.rows) +
                                 " rows exceeds positional table " + text_pos_->value.shape_str());
        Node h = project_modality(t, t.input(raw_text), *proj_text_);
        Node pos = t.slice_rows(t.param(*text_pos_), 0, raw_text.rows);
        h = t.add(h, pos);
        for (const auto& layer : branch_text_) h = layer.apply(t, h);
        return h;
    }

    /// x^{m_c}: candidate-music branch.
    Node music_c_branch(Tape& t, const Matrix& raw_music) const {
        if (!proj_music_c_) throw ConfigError(strategy_str() + " strategy has no candidate-music branch");
        Node h = project_modality(t, t.input(raw_music), *proj_music_c_);
        for (const auto& layer : branch_music_c_) h = layer.apply(t, h);
        return h;
    }

    /// Full target-music branch output (n x d), cls row first.
    Node music_t_branch(Tape& t, const Matrix& raw_music) const {
        Node h = project_modality(t, t.input(raw_music), *proj_music_t_);
        for (const auto& layer : branch_music_t_) h = layer.apply(t, h);
        return h;
    }

    /// Target-music embedding: cls output of the dedicated stack (1 x d).
    Node target_embed(Tape& t, const Matrix& raw_music) const {
        return t.slice_rows(music_t_branch(t, raw_music), 0, 1);
    }

    /// x^f = x^{v_bar} + (Att(text cls, music, music) + Att(music cls,
    /// text, text)); the video term stays outside the inner sum so the
    /// additive structure is exact.
    Node cross_fuse(Tape& t, Node video_vec, Node music_seq, Node text_seq) const {
        Node cross = cross_terms(t, music_seq, text_seq);
        return t.add(video_vec, cross);
    }

    /// The two Eq. 2 cross-attention terms, summed.
    Node cross_terms(Tape& t, Node music_seq, Node text_seq) const {
        if (!cross_t2a_.wq) throw ConfigError(strategy_str() + " strategy has no cross-attention");
        Node att1 = cross_t2a_.apply(t, t.slice_rows(text_seq, 0, 1), music_seq, music_seq);
        Node att2 = cross_a2t_.apply(t, t.slice_rows(music_seq, 0, 1), text_seq, text_seq);
        return t.add(att1, att2);
    }

    /// Strategy dispatch for the second-turn query vector.
    Node fuse_query(Tape& t, const FusionInputs& in) const {
        switch (fcfg_.strategy) {
            case FusionStrategy::mvt:
            case FusionStrategy::cross_attn: {
                return cross_fuse(t, video_query(t, need_video(in)), music_c_branch(t, need_music(in)),
                                  text_branch(t, need_text(in)));
            }
            case FusionStrategy::sum: {
                Node m = t.mean_rows(project_modality(t, t.input(need_music(in)), *proj_music_c_));
                Node txt = t.mean_rows(text_branch(t, need_text(in)));
                return t.add(video_query(t, need_video(in)), t.add(m, txt));
            }
            case FusionStrategy::self_attn: {
                Node mcls = t.slice_rows(music_c_branch(t, need_music(in)), 0, 1);
                Node tcls = t.slice_rows(text_branch(t, need_text(in)), 0, 1);
                return t.add(video_query(t, need_video(in)), t.add(mcls, tcls));
            }
            case FusionStrategy::mvp:
                return video_query(t, need_video(in));
            case FusionStrategy::music_video_order: {
                Node m = music_c_branch(t, need_music(in));
                Node att = cross_video_.apply(t, video_query(t, need_video(in)), m, m);
                Node tcls = t.slice_rows(text_branch(t, need_text(in)), 0, 1);
                return t.add(att, tcls);
            }
            case FusionStrategy::text_video_order: {
                Node txt = text_branch(t, need_text(in));
                Node att = cross_video_.apply(t, video_query(t, need_video(in)), txt, txt);
                Node mcls = t.slice_rows(music_c_branch(t, need_music(in)), 0, 1);
                return t.add(att, mcls);
            }
            case FusionStrategy::no_video:
                return cross_terms(t, music_c_branch(t, need_music(in)), text_branch(t, need_text(in)));
            case FusionStrategy::no_candidate_music: {
                Node tcls = t.slice_rows(text_branch(t, need_text(in)), 0, 1);
                return t.add(video_query(t, need_video(in)), tcls);
            }
        }
        throw ConfigError("unknown fusion strategy code");
    }

    bool has_first_turn() const { return fcfg_.strategy != FusionStrategy::no_video; }

    /// mvp has no usable second turn distinct from the first; no-video has
    /// no first turn. Everything else runs the two-turn protocol.
    bool has_second_turn() const { return fcfg_.strategy != FusionStrategy::mvp; }

    const MultiHeadAttention& cross_t2a() const { return cross_t2a_; }
    const MultiHeadAttention& cross_a2t() const { return cross_a2t_; }
    const std::vector<SelfAttentionLayer>& branch_music_t() const { return branch_music_t_; }

  private:
    std::string strategy_str() const { return fusion_strategy_name(fcfg_.strategy); }

    const std::vector<Matrix>& need_video(const FusionInputs& in) const {
        if (!in.video_segments)
            throw ConfigError(strategy_str() + " strategy requires video input");
        return *in.video_segments;
    }
    const Matrix& need_music(const FusionInputs& in) const {
        if (!in.music) throw ConfigError(strategy_str() + " strategy requires candidate-music input");
        return *in.music;
    }
    const Matrix& need_text(const FusionInputs& in) const {
        if (!in.text) throw ConfigError(strategy_str() + " strategy requires text input");
        return *in.text;
    }

    FusionConfig fcfg_;
    EncoderConfig ecfg_;
    ParameterStore store_;
    Parameter* proj_video_ = nullptr;
    Parameter* proj_text_ = nullptr;
    Parameter* proj_music_c_ = nullptr;
    Parameter* proj_music_t_ = nullptr;
    Parameter* text_pos_ = nullptr;
    Parameter* log_tau_ = nullptr;
    std::vector<SelfAttentionLayer> branch_text_;
    std::vector<SelfAttentionLayer> branch_music_c_;
    std::vector<SelfAttentionLayer> branch_music_t_;
    MultiHeadAttention cross_t2a_;
    MultiHeadAttention cross_a2t_;
    MultiHeadAttention cross_video_;
};

}  // namespace musechat
