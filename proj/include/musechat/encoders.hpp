#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "musechat/binio.hpp"
#include "musechat/errors.hpp"
#include "musechat/matrix.hpp"
#include "musechat/nn.hpp"
#include "musechat/rng.hpp"
#include "musechat/tape.hpp"

namespace musechat {

enum class Modality : std::uint8_t { video = 0, text = 1, music = 2 };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::video: return "video";
        case Modality::text: return "text";
        case Modality::music: return "music";
    }
    throw ConfigError("unknown modality code " + std::to_string(static_cast<int>(m)));
}

struct EncoderConfig {
    std::size_t d_in = 48;
    std::size_t d = 32;
    std::size_t latent_dim = 16;
    std::size_t max_text_tokens = 24;
    std::size_t music_tokens = 16;
    std::size_t frames_per_segment = 8;
    std::size_t segments_per_video = 12;
    double feature_noise = 0.05;
    // identity of the frozen providers; never touched by training
    std::uint64_t provider_seed = 1002003004ull;
};

/// Lowercases and splits on non-alphanumeric runs.
inline std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

/// Elementwise mean of equal-shaped matrices; sorted extended-precision
/// accumulation makes the result independent of list order.
inline Matrix segment_average(const std::vector<Matrix>& segments) {
    if (segments.empty()) throw ContractError("segment_average: empty list");
    for (const Matrix& s : segments) {
        if (!s.same_shape(segments[0]))
            throw DimensionError("segment_average: " + s.shape_str() + " vs " + segments[0].shape_str());
    }
    Matrix out(segments[0].rows, segments[0].cols);
    std::vector<double> vals(segments.size());
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        for (std::size_t s = 0; s < segments.size(); ++s) vals[s] = segments[s].data[i];
        std::sort(vals.begin(), vals.end());
        long double sum = 0.0L;
        for (double v : vals) sum += v;
        out.data[i] = static_cast<double>(sum / static_cast<long double>(segments.size()));
    }
    return out;
}

/// Per-token linear projection of a raw sequence into model width.
inline Node project_modality(Tape& t, Node seq, Parameter& proj) {
    return t.matmul(seq, t.param(proj));
}

/// Temporal mean over projected frame rows.
inline Node pool_video(Tape& t, Node projected_frames) { return t.mean_rows(projected_frames); }

/// Frozen synthetic feature provider standing in for pretrained encoders.
/// Every output is a pure function of (provider_seed, inputs): token t of
/// an item is a frozen linear map of the item's latent factors plus
/// seeded per-item noise.
class SynthEncoder {
  public:
    explicit SynthEncoder(EncoderConfig cfg) : cfg_(cfg) {
        double s = 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim));
        for (std::size_t i = 0; i < cfg_.music_tokens; ++i)
            music_maps_.push_back(named_randn(cfg_.provider_seed, "map.music." + std::to_string(i),
                                              cfg_.latent_dim, cfg_.d_in, s));
        for (std::size_t i = 0; i < cfg_.frames_per_segment; ++i)
            video_maps_.push_back(named_randn(cfg_.provider_seed, "map.video." + std::to_string(i),
                                              cfg_.latent_dim, cfg_.d_in, s));
        music_cls_ = named_randn(cfg_.provider_seed, "cls.music", 1, cfg_.d_in, 1.0);
        text_cls_ = named_randn(cfg_.provider_seed, "cls.text", 1, cfg_.d_in, 1.0);
        pad_word_ = word_vector("<pad>");
    }

    const EncoderConfig& config() const { return cfg_; }

    /// cls row followed by music_tokens mapped-latent rows.
    Matrix encode_music(const Matrix& latent, std::uint64_t item_seed) const {
        check_latent(latent);
        Matrix out(1 + cfg_.music_tokens, cfg_.d_in);
        copy_row(out, 0, music_cls_);
        Rng noise(mix_seed(item_seed, "music.noise"));
        for (std::size_t tk = 0; tk < cfg_.music_tokens; ++tk)
            map_token(out, 1 + tk, latent, music_maps_[tk], noise);
        return out;
    }

    /// One video segment: frames_per_segment mapped-latent rows, no cls.
    Matrix encode_video_segment(const Matrix& latent, std::uint64_t item_seed, std::size_t segment) const {
        check_latent(latent);
        Matrix out(cfg_.frames_per_segment, cfg_.d_in);
        Rng noise(mix_seed(item_seed, "video.noise." + std::to_string(segment)));
        for (std::size_t f = 0; f < cfg_.frames_per_segment; ++f)
            map_token(out, f, latent, video_maps_[f], noise);
        return out;
    }

    std::vector<Matrix> encode_video(const Matrix& latent, std::uint64_t item_seed) const {
        std::vector<Matrix> segs;
        segs.reserve(cfg_.segments_per_video);
        for (std::size_t s = 0; s < cfg_.segments_per_video; ++s)
            segs.push_back(encode_video_segment(latent, item_seed, s));
        return segs;
    }

    Matrix synth_encode(const Matrix& latent, Modality modality, std::uint64_t item_seed) const {
        switch (modality) {
            case Modality::music: return encode_music(latent, item_seed);
            case Modality::video: return encode_video_segment(latent, item_seed, 0);
            case Modality::text:
                throw ConfigError("synth_encode: text sequences are built from words, not latents");
        }
        throw ConfigError("synth_encode: unknown modality code " +
                          std::to_string(static_cast<int>(modality)));
    }

    /// cls row followed by frozen per-word vectors, truncated to the
    /// configured length. Empty input yields cls plus one pad row.
    Matrix encode_text(const std::vector<std::string>& words) const {
        std::size_t n = std::min(words.size(), cfg_.max_text_tokens);
        Matrix out(1 + std::max<std::size_t>(n, 1), cfg_.d_in);
        copy_row(out, 0, text_cls_);
        if (n == 0) {
            copy_row(out, 1, pad_word_);
            return out;
        }
        for (std::size_t i = 0; i < n; ++i) copy_row(out, 1 + i, word_vector(words[i]));
        return out;
    }

    Matrix encode_prompt(const std::string& text) const { return encode_text(tokenize_words(text)); }

    Matrix word_vector(const std::string& word) const {
        return named_randn(cfg_.provider_seed, "word." + word, 1, cfg_.d_in, 1.0);
    }

  private:
    void check_latent(const Matrix& latent) const {
        if (latent.rows != 1 || latent.cols != cfg_.latent_dim)
            throw DimensionError("latent is " + latent.shape_str() + ", expected 1x" +
                                 std::to_string(cfg_.latent_dim));
    }

    static void copy_row(Matrix& dst, std::size_t r, const Matrix& row) {
        for (std::size_t j = 0; j < dst.cols; ++j) dst.at(r, j) = row.data[j];
    }

    void map_token(Matrix& out, std::size_t r, const Matrix& latent, const Matrix& map, Rng& noise) const {
        for (std::size_t j = 0; j < cfg_.d_in; ++j) {
            long double s = 0.0L;
            for (std::size_t k = 0; k < cfg_.latent_dim; ++k)
                s += static_cast<long double>(latent.data[k]) * static_cast<long double>(map.at(k, j));
            out.at(r, j) = static_cast<double>(s);
        }
        if (cfg_.feature_noise > 0.0) {
            for (std::size_t j = 0; j < cfg_.d_in; ++j) out.at(r, j) += cfg_.feature_noise * noise.normal();
        }
    }

    EncoderConfig cfg_;
    std::vector<Matrix> music_maps_;
    std::vector<Matrix> video_maps_;
    Matrix music_cls_;
    Matrix text_cls_;
    Matrix pad_word_;
};

struct CatalogItem {
    std::string id;
    Modality modality = Modality::music;
    std::vector<Matrix> segments;
};

/// Id-indexed store of per-item feature sequences; immutable once built.
/// Container format MCEB: magic, version u32, item count u32, then per
/// item: id length u16, id bytes, modality u8, segment count u8, and per
/// segment: n u16, d_in u16, row-major little-endian f64.
class FeatureCatalog {
  public:
    void add(CatalogItem item) {
        if (index_.count(item.id)) throw DataError("duplicate catalog id: " + item.id);
        if (item.segments.empty()) throw DataError("catalog item " + item.id + " has no segments");
        for (const Matrix& s : item.segments) {
            if (s.cols != item.segments[0].cols)
                throw DataError("catalog item " + item.id + " has mixed widths");
        }
        index_[item.id] = items_.size();
        items_.push_back(std::move(item));
    }

    bool has(const std::string& id) const { return index_.count(id) > 0; }

    const CatalogItem& require(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw DataError("unknown catalog id: " + id);
        return items_[it->second];
    }

    std::size_t size() const { return items_.size(); }
    const std::vector<CatalogItem>& items() const { return items_; }

    std::size_t d_in() const {
        if (items_.empty()) throw ContractError("d_in of an empty catalog");
        return items_[0].segments[0].cols;
    }

    void save(const std::string& path) const {
        BinWriter w(path);
        w.str("MCEB");
        w.u32(1);
        w.u32(static_cast<std::uint32_t>(items_.size()));
        for (const auto& item : items_) {
            w.u16(static_cast<std::uint16_t>(item.id.size()));
            w.str(item.id);
            w.u8(static_cast<std::uint8_t>(item.modality));
            w.u8(static_cast<std::uint8_t>(item.segments.size()));
            for (const Matrix& s : item.segments) {
                w.u16(static_cast<std::uint16_t>(s.rows));
                w.u16(static_cast<std::uint16_t>(s.cols));
                for (double v : s.data) w.f64(v);
            }
        }
        w.close();
    }

    static FeatureCatalog load(const std::string& path) {
        BinReader r(path);
        r.expect_magic("MCEB");
        r.expect_version(1);
        std::uint32_t count = r.u32();
        FeatureCatalog cat;
        for (std::uint32_t i = 0; i < count; ++i) {
            CatalogItem item;
            item.id = r.str(r.u16());
            std::uint8_t mod = r.u8();
            if (mod > 2) throw FormatError(path + ": invalid modality code " + std::to_string(mod));
            item.modality = static_cast<Modality>(mod);
            std::uint8_t nseg = r.u8();
            for (std::uint8_t s = 0; s < nseg; ++s) {
                std::uint16_t n = r.u16();
                std::uint16_t d = r.u16();
                Matrix m(n, d);
                for (double& v : m.data) v = r.f64();
                item.segments.push_back(std::move(m));
            }
            cat.add(std::move(item));
        }
        return cat;
    }

  private:
    std::vector<CatalogItem> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace musechat
