#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "musechat/encoders.hpp"
#include "musechat/errors.hpp"
#include "musechat/matrix.hpp"
#include "musechat/rng.hpp"

namespace musechat {

struct DatasimConfig {
    std::size_t n_tracks = 1024;
    std::size_t gen_pool_size = 100;
    std::size_t tags_per_system = 5;
    std::size_t vocab_size = 50;
    double video_noise = 1.4;
    double metadata_fraction = 0.3;
    double train_fraction = 0.9;
};

struct TrackMetadata {
    std::string title;
    std::string artist;
    std::string album;

    bool present() const { return !title.empty(); }
};

struct TrackProfile {
    std::string id;
    Matrix latent;  // 1 x latent_dim; empty when read back from disk
    std::vector<std::string> tags_a;
    std::vector<std::string> tags_b;
    TrackMetadata metadata;
};

struct VideoProfile {
    std::string id;
    std::string target_id;
    Matrix latent;
};

struct DialogueQuartet {
    std::string video_id;
    std::string candidate_id;
    std::string target_id;
    std::string prompt;
    std::string reasoning;
    std::vector<std::string> target_tags_a;
    std::vector<std::string> target_tags_b;
    std::vector<std::string> candidate_tags_a;
    std::vector<std::string> candidate_tags_b;
    TrackMetadata metadata;  // target's metadata when available
};

struct GeneratedDataset {
    std::vector<TrackProfile> tracks;
    std::vector<VideoProfile> videos;
    std::vector<std::vector<std::size_t>> gen_pools;  // indices into tracks
    std::vector<DialogueQuartet> quartets;            // one per video
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    std::vector<std::string> vocab_a;
    std::vector<std::string> vocab_b;
    FeatureCatalog video_features;
    FeatureCatalog music_features;
};

namespace words {

inline const std::vector<std::string>& tag_master() {
    static const std::vector<std::string> v{
        "rock",       "pop",        "jazz",       "blues",    "folk",       "metal",       "punk",
        "funk",       "soul",       "disco",      "house",    "techno",     "trance",      "ambient",
        "classical",  "opera",      "reggae",     "ska",      "country",    "indie",       "grunge",
        "emo",        "rap",        "lofi",       "acoustic", "electric",   "orchestral",  "choral",
        "synth",      "piano",      "guitar",     "drums",    "bass",       "violin",      "cello",
        "trumpet",    "saxophone",  "flute",      "organ",    "harp",       "banjo",       "mandolin",
        "accordion",  "upbeat",     "mellow",     "dreamy",   "dark",       "bright",      "moody",
        "calm",       "energetic",  "aggressive", "gentle",   "haunting",   "playful",     "somber",
        "triumphant", "nostalgic",  "futuristic", "retro",    "cinematic",  "epic",        "intimate",
        "raw",        "polished",   "smooth",     "gritty",   "warm",       "cold",        "airy",
        "dense",      "minimal",    "lush",       "sparse",   "layered",    "driving",     "floating",
        "bouncy",     "steady",     "frantic",    "lazy",     "soaring",    "grounded",    "hypnotic",
        "catchy",     "tribal",     "urban",      "rural",    "coastal",    "tropical",    "stormy",
        "sunny",      "rainy",      "misty",      "golden",   "silver",     "crimson",     "azure",
        "emerald",    "amber",      "velvet",     "glassy",   "stony",      "breezy",      "wooden",
        "brassy",     "dusty",      "shimmering", "rolling",  "whispering", "thundering",  "marching",
        "swinging",   "gliding",    "pulsing",    "ringing",  "humming",    "crackling",   "echoing",
        "drifting",   "rushing",    "wandering"};
    return v;
}

inline const std::vector<std::string>& titles() {
    static const std::vector<std::string> v{"horizon",  "midnight", "echo",    "garden",  "neon",
                                            "river",    "dawn",     "ember",   "crystal", "violet",
                                            "wildfire", "aurora",   "monsoon", "harbor",  "meadow",
                                            "thunder",  "firefly",  "lagoon",  "paper",   "canyon",
                                            "drift",    "mirror",   "comet",   "harvest"};
    return v;
}

inline const std::vector<std::string>& artists() {
    static const std::vector<std::string> v{"nova",    "atlas", "iris",  "orion",   "lyra", "vega",
                                            "cosmo",   "indigo", "juniper", "sable", "quinn", "arden",
                                            "sparrow", "wren",  "kestrel", "marlowe"};
    return v;
}

inline const std::vector<std::string>& albums() {
    static const std::vector<std::string> v{"bloom",    "static",  "afterglow", "undertow", "daybreak",
                                            "nightfall", "mirage", "reverie",   "solstice", "equinox",
                                            "voltage",  "gravity"};
    return v;
}

}  // namespace words

/// A prompt template; {d1}/{d2} are desired-tag slots, {u1}/{u2}
/// undesired-tag slots, {title} the target title.
struct PromptTemplate {
    std::string text;

    bool needs(const std::string& slot) const { return text.find(slot) != std::string::npos; }
};

inline const std::vector<PromptTemplate>& prompt_templates() {
    static const std::vector<PromptTemplate> v{
        {"i want something more {d1} and less {u1}"},
        {"can you make it more {d1} this one is too {u1}"},
        {"less {u1} please and more {d1}"},
        {"the music should feel {d1} and {d2}"},
        {"i prefer {d1} music not {u1}"},
        {"this track is too {u1} try something {d1}"},
        {"something {d1} and {d2} would fit better"},
        {"swap this for a more {d1} track"},
        {"not {u1} and not {u2} maybe {d1}"},
        {"give me a {d1} vibe instead of {u1}"},
        {"too {u1} for this video i want {d1} and {d2}"},
        {"find a track that is {d1} but keeps it {d2}"},
        {"more {d1} energy please"},
        {"drop the {u1} feel and add some {d1}"},
        {"i am looking for {d1} music with a {d2} touch"},
        {"anything {d1} works better than this {u1} one"},
        {"could you pick a {d1} song instead"},
        {"make the soundtrack {d1} rather than {u1}"},
        {"this needs a {d1} and {d2} mood not {u1}"},
        {"try a {d1} alternative"},
    };
    return v;
}

inline std::string fill_slot(std::string text, const std::string& slot, const std::string& value) {
    for (std::size_t pos = text.find(slot); pos != std::string::npos; pos = text.find(slot))
        text.replace(pos, slot.size(), value);
    return text;
}

/// End-to-end seeded generator for the synthetic conversational dataset:
/// latent track factors, dual tag systems, correlated videos, generation
/// pools, surrogate two-tower candidate picks, templated prompts and
/// reasoning, and frozen feature catalogs.
class DataSimulator {
  public:
    DataSimulator(DatasimConfig cfg, EncoderConfig enc_cfg) : cfg_(cfg), enc_cfg_(enc_cfg) {
        if (cfg_.vocab_size < cfg_.tags_per_system)
            throw ConfigError("tag vocabulary of " + std::to_string(cfg_.vocab_size) +
                              " is smaller than tags per system " + std::to_string(cfg_.tags_per_system));
        if (cfg_.n_tracks < cfg_.gen_pool_size)
            throw ConfigError("n_tracks " + std::to_string(cfg_.n_tracks) + " below generation pool size " +
                              std::to_string(cfg_.gen_pool_size));
        if (cfg_.gen_pool_size < 2) throw ConfigError("generation pool size must be at least 2");
        if (words::tag_master().size() < 2 * cfg_.vocab_size)
            throw ConfigError("tag master list cannot fill two vocabularies of " +
                              std::to_string(cfg_.vocab_size));
    }

    /// Seeded vocabularies: a shuffle of the master list split into two
    /// disjoint halves of vocab_size words each.
    std::pair<std::vector<std::string>, std::vector<std::string>> make_vocabs(std::uint64_t seed) const {
        std::vector<std::string> pool = words::tag_master();
        Rng rng(mix_seed(seed, "tag.vocabs"));
        rng.shuffle(pool);
        std::vector<std::string> a(pool.begin(), pool.begin() + cfg_.vocab_size);
        std::vector<std::string> b(pool.begin() + cfg_.vocab_size, pool.begin() + 2 * cfg_.vocab_size);
        return {a, b};
    }

    /// Frozen per-system tag functional: weight of tag j is row j of this
    /// matrix dotted with the latent factors.
    Matrix tag_functional(std::uint64_t seed, const std::string& system) const {
        return named_randn(mix_seed(seed, "tag.system"), system, cfg_.vocab_size, enc_cfg_.latent_dim,
                           1.0 / std::sqrt(static_cast<double>(enc_cfg_.latent_dim)));
    }

    /// Top tags_per_system indices by descending weight, ties by index.
    std::vector<std::size_t> top_tags(const Matrix& functional, const Matrix& latent) const {
        std::vector<double> w(cfg_.vocab_size, 0.0);
        for (std::size_t j = 0; j < cfg_.vocab_size; ++j)
            for (std::size_t k = 0; k < latent.cols; ++k) w[j] += functional.at(j, k) * latent.data[k];
        std::vector<std::size_t> idx(cfg_.vocab_size);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return w[x] > w[y]; });
        idx.resize(cfg_.tags_per_system);
        return idx;
    }

    /// Highest latent-cosine track in the pool, target excluded.
    static std::size_t surrogate_mvp_candidate(const VideoProfile& video,
                                               const std::vector<std::size_t>& pool,
                                               const std::vector<TrackProfile>& tracks,
                                               std::size_t target_index) {
        bool target_present = false;
        bool found = false;
        std::size_t best = 0;
        double best_sim = 0.0;
        for (std::size_t ti : pool) {
            if (ti == target_index) {
                target_present = true;
                continue;
            }
            double sim = cosine_similarity(video.latent, tracks[ti].latent);
            if (!found || sim > best_sim) {
                found = true;
                best = ti;
                best_sim = sim;
            }
        }
        if (!target_present) throw ContractError("candidate pool does not contain the target track");
        if (!found) throw ContractError("candidate pool has no non-target track");
        return best;
    }

    /// Seeded template fill from the candidate/target tag difference;
    /// falls back to a metadata or generic template when the tag sets
    /// coincide.
    static std::string build_prompt(const TrackProfile& candidate, const TrackProfile& target,
                                    std::uint64_t seed) {
        auto diff = [](const std::vector<std::string>& from, const std::vector<std::string>& minus) {
            std::vector<std::string> out;
            for (const auto& t : from)
                if (std::find(minus.begin(), minus.end(), t) == minus.end()) out.push_back(t);
            return out;
        };
        std::vector<std::string> desired = diff(target.tags_a, candidate.tags_a);
        for (const auto& t : diff(target.tags_b, candidate.tags_b)) desired.push_back(t);
        std::vector<std::string> undesired = diff(candidate.tags_a, target.tags_a);
        for (const auto& t : diff(candidate.tags_b, target.tags_b)) undesired.push_back(t);

        if (desired.empty()) {
            if (target.metadata.present())
                return "play something like " + target.metadata.title;
            return "keep this style just a different track";
        }

        std::vector<std::size_t> eligible;
        const auto& templates = prompt_templates();
        for (std::size_t i = 0; i < templates.size(); ++i) {
            const PromptTemplate& t = templates[i];
            if (t.needs("{d2}") && desired.size() < 2) continue;
            if (t.needs("{u2}") && undesired.size() < 2) continue;
            // an undesired tag, when one exists, must be named
            if (t.needs("{u1}") != !undesired.empty()) continue;
            eligible.push_back(i);
        }
        Rng rng(mix_seed(seed, "prompt.pick"));
        const PromptTemplate& chosen = templates[eligible[rng.uniform_index(eligible.size())]];
        std::string text = chosen.text;
        text = fill_slot(text, "{d1}", desired[0]);
        if (desired.size() > 1) text = fill_slot(text, "{d2}", desired[1]);
        if (!undesired.empty()) text = fill_slot(text, "{u1}", undesired[0]);
        if (undesired.size() > 1) text = fill_slot(text, "{u2}", undesired[1]);
        return text;
    }

    /// Deterministic justification text citing the title when present and
    /// at least two tags otherwise.
    static std::string render_reasoning(const TrackProfile& target) {
        std::string tags = target.tags_a[0] + " and " + target.tags_a[1] + " with a " + target.tags_b[0] +
                           " feel";
        if (target.metadata.present()) {
            return "the track " + target.metadata.title + " by " + target.metadata.artist +
                   " fits because it is " + tags;
        }
        return "this song works well here because it is " + tags;
    }

    GeneratedDataset generate(std::uint64_t seed) const {
        GeneratedDataset ds;
        std::tie(ds.vocab_a, ds.vocab_b) = make_vocabs(seed);
        Matrix fun_a = tag_functional(seed, "a");
        Matrix fun_b = tag_functional(seed, "b");
        SynthEncoder enc(enc_cfg_);

        ds.tracks.reserve(cfg_.n_tracks);
        for (std::size_t i = 0; i < cfg_.n_tracks; ++i) {
            TrackProfile tp;
            tp.id = make_id('m', i);
            Rng lrng(mix_seed(seed, "latent." + tp.id));
            tp.latent = Matrix(1, enc_cfg_.latent_dim);
            for (double& v : tp.latent.data) v = lrng.normal();
            for (std::size_t j : top_tags(fun_a, tp.latent)) tp.tags_a.push_back(ds.vocab_a[j]);
            for (std::size_t j : top_tags(fun_b, tp.latent)) tp.tags_b.push_back(ds.vocab_b[j]);
            Rng mrng(mix_seed(seed, "meta." + tp.id));
            if (mrng.uniform() < cfg_.metadata_fraction) {
                const auto& tw = words::titles();
                std::size_t t1 = mrng.uniform_index(tw.size());
                std::size_t t2 = mrng.uniform_index(tw.size() - 1);
                if (t2 >= t1) ++t2;
                tp.metadata.title = tw[t1] + " " + tw[t2];
                tp.metadata.artist = words::artists()[mrng.uniform_index(words::artists().size())];
                tp.metadata.album = words::albums()[mrng.uniform_index(words::albums().size())];
            }
            ds.tracks.push_back(std::move(tp));
        }

        // generation pools: seeded shuffle, chunks of gen_pool_size, the
        // remainder joins the last pool so every track is pooled
        std::vector<std::size_t> order(cfg_.n_tracks);
        std::iota(order.begin(), order.end(), 0);
        Rng prng(mix_seed(seed, "gen.pools"));
        prng.shuffle(order);
        std::size_t n_pools = cfg_.n_tracks / cfg_.gen_pool_size;
        ds.gen_pools.assign(n_pools, {});
        for (std::size_t i = 0; i < order.size(); ++i)
            ds.gen_pools[std::min(i / cfg_.gen_pool_size, n_pools - 1)].push_back(order[i]);
        std::vector<std::size_t> pool_of(cfg_.n_tracks);
        for (std::size_t p = 0; p < ds.gen_pools.size(); ++p)
            for (std::size_t ti : ds.gen_pools[p]) pool_of[ti] = p;

        // one video per track: correlated latent
        ds.videos.reserve(cfg_.n_tracks);
        for (std::size_t i = 0; i < cfg_.n_tracks; ++i) {
            VideoProfile vp;
            vp.id = make_id('v', i);
            vp.target_id = ds.tracks[i].id;
            Rng vrng(mix_seed(seed, "vnoise." + vp.id));
            vp.latent = ds.tracks[i].latent;
            for (double& v : vp.latent.data) v += cfg_.video_noise * vrng.normal();
            ds.videos.push_back(std::move(vp));
        }

        // quartets: surrogate candidate, prompt, reasoning
        ds.quartets.reserve(cfg_.n_tracks);
        for (std::size_t i = 0; i < cfg_.n_tracks; ++i) {
            const TrackProfile& target = ds.tracks[i];
            std::size_t ci = surrogate_mvp_candidate(ds.videos[i], ds.gen_pools[pool_of[i]], ds.tracks, i);
            const TrackProfile& cand = ds.tracks[ci];
            DialogueQuartet q;
            q.video_id = ds.videos[i].id;
            q.candidate_id = cand.id;
            q.target_id = target.id;
            q.prompt = build_prompt(cand, target, mix_seed(seed, "prompt." + q.video_id));
            q.reasoning = render_reasoning(target);
            q.target_tags_a = target.tags_a;
            q.target_tags_b = target.tags_b;
            q.candidate_tags_a = cand.tags_a;
            q.candidate_tags_b = cand.tags_b;
            q.metadata = target.metadata;
            ds.quartets.push_back(std::move(q));
        }

        // split by quartet (targets and videos are 1:1, so no track is a
        // target in both splits)
        std::vector<std::size_t> qorder(cfg_.n_tracks);
        std::iota(qorder.begin(), qorder.end(), 0);
        Rng srng(mix_seed(seed, "split"));
        srng.shuffle(qorder);
        std::size_t n_train = static_cast<std::size_t>(
            std::floor(cfg_.train_fraction * static_cast<double>(cfg_.n_tracks)));
        ds.train_idx.assign(qorder.begin(), qorder.begin() + n_train);
        ds.test_idx.assign(qorder.begin() + n_train, qorder.end());
        std::sort(ds.train_idx.begin(), ds.train_idx.end());
        std::sort(ds.test_idx.begin(), ds.test_idx.end());

        // frozen feature catalogs
        for (std::size_t i = 0; i < cfg_.n_tracks; ++i) {
            CatalogItem mi;
            mi.id = ds.tracks[i].id;
            mi.modality = Modality::music;
            mi.segments.push_back(enc.encode_music(ds.tracks[i].latent, mix_seed(seed, "feat." + mi.id)));
            ds.music_features.add(std::move(mi));

            CatalogItem vi;
            vi.id = ds.videos[i].id;
            vi.modality = Modality::video;
            vi.segments = enc.encode_video(ds.videos[i].latent, mix_seed(seed, "feat." + vi.id));
            ds.video_features.add(std::move(vi));
        }
        return ds;
    }

    const DatasimConfig& config() const { return cfg_; }
    const EncoderConfig& encoder_config() const { return enc_cfg_; }

    static std::string make_id(char prefix, std::size_t i) {
        std::string n = std::to_string(i);
        return prefix + std::string(6 - std::min<std::size_t>(6, n.size()), '0') + n;
    }

  private:
    DatasimConfig cfg_;
    EncoderConfig enc_cfg_;
};

// ---- dataset file round-trip (JSON lines, UTF-8) ----

inline nlohmann::ordered_json quartet_to_json(const DialogueQuartet& q) {
    nlohmann::ordered_json j;
    j["video_id"] = q.video_id;
    j["target_id"] = q.target_id;
    j["candidate_id"] = q.candidate_id;
    j["prompt"] = q.prompt;
    j["reasoning"] = q.reasoning;
    j["target_tags_a"] = q.target_tags_a;
    j["target_tags_b"] = q.target_tags_b;
    j["candidate_tags_a"] = q.candidate_tags_a;
    j["candidate_tags_b"] = q.candidate_tags_b;
    if (q.metadata.present()) {
        j["metadata"] = {{"title", q.metadata.title},
                         {"artist", q.metadata.artist},
                         {"album", q.metadata.album}};
    }
    return j;
}

inline DialogueQuartet quartet_from_json(const nlohmann::ordered_json& j) {
    DialogueQuartet q;
    try {
        q.video_id = j.at("video_id").get<std::string>();
        q.target_id = j.at("target_id").get<std::string>();
        q.candidate_id = j.at("candidate_id").get<std::string>();
        q.prompt = j.at("prompt").get<std::string>();
        q.reasoning = j.at("reasoning").get<std::string>();
        q.target_tags_a = j.at("target_tags_a").get<std::vector<std::string>>();
        q.target_tags_b = j.at("target_tags_b").get<std::vector<std::string>>();
        q.candidate_tags_a = j.at("candidate_tags_a").get<std::vector<std::string>>();
        q.candidate_tags_b = j.at("candidate_tags_b").get<std::vector<std::string>>();
        if (j.contains("metadata")) {
            q.metadata.title = j.at("metadata").at("title").get<std::string>();
            q.metadata.artist = j.at("metadata").at("artist").get<std::string>();
            q.metadata.album = j.at("metadata").at("album").get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad quartet record: ") + e.what());
    }
    return q;
}

inline void write_quartets(const std::string& path, const std::vector<DialogueQuartet>& quartets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (const auto& q : quartets) out << quartet_to_json(q).dump() << "\n";
    if (!out) throw DataError("failed writing " + path);
}

inline std::vector<DialogueQuartet> read_quartets(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file " + path);
    std::vector<DialogueQuartet> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw DataError(path + ":" + std::to_string(lineno) + ": invalid record");
        try {
            out.push_back(quartet_from_json(j));
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void write_tracks(const std::string& path, const std::vector<TrackProfile>& tracks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (const auto& t : tracks) {
        nlohmann::ordered_json j;
        j["id"] = t.id;
        j["tags_a"] = t.tags_a;
        j["tags_b"] = t.tags_b;
        if (t.metadata.present()) {
            j["metadata"] = {{"title", t.metadata.title},
                             {"artist", t.metadata.artist},
                             {"album", t.metadata.album}};
        }
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("failed writing " + path);
}

inline std::vector<TrackProfile> read_tracks(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open track file " + path);
    std::vector<TrackProfile> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
        if (j.is_discarded()) throw DataError(path + ":" + std::to_string(lineno) + ": invalid record");
        TrackProfile t;
        try {
            t.id = j.at("id").get<std::string>();
            t.tags_a = j.at("tags_a").get<std::vector<std::string>>();
            t.tags_b = j.at("tags_b").get<std::vector<std::string>>();
            if (j.contains("metadata")) {
                t.metadata.title = j.at("metadata").at("title").get<std::string>();
                t.metadata.artist = j.at("metadata").at("artist").get<std::string>();
                t.metadata.album = j.at("metadata").at("album").get<std::string>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace musechat
