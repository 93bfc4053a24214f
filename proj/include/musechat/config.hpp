#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "musechat/contrastive.hpp"
#include "musechat/datasim.hpp"
#include "musechat/encoders.hpp"
#include "musechat/errors.hpp"
#include "musechat/fusion.hpp"
#include "musechat/reasoner.hpp"
#include "musechat/retrieval.hpp"

namespace musechat {

inline std::string test_time_mode_name(TestTimeMode m) {
    switch (m) {
        case TestTimeMode::full: return "full";
        case TestTimeMode::music_text_only: return "music-text-only";
        case TestTimeMode::video_only: return "video-only";
    }
    throw ConfigError("unknown test-time mode code");
}

inline TestTimeMode parse_test_time_mode(const std::string& name) {
    if (name == "full") return TestTimeMode::full;
    if (name == "music-text-only") return TestTimeMode::music_text_only;
    if (name == "video-only") return TestTimeMode::video_only;
    throw ConfigError("unknown test-time mode \"" + name +
                      "\"; valid: full, music-text-only, video-only");
}

/// One structured configuration for a whole run. Everything is optional in
/// the file; absent fields keep these defaults. A run is reproducible from
/// (RunConfig, seed) plus the input files alone.
struct RunConfig {
    std::uint64_t seed = 7;
    EncoderConfig encoder;
    FusionConfig fusion;
    ContrastiveConfig train;
    EvalConfig eval;
    DatasimConfig datasim;
    ReasonerConfig reasoner;
    ReasonerTrainConfig reasoner_train;

    void validate() const {
        fusion.validate();
        train.validate();
        eval.validate();
        reasoner.validate();
        reasoner_train.validate();
    }
};

namespace detail {

class JsonSection {
  public:
    JsonSection(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError("config section \"" + name_ + "\" must be an object");
        for (const auto& [key, value] : j_.items()) pending_.push_back(key);
    }

    template <typename T>
    void field(const char* key, T& into) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        taken_.push_back(key);
        try {
            into = it->get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config field \"" + name_ + "." + key + "\" has the wrong type");
        }
    }

    void field_str(const char* key, std::string& into) { field<std::string>(key, into); }

    bool has(const char* key) const { return j_.contains(key); }

    const nlohmann::json* take_object(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        taken_.push_back(key);
        return &*it;
    }

    /// Every key in the section must have been consumed by now.
    void finish() const {
        for (const std::string& key : pending_) {
            bool known = false;
            for (const std::string& t : taken_)
                if (t == key) known = true;
            if (!known) throw ConfigError("unknown config field \"" + name_ + "." + key + "\"");
        }
    }

  private:
    const nlohmann::json& j_;
    std::string name_;
    std::vector<std::string> pending_;
    std::vector<std::string> taken_;
};

inline void read_encoder(const nlohmann::json& j, EncoderConfig& c) {
    JsonSection s(j, "encoder");
    s.field("d_in", c.d_in);
    s.field("d", c.d);
    s.field("latent_dim", c.latent_dim);
    s.field("max_text_tokens", c.max_text_tokens);
    s.field("music_tokens", c.music_tokens);
    s.field("frames_per_segment", c.frames_per_segment);
    s.field("segments_per_video", c.segments_per_video);
    s.field("feature_noise", c.feature_noise);
    s.field("provider_seed", c.provider_seed);
    s.finish();
}

inline void read_fusion(const nlohmann::json& j, FusionConfig& c) {
    JsonSection s(j, "fusion");
    s.field("d", c.d);
    s.field("self_attn_layers", c.self_attn_layers);
    s.field("heads", c.heads);
    if (s.has("strategy")) {
        std::string name;
        s.field_str("strategy", name);
        c.strategy = parse_fusion_strategy(name);
    }
    s.finish();
}

inline void read_train(const nlohmann::json& j, ContrastiveConfig& c) {
    JsonSection s(j, "train");
    s.field("batch_size", c.batch_size);
    s.field("epochs", c.epochs);
    s.field("lr", c.lr);
    s.field("weight_decay", c.weight_decay);
    s.field("normalize", c.normalize);
    s.field("tau0", c.tau0);
    s.field("seed", c.seed);
    s.finish();
}

inline void read_eval(const nlohmann::json& j, EvalConfig& c) {
    JsonSection s(j, "eval");
    s.field("pool_size", c.pool_size);
    s.field("seed", c.seed);
    s.field("turns", c.turns);
    if (s.has("mode")) {
        std::string name;
        s.field_str("mode", name);
        c.mode = parse_test_time_mode(name);
    }
    s.finish();
}

inline void read_datasim(const nlohmann::json& j, DatasimConfig& c) {
    JsonSection s(j, "datasim");
    s.field("n_tracks", c.n_tracks);
    s.field("gen_pool_size", c.gen_pool_size);
    s.field("tags_per_system", c.tags_per_system);
    s.field("vocab_size", c.vocab_size);
    s.field("video_noise", c.video_noise);
    s.field("metadata_fraction", c.metadata_fraction);
    s.field("train_fraction", c.train_fraction);
    s.finish();
}

inline void read_reasoner(const nlohmann::json& j, ReasonerConfig& c) {
    JsonSection s(j, "reasoner");
    s.field("layers", c.layers);
    s.field("heads", c.heads);
    s.field("width", c.width);
    s.field("context", c.context);
    s.field("temperature", c.temperature);
    s.field("music_width", c.music_width);
    s.finish();
}

inline void read_reasoner_train(const nlohmann::json& j, ReasonerTrainConfig& c) {
    JsonSection s(j, "reasoner_train");
    s.field("steps", c.steps);
    s.field("batch_size", c.batch_size);
    s.field("lr", c.lr);
    s.field("weight_decay", c.weight_decay);
    s.field("seed", c.seed);
    s.finish();
}

}  // namespace detail

/// Parses a RunConfig from JSON, rejecting unknown fields by name. The
/// returned flag says whether the file pinned the top-level seed (flags and
/// the MUSECHAT_SEED fallback resolve around it).
inline std::pair<RunConfig, bool> run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    detail::JsonSection top(j, "config");
    bool seed_set = top.has("seed");
    top.field("seed", cfg.seed);
    if (const nlohmann::json* sub = top.take_object("encoder")) detail::read_encoder(*sub, cfg.encoder);
    if (const nlohmann::json* sub = top.take_object("fusion")) detail::read_fusion(*sub, cfg.fusion);
    if (const nlohmann::json* sub = top.take_object("train")) detail::read_train(*sub, cfg.train);
    if (const nlohmann::json* sub = top.take_object("eval")) detail::read_eval(*sub, cfg.eval);
    if (const nlohmann::json* sub = top.take_object("datasim")) detail::read_datasim(*sub, cfg.datasim);
    if (const nlohmann::json* sub = top.take_object("reasoner"))
        detail::read_reasoner(*sub, cfg.reasoner);
    if (const nlohmann::json* sub = top.take_object("reasoner_train"))
        detail::read_reasoner_train(*sub, cfg.reasoner_train);
    top.finish();
    return {cfg, seed_set};
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["encoder"] = {{"d_in", c.encoder.d_in},
                    {"d", c.encoder.d},
                    {"latent_dim", c.encoder.latent_dim},
                    {"max_text_tokens", c.encoder.max_text_tokens},
                    {"music_tokens", c.encoder.music_tokens},
                    {"frames_per_segment", c.encoder.frames_per_segment},
                    {"segments_per_video", c.encoder.segments_per_video},
                    {"feature_noise", c.encoder.feature_noise},
                    {"provider_seed", c.encoder.provider_seed}};
    j["fusion"] = {{"d", c.fusion.d},
                   {"self_attn_layers", c.fusion.self_attn_layers},
                   {"heads", c.fusion.heads},
                   {"strategy", fusion_strategy_name(c.fusion.strategy)}};
    j["train"] = {{"batch_size", c.train.batch_size}, {"epochs", c.train.epochs},
                  {"lr", c.train.lr},                 {"weight_decay", c.train.weight_decay},
                  {"normalize", c.train.normalize},   {"tau0", c.train.tau0},
                  {"seed", c.train.seed}};
    j["eval"] = {{"pool_size", c.eval.pool_size},
                 {"seed", c.eval.seed},
                 {"turns", c.eval.turns},
                 {"mode", test_time_mode_name(c.eval.mode)}};
    j["datasim"] = {{"n_tracks", c.datasim.n_tracks},
                    {"gen_pool_size", c.datasim.gen_pool_size},
                    {"tags_per_system", c.datasim.tags_per_system},
                    {"vocab_size", c.datasim.vocab_size},
                    {"video_noise", c.datasim.video_noise},
                    {"metadata_fraction", c.datasim.metadata_fraction},
                    {"train_fraction", c.datasim.train_fraction}};
    j["reasoner"] = {{"layers", c.reasoner.layers},   {"heads", c.reasoner.heads},
                     {"width", c.reasoner.width},     {"context", c.reasoner.context},
                     {"temperature", c.reasoner.temperature},
                     {"music_width", c.reasoner.music_width}};
    j["reasoner_train"] = {{"steps", c.reasoner_train.steps},
                           {"batch_size", c.reasoner_train.batch_size},
                           {"lr", c.reasoner_train.lr},
                           {"weight_decay", c.reasoner_train.weight_decay},
                           {"seed", c.reasoner_train.seed}};
    return j;
}

inline std::pair<RunConfig, bool> load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
    return run_config_from_json(j);
}

inline void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << run_config_to_json(cfg).dump(2) << "\n";
    if (!out) throw ConfigError("failed writing " + path);
}

/// Seed precedence: an explicit --seed flag wins, then a seed pinned in the
/// config file, then the MUSECHAT_SEED environment variable, then defaults.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                                  const RunConfig& cfg, bool config_had_seed) {
    if (flag_seed) return *flag_seed;
    if (config_had_seed) return cfg.seed;
    if (const char* env = std::getenv("MUSECHAT_SEED")) {
        try {
            std::size_t used = 0;
            std::string s(env);
            unsigned long long v = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return static_cast<std::uint64_t>(v);
        } catch (const std::exception&) {
            throw ConfigError("MUSECHAT_SEED is set to \"" + std::string(env) +
                              "\", which is not an unsigned integer");
        }
    }
    return cfg.seed;
}

}  // namespace musechat
