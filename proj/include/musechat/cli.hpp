#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "musechat/config.hpp"
#include "musechat/contrastive.hpp"
#include "musechat/datasim.hpp"
#include "musechat/encoders.hpp"
#include "musechat/errors.hpp"
#include "musechat/fusion.hpp"
#include "musechat/gradcheck_suite.hpp"
#include "musechat/optim.hpp"
#include "musechat/reasoner.hpp"
#include "musechat/retrieval.hpp"

namespace musechat {
namespace cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// dataset directory layout

struct DatasetPaths {
    fs::path dir, config, quartets, tracks, videos_bin, music_bin, index;

    explicit DatasetPaths(const fs::path& d)
        : dir(d),
          config(d / "config.json"),
          quartets(d / "quartets.jsonl"),
          tracks(d / "tracks.jsonl"),
          videos_bin(d / "video_features.bin"),
          music_bin(d / "music_features.bin"),
          index(d / "dataset.json") {}
};

inline void write_dataset(const fs::path& dir, const GeneratedDataset& ds, const RunConfig& cfg) {
    DatasetPaths p(dir);
    fs::create_directories(dir);
    save_run_config(cfg, p.config.string());
    write_quartets(p.quartets.string(), ds.quartets);
    write_tracks(p.tracks.string(), ds.tracks);
    ds.video_features.save(p.videos_bin.string());
    ds.music_features.save(p.music_bin.string());

    nlohmann::ordered_json j;
    j["gen_pools"] = nlohmann::ordered_json::array();
    for (const auto& pool : ds.gen_pools) {
        nlohmann::ordered_json ids = nlohmann::ordered_json::array();
        for (std::size_t idx : pool) ids.push_back(ds.tracks.at(idx).id);
        j["gen_pools"].push_back(std::move(ids));
    }
    j["train_idx"] = ds.train_idx;
    j["test_idx"] = ds.test_idx;
    j["vocab_a"] = ds.vocab_a;
    j["vocab_b"] = ds.vocab_b;
    std::ofstream out(p.index, std::ios::binary);
    if (!out) throw DataError("cannot open " + p.index.string() + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw DataError("failed writing " + p.index.string());
}

enum class Split { train, test, all };

inline Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    if (name == "all") return Split::all;
    throw ConfigError("unknown split \"" + name + "\"; valid: train, test, all");
}

struct LoadedDataset {
    RunConfig cfg;
    bool cfg_had_seed = false;
    std::vector<DialogueQuartet> quartets;
    std::vector<TrackProfile> tracks;
    std::vector<std::vector<std::string>> gen_pools;
    std::vector<std::size_t> train_idx, test_idx;
    FeatureCatalog videos, music;
    std::unique_ptr<SynthEncoder> encoder;

    const TrackProfile* track(const std::string& id) const {
        for (const auto& t : tracks)
            if (t.id == id) return &t;
        return nullptr;
    }

    std::vector<DialogueQuartet> subset(Split split) const {
        if (split == Split::all) return quartets;
        const std::vector<std::size_t>& idx = split == Split::train ? train_idx : test_idx;
        std::vector<DialogueQuartet> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) {
            if (i >= quartets.size())
                throw DataError("split index " + std::to_string(i) + " out of range for " +
                                std::to_string(quartets.size()) + " quartets");
            out.push_back(quartets[i]);
        }
        if (out.empty()) throw DataError("requested split is empty");
        return out;
    }

    RetrievalDataset view(std::vector<DialogueQuartet> qs) const {
        RetrievalDataset d;
        d.quartets = std::move(qs);
        d.videos = &videos;
        d.music = &music;
        d.encoder = encoder.get();
        return d;
    }
};

inline LoadedDataset load_dataset(const fs::path& dir) {
    DatasetPaths p(dir);
    if (!fs::exists(p.quartets))
        throw DataError("no dataset at " + dir.string() + " (missing " + p.quartets.string() + ")");
    LoadedDataset ds;
    std::tie(ds.cfg, ds.cfg_had_seed) = load_run_config(p.config.string());
    ds.quartets = read_quartets(p.quartets.string());
    ds.tracks = read_tracks(p.tracks.string());
    ds.videos = FeatureCatalog::load(p.videos_bin.string());
    ds.music = FeatureCatalog::load(p.music_bin.string());

    std::ifstream in(p.index, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.index.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError(p.index.string() + " is not valid JSON");
    try {
        ds.gen_pools = j.at("gen_pools").get<std::vector<std::vector<std::string>>>();
        ds.train_idx = j.at("train_idx").get<std::vector<std::size_t>>();
        ds.test_idx = j.at("test_idx").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(p.index.string() + ": " + e.what());
    }
    ds.encoder = std::make_unique<SynthEncoder>(ds.cfg.encoder);
    return ds;
}

// ---------------------------------------------------------------------------
// checkpoint directory layout

struct CheckpointPaths {
    fs::path dir, config, params, optimizer, state, metrics, vocab;

    explicit CheckpointPaths(const fs::path& d)
        : dir(d),
          config(d / "config.json"),
          params(d / "checkpoint.bin"),
          optimizer(d / "optimizer.bin"),
          state(d / "state.json"),
          metrics(d / "metrics.csv"),
          vocab(d / "vocab.txt") {}
};

struct TrainState {
    std::string kind;
    std::size_t epochs_done = 0;
    std::size_t steps_done = 0;
};

inline void write_train_state(const fs::path& path, const TrainState& s) {
    nlohmann::ordered_json j;
    j["kind"] = s.kind;
    j["epochs_done"] = s.epochs_done;
    j["steps_done"] = s.steps_done;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
}

inline TrainState read_train_state(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("no training state at " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError(path.string() + " is not valid JSON");
    TrainState s;
    try {
        s.kind = j.at("kind").get<std::string>();
        s.epochs_done = j.at("epochs_done").get<std::size_t>();
        s.steps_done = j.at("steps_done").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return s;
}

/// Rebuilds the model a checkpoint directory describes and loads its
/// parameters. A config override with mismatched widths fails inside
/// ParameterStore::load with the offending parameter named.
inline FusionModel load_fusion_checkpoint(const fs::path& dir,
                                          const std::optional<std::string>& config_override,
                                          RunConfig& cfg_out) {
    CheckpointPaths p(dir);
    if (!fs::exists(p.params))
        throw DataError("no checkpoint at " + dir.string() + " (missing " + p.params.string() + ")");
    std::string cfg_path = config_override ? *config_override : p.config.string();
    cfg_out = load_run_config(cfg_path).first;
    cfg_out.validate();
    FusionModel model = FusionModel::create(cfg_out.fusion, cfg_out.encoder, cfg_out.seed,
                                            cfg_out.train.tau0);
    model.store().load(p.params.string());
    return model;
}

// ---------------------------------------------------------------------------
// shared option plumbing

struct CommonArgs {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
};

/// Loads the configuration (file, else defaults) and resolves the run seed
/// (flag > config "seed" > MUSECHAT_SEED > default). The one resolved seed
/// drives every stage of the run.
inline RunConfig resolve_config(const CommonArgs& common) {
    RunConfig cfg;
    bool had_seed = false;
    if (common.config_path) std::tie(cfg, had_seed) = load_run_config(*common.config_path);
    cfg.seed = resolve_seed(common.seed, cfg, had_seed);
    cfg.train.seed = cfg.seed;
    cfg.reasoner_train.seed = cfg.seed;
    cfg.eval.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    CommonArgs common;
    std::optional<std::size_t> n;
    std::optional<std::size_t> pool_size;
    std::string out_dir;
    bool force = false;
};

inline void cmd_gen_data(const GenDataArgs& args, std::ostream& out) {
    RunConfig cfg = resolve_config(args.common);
    if (args.n) cfg.datasim.n_tracks = *args.n;
    if (args.pool_size) cfg.datasim.gen_pool_size = *args.pool_size;

    DatasetPaths p(args.out_dir);
    if (fs::exists(p.quartets) && !args.force)
        throw DataError(args.out_dir + " already contains a dataset; pass --force to overwrite");

    DataSimulator sim(cfg.datasim, cfg.encoder);
    GeneratedDataset ds = sim.generate(cfg.seed);
    write_dataset(args.out_dir, ds, cfg);

    std::size_t with_meta = 0;
    for (const auto& t : ds.tracks)
        if (t.metadata.present()) ++with_meta;
    out << "dataset written to " << args.out_dir << "\n";
    out << "  tracks: " << ds.tracks.size() << " (" << with_meta << " with metadata)\n";
    out << "  quartets: " << ds.quartets.size() << "\n";
    out << "  generation pools: " << ds.gen_pools.size() << " x " << cfg.datasim.gen_pool_size << "\n";
    out << "  train/test split: " << ds.train_idx.size() << "/" << ds.test_idx.size() << "\n";
    out << "  feature width d_in: " << cfg.encoder.d_in << ", seed: " << cfg.seed << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    CommonArgs common;
    std::string data_dir;
    std::string out_dir;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<std::size_t> batch_size;
    std::string split = "train";
    bool resume = false;
    bool force = false;
};

inline void cmd_train(const TrainArgs& args, std::ostream& out) {
    LoadedDataset data = load_dataset(args.data_dir);
    CheckpointPaths p(args.out_dir);

    RunConfig cfg;
    TrainState state{"retrieval", 0, 0};
    if (args.resume) {
        state = read_train_state(p.state);
        if (state.kind != "retrieval")
            throw DataError(args.out_dir + " holds a " + state.kind + " checkpoint, not a retrieval one");
        cfg = load_run_config(p.config.string()).first;  // resume continues the stored run
        if (args.common.seed) throw ConfigError("--seed cannot change on --resume; it is stored");
    } else {
        if (fs::exists(p.params) && !args.force)
            throw DataError(args.out_dir + " already contains a checkpoint; pass --force or --resume");
        // dataset config is the base so encoder dims always match the data
        cfg = data.cfg;
        bool had_seed = data.cfg_had_seed;
        if (args.common.config_path) std::tie(cfg, had_seed) = load_run_config(*args.common.config_path);
        cfg.seed = resolve_seed(args.common.seed, cfg, had_seed);
        cfg.train.seed = cfg.seed;
        cfg.reasoner_train.seed = cfg.seed;
        cfg.eval.seed = cfg.seed;
    }
    if (args.epochs) cfg.train.epochs = *args.epochs;
    if (args.lr) cfg.train.lr = *args.lr;
    if (args.batch_size) cfg.train.batch_size = *args.batch_size;
    cfg.validate();

    RetrievalDataset view = data.view(data.subset(parse_split(args.split)));
    std::size_t n = view.quartets.size();
    if (state.epochs_done >= cfg.train.epochs && args.resume)
        throw ConfigError("checkpoint already has " + std::to_string(state.epochs_done) +
                          " epochs; raise --epochs to continue");

    FusionModel model = FusionModel::create(cfg.fusion, cfg.encoder, cfg.seed, cfg.train.tau0);
    AdamWConfig ocfg;
    ocfg.lr = cfg.train.lr;
    ocfg.weight_decay = cfg.train.weight_decay;
    AdamW opt(model.store(), ocfg);
    if (args.resume) {
        model.store().load(p.params.string());
        opt.load_state(p.optimizer.string());
    }

    fs::create_directories(p.dir);
    std::ofstream metrics(p.metrics, args.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw DataError("cannot open " + p.metrics.string() + " for writing");
    if (!args.resume) metrics << "step,loss,tau\n";

    out << "training " << fusion_strategy_name(cfg.fusion.strategy) << " fusion on " << n
        << " quartets (epochs " << state.epochs_done << ".." << cfg.train.epochs << ", batch "
        << cfg.train.batch_size << ", lr " << cfg.train.lr << ", seed " << cfg.seed << ")\n";

    for (std::size_t epoch = state.epochs_done; epoch < cfg.train.epochs; ++epoch) {
        ContrastiveConfig step_cfg = cfg.train;
        step_cfg.epochs = epoch + 1;
        TrainResult res = train_retrieval_from(model, view, step_cfg, epoch, &opt, &metrics);
        double mean = 0.0;
        for (double l : res.losses) mean += l;
        mean /= res.losses.empty() ? 1.0 : static_cast<double>(res.losses.size());
        state.epochs_done = epoch + 1;
        state.steps_done += res.steps;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "epoch %zu/%zu: mean loss %.6f, tau %.4f\n", epoch + 1,
                      cfg.train.epochs, mean, res.taus.empty() ? 0.0 : res.taus.back());
        out << buf;
    }

    metrics.close();
    save_run_config(cfg, p.config.string());
    model.store().save(p.params.string());
    opt.save_state(p.optimizer.string());
    write_train_state(p.state, state);
    out << "checkpoint: " << p.params.string() << " (" << model.store().size()
        << " parameters)\n";
}

// ---------------------------------------------------------------------------
// train-reasoner

struct TrainReasonerArgs {
    CommonArgs common;
    std::string data_dir;
    std::string ckpt_dir;  // frozen retrieval checkpoint
    std::string out_dir;
    std::optional<std::size_t> steps;
    std::optional<double> lr;
    std::optional<std::size_t> batch_size;
    std::string split = "train";
    bool resume = false;
    bool force = false;
};

/// Vocabulary corpus: the split's reasoning texts plus every track's
/// metadata strings, so inference-time titles always tokenize.
inline Vocabulary build_reasoner_vocab(const LoadedDataset& data,
                                       const std::vector<DialogueQuartet>& quartets) {
    std::vector<std::string> corpus;
    corpus.reserve(quartets.size() + data.tracks.size());
    for (const auto& q : quartets) corpus.push_back(q.reasoning);
    for (const auto& t : data.tracks)
        if (t.metadata.present())
            corpus.push_back(t.metadata.title + " " + t.metadata.artist + " " + t.metadata.album);
    return Vocabulary::build(corpus);
}

inline void cmd_train_reasoner(const TrainReasonerArgs& args, std::ostream& out) {
    LoadedDataset data = load_dataset(args.data_dir);
    CheckpointPaths p(args.out_dir);

    RunConfig cfg;
    FusionModel frozen = load_fusion_checkpoint(args.ckpt_dir, args.common.config_path, cfg);
    std::uint64_t frozen_hash = frozen.store().content_hash();

    TrainState state{"reasoner", 0, 0};
    if (args.resume) {
        state = read_train_state(p.state);
        if (state.kind != "reasoner")
            throw DataError(args.out_dir + " holds a " + state.kind + " checkpoint, not a reasoner one");
        cfg = load_run_config(p.config.string()).first;
        if (args.common.seed) throw ConfigError("--seed cannot change on --resume; it is stored");
    } else {
        if (fs::exists(p.params) && !args.force)
            throw DataError(args.out_dir + " already contains a checkpoint; pass --force or --resume");
        cfg.seed = resolve_seed(args.common.seed, cfg, true);  // ckpt config pins the seed
        cfg.reasoner_train.seed = cfg.seed;
    }
    if (args.steps) cfg.reasoner_train.steps = *args.steps;
    if (args.lr) cfg.reasoner_train.lr = *args.lr;
    if (args.batch_size) cfg.reasoner_train.batch_size = *args.batch_size;
    cfg.reasoner.music_width = cfg.fusion.d;  // the prefix projects the frozen branch output
    cfg.validate();

    std::vector<DialogueQuartet> quartets = data.subset(parse_split(args.split));
    Vocabulary vocab =
        args.resume ? Vocabulary::load(p.vocab.string()) : build_reasoner_vocab(data, quartets);
    std::vector<ReasonerItem> items =
        build_reasoner_items(frozen, data.view(quartets), vocab, cfg.reasoner.context);

    Reasoner model = Reasoner::create(vocab, cfg.reasoner, cfg.seed);
    AdamWConfig ocfg;
    ocfg.lr = cfg.reasoner_train.lr;
    ocfg.weight_decay = cfg.reasoner_train.weight_decay;
    AdamW opt(model.store(), ocfg);
    if (args.resume) {
        model.store().load(p.params.string());
        opt.load_state(p.optimizer.string());
        if (state.steps_done >= cfg.reasoner_train.steps)
            throw ConfigError("checkpoint already has " + std::to_string(state.steps_done) +
                              " steps; raise --steps to continue");
    }

    fs::create_directories(p.dir);
    std::ofstream metrics(p.metrics, args.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw DataError("cannot open " + p.metrics.string() + " for writing");
    if (!args.resume) metrics << "step,loss\n";

    out << "training reasoner on " << items.size() << " items (steps " << state.steps_done << ".."
        << cfg.reasoner_train.steps << ", batch " << cfg.reasoner_train.batch_size << ", width "
        << cfg.reasoner.width << ", vocab " << vocab.size() << ", seed " << cfg.seed << ")\n";

    TrainResult res =
        train_reasoner_from(model, items, cfg.reasoner_train, state.steps_done, &opt, &metrics);
    state.steps_done = cfg.reasoner_train.steps;

    if (frozen.store().content_hash() != frozen_hash)
        throw ContractError("frozen retrieval parameters changed during reasoner training");

    metrics.close();
    save_run_config(cfg, p.config.string());
    model.store().save(p.params.string());
    opt.save_state(p.optimizer.string());
    if (!args.resume) vocab.save(p.vocab.string());
    write_train_state(p.state, state);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "final mean per-token NLL: %.6f\n",
                  res.losses.empty() ? 0.0 : res.losses.back());
    out << buf;
    out << "checkpoint: " << p.params.string() << "\n";
}

inline Reasoner load_reasoner_checkpoint(const fs::path& dir, RunConfig& cfg_out) {
    CheckpointPaths p(dir);
    if (!fs::exists(p.params))
        throw DataError("no reasoner checkpoint at " + dir.string());
    cfg_out = load_run_config(p.config.string()).first;
    Vocabulary vocab = Vocabulary::load(p.vocab.string());
    Reasoner model = Reasoner::create(vocab, cfg_out.reasoner, cfg_out.seed);
    model.store().load(p.params.string());
    return model;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    CommonArgs common;
    std::string ckpt_dir;
    std::string data_dir;
    std::optional<std::size_t> pool_size;
    std::optional<int> turns;
    std::optional<std::string> mode;
    std::string split = "test";
    std::optional<std::string> out_csv;
    std::string variant;  // empty = the checkpoint's strategy name
};

inline std::string report_csv(const EvalReport& report) {
    std::string csv = eval_csv_header() + "\n";
    for (const auto& r : report.rows) csv += eval_csv_row(r) + "\n";
    for (const auto& r : report.per_pool_rows) csv += eval_csv_row(r) + "\n";
    return csv;
}

inline EvalReport run_eval(const EvalArgs& args, RunConfig& cfg, std::string* variant_out = nullptr) {
    LoadedDataset data = load_dataset(args.data_dir);
    FusionModel model = load_fusion_checkpoint(args.ckpt_dir, args.common.config_path, cfg);
    if (args.common.seed) cfg.eval.seed = *args.common.seed;
    if (args.pool_size) cfg.eval.pool_size = *args.pool_size;
    if (args.turns) cfg.eval.turns = *args.turns;
    if (args.mode) cfg.eval.mode = parse_test_time_mode(*args.mode);
    cfg.eval.validate();

    std::string variant =
        args.variant.empty() ? fusion_strategy_name(cfg.fusion.strategy) : args.variant;
    if (variant_out) *variant_out = variant;
    RetrievalDataset view = data.view(data.subset(parse_split(args.split)));
    return evaluate_two_turn(model, view, cfg.eval, variant);
}

inline void cmd_eval(const EvalArgs& args, std::ostream& out) {
    RunConfig cfg;
    EvalReport report = run_eval(args, cfg);

    std::vector<EvalRow> all_rows = report.rows;
    all_rows.insert(all_rows.end(), report.per_pool_rows.begin(), report.per_pool_rows.end());
    out << "pools: " << report.pools << " x " << cfg.eval.pool_size << " (split " << args.split
        << ", seed " << cfg.eval.seed << ", mode " << test_time_mode_name(cfg.eval.mode) << ")\n";
    if (report.zero_norm_warnings > 0)
        out << "warning: " << report.zero_norm_warnings << " zero-norm embeddings ranked at -1\n";
    out << eval_table(all_rows);

    if (args.out_csv) {
        std::ofstream csv(*args.out_csv, std::ios::binary);
        if (!csv) throw DataError("cannot open " + *args.out_csv + " for writing");
        csv << report_csv(report);
        out << "csv written to " << *args.out_csv << "\n";
    }
}

// ---------------------------------------------------------------------------
// ablate

inline const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v{
        "full",       "no-video",   "no-candidate-music", "music+text-only-at-test",
        "video-only-at-test", "sum", "self-attn",  "cross-attn",
        "mvp",        "music-video-order",  "text-video-order"};
    return v;
}

/// Maps an ablation variant to (training strategy, test-time mode).
inline std::pair<FusionStrategy, TestTimeMode> ablation_plan(const std::string& variant) {
    if (variant == "full") return {FusionStrategy::mvt, TestTimeMode::full};
    if (variant == "music+text-only-at-test") return {FusionStrategy::mvt, TestTimeMode::music_text_only};
    if (variant == "video-only-at-test") return {FusionStrategy::mvt, TestTimeMode::video_only};
    for (const std::string& v : ablation_variants())
        if (v == variant) return {parse_fusion_strategy(variant), TestTimeMode::full};
    std::string all;
    for (const std::string& v : ablation_variants()) all += all.empty() ? v : ", " + v;
    throw ConfigError("unknown ablation variant \"" + variant + "\"; valid: " + all);
}

struct AblateArgs {
    CommonArgs common;
    std::string data_dir;
    std::vector<std::string> variants;  // empty = all
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> pool_size;
    std::optional<int> turns;
    std::string train_split = "train";
    std::string eval_split = "test";
    std::optional<std::string> out_csv;
};

inline void cmd_ablate(const AblateArgs& args, std::ostream& out) {
    LoadedDataset data = load_dataset(args.data_dir);
    std::vector<std::string> variants = args.variants.empty() ? ablation_variants() : args.variants;
    for (const std::string& v : variants) ablation_plan(v);  // validate all names up front

    RunConfig base = data.cfg;
    bool had_seed = data.cfg_had_seed;
    if (args.common.config_path) std::tie(base, had_seed) = load_run_config(*args.common.config_path);
    base.seed = resolve_seed(args.common.seed, base, had_seed);
    base.train.seed = base.seed;
    base.eval.seed = base.seed;
    if (args.epochs) base.train.epochs = *args.epochs;
    if (args.pool_size) base.eval.pool_size = *args.pool_size;
    if (args.turns) base.eval.turns = *args.turns;
    base.validate();

    RetrievalDataset train_view = data.view(data.subset(parse_split(args.train_split)));
    RetrievalDataset eval_view = data.view(data.subset(parse_split(args.eval_split)));

    // one trained model per distinct strategy; test-time variants share it
    std::map<FusionStrategy, std::unique_ptr<FusionModel>> trained;
    auto train_for = [&](FusionStrategy strategy) -> FusionModel& {
        auto it = trained.find(strategy);
        if (it != trained.end()) return *it->second;
        RunConfig cfg = base;
        cfg.fusion.strategy = strategy;
        out << "training variant " << fusion_strategy_name(strategy) << " (epochs "
            << cfg.train.epochs << ", seed " << cfg.seed << ")\n";
        auto model = std::make_unique<FusionModel>(
            FusionModel::create(cfg.fusion, cfg.encoder, cfg.seed, cfg.train.tau0));
        train_retrieval(*model, train_view, cfg.train);
        return *trained.emplace(strategy, std::move(model)).first->second;
    };

    std::vector<EvalRow> rows;
    for (const std::string& variant : variants) {
        auto [strategy, mode] = ablation_plan(variant);
        FusionModel& model = train_for(strategy);
        EvalConfig ecfg = base.eval;
        ecfg.mode = mode;
        EvalReport report = evaluate_two_turn(model, eval_view, ecfg, variant);
        rows.insert(rows.end(), report.rows.begin(), report.rows.end());
    }

    out << eval_table(rows);
    if (args.out_csv) {
        std::ofstream csv(*args.out_csv, std::ios::binary);
        if (!csv) throw DataError("cannot open " + *args.out_csv + " for writing");
        csv << eval_csv_header() << "\n";
        for (const auto& r : rows) csv << eval_csv_row(r) << "\n";
        out << "csv written to " << *args.out_csv << "\n";
    }
}

// ---------------------------------------------------------------------------
// recommend

struct RecommendArgs {
    CommonArgs common;
    std::string ckpt_dir;
    std::string data_dir;
    std::string video_id;
    std::size_t pool_size = 100;
    std::size_t topk = 5;
    std::optional<std::string> prompt;
    bool interactive = false;
    std::optional<std::string> reasoner_dir;
};

namespace detail {

inline std::string track_label(const LoadedDataset& data, const std::string& id) {
    const TrackProfile* t = data.track(id);
    if (!t) return id;
    std::string s = id;
    if (t->metadata.present()) s += "  \"" + t->metadata.title + "\" by " + t->metadata.artist;
    if (!t->tags_a.empty()) {
        s += "  [" + t->tags_a[0];
        for (std::size_t i = 1; i < std::min<std::size_t>(3, t->tags_a.size()); ++i)
            s += ", " + t->tags_a[i];
        s += "]";
    }
    return s;
}

inline void print_topk(std::ostream& out, const LoadedDataset& data, const RankingResult& r,
                       std::size_t k) {
    for (std::size_t i = 0; i < std::min(k, r.order.size()); ++i)
        out << "  " << i + 1 << ". " << track_label(data, r.order[i]) << "\n";
}

}  // namespace detail

inline void cmd_recommend(const RecommendArgs& args, std::ostream& out, std::istream& in) {
    LoadedDataset data = load_dataset(args.data_dir);
    RunConfig cfg;
    FusionModel model = load_fusion_checkpoint(args.ckpt_dir, args.common.config_path, cfg);
    if (!model.has_first_turn())
        throw ConfigError("strategy " + fusion_strategy_name(cfg.fusion.strategy) +
                          " has no video-only first turn");
    std::uint64_t seed = args.common.seed ? *args.common.seed : cfg.seed;

    const DialogueQuartet* quartet = nullptr;
    for (const auto& q : data.quartets)
        if (q.video_id == args.video_id) quartet = &q;
    if (!quartet) throw DataError("unknown video id \"" + args.video_id + "\"");
    const std::string& target_id = quartet->target_id;

    // seeded pool holding the session's ground-truth target
    std::vector<std::string> ids;
    for (const auto& item : data.music.items()) ids.push_back(item.id);
    if (args.pool_size < 2 || args.pool_size > ids.size())
        throw ConfigError("pool size must be in [2, " + std::to_string(ids.size()) + "]");
    Rng rng(mix_seed(seed, "recommend.pool"));
    rng.shuffle(ids);
    ids.resize(args.pool_size);
    if (std::find(ids.begin(), ids.end(), target_id) == ids.end()) ids.back() = target_id;

    MusicPool pool;
    for (const std::string& id : ids) {
        Tape t;
        pool.entries.push_back({id, t.value(model.target_embed(t, data.music.require(id).segments.at(0)))});
    }

    const CatalogItem& video = data.videos.require(args.video_id);
    Tape t1;
    Matrix q1 = t1.value(model.first_turn_embed(t1, video.segments));
    RankingResult current = rank(q1, pool, target_id, args.video_id);
    out << "session " << args.video_id << ": pool of " << args.pool_size << ", seed " << seed << "\n";
    out << "turn 1 (video only), target rank " << current.target_rank << ":\n";
    detail::print_topk(out, data, current, args.topk);

    std::optional<Reasoner> reasoner;
    RunConfig rcfg;
    if (args.reasoner_dir) reasoner.emplace(load_reasoner_checkpoint(*args.reasoner_dir, rcfg));

    auto refined_turn = [&](const std::string& prompt, int turn_no) {
        if (!model.has_second_turn())
            throw ConfigError("strategy " + fusion_strategy_name(cfg.fusion.strategy) +
                              " has no fused second turn");
        std::string candidate_id = current.order.at(0);
        if (prompt.empty())
            out << "[low-information prompt: empty text encodes to all padding]\n";
        Matrix text = data.encoder->encode_prompt(prompt);
        FusionInputs fin;
        fin.video_segments = &video.segments;
        const Matrix& cand_raw = data.music.require(candidate_id).segments.at(0);
        fin.music = &cand_raw;
        fin.text = &text;
        Tape t;
        Matrix q2 = t.value(model.fuse_query(t, fin));
        std::size_t before = current.target_rank;
        current = rank(q2, pool, target_id, args.video_id);
        out << "turn " << turn_no << " (refined; candidate " << candidate_id << "), target rank "
            << before << " -> " << current.target_rank << ":\n";
        detail::print_topk(out, data, current, args.topk);

        if (reasoner) {
            const std::string& top_id = current.order.at(0);
            Tape tb;
            Matrix branch =
                tb.value(model.music_t_branch(tb, data.music.require(top_id).segments.at(0)));
            std::optional<std::string> title;
            const TrackProfile* top = data.track(top_id);
            if (top && top->metadata.present()) title = top->metadata.title;
            auto gen = reasoner->generate(branch, title, mix_seed(seed, "recommend.sample"));
            out << "reasoning: " << gen.text << "\n";
        }
    };

    int turn_no = 2;
    if (args.prompt) refined_turn(*args.prompt, turn_no++);
    if (args.interactive) {
        out << "prompt> " << std::flush;
        std::string line;
        while (std::getline(in, line)) {
            refined_turn(line, turn_no++);
            out << "prompt> " << std::flush;
        }
        out << "\nsession closed\n";
    }
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::size_t dims = 8;
    std::size_t seeds = 20;
    std::size_t entries = 16;
    double tol = 1e-4;
};

inline bool cmd_gradcheck(const GradcheckArgs& args, std::ostream& out) {
    if (args.dims < 1 || args.dims > 16) throw ConfigError("--dims must be in [1, 16]");
    if (args.seeds == 0) throw ConfigError("--seeds must be >= 1");
    GradSuiteConfig cfg;
    cfg.dims = args.dims;
    cfg.seeds = args.seeds;
    cfg.entries_per_param = args.entries;
    cfg.tol = args.tol;
    std::vector<GradPathResult> results = run_gradcheck_suite(cfg);
    out << gradcheck_table(results);
    bool ok = gradcheck_all_passed(results);
    out << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
    return ok;
}

// ---------------------------------------------------------------------------
// argument parsing and dispatch

namespace detail {

/// CLI11 option whose value only lands in a std::optional when provided.
template <typename T>
struct OptVal {
    T v{};
    CLI::Option* o = nullptr;

    void bind(CLI::App* a, const std::string& name, const std::string& desc) {
        o = a->add_option(name, v, desc);
    }
    std::optional<T> get() const {
        return (o != nullptr && o->count() > 0) ? std::optional<T>(v) : std::nullopt;
    }
};

}  // namespace detail

/// Parses `args` (no program name) and runs the selected subcommand.
/// Exit codes: 0 success, 2 usage/configuration errors, 1 everything else.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err,
                   std::istream& in) {
    CLI::App app{"conversational music recommendation over synthetic tri-modal data"};
    app.set_help_all_flag("--help-all", "print help for every subcommand");
    app.require_subcommand(1);

    auto bind_common = [](CLI::App* a, detail::OptVal<std::string>& config,
                          detail::OptVal<std::uint64_t>& seed) {
        config.bind(a, "--config", "run configuration JSON file");
        seed.bind(a, "--seed", "run seed (beats config seed and MUSECHAT_SEED)");
    };
    auto fill_common = [](CommonArgs& c, const detail::OptVal<std::string>& config,
                          const detail::OptVal<std::uint64_t>& seed) {
        c.config_path = config.get();
        c.seed = seed.get();
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic conversational dataset");
    GenDataArgs ga;
    detail::OptVal<std::string> g_config;
    detail::OptVal<std::uint64_t> g_seed;
    detail::OptVal<std::size_t> g_n, g_pool;
    bind_common(gen, g_config, g_seed);
    g_n.bind(gen, "--n", "number of tracks (one quartet per track)");
    g_pool.bind(gen, "--pool-size", "generation pool size");
    gen->add_option("--out", ga.out_dir, "output dataset directory")->required();
    gen->add_flag("--force", ga.force, "overwrite an existing dataset");

    // train
    auto* tr = app.add_subcommand("train", "train the retrieval model contrastively");
    TrainArgs ta;
    detail::OptVal<std::string> t_config;
    detail::OptVal<std::uint64_t> t_seed;
    detail::OptVal<std::size_t> t_epochs, t_batch;
    detail::OptVal<double> t_lr;
    bind_common(tr, t_config, t_seed);
    tr->add_option("--data", ta.data_dir, "dataset directory")->required();
    tr->add_option("--out", ta.out_dir, "checkpoint directory")->required();
    t_epochs.bind(tr, "--epochs", "training epochs (total, including resumed ones)");
    t_lr.bind(tr, "--lr", "learning rate");
    t_batch.bind(tr, "--batch-size", "contrastive batch size");
    tr->add_option("--split", ta.split, "quartet split to train on (train|test|all)");
    tr->add_flag("--resume", ta.resume, "continue a stored run to a higher epoch count");
    tr->add_flag("--force", ta.force, "overwrite an existing checkpoint");

    // train-reasoner
    auto* trr = app.add_subcommand("train-reasoner", "train the sentence generator on a frozen checkpoint");
    TrainReasonerArgs ra;
    detail::OptVal<std::string> r_config;
    detail::OptVal<std::uint64_t> r_seed;
    detail::OptVal<std::size_t> r_steps, r_batch;
    detail::OptVal<double> r_lr;
    bind_common(trr, r_config, r_seed);
    trr->add_option("--data", ra.data_dir, "dataset directory")->required();
    trr->add_option("--ckpt", ra.ckpt_dir, "frozen retrieval checkpoint directory")->required();
    trr->add_option("--out", ra.out_dir, "reasoner checkpoint directory")->required();
    r_steps.bind(trr, "--steps", "optimizer steps (total, including resumed ones)");
    r_lr.bind(trr, "--lr", "learning rate");
    r_batch.bind(trr, "--batch-size", "batch size");
    trr->add_option("--split", ra.split, "quartet split to train on (train|test|all)");
    trr->add_flag("--resume", ra.resume, "continue a stored run to a higher step count");
    trr->add_flag("--force", ra.force, "overwrite an existing checkpoint");

    // eval
    auto* ev = app.add_subcommand("eval", "two-turn retrieval evaluation of a checkpoint");
    EvalArgs ea;
    detail::OptVal<std::string> e_config, e_mode, e_out;
    detail::OptVal<std::uint64_t> e_seed;
    detail::OptVal<std::size_t> e_pool;
    detail::OptVal<int> e_turns;
    bind_common(ev, e_config, e_seed);
    ev->add_option("--ckpt", ea.ckpt_dir, "checkpoint directory")->required();
    ev->add_option("--data", ea.data_dir, "dataset directory")->required();
    e_pool.bind(ev, "--pool-size", "candidate pool size per query");
    e_turns.bind(ev, "--turns", "turns to evaluate (1 or 2)");
    e_mode.bind(ev, "--mode", "test-time inputs (full|music-text-only|video-only)");
    ev->add_option("--split", ea.split, "quartet split to evaluate (train|test|all)");
    e_out.bind(ev, "--out", "write metric rows to this CSV file");
    ev->add_option("--variant", ea.variant, "variant label for report rows");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and evaluate the ablation grid");
    AblateArgs aa;
    detail::OptVal<std::string> a_config, a_out;
    detail::OptVal<std::uint64_t> a_seed;
    detail::OptVal<std::size_t> a_epochs, a_pool;
    detail::OptVal<int> a_turns;
    bind_common(ab, a_config, a_seed);
    ab->add_option("--data", aa.data_dir, "dataset directory")->required();
    ab->add_option("--variant", aa.variants, "variants to run (default: all)");
    a_epochs.bind(ab, "--epochs", "training epochs per variant");
    a_pool.bind(ab, "--pool-size", "candidate pool size per query");
    a_turns.bind(ab, "--turns", "turns to evaluate (1 or 2)");
    ab->add_option("--train-split", aa.train_split, "split to train on");
    ab->add_option("--eval-split", aa.eval_split, "split to evaluate");
    a_out.bind(ab, "--out", "write metric rows to this CSV file");

    // recommend
    auto* rec = app.add_subcommand("recommend", "interactive two-turn recommendation session");
    RecommendArgs ca;
    detail::OptVal<std::string> c_config, c_prompt, c_reasoner;
    detail::OptVal<std::uint64_t> c_seed;
    bind_common(rec, c_config, c_seed);
    rec->add_option("--ckpt", ca.ckpt_dir, "checkpoint directory")->required();
    rec->add_option("--data", ca.data_dir, "dataset directory")->required();
    rec->add_option("--video-id", ca.video_id, "query video id")->required();
    rec->add_option("--pool-size", ca.pool_size, "candidate pool size");
    rec->add_option("--topk", ca.topk, "recommendations to print per turn");
    c_prompt.bind(rec, "--prompt", "scripted second-turn prompt");
    rec->add_flag("--interactive", ca.interactive, "read prompts from stdin until EOF");
    c_reasoner.bind(rec, "--reasoner", "reasoner checkpoint for generated justifications");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every gradient path");
    GradcheckArgs gca;
    gc->add_option("--dims", gca.dims, "base width for the checked graphs");
    gc->add_option("--seeds", gca.seeds, "seeds per path");
    gc->add_option("--entries", gca.entries, "sampled entries per parameter");
    gc->add_option("--tol", gca.tol, "max relative error tolerance");

    std::reverse(args.begin(), args.end());
    try {
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            app.exit(e, out, err);  // help / version request
            return 0;
        }
        err << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(gen)) {
            fill_common(ga.common, g_config, g_seed);
            ga.n = g_n.get();
            ga.pool_size = g_pool.get();
            cmd_gen_data(ga, out);
        } else if (app.got_subcommand(tr)) {
            fill_common(ta.common, t_config, t_seed);
            ta.epochs = t_epochs.get();
            ta.lr = t_lr.get();
            ta.batch_size = t_batch.get();
            cmd_train(ta, out);
        } else if (app.got_subcommand(trr)) {
            fill_common(ra.common, r_config, r_seed);
            ra.steps = r_steps.get();
            ra.lr = r_lr.get();
            ra.batch_size = r_batch.get();
            cmd_train_reasoner(ra, out);
        } else if (app.got_subcommand(ev)) {
            fill_common(ea.common, e_config, e_seed);
            ea.pool_size = e_pool.get();
            ea.turns = e_turns.get();
            ea.mode = e_mode.get();
            ea.out_csv = e_out.get();
            cmd_eval(ea, out);
        } else if (app.got_subcommand(ab)) {
            fill_common(aa.common, a_config, a_seed);
            aa.epochs = a_epochs.get();
            aa.pool_size = a_pool.get();
            aa.turns = a_turns.get();
            aa.out_csv = a_out.get();
            cmd_ablate(aa, out);
        } else if (app.got_subcommand(rec)) {
            fill_common(ca.common, c_config, c_seed);
            ca.prompt = c_prompt.get();
            ca.reasoner_dir = c_reasoner.get();
            cmd_recommend(ca, out, in);
        } else if (app.got_subcommand(gc)) {
            return cmd_gradcheck(gca, out) ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace cli
}  // namespace musechat
