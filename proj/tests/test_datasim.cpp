#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "musechat/datasim.hpp"
#include "musechat/errors.hpp"

using namespace musechat;

namespace {

DatasimConfig small_cfg() {
    DatasimConfig cfg;
    cfg.n_tracks = 120;
    cfg.gen_pool_size = 40;
    return cfg;
}

EncoderConfig small_enc() {
    EncoderConfig cfg;
    cfg.segments_per_video = 3;
    cfg.frames_per_segment = 4;
    cfg.music_tokens = 6;
    return cfg;
}

std::string dataset_fingerprint(const GeneratedDataset& ds) {
    std::ostringstream os;
    for (const auto& q : ds.quartets)
        os << quartet_to_json(q).dump() << "\n";
    for (const auto& t : ds.tracks)
        for (double v : t.latent.data) os.write(reinterpret_cast<const char*>(&v), sizeof v);
    for (const auto& item : ds.music_features.items())
        for (const Matrix& s : item.segments)
            os.write(reinterpret_cast<const char*>(s.data.data()),
                     static_cast<std::streamsize>(s.data.size() * sizeof(double)));
    for (const auto& item : ds.video_features.items())
        for (const Matrix& s : item.segments)
            os.write(reinterpret_cast<const char*>(s.data.data()),
                     static_cast<std::streamsize>(s.data.size() * sizeof(double)));
    return os.str();
}

}  // namespace

TEST_CASE("word lists are large enough and duplicate-free") {
    const auto& master = words::tag_master();
    std::set<std::string> uniq(master.begin(), master.end());
    REQUIRE(uniq.size() == master.size());
    REQUIRE(master.size() >= 100);
}

TEST_CASE("catalog generation is deterministic and tag-consistent") {
    DataSimulator sim(small_cfg(), small_enc());
    GeneratedDataset a = sim.generate(7);
    GeneratedDataset b = sim.generate(7);
    REQUIRE(dataset_fingerprint(a) == dataset_fingerprint(b));
    GeneratedDataset c = sim.generate(8);
    REQUIRE(dataset_fingerprint(a) != dataset_fingerprint(c));

    // top tag corresponds to the largest factor weight in each system
    Matrix fun_a = sim.tag_functional(7, "a");
    Matrix fun_b = sim.tag_functional(7, "b");
    for (const auto& t : a.tracks) {
        auto top_a = sim.top_tags(fun_a, t.latent);
        auto top_b = sim.top_tags(fun_b, t.latent);
        REQUIRE(t.tags_a.size() == 5);
        REQUIRE(t.tags_b.size() == 5);
        REQUIRE(t.tags_a[0] == a.vocab_a[top_a[0]]);
        REQUIRE(t.tags_b[0] == a.vocab_b[top_b[0]]);
        for (const auto& tag : t.tags_a)
            REQUIRE(std::find(a.vocab_a.begin(), a.vocab_a.end(), tag) != a.vocab_a.end());
        for (const auto& tag : t.tags_b)
            REQUIRE(std::find(a.vocab_b.begin(), a.vocab_b.end(), tag) != a.vocab_b.end());
    }

    // vocabularies are disjoint 50-word lists
    REQUIRE(a.vocab_a.size() == 50);
    REQUIRE(a.vocab_b.size() == 50);
    std::set<std::string> va(a.vocab_a.begin(), a.vocab_a.end());
    for (const auto& w : a.vocab_b) REQUIRE_FALSE(va.count(w));
}

TEST_CASE("tag frequency is non-degenerate over 1000 tracks") {
    DatasimConfig cfg;
    cfg.n_tracks = 1000;
    cfg.gen_pool_size = 100;
    EncoderConfig enc = small_enc();
    DataSimulator sim(cfg, enc);

    // count tags straight from profiles without generating features
    Matrix fun_a = sim.tag_functional(3, "a");
    auto [vocab_a, vocab_b] = sim.make_vocabs(3);
    std::map<std::string, int> counts;
    for (std::size_t i = 0; i < cfg.n_tracks; ++i) {
        Rng lrng(mix_seed(3, "latent." + DataSimulator::make_id('m', i)));
        Matrix z(1, enc.latent_dim);
        for (double& v : z.data) v = lrng.normal();
        for (std::size_t j : sim.top_tags(fun_a, z)) counts[vocab_a[j]]++;
    }
    for (const auto& [tag, n] : counts) {
        INFO(tag << " covers " << n << " of 1000");
        REQUIRE(n <= 500);
    }
}

TEST_CASE("surrogate mvp candidate selection") {
    // two-track pool: the only non-target wins
    std::vector<TrackProfile> tracks(2);
    tracks[0].id = "m0";
    tracks[0].latent = Matrix{{1.0, 0.0}};
    tracks[1].id = "m1";
    tracks[1].latent = Matrix{{0.0, 1.0}};
    VideoProfile video;
    video.latent = Matrix{{1.0, 0.1}};
    REQUIRE(DataSimulator::surrogate_mvp_candidate(video, {0, 1}, tracks, 0) == 1);

    // pool without the target is a contract violation
    REQUIRE_THROWS_AS(DataSimulator::surrogate_mvp_candidate(video, {1}, tracks, 0), ContractError);
    REQUIRE_THROWS_AS(DataSimulator::surrogate_mvp_candidate(video, {0}, tracks, 0), ContractError);

    // matches a brute-force scan over a 2000-track pool
    Rng rng(99);
    std::vector<TrackProfile> big(2000);
    std::vector<std::size_t> pool(2000);
    for (std::size_t i = 0; i < big.size(); ++i) {
        big[i].id = DataSimulator::make_id('m', i);
        big[i].latent = Matrix(1, 50);
        for (double& v : big[i].latent.data) v = rng.normal();
        pool[i] = i;
    }
    VideoProfile v2;
    v2.latent = Matrix(1, 50);
    for (double& v : v2.latent.data) v = rng.normal();
    std::size_t target = 137;
    std::size_t got = DataSimulator::surrogate_mvp_candidate(v2, pool, big, target);

    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t i = 0; i < big.size(); ++i) {
        if (i == target) continue;
        double s = cosine_similarity(v2.latent, big[i].latent);
        if (s > best_sim) {
            best_sim = s;
            best = i;
        }
    }
    REQUIRE(got == best);
    for (std::size_t i = 0; i < big.size(); ++i) {
        if (i == target) continue;
        REQUIRE(cosine_similarity(v2.latent, big[got].latent) >= cosine_similarity(v2.latent, big[i].latent));
    }
}

TEST_CASE("prompt construction covers the tag difference") {
    TrackProfile target, cand;
    target.tags_a = {"rock", "mellow", "piano", "warm", "raw"};
    target.tags_b = {"urban", "sunny", "golden", "velvet", "steady"};
    cand.tags_a = {"techno", "frantic", "synth", "cold", "dense"};
    cand.tags_b = {"stormy", "misty", "tribal", "glassy", "rolling"};

    // fully disjoint: a desired and an undesired tag are both named
    for (std::uint64_t s = 0; s < 50; ++s) {
        std::string p = DataSimulator::build_prompt(cand, target, s);
        REQUIRE_FALSE(p.empty());
        bool has_desired = false, has_undesired = false;
        auto toks = tokenize_words(p);
        for (const auto& w : toks) {
            for (const auto& t : target.tags_a) has_desired |= (w == t);
            for (const auto& t : target.tags_b) has_desired |= (w == t);
            for (const auto& t : cand.tags_a) has_undesired |= (w == t);
            for (const auto& t : cand.tags_b) has_undesired |= (w == t);
        }
        REQUIRE(has_desired);
        REQUIRE(has_undesired);
        REQUIRE(toks.size() <= 24);
    }

    // identical tag sets fall back to title or generic templates
    TrackProfile same_target = target, same_cand = target;
    same_cand.id = "other";
    std::string fallback = DataSimulator::build_prompt(same_cand, same_target, 5);
    REQUIRE(fallback == "keep this style just a different track");
    same_target.metadata = {"paper canyon", "nova", "bloom"};
    REQUIRE(DataSimulator::build_prompt(same_cand, same_target, 5) == "play something like paper canyon");
}

TEST_CASE("reasoning text cites title or tags") {
    TrackProfile t;
    t.tags_a = {"rock", "mellow", "piano", "warm", "raw"};
    t.tags_b = {"urban", "sunny", "golden", "velvet", "steady"};
    std::string bare = DataSimulator::render_reasoning(t);
    REQUIRE(bare.find("rock") != std::string::npos);
    REQUIRE(bare.find("mellow") != std::string::npos);

    t.metadata = {"midnight river", "vega", "static"};
    std::string with_title = DataSimulator::render_reasoning(t);
    REQUIRE(with_title.find("midnight river") != std::string::npos);

    // same input, same text
    REQUIRE(DataSimulator::render_reasoning(t) == DataSimulator::render_reasoning(t));
}

TEST_CASE("reasoning vocabulary stays small over 1000 tracks") {
    DatasimConfig cfg;
    cfg.n_tracks = 1000;
    cfg.gen_pool_size = 100;
    EncoderConfig enc = small_enc();
    DataSimulator sim(cfg, enc);
    Matrix fun_a = sim.tag_functional(11, "a");
    Matrix fun_b = sim.tag_functional(11, "b");
    auto [vocab_a, vocab_b] = sim.make_vocabs(11);
    std::set<std::string> vocab;
    Rng meta_probe(0);
    for (std::size_t i = 0; i < cfg.n_tracks; ++i) {
        TrackProfile t;
        t.id = DataSimulator::make_id('m', i);
        Rng lrng(mix_seed(11, "latent." + t.id));
        t.latent = Matrix(1, enc.latent_dim);
        for (double& v : t.latent.data) v = lrng.normal();
        for (std::size_t j : sim.top_tags(fun_a, t.latent)) t.tags_a.push_back(vocab_a[j]);
        for (std::size_t j : sim.top_tags(fun_b, t.latent)) t.tags_b.push_back(vocab_b[j]);
        Rng mrng(mix_seed(11, "meta." + t.id));
        if (mrng.uniform() < cfg.metadata_fraction) {
            t.metadata.title = "midnight river";
            t.metadata.artist = "vega";
            t.metadata.album = "static";
        }
        for (const auto& w : tokenize_words(DataSimulator::render_reasoning(t))) vocab.insert(w);
    }
    REQUIRE(vocab.size() <= 512);
}

TEST_CASE("quartet invariants: candidate in target pool, prompts informative") {
    DataSimulator sim(small_cfg(), small_enc());
    GeneratedDataset ds = sim.generate(42);
    REQUIRE(ds.quartets.size() == 120);

    std::map<std::string, std::size_t> track_index;
    for (std::size_t i = 0; i < ds.tracks.size(); ++i) track_index[ds.tracks[i].id] = i;
    std::vector<std::size_t> pool_of(ds.tracks.size());
    for (std::size_t p = 0; p < ds.gen_pools.size(); ++p)
        for (std::size_t ti : ds.gen_pools[p]) pool_of[ti] = p;

    // pools partition all tracks
    std::set<std::size_t> pooled;
    for (const auto& pool : ds.gen_pools)
        for (std::size_t ti : pool) REQUIRE(pooled.insert(ti).second);
    REQUIRE(pooled.size() == ds.tracks.size());

    std::size_t informative = 0;
    for (const auto& q : ds.quartets) {
        REQUIRE(q.candidate_id != q.target_id);
        REQUIRE(pool_of[track_index[q.candidate_id]] == pool_of[track_index[q.target_id]]);
        std::set<std::string> ta(q.target_tags_a.begin(), q.target_tags_a.end());
        std::set<std::string> ca(q.candidate_tags_a.begin(), q.candidate_tags_a.end());
        std::set<std::string> tb(q.target_tags_b.begin(), q.target_tags_b.end());
        std::set<std::string> cb(q.candidate_tags_b.begin(), q.candidate_tags_b.end());
        if (ta != ca || tb != cb) ++informative;
        REQUIRE(tokenize_words(q.prompt).size() <= 24);
        REQUIRE_FALSE(q.prompt.empty());
    }
    REQUIRE(static_cast<double>(informative) >= 0.95 * static_cast<double>(ds.quartets.size()));

    // ~30% of tracks carry metadata
    std::size_t with_meta = 0;
    for (const auto& t : ds.tracks) with_meta += t.metadata.present() ? 1 : 0;
    REQUIRE(with_meta > ds.tracks.size() / 6);
    REQUIRE(with_meta < ds.tracks.size() / 2);
}

TEST_CASE("splits are seeded, disjoint and respect ratios") {
    DataSimulator sim(small_cfg(), small_enc());
    GeneratedDataset ds = sim.generate(5);
    REQUIRE(ds.train_idx.size() == 108);
    REQUIRE(ds.test_idx.size() == 12);
    std::set<std::string> train_targets, train_videos;
    for (std::size_t i : ds.train_idx) {
        train_targets.insert(ds.quartets[i].target_id);
        train_videos.insert(ds.quartets[i].video_id);
    }
    for (std::size_t i : ds.test_idx) {
        REQUIRE_FALSE(train_targets.count(ds.quartets[i].target_id));
        REQUIRE_FALSE(train_videos.count(ds.quartets[i].video_id));
    }

    DatasimConfig all = small_cfg();
    all.train_fraction = 1.0;
    DataSimulator sim_all(all, small_enc());
    GeneratedDataset full = sim_all.generate(5);
    REQUIRE(full.train_idx.size() == 120);
    REQUIRE(full.test_idx.empty());
}

TEST_CASE("dataset files round-trip and regenerate byte-identically") {
    DataSimulator sim(small_cfg(), small_enc());
    GeneratedDataset ds = sim.generate(77);
    auto dir = std::filesystem::temp_directory_path() / "musechat_datasim_test";
    std::filesystem::create_directories(dir);
    auto qpath = (dir / "q.jsonl").string();
    auto tpath = (dir / "t.jsonl").string();

    write_quartets(qpath, ds.quartets);
    auto loaded = read_quartets(qpath);
    REQUIRE(loaded.size() == ds.quartets.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(quartet_to_json(loaded[i]).dump() == quartet_to_json(ds.quartets[i]).dump());
    }

    write_tracks(tpath, ds.tracks);
    auto tracks = read_tracks(tpath);
    REQUIRE(tracks.size() == ds.tracks.size());
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        REQUIRE(tracks[i].id == ds.tracks[i].id);
        REQUIRE(tracks[i].tags_a == ds.tracks[i].tags_a);
        REQUIRE(tracks[i].metadata.title == ds.tracks[i].metadata.title);
    }

    // byte-identical re-emit
    GeneratedDataset again = sim.generate(77);
    auto qpath2 = (dir / "q2.jsonl").string();
    write_quartets(qpath2, again.quartets);
    std::ifstream f1(qpath, std::ios::binary), f2(qpath2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);

    // malformed line reports path and line number
    {
        std::ofstream bad(qpath, std::ios::app);
        bad << "{not json\n";
    }
    try {
        read_quartets(qpath);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        REQUIRE(std::string(e.what()).find(":121") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("config validation errors") {
    EncoderConfig enc = small_enc();
    DatasimConfig bad = small_cfg();
    bad.vocab_size = 3;
    REQUIRE_THROWS_AS(DataSimulator(bad, enc), ConfigError);
    DatasimConfig tiny = small_cfg();
    tiny.n_tracks = 10;
    tiny.gen_pool_size = 40;
    REQUIRE_THROWS_AS(DataSimulator(tiny, enc), ConfigError);
    DatasimConfig small_pool = small_cfg();
    small_pool.gen_pool_size = 1;
    REQUIRE_THROWS_AS(DataSimulator(small_pool, enc), ConfigError);
}
