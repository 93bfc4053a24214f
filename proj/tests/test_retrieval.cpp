#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "musechat/contrastive.hpp"
#include "musechat/datasim.hpp"
#include "musechat/retrieval.hpp"

using namespace musechat;

namespace {

Matrix randm(std::uint64_t seed, std::size_t r, std::size_t c, double scale = 1.0) {
    Rng rng(seed);
    return Matrix::randn(rng, r, c, scale);
}

EncoderConfig tiny_encoder() {
    EncoderConfig e;
    e.d_in = 10;
    e.latent_dim = 6;
    e.max_text_tokens = 8;
    e.music_tokens = 3;
    e.frames_per_segment = 2;
    e.segments_per_video = 2;
    return e;
}

FusionConfig tiny_fusion(FusionStrategy s = FusionStrategy::mvt, std::size_t d = 8,
                         std::size_t layers = 1, std::size_t heads = 2) {
    FusionConfig f;
    f.d = d;
    f.self_attn_layers = layers;
    f.heads = heads;
    f.strategy = s;
    return f;
}

struct PipelineFixture {
    EncoderConfig enc_cfg = tiny_encoder();
    SynthEncoder encoder{enc_cfg};
    GeneratedDataset generated;
    RetrievalDataset data;

    explicit PipelineFixture(std::size_t n_tracks = 30, std::uint64_t seed = 5) {
        DatasimConfig cfg;
        cfg.n_tracks = n_tracks;
        cfg.gen_pool_size = 10;
        cfg.video_noise = 1.0;
        DataSimulator sim(cfg, enc_cfg);
        generated = sim.generate(seed);
        data.quartets = generated.quartets;
        data.videos = &generated.video_features;
        data.music = &generated.music_features;
        data.encoder = &encoder;
    }
};

MusicPool random_pool(std::uint64_t seed, std::size_t n, std::size_t d) {
    MusicPool pool;
    for (std::size_t i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "m%06zu", i);
        pool.entries.push_back({id, randm(seed * 977 + i, 1, d)});
    }
    return pool;
}

}  // namespace

TEST_CASE("ranking follows cosine order with deterministic tie-breaks") {
    SECTION("a pool of one target ranks it first") {
        MusicPool pool;
        pool.entries.push_back({"m000001", randm(1, 1, 4)});
        RankingResult r = rank(randm(2, 1, 4), pool, "m000001");
        REQUIRE(r.target_rank == 1);
        REQUIRE(r.order == std::vector<std::string>{"m000001"});
    }
    SECTION("a query equal to one embedding with orthogonal distractors tops it") {
        MusicPool pool;
        pool.entries.push_back({"m000000", Matrix{{0.0, 2.0, 0.0}}});
        pool.entries.push_back({"m000001", Matrix{{3.0, 0.0, 0.0}}});
        pool.entries.push_back({"m000002", Matrix{{0.0, 0.0, 5.0}}});
        RankingResult r = rank(Matrix{{0.0, 1.0, 0.0}}, pool, "m000000");
        REQUIRE(r.target_rank == 1);
    }
    SECTION("equal similarities break ties by ascending id") {
        MusicPool pool;
        pool.entries.push_back({"m000002", Matrix{{1.0, 0.0}}});
        pool.entries.push_back({"m000000", Matrix{{2.0, 0.0}}});  // same direction
        pool.entries.push_back({"m000001", Matrix{{0.0, 1.0}}});
        RankingResult r = rank(Matrix{{1.0, 0.0}}, pool, "m000002");
        REQUIRE(r.order == std::vector<std::string>{"m000000", "m000002", "m000001"});
        REQUIRE(r.target_rank == 2);
    }
    SECTION("zero-norm vectors sort last with a warning") {
        MusicPool pool;
        pool.entries.push_back({"m000000", Matrix{{1.0, 0.0}}});
        pool.entries.push_back({"m000001", Matrix{{0.0, 0.0}}});
        RankingResult r = rank(Matrix{{0.5, 0.5}}, pool, "m000001");
        REQUIRE(r.zero_norm_warning);
        REQUIRE(r.target_rank == 2);
        RankingResult rq = rank(Matrix{{0.0, 0.0}}, pool, "m000000");
        REQUIRE(rq.zero_norm_warning);
        REQUIRE(rq.order == std::vector<std::string>{"m000000", "m000001"});
    }
    SECTION("missing target and width mismatches are rejected") {
        MusicPool pool = random_pool(3, 4, 4);
        REQUIRE_THROWS_AS(rank(randm(4, 1, 4), pool, "m000009"), ContractError);
        REQUIRE_THROWS_AS(rank(randm(5, 1, 3), pool, "m000001"), DimensionError);
        REQUIRE_THROWS_AS(rank(randm(6, 1, 4), MusicPool{}, "m000000"), ContractError);
    }
}

TEST_CASE("ranking matches an exhaustive comparison oracle on random pools") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        std::size_t n = 2 + seed % 19;  // pools up to 20
        MusicPool pool = random_pool(seed + 10, n, 6);
        Matrix q = randm(seed + 5000, 1, 6);
        RankingResult r = rank(q, pool, pool.entries[seed % n].id);
        std::vector<double> sims;
        for (const auto& e : pool.entries) sims.push_back(cosine_similarity(q, e.embed));
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t oracle_rank = 1;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                if (sims[j] > sims[i] ||
                    (sims[j] == sims[i] && pool.entries[j].id < pool.entries[i].id))
                    ++oracle_rank;
            }
            REQUIRE(r.order[oracle_rank - 1] == pool.entries[i].id);
        }
        // cosine ranking is invariant to positive rescaling of the query
        Matrix scaled = q;
        for (double& e : scaled.data) e *= 37.5;
        REQUIRE(rank(scaled, pool, pool.entries[seed % n].id).order == r.order);
    }
}

TEST_CASE("metric reductions have their closed-form values") {
    REQUIRE(median_rank({1, 1, 1}) == 1.0);
    REQUIRE(recall_at({1, 1, 1}, 1) == 100.0);
    REQUIRE(median_rank({1, 2, 3, 4}) == 2.0);  // lower median on even counts
    REQUIRE(recall_at({1, 2, 3, 4}, 1) == 25.0);
    REQUIRE(recall_at({1, 2, 3, 4}, 5) == 100.0);
    REQUIRE(median_rank({7, 3}) == 3.0);
    REQUIRE_THROWS_AS(median_rank({}), ContractError);
    REQUIRE_THROWS_AS(recall_at({}, 1), ContractError);

    std::vector<QueryOutcome> outcomes(2);
    outcomes[0].rank1 = 1;
    outcomes[0].rank2 = 4;
    outcomes[1].rank1 = 5;
    outcomes[1].rank2 = 1;
    REQUIRE(success_rate(outcomes) == 100.0);  // each query topped the list once
}

TEST_CASE("metric reductions match a brute-force oracle on random rank lists") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed + 999);
        std::size_t n = 1 + rng.uniform_index(20);
        std::size_t pool = 2 + rng.uniform_index(19);
        std::vector<std::size_t> ranks;
        for (std::size_t i = 0; i < n; ++i) ranks.push_back(1 + rng.uniform_index(pool));

        std::vector<std::size_t> sorted = ranks;
        std::sort(sorted.begin(), sorted.end());
        REQUIRE(median_rank(ranks) == static_cast<double>(sorted[(n - 1) / 2]));
        for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}}) {
            std::size_t hits = 0;
            for (std::size_t r : ranks)
                if (r <= k) ++hits;
            REQUIRE(recall_at(ranks, k) == 100.0 * static_cast<double>(hits) / static_cast<double>(n));
        }
        REQUIRE(recall_at(ranks, 1) <= recall_at(ranks, 5));
        REQUIRE(recall_at(ranks, 5) <= recall_at(ranks, 10));
        REQUIRE(median_rank(ranks) >= 1.0);
        REQUIRE(median_rank(ranks) <= static_cast<double>(pool));
    }
}

TEST_CASE("pool construction is a seeded disjoint chunking") {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < 1000; ++i) ids.push_back("m" + std::to_string(100000 + i));

    auto pools = build_pools(ids, 500, 42);
    REQUIRE(pools.size() == 2);
    std::set<std::string> seen;
    for (const auto& p : pools) {
        REQUIRE(p.size() == 500);
        seen.insert(p.begin(), p.end());
    }
    REQUIRE(seen.size() == 1000);

    REQUIRE(build_pools(ids, 500, 42) == pools);
    REQUIRE(build_pools(ids, 500, 43) != pools);

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed * 31 + 7);
        std::size_t n = 10 + rng.uniform_index(200);
        std::size_t size = 2 + rng.uniform_index(n - 2);
        std::vector<std::string> sub(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
        auto ps = build_pools(sub, size, seed);
        REQUIRE(ps.size() == n / size);
        std::set<std::string> all;
        std::size_t total = 0;
        for (const auto& p : ps) {
            all.insert(p.begin(), p.end());
            total += p.size();
        }
        REQUIRE(all.size() == total);  // disjoint, no duplicates
    }

    REQUIRE_THROWS_AS(build_pools(ids, 1, 0), ConfigError);
    REQUIRE_THROWS_AS(build_pools({"a", "b"}, 3, 0), ConfigError);
}

TEST_CASE("an ideal query tops its own pool and the metric wiring reports it") {
    PipelineFixture fx(20, 6);
    auto model = FusionModel::create(tiny_fusion(), fx.enc_cfg, 7);

    MusicPool pool;
    for (const auto& q : fx.data.quartets) {
        Tape t;
        pool.entries.push_back(
            {q.target_id, t.value(model.target_embed(t, fx.data.music->require(q.target_id).segments.at(0)))});
    }
    std::vector<QueryOutcome> outcomes;
    for (const auto& e : pool.entries) {
        RankingResult r = rank(e.embed, pool, e.id);
        REQUIRE(r.target_rank == 1);
        QueryOutcome o;
        o.target_id = e.id;
        o.rank1 = r.target_rank;
        outcomes.push_back(o);
    }
    auto row = metrics_row(outcomes, "ideal", 1, pool.entries.size());
    REQUIRE(row.has_value());
    REQUIRE(row->mr == 1.0);
    REQUIRE(row->r1 == 100.0);
    REQUIRE(row->sr == 100.0);
}

TEST_CASE("the two-turn protocol aggregates per pool and overall") {
    PipelineFixture fx(30, 7);
    auto model = FusionModel::create(tiny_fusion(), fx.enc_cfg, 7);
    EvalConfig cfg;
    cfg.pool_size = 10;
    cfg.seed = 3;
    EvalReport report = evaluate_two_turn(model, fx.data, cfg, "mvt");

    REQUIRE(report.pools == 3);
    REQUIRE(report.rows.size() == 2);
    REQUIRE(report.per_pool_rows.size() == 6);
    REQUIRE(report.outcomes.size() == 30);
    for (const auto& row : report.rows) {
        REQUIRE(row.n_queries == 30);
        REQUIRE(row.pool_size == 10);
        REQUIRE(row.r1 <= row.r5);
        REQUIRE(row.r5 <= row.r10);
        REQUIRE(row.mr >= 1.0);
        REQUIRE(row.mr <= 10.0);
        REQUIRE(row.sr >= row.r1);  // at-least-once can only help
    }
    REQUIRE(report.rows[0].sr == report.rows[1].sr);

    // determinism: the whole report reproduces bit-for-bit
    EvalReport again = evaluate_two_turn(model, fx.data, cfg, "mvt");
    REQUIRE(report.rows.size() == again.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i)
        REQUIRE(eval_csv_row(report.rows[i]) == eval_csv_row(again.rows[i]));
    for (std::size_t i = 0; i < report.outcomes.size(); ++i) {
        REQUIRE(report.outcomes[i].rank1 == again.outcomes[i].rank1);
        REQUIRE(report.outcomes[i].rank2 == again.outcomes[i].rank2);
    }

    // turns=1 restricts the report to first-turn rows
    EvalConfig one = cfg;
    one.turns = 1;
    EvalReport first_only = evaluate_two_turn(model, fx.data, one, "mvt");
    REQUIRE(first_only.rows.size() == 1);
    REQUIRE(first_only.rows[0].turn == 1);

    EvalConfig bad = cfg;
    bad.turns = 3;
    REQUIRE_THROWS_AS(evaluate_two_turn(model, fx.data, bad, "mvt"), ConfigError);
    bad.turns = 2;
    bad.pool_size = 1;
    REQUIRE_THROWS_AS(evaluate_two_turn(model, fx.data, bad, "mvt"), ConfigError);
    bad.pool_size = 1000;
    REQUIRE_THROWS_AS(evaluate_two_turn(model, fx.data, bad, "mvt"), ConfigError);
}

TEST_CASE("the first turn of the full model equals a weight-sharing video-only model") {
    PipelineFixture fx(30, 8);
    auto full = FusionModel::create(tiny_fusion(FusionStrategy::mvt), fx.enc_cfg, 7);
    auto mvp = FusionModel::create(tiny_fusion(FusionStrategy::mvp), fx.enc_cfg, 7);

    EvalConfig cfg;
    cfg.pool_size = 10;
    cfg.seed = 4;
    EvalReport a = evaluate_two_turn(full, fx.data, cfg, "mvt");
    EvalReport b = evaluate_two_turn(mvp, fx.data, cfg, "mvp");

    REQUIRE(b.rows.size() == 1);  // video-only: no usable second turn
    const EvalRow& fa = a.rows[0];
    const EvalRow& fb = b.rows[0];
    REQUIRE(fa.turn == 1);
    REQUIRE(fb.turn == 1);
    REQUIRE(fa.mr == fb.mr);
    REQUIRE(fa.r1 == fb.r1);
    REQUIRE(fa.r5 == fb.r5);
    REQUIRE(fa.r10 == fb.r10);
    for (std::size_t i = 0; i < a.outcomes.size(); ++i)
        REQUIRE(a.outcomes[i].rank1 == b.outcomes[i].rank1);

    // a video-only model reports SR equal to its single-turn R@1
    REQUIRE(fb.sr == fb.r1);
}

TEST_CASE("single-turn strategies report success equal to their only recall") {
    PipelineFixture fx(30, 9);
    auto nv = FusionModel::create(tiny_fusion(FusionStrategy::no_video), fx.enc_cfg, 7);
    EvalConfig cfg;
    cfg.pool_size = 10;
    cfg.seed = 5;
    EvalReport report = evaluate_two_turn(nv, fx.data, cfg, "no-video");
    REQUIRE(report.rows.size() == 1);
    REQUIRE(report.rows[0].turn == 2);
    REQUIRE(report.rows[0].sr == report.rows[0].r1);

    // without a pinned candidate a first-turn-free model cannot run turn 2
    RetrievalDataset unpinned = fx.data;
    for (auto& q : unpinned.quartets) q.candidate_id.clear();
    REQUIRE_THROWS_AS(evaluate_two_turn(nv, unpinned, cfg, "no-video"), DataError);

    // with a first turn available, the top non-target fills in as candidate
    auto full = FusionModel::create(tiny_fusion(), fx.enc_cfg, 7);
    EvalReport fallback = evaluate_two_turn(full, unpinned, cfg, "mvt");
    REQUIRE(fallback.rows.size() == 2);
}

TEST_CASE("test-time modality modes reuse the trained model") {
    PipelineFixture fx(30, 10);
    auto model = FusionModel::create(tiny_fusion(), fx.enc_cfg, 7);
    EvalConfig cfg;
    cfg.pool_size = 10;
    cfg.seed = 6;

    EvalConfig vmode = cfg;
    vmode.mode = TestTimeMode::video_only;
    EvalReport vo = evaluate_two_turn(model, fx.data, vmode, "video-only-at-test");
    for (const auto& o : vo.outcomes) REQUIRE(o.rank1 == o.rank2);

    EvalConfig mmode = cfg;
    mmode.mode = TestTimeMode::music_text_only;
    EvalReport mt = evaluate_two_turn(model, fx.data, mmode, "music+text-only-at-test");
    bool any_differs = false;
    for (const auto& o : mt.outcomes) any_differs = any_differs || o.rank1 != o.rank2;
    REQUIRE(any_differs);

    auto summ = FusionModel::create(tiny_fusion(FusionStrategy::sum), fx.enc_cfg, 7);
    REQUIRE_THROWS_AS(evaluate_two_turn(summ, fx.data, mmode, "sum"), ConfigError);
}

TEST_CASE("an untrained model scores near chance") {
    PipelineFixture fx(300, 11);
    auto model = FusionModel::create(tiny_fusion(), fx.enc_cfg, 99);
    EvalConfig cfg;
    cfg.pool_size = 100;
    cfg.seed = 12;
    EvalReport report = evaluate_two_turn(model, fx.data, cfg, "untrained");
    REQUIRE(report.outcomes.size() == 300);
    for (const auto& row : report.rows) {
        REQUIRE(row.mr >= 25.0);
        REQUIRE(row.mr <= 75.0);
        REQUIRE(row.r1 <= 5.0);
        REQUIRE(row.r10 <= 20.0);
    }
}

TEST_CASE("report rows render to aligned csv and table text") {
    REQUIRE(eval_csv_header() == "variant,turn,MR,R@1,R@5,R@10,SR,pool_size,n_queries");
    EvalRow row;
    row.variant = "mvt";
    row.turn = 2;
    row.mr = 1.0;
    row.r1 = 87.5;
    row.r5 = 100.0;
    row.r10 = 100.0;
    row.sr = 93.75;
    row.pool_size = 100;
    row.n_queries = 96;
    REQUIRE(eval_csv_row(row) == "mvt,2,1,87.5000,100.0000,100.0000,93.7500,100,96");
    std::string table = eval_table({row});
    REQUIRE(table.find("variant") != std::string::npos);
    REQUIRE(table.find("mvt") != std::string::npos);
}
