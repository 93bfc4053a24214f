#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "musechat/contrastive.hpp"
#include "musechat/errors.hpp"
#include "musechat/fusion.hpp"
#include "musechat/matrix.hpp"
#include "musechat/rng.hpp"

namespace musechat {

struct PoolEntry {
    std::string id;
    Matrix embed;  // 1 x d
};

struct MusicPool {
    std::vector<PoolEntry> entries;
};

struct RankingResult {
    std::string query_id;
    std::vector<std::string> order;  // descending similarity, ties by ascending id
    std::size_t target_rank = 0;     // 1-based
    bool zero_norm_warning = false;
};

/// Cosine ranking of `pool` against `query`; a zero-norm query or track
/// contributes similarity -1 and raises the warning flag.
inline RankingResult rank(const Matrix& query, const MusicPool& pool, const std::string& target_id,
                          const std::string& query_id = "") {
    if (pool.entries.empty()) throw ContractError("rank: empty pool");
    RankingResult r;
    r.query_id = query_id;
    std::vector<std::pair<double, const PoolEntry*>> scored;
    scored.reserve(pool.entries.size());
    for (const PoolEntry& e : pool.entries) {
        if (e.embed.size() != query.size())
            throw DimensionError("rank: width mismatch " + query.shape_str() + " vs " +
                                 e.embed.shape_str());
        double sim = cosine_similarity(query, e.embed);
        if (sim == -1.0 && (l2_norm(query) == 0.0 || l2_norm(e.embed) == 0.0))
            r.zero_norm_warning = true;
        scored.emplace_back(sim, &e);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->id < b.second->id;
    });
    r.order.reserve(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        r.order.push_back(scored[i].second->id);
        if (scored[i].second->id == target_id) r.target_rank = i + 1;
    }
    if (r.target_rank == 0) throw ContractError("rank: target " + target_id + " not in pool");
    return r;
}

/// Lower median: for even counts the smaller of the two central values.
inline double median_rank(std::vector<std::size_t> ranks) {
    if (ranks.empty()) throw ContractError("median of empty rank list");
    std::sort(ranks.begin(), ranks.end());
    return static_cast<double>(ranks[(ranks.size() - 1) / 2]);
}

inline double recall_at(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) throw ContractError("recall of empty rank list");
    std::size_t hits = 0;
    for (std::size_t r : ranks)
        if (r <= k) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

/// One metric row of the comma-separated report.
struct EvalRow {
    std::string variant;
    int turn = 0;
    double mr = 0.0;
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;
    double sr = 0.0;
    std::size_t pool_size = 0;
    std::size_t n_queries = 0;
};

inline std::string eval_csv_header() { return "variant,turn,MR,R@1,R@5,R@10,SR,pool_size,n_queries"; }

inline std::string eval_csv_row(const EvalRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%d,%.4g,%.4f,%.4f,%.4f,%.4f,%zu,%zu", r.variant.c_str(),
                  r.turn, r.mr, r.r1, r.r5, r.r10, r.sr, r.pool_size, r.n_queries);
    return buf;
}

/// Per-query outcome of the two-turn protocol; rank 0 means the turn did
/// not run for this model.
struct QueryOutcome {
    std::string video_id;
    std::string target_id;
    std::size_t pool_index = 0;
    std::size_t rank1 = 0;
    std::size_t rank2 = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;           // aggregated over all pools
    std::vector<EvalRow> per_pool_rows;  // same metrics, one block per pool
    std::vector<QueryOutcome> outcomes;
    std::size_t pools = 0;
    std::size_t zero_norm_warnings = 0;
};

/// SR: fraction of queries whose target topped the list in at least one
/// executed turn.
inline double success_rate(const std::vector<QueryOutcome>& outcomes) {
    if (outcomes.empty()) throw ContractError("success rate of empty outcome list");
    std::size_t hits = 0;
    for (const auto& o : outcomes)
        if (o.rank1 == 1 || o.rank2 == 1) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

/// Aggregates outcome ranks for one turn (1 or 2) into a report row.
inline std::optional<EvalRow> metrics_row(const std::vector<QueryOutcome>& outcomes,
                                          const std::string& variant, int turn,
                                          std::size_t pool_size) {
    std::vector<std::size_t> ranks;
    for (const auto& o : outcomes) {
        std::size_t r = turn == 1 ? o.rank1 : o.rank2;
        if (r > 0) ranks.push_back(r);
    }
    if (ranks.empty()) return std::nullopt;
    EvalRow row;
    row.variant = variant;
    row.turn = turn;
    row.mr = median_rank(ranks);
    row.r1 = recall_at(ranks, 1);
    row.r5 = recall_at(ranks, 5);
    row.r10 = recall_at(ranks, 10);
    row.sr = success_rate(outcomes);
    row.pool_size = pool_size;
    row.n_queries = ranks.size();
    return row;
}

/// Seeded shuffle then chunking into disjoint pools; the remainder that
/// does not fill a whole pool is dropped.
inline std::vector<std::vector<std::string>> build_pools(std::vector<std::string> ids,
                                                         std::size_t pool_size, std::uint64_t seed) {
    if (pool_size < 2) throw ConfigError("pool size must be >= 2");
    if (pool_size > ids.size())
        throw ConfigError("pool size " + std::to_string(pool_size) + " exceeds track count " +
                          std::to_string(ids.size()));
    Rng rng(mix_seed(seed, "eval.pools"));
    rng.shuffle(ids);
    std::vector<std::vector<std::string>> pools;
    for (std::size_t start = 0; start + pool_size <= ids.size(); start += pool_size)
        pools.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                           ids.begin() + static_cast<std::ptrdiff_t>(start + pool_size));
    return pools;
}

/// How the second-turn query is formed at test time: the trained model as-is,
/// dropping the video term, or repeating the video-only query.
enum class TestTimeMode { full, music_text_only, video_only };

struct EvalConfig {
    std::size_t pool_size = 100;
    std::uint64_t seed = 7;
    int turns = 2;
    TestTimeMode mode = TestTimeMode::full;

    void validate() const {
        if (turns < 1 || turns > 2) throw ConfigError("turns must be 1 or 2");
    }
};

namespace detail {

inline Matrix node_value(Tape& t, Node n) { return t.value(n); }

inline Matrix eval_target_embed(const FusionModel& model, const Matrix& raw_music) {
    Tape t;
    return t.value(model.target_embed(t, raw_music));
}

}  // namespace detail

/// The two-turn protocol: turn 1 ranks the video vector against the pool
/// holding the query's target; turn 2 re-ranks with the dataset's pinned
/// candidate (or the turn-1 top non-target) and the prompt through the
/// strategy's fusion path.
inline EvalReport evaluate_two_turn(const FusionModel& model, const RetrievalDataset& data,
                                    const EvalConfig& cfg, const std::string& variant_name) {
    cfg.validate();
    data.validate();
    if (cfg.mode != TestTimeMode::full && !model.cross_t2a().wq)
        throw ConfigError("test-time modality modes need a model with cross-attention");

    std::vector<std::string> target_ids;
    target_ids.reserve(data.quartets.size());
    for (const auto& q : data.quartets) target_ids.push_back(q.target_id);
    std::vector<std::vector<std::string>> pool_ids = build_pools(target_ids, cfg.pool_size, cfg.seed);

    std::map<std::string, std::pair<std::size_t, std::size_t>> locate;  // id -> (pool, slot)
    std::vector<MusicPool> pools(pool_ids.size());
    for (std::size_t p = 0; p < pool_ids.size(); ++p) {
        pools[p].entries.reserve(pool_ids[p].size());
        for (std::size_t s = 0; s < pool_ids[p].size(); ++s) {
            const std::string& id = pool_ids[p][s];
            pools[p].entries.push_back(
                {id, detail::eval_target_embed(model, data.music->require(id).segments.at(0))});
            locate.emplace(id, std::make_pair(p, s));
        }
    }

    EvalReport report;
    report.pools = pools.size();
    bool first = model.has_first_turn() && cfg.turns >= 1;
    bool second = model.has_second_turn() && cfg.turns >= 2;

    for (const auto& q : data.quartets) {
        auto it = locate.find(q.target_id);
        if (it == locate.end()) continue;  // target fell into the dropped remainder
        const MusicPool& pool = pools[it->second.first];
        QueryOutcome out;
        out.video_id = q.video_id;
        out.target_id = q.target_id;
        out.pool_index = it->second.first;

        const CatalogItem& video = data.videos->require(q.video_id);
        RankingResult r1;
        if (first) {
            Tape t;
            Matrix q1 = t.value(model.first_turn_embed(t, video.segments));
            r1 = rank(q1, pool, q.target_id, q.video_id);
            out.rank1 = r1.target_rank;
            if (r1.zero_norm_warning) ++report.zero_norm_warnings;
        }

        if (second) {
            std::string candidate_id = q.candidate_id;
            if (candidate_id.empty() || !data.music->has(candidate_id)) {
                if (!first)
                    throw DataError("query " + q.video_id +
                                    " has no pinned candidate and no first turn to pick one");
                candidate_id = r1.order.at(r1.order.at(0) == q.target_id ? 1 : 0);
            }
            Matrix text = data.encoder->encode_prompt(q.prompt);
            const CatalogItem& cand = data.music->require(candidate_id);
            Tape t;
            Node q2node;
            if (cfg.mode == TestTimeMode::video_only) {
                q2node = model.first_turn_embed(t, video.segments);
            } else if (cfg.mode == TestTimeMode::music_text_only) {
                q2node = model.cross_terms(t, model.music_c_branch(t, cand.segments.at(0)),
                                           model.text_branch(t, text));
            } else {
                FusionInputs in;
                in.video_segments = &video.segments;
                in.music = &cand.segments.at(0);
                in.text = &text;
                q2node = model.fuse_query(t, in);
            }
            Matrix q2 = t.value(q2node);
            RankingResult r2 = rank(q2, pool, q.target_id, q.video_id);
            out.rank2 = r2.target_rank;
            if (r2.zero_norm_warning) ++report.zero_norm_warnings;
        }
        report.outcomes.push_back(out);
    }

    if (report.outcomes.empty()) throw DataError("no evaluable queries: all targets were dropped");

    for (int turn : {1, 2}) {
        auto row = metrics_row(report.outcomes, variant_name, turn, cfg.pool_size);
        if (row) report.rows.push_back(*row);
    }
    for (std::size_t p = 0; p < pools.size(); ++p) {
        std::vector<QueryOutcome> sub;
        for (const auto& o : report.outcomes)
            if (o.pool_index == p) sub.push_back(o);
        if (sub.empty()) continue;
        for (int turn : {1, 2}) {
            auto row = metrics_row(sub, variant_name + "#pool" + std::to_string(p), turn,
                                   cfg.pool_size);
            if (row) report.per_pool_rows.push_back(*row);
        }
    }
    return report;
}

/// Human-readable rendering of report rows.
inline std::string eval_table(const std::vector<EvalRow>& rows) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-28s %4s %8s %8s %8s %8s %8s %6s %6s\n", "variant", "turn",
                  "MR", "R@1", "R@5", "R@10", "SR", "pool", "n");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-28s %4d %8.4g %8.3f %8.3f %8.3f %8.3f %6zu %6zu\n",
                      r.variant.c_str(), r.turn, r.mr, r.r1, r.r5, r.r10, r.sr, r.pool_size,
                      r.n_queries);
        out += buf;
    }
    return out;
}

}  // namespace musechat
