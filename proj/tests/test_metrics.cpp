#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sketchfuse/metrics.hpp"
#include "testutil.hpp"

using namespace sketchfuse;

namespace {

RetrievalQuery make_query(std::vector<int> ranked, std::vector<char> relevant, int match = -1) {
    return RetrievalQuery{std::move(ranked), std::move(relevant), match};
}

// --- brute-force oracles, written from the definitions -----------------------

double ap_oracle(const RetrievalQuery& q, int k) {
    int total = 0;
    for (char c : q.relevant) total += c ? 1 : 0;
    double sum = 0;
    int hits = 0;
    for (int rank = 1; rank <= std::min<int>(k, static_cast<int>(q.ranked.size())); ++rank) {
        const int item = q.ranked[static_cast<std::size_t>(rank - 1)];
        if (q.relevant[static_cast<std::size_t>(item)]) {
            ++hits;
            sum += static_cast<double>(hits) / rank;
        }
    }
    return sum / std::min(k, total);
}

double precision_oracle(const RetrievalQuery& q, int k) {
    const int kk = std::min<int>(k, static_cast<int>(q.ranked.size()));
    int rel = 0;
    for (int i = 0; i < kk; ++i)
        rel += q.relevant[static_cast<std::size_t>(q.ranked[static_cast<std::size_t>(i)])] ? 1 : 0;
    return static_cast<double>(rel) / kk;
}

bool acc_oracle(const RetrievalQuery& q, int k) {
    for (int i = 0; i < std::min<int>(k, static_cast<int>(q.ranked.size())); ++i)
        if (q.ranked[static_cast<std::size_t>(i)] == q.true_match) return true;
    return false;
}

RankedRetrieval random_galleries(std::mt19937_64& rng, int queries, int gallery) {
    RankedRetrieval rr;
    std::uniform_int_distribution<int> coin(0, 1);
    for (int q = 0; q < queries; ++q) {
        std::vector<double> dist(static_cast<std::size_t>(gallery));
        std::uniform_real_distribution<double> d(0, 1);
        for (auto& v : dist) v = d(rng);
        std::vector<char> rel(static_cast<std::size_t>(gallery));
        int nrel = 0;
        for (auto& r : rel) {
            r = static_cast<char>(coin(rng));
            nrel += r;
        }
        if (nrel == 0) rel[static_cast<std::size_t>(rng() % gallery)] = 1;
        RetrievalQuery query;
        query.ranked = rank_by_distance(dist);
        query.relevant = rel;
        query.true_match = static_cast<int>(rng() % gallery);
        rr.push_back(query);
    }
    return rr;
}

} // namespace

TEST_CASE("map@k examples") {
    // relevant at rank 1: AP = 1 for any k
    RankedRetrieval rr = {make_query({0, 1, 2}, {1, 0, 0})};
    REQUIRE(map_at_k(rr, 1) == 1.0);
    REQUIRE(map_at_k(rr, 3) == 1.0);

    // 2 relevant at ranks 2 and 4, k=5: (1/2 + 2/4) / 2 = 0.5
    RankedRetrieval rr2 = {make_query({4, 0, 3, 1, 2}, {1, 1, 0, 0, 0})};
    REQUIRE(map_at_k(rr2, 5) == Catch::Approx(0.5));

    // 1 relevant at the last rank of a 200-item gallery
    std::vector<int> ranked(200);
    std::iota(ranked.begin(), ranked.end(), 0);
    std::vector<char> rel(200, 0);
    rel[199] = 1;
    RankedRetrieval rr3 = {make_query(ranked, rel)};
    REQUIRE(map_at_k(rr3, 200) == Catch::Approx(0.005));
}

TEST_CASE("queries with no relevant items are excluded and logged") {
    RankedRetrieval rr = {make_query({0, 1}, {1, 0}), make_query({0, 1}, {0, 0})};
    MetricNotes notes;
    REQUIRE(map_at_k(rr, 2, &notes) == 1.0);
    REQUIRE(notes.queries_excluded == 1);
    RankedRetrieval none = {make_query({0, 1}, {0, 0})};
    REQUIRE_THROWS_AS(map_at_k(none, 2), std::invalid_argument);
}

TEST_CASE("precision@k examples") {
    RankedRetrieval all = {make_query({0, 1, 2}, {1, 1, 1})};
    REQUIRE(precision_at_k(all, 3) == 1.0);
    RankedRetrieval nothing = {make_query({0, 1, 2}, {0, 0, 0})};
    REQUIRE(precision_at_k(nothing, 3) == 0.0);
    // 3 relevant within k = 10
    std::vector<int> ranked(12);
    std::iota(ranked.begin(), ranked.end(), 0);
    std::vector<char> rel(12, 0);
    rel[0] = rel[4] = rel[9] = 1;
    RankedRetrieval some = {make_query(ranked, rel)};
    REQUIRE(precision_at_k(some, 10) == Catch::Approx(0.3));
    // clamp when k exceeds the gallery
    MetricNotes notes;
    REQUIRE(precision_at_k(all, 5, &notes) == 1.0);
    REQUIRE(notes.k_clamped == 1);
}

TEST_CASE("acc@k examples") {
    RankedRetrieval rr = {make_query({3, 1, 0, 2}, {}, 3)};
    REQUIRE(acc_at_k(rr, 1) == 1.0);
    REQUIRE(acc_at_k(rr, 4) == 1.0);
    RankedRetrieval miss = {make_query({0, 1, 2, 3, 4, 5}, {}, 5)};
    REQUIRE(acc_at_k(miss, 5) == 0.0);
    REQUIRE(acc_at_k(miss, 6) == 1.0);
    RankedRetrieval mixed = {make_query({1, 0}, {}, 1), make_query({1, 0}, {}, 1),
                             make_query({1, 0}, {}, 1), make_query({1, 0}, {}, 0)};
    REQUIRE(acc_at_k(mixed, 1) == Catch::Approx(0.75));
}

TEST_CASE("pck@k examples and boundary rule") {
    std::vector<std::array<double, 2>> gt = {{10, 10}, {100, 100}};
    REQUIRE(pck_at_k(gt, gt, 5, 480) == 1.0);
    // offsets exactly at the threshold count as correct
    const double thr = 0.05 * 480;
    std::vector<std::array<double, 2>> at = {{10 + thr, 10}, {100, 100 + thr}};
    REQUIRE(pck_at_k(at, gt, 5, 480) == 1.0);
    // 25 px offset misses the 24 px threshold
    std::vector<std::array<double, 2>> off = {{10 + 25, 10}, {100, 100}};
    REQUIRE(pck_at_k(off, gt, 5, 480) == Catch::Approx(0.5));
    REQUIRE_THROWS_AS(pck_at_k({{0, 0}}, gt, 5, 480), std::invalid_argument);
}

TEST_CASE("miou and pixel accuracy examples") {
    SegMask a{DTensor({2, 2}, {1.0, 1.0, 0.0, 0.0})};
    SegMask b{DTensor({2, 2}, {1.0, 0.0, 1.0, 0.0})};
    auto perfect = miou_pacc({a}, {a});
    REQUIRE(perfect.miou == 1.0);
    REQUIRE(perfect.pacc == 1.0);

    SegMask comp{DTensor({2, 2}, {0.0, 0.0, 1.0, 1.0})};
    auto opposite = miou_pacc({comp}, {a});
    REQUIRE(opposite.miou == 0.0);
    REQUIRE(opposite.pacc == 0.0);

    auto mixed = miou_pacc({a}, {b});
    REQUIRE(mixed.miou == Catch::Approx(1.0 / 3.0));
    REQUIRE(mixed.pacc == Catch::Approx(0.5));

    SegMask empty{DTensor({2, 2})};
    auto both_empty = miou_pacc({empty}, {empty});
    REQUIRE(both_empty.miou == 1.0);
}

TEST_CASE("metrics match brute-force oracles on randomized galleries") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const int gallery = 2 + static_cast<int>(rng() % 19);
        const int queries = 1 + static_cast<int>(rng() % 5);
        const int k = 1 + static_cast<int>(rng() % gallery);
        RankedRetrieval rr = random_galleries(rng, queries, gallery);
        double ap_sum = 0, p_sum = 0;
        int acc_hits = 0;
        for (const auto& q : rr) {
            ap_sum += ap_oracle(q, k);
            p_sum += precision_oracle(q, k);
            acc_hits += acc_oracle(q, k) ? 1 : 0;
        }
        REQUIRE(std::abs(map_at_k(rr, k) - ap_sum / queries) < 1e-9);
        REQUIRE(precision_at_k(rr, k) == p_sum / queries);
        REQUIRE(acc_at_k(rr, k) == static_cast<double>(acc_hits) / queries);
    }
}

TEST_CASE("metrics are monotone in k where the AP variant allows it") {
    // with the min(k, #relevant) denominator, AP@k is only monotone once k
    // reaches the relevant count; Acc.@k is monotone everywhere
    std::mt19937_64 rng(4);
    RankedRetrieval rr = random_galleries(rng, 6, 15);
    int max_relevant = 0;
    for (const auto& q : rr) {
        int r = 0;
        for (char c : q.relevant) r += c ? 1 : 0;
        max_relevant = std::max(max_relevant, r);
    }
    double prev_map = 0, prev_acc = 0;
    for (int k = 1; k <= 15; ++k) {
        const double m = map_at_k(rr, k);
        const double a = acc_at_k(rr, k);
        if (k > max_relevant) REQUIRE(m >= prev_map - 1e-12);
        REQUIRE(a >= prev_acc);
        REQUIRE(m >= 0.0);
        REQUIRE(m <= 1.0);
        prev_map = m;
        prev_acc = a;
    }
}

TEST_CASE("gallery permutation with distinct distances leaves metrics unchanged") {
    std::mt19937_64 rng(5);
    const int g = 12;
    std::vector<double> dist(g);
    for (int i = 0; i < g; ++i) dist[static_cast<std::size_t>(i)] = 0.1 * (i + 1); // distinct
    std::vector<char> rel(g, 0);
    rel[3] = rel[7] = 1;

    RetrievalQuery q1;
    q1.ranked = rank_by_distance(dist);
    q1.relevant = rel;
    q1.true_match = 7;

    // permute gallery indices, carrying distances and labels along
    std::vector<int> perm(g);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> dist2(g);
    std::vector<char> rel2(g);
    for (int i = 0; i < g; ++i) {
        dist2[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = dist[static_cast<std::size_t>(i)];
        rel2[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = rel[static_cast<std::size_t>(i)];
    }
    RetrievalQuery q2;
    q2.ranked = rank_by_distance(dist2);
    q2.relevant = rel2;
    q2.true_match = perm[7];

    for (int k : {1, 3, 5, 12}) {
        REQUIRE(map_at_k({q1}, k) == map_at_k({q2}, k));
        REQUIRE(precision_at_k({q1}, k) == precision_at_k({q2}, k));
        REQUIRE(acc_at_k({q1}, k) == acc_at_k({q2}, k));
    }
}

TEST_CASE("rank gallery breaks ties by ascending index") {
    DTensor queries({1, 2}, {0.0, 0.0});
    DTensor gallery({3, 2}, {1.0, 0.0, -1.0, 0.0, 0.5, 0.5});
    auto ranked = rank_gallery(queries, gallery);
    // distances: 1, 1, sqrt(0.5) -> index 2 first, then 0, then 1
    REQUIRE(ranked[0] == std::vector<int>{2, 0, 1});
}

TEST_CASE("metric report renders four decimals, one metric per line") {
    MetricReport r;
    r.add("map", 200, 0.76149);
    r.add("miou", 0.5);
    REQUIRE(r.to_string() == "map 200 0.7615\nmiou - 0.5000\n");
}
