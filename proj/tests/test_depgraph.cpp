#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "dapd/depgraph.hpp"
#include "dapd/oracle.hpp"
#include "dapd/rng.hpp"

using namespace dapd;

namespace {

Eigen::MatrixXd constant_map(int n, double v) { return Eigen::MatrixXd::Constant(n, n, v); }

// Random symmetric non-negative score matrix over n nodes.
EdgeScoreMatrix random_scores(int n, Rng& rng) {
    EdgeScoreMatrix esm;
    esm.positions.resize(n);
    for (int i = 0; i < n; ++i) esm.positions[i] = i;
    esm.scores = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double s = rng.next_unit();
            esm.scores(i, j) = s;
            esm.scores(j, i) = s;
        }
    return esm;
}

}  // namespace

TEST_CASE("aggregate_attention averages heads of the top layers") {
    // two layers, one head each: entry (1,2) = 0.2 and 0.6 -> 0.4
    AttentionStack stack{{constant_map(4, 0.2)}, {constant_map(4, 0.6)}};
    stack[0][0](1, 2) = 0.2;
    stack[1][0](1, 2) = 0.6;
    const auto agg = aggregate_attention(stack, 1.0);
    CHECK(agg(1, 2) == doctest::Approx(0.4));

    // 8 layers, fraction 0.25 -> final two selected (constant value l per layer)
    AttentionStack eight;
    for (int l = 0; l < 8; ++l) eight.push_back({constant_map(3, static_cast<double>(l))});
    const auto top = aggregate_attention(eight, 0.25);
    CHECK(top(0, 0) == doctest::Approx(6.5));  // mean of layers 6 and 7 (0-based)

    // single layer, single head: identity
    AttentionStack one{{constant_map(3, 0.125)}};
    one[0][0](2, 1) = 0.75;
    const auto same = aggregate_attention(one, 0.25);
    CHECK(same(2, 1) == doctest::Approx(0.75));

    CHECK_THROWS_WITH_AS(aggregate_attention({}, 0.25), "no attention layers",
                         std::invalid_argument);
}

TEST_CASE("symmetrize_scores halves the directed sum over masked pairs") {
    Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(5, 5);
    agg(1, 3) = 0.2;
    agg(3, 1) = 0.4;
    const auto esm = symmetrize_scores(agg, {1, 3});
    CHECK(esm.scores(0, 1) == doctest::Approx(0.3));
    CHECK(esm.scores(1, 0) == esm.scores(0, 1));
    CHECK(esm.scores(0, 0) == 0.0);

    // already symmetric input: restriction to the masked pairs
    Eigen::MatrixXd sym = Eigen::MatrixXd::Constant(4, 4, 0.25);
    const auto esm2 = symmetrize_scores(sym, {0, 2, 3});
    CHECK(esm2.scores(0, 2) == doctest::Approx(0.25));
    CHECK(esm2.scores(1, 2) == doctest::Approx(0.25));

    // single masked position: 1x1 zero matrix
    const auto esm3 = symmetrize_scores(sym, {3});
    CHECK(esm3.size() == 1);
    CHECK(esm3.scores(0, 0) == 0.0);

    SUBCASE("exact symmetry on random inputs") {
        Rng rng(11);
        for (int rep = 0; rep < 50; ++rep) {
            Eigen::MatrixXd a(6, 6);
            for (int i = 0; i < 36; ++i) a(i / 6, i % 6) = rng.next_unit();
            const auto s = symmetrize_scores(a, {0, 1, 2, 3, 4, 5});
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) CHECK(s.scores(i, j) == s.scores(j, i));
        }
    }
}

TEST_CASE("tau_at is the linear schedule") {
    const TauSchedule sched{0.01, 0.05};
    CHECK(tau_at(sched, 0.0) == doctest::Approx(0.01));
    CHECK(tau_at(sched, 0.5) == doctest::Approx(0.03));
    CHECK(tau_at(sched, 1.0) == doctest::Approx(0.05));
    const TauSchedule flat{0.02, 0.02};
    CHECK(tau_at(flat, 0.77) == doctest::Approx(0.02));
    CHECK_THROWS_AS(tau_at(sched, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(tau_at(sched, 1.2), std::invalid_argument);
    CHECK_THROWS_AS(tau_at(TauSchedule{0.1, 0.05}, 0.5), std::invalid_argument);
}

TEST_CASE("build_graph thresholds strictly and keeps raw-score degrees") {
    EdgeScoreMatrix esm;
    esm.positions = {0, 1, 2};
    esm.scores = Eigen::MatrixXd::Zero(3, 3);
    auto set = [&](int i, int j, double v) {
        esm.scores(i, j) = v;
        esm.scores(j, i) = v;
    };
    set(0, 1, 0.3);
    set(0, 2, 0.05);
    set(1, 2, 0.0);

    const auto g = build_graph(esm, 0.1);
    CHECK(g.adjacent(0, 1));
    CHECK_FALSE(g.adjacent(0, 2));
    CHECK_FALSE(g.adjacent(1, 2));
    CHECK(g.edge_count() == 1);
    CHECK(g.proxy_degree[0] == doctest::Approx(0.35));
    CHECK(g.proxy_degree[1] == doctest::Approx(0.30));
    CHECK(g.proxy_degree[2] == doctest::Approx(0.05));

    // zero scores, tau 0: empty edge set (strict inequality), zero degrees
    EdgeScoreMatrix zero;
    zero.positions = {0, 1};
    zero.scores = Eigen::MatrixXd::Zero(2, 2);
    const auto gz = build_graph(zero, 0.0);
    CHECK(gz.edge_count() == 0);
    CHECK(gz.proxy_degree[0] == 0.0);

    // tau at or above the max off-diagonal score: edgeless
    const auto ge = build_graph(esm, 0.3);
    CHECK(ge.edge_count() == 0);

    SUBCASE("monotonicity and degree invariance in tau") {
        Rng rng(5);
        for (int rep = 0; rep < 100; ++rep) {
            const auto scores = random_scores(8, rng);
            const double t1 = rng.next_unit(), t2 = rng.next_unit();
            const double lo = std::min(t1, t2), hi = std::max(t1, t2);
            const auto glo = build_graph(scores, lo);
            const auto ghi = build_graph(scores, hi);
            CHECK(ghi.edge_count() <= glo.edge_count());
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j)
                    if (ghi.adjacent(i, j)) CHECK(glo.adjacent(i, j));
            for (int i = 0; i < 8; ++i) CHECK(glo.proxy_degree[i] == ghi.proxy_degree[i]);
        }
    }
}

TEST_CASE("welsh_powell_select hand examples") {
    // nodes {A,B,C}, edge (A,B), weights (0.45, 0.40, 0.0) -> {A, C}
    EdgeScoreMatrix esm;
    esm.positions = {0, 1, 2};
    esm.scores = Eigen::MatrixXd::Zero(3, 3);
    esm.scores(0, 1) = esm.scores(1, 0) = 1.0;
    const auto g = build_graph(esm, 0.5);
    Eigen::VectorXd w(3);
    w << 0.45, 0.40, 0.0;
    CHECK(welsh_powell_select(g, w).members == std::vector<int>{0, 2});

    // complete graph: singleton max-weight node
    EdgeScoreMatrix complete;
    complete.positions = {0, 1, 2, 3};
    complete.scores = Eigen::MatrixXd::Ones(4, 4);
    complete.scores.diagonal().setZero();
    const auto gc = build_graph(complete, 0.5);
    Eigen::VectorXd wc(4);
    wc << 0.1, 0.9, 0.3, 0.2;
    CHECK(welsh_powell_select(gc, wc).members == std::vector<int>{1});

    // edgeless graph: everything selected
    const auto gz = build_graph(complete, 2.0);
    CHECK(welsh_powell_select(gz, wc).members == std::vector<int>{0, 1, 2, 3});

    CHECK_THROWS_WITH_AS(welsh_powell_select(DependencyGraph{}, Eigen::VectorXd{}),
                         "no masked positions", std::invalid_argument);
}

TEST_CASE("welsh_powell_select covers the toy graph in three rounds") {
    // ground-truth triangle graph with true-degree weights and index tie-break
    auto graph_from_subset = [](const std::vector<int>& nodes) {
        const auto sub = oracle::ground_truth_subgraph(nodes);
        EdgeScoreMatrix esm;
        esm.positions = sub.positions;
        esm.scores = Eigen::MatrixXd::Zero(sub.size(), sub.size());
        for (int i = 0; i < sub.size(); ++i)
            for (int j = 0; j < sub.size(); ++j)
                if (sub.adjacent(i, j)) esm.scores(i, j) = 1.0;
        return std::pair{build_graph(esm, 0.5), sub};
    };

    std::vector<int> remaining{0, 1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<std::vector<int>> rounds;
    while (!remaining.empty()) {
        const auto [g, sub] = graph_from_subset(remaining);
        Eigen::VectorXd w(sub.size());
        for (int i = 0; i < sub.size(); ++i) w[i] = sub.degree[i];
        const auto s = welsh_powell_select(g, w);
        rounds.push_back(s.members);
        std::vector<int> next;
        for (int v : remaining)
            if (!std::count(s.members.begin(), s.members.end(), v)) next.push_back(v);
        remaining = next;
    }
    REQUIRE(rounds.size() == 3);
    CHECK(rounds[0] == std::vector<int>{1, 3});        // X2, X4
    CHECK(rounds[1] == std::vector<int>{0, 2, 4});     // X1, X3, X5
    CHECK(rounds[2] == std::vector<int>{5, 6, 7, 8});  // Y1..Y4
}

TEST_CASE("welsh_powell_select is independent, maximal, and deterministic") {
    Rng rng(123);
    for (int rep = 0; rep < 2000; ++rep) {
        const int n = 2 + static_cast<int>(rng.next_below(10));
        auto esm = random_scores(n, rng);
        const double tau = rng.next_unit();
        const auto g = build_graph(esm, tau);
        Eigen::VectorXd w(n);
        for (int i = 0; i < n; ++i) w[i] = rng.next_unit();
        const auto s = welsh_powell_select(g, w);
        REQUIRE_FALSE(s.members.empty());

        std::set<int> chosen(s.members.begin(), s.members.end());
        auto local = [&](int pos) {
            return static_cast<int>(std::find(g.positions.begin(), g.positions.end(), pos) -
                                    g.positions.begin());
        };
        // independence
        for (int a : s.members)
            for (int b : s.members)
                if (a != b) CHECK_FALSE(g.adjacent(local(a), local(b)));
        // maximality
        for (int v = 0; v < n; ++v) {
            if (chosen.count(g.positions[v])) continue;
            bool blocked = false;
            for (int a : s.members) blocked = blocked || g.adjacent(v, local(a));
            CHECK(blocked);
        }
        // the top-weighted node is always selected
        int top = 0;
        for (int i = 1; i < n; ++i)
            if (w[i] > w[top] || (w[i] == w[top] && g.positions[i] < g.positions[top])) top = i;
        CHECK(chosen.count(g.positions[top]) == 1);
        // determinism
        CHECK(welsh_powell_select(g, w).members == s.members);
    }
}

TEST_CASE("segment_count counts maximal unmasked runs") {
    SequenceState s;
    s.prompt_len = 0;
    s.gen_len = 5;
    s.tokens = {kMaskToken, kMaskToken, kMaskToken, kMaskToken, kMaskToken};
    CHECK(segment_count(s, 0, 5) == 0);

    s.tokens = {1, 2, kMaskToken, kMaskToken, 0};  // U U M M U
    CHECK(segment_count(s, 0, 5) == 2);

    s.tokens = {1, 2, 0, 1, 2};
    CHECK(segment_count(s, 0, 5) == 1);

    // sub-regions
    s.tokens = {1, kMaskToken, 0, kMaskToken, 2};
    CHECK(segment_count(s, 1, 4) == 1);
    CHECK(segment_count(s, 0, 5) == 3);
    CHECK(segment_count(s, 2, 2) == 0);
    CHECK_THROWS_AS(segment_count(s, 0, 6), std::invalid_argument);
}
