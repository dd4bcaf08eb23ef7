#include "dapd/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "dapd/errors.hpp"

namespace dapd::oracle {

namespace {

// The 243 valid sequences, enumerated once.
const std::vector<toy::Example>& all_valid() {
    static const std::vector<toy::Example> table = [] {
        std::vector<toy::Example> v;
        v.reserve(243);
        std::array<int, toy::kNumX> x{};
        for (x[0] = 0; x[0] < 3; ++x[0])
            for (x[1] = 0; x[1] < 3; ++x[1])
                for (x[2] = 0; x[2] < 3; ++x[2])
                    for (x[3] = 0; x[3] < 3; ++x[3])
                        for (x[4] = 0; x[4] < 3; ++x[4]) v.push_back(toy::from_x(x));
        return v;
    }();
    return table;
}

Observed observed_from_state(const SequenceState& state) {
    if (state.length() != toy::kSeqLen)
        throw std::invalid_argument("oracle: state must have length 9");
    Observed obs;
    for (int i = 0; i < toy::kSeqLen; ++i)
        if (!state.is_masked(i)) obs[i] = state.tokens[i];
    return obs;
}

}  // namespace

bool true_edge(int a, int b) {
    if (a == b) return false;
    for (int i = 0; i < toy::kNumY; ++i) {
        const int u = i, v = i + 1, y = toy::kNumX + i;  // triangle {X_i, X_{i+1}, Y_i}
        const bool a_in = (a == u || a == v || a == y);
        const bool b_in = (b == u || b == v || b == y);
        if (a_in && b_in) return true;
    }
    return false;
}

GroundTruthGraph ground_truth_subgraph(const std::vector<int>& masked) {
    if (masked.empty()) throw std::invalid_argument("ground_truth_subgraph: empty masked set");
    GroundTruthGraph g;
    g.positions = masked;
    std::sort(g.positions.begin(), g.positions.end());
    for (int p : g.positions)
        if (p < 0 || p >= toy::kSeqLen)
            throw std::invalid_argument("ground_truth_subgraph: position out of range");
    const int n = g.size();
    g.adj.assign(static_cast<std::size_t>(n) * n, 0);
    g.degree.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (true_edge(g.positions[i], g.positions[j])) {
                g.adj[static_cast<std::size_t>(i) * n + j] = 1;
                g.adj[static_cast<std::size_t>(j) * n + i] = 1;
                ++g.degree[i];
                ++g.degree[j];
            }
        }
    }
    return g;
}

std::vector<toy::Example> enumerate_consistent(const Observed& observed) {
    for (const auto& [pos, val] : observed) {
        if (pos < 0 || pos >= toy::kSeqLen)
            throw std::invalid_argument("enumerate_consistent: position out of range");
        if (val < 0 || val >= toy::kNumSymbols)
            throw std::invalid_argument("enumerate_consistent: symbol out of range");
    }
    std::vector<toy::Example> out;
    for (const auto& seq : all_valid()) {
        bool ok = true;
        for (const auto& [pos, val] : observed) {
            if (seq[pos] != val) {
                ok = false;
                break;
            }
        }
        if (ok) out.push_back(seq);
    }
    return out;
}

std::map<int, std::array<double, toy::kNumSymbols>> oracle_marginals(const Observed& observed) {
    const auto consistent = enumerate_consistent(observed);
    if (consistent.empty()) throw ZeroSupportError("zero support");
    std::map<int, std::array<double, toy::kNumSymbols>> out;
    for (int pos = 0; pos < toy::kSeqLen; ++pos) {
        if (observed.count(pos)) continue;
        std::array<int, toy::kNumSymbols> counts{};
        for (const auto& seq : consistent) ++counts[seq[pos]];
        std::array<double, toy::kNumSymbols> row{};
        for (int v = 0; v < toy::kNumSymbols; ++v)
            row[v] = static_cast<double>(counts[v]) / static_cast<double>(consistent.size());
        out[pos] = row;
    }
    return out;
}

double conditional_mi(const Observed& observed, int i, int j) {
    if (i == j) throw std::invalid_argument("conditional_mi: positions must be distinct");
    if (observed.count(i) || observed.count(j))
        throw std::invalid_argument("conditional_mi: positions must be unobserved");
    const auto consistent = enumerate_consistent(observed);
    if (consistent.empty()) throw ZeroSupportError("zero support");

    // Group the consistent sequences by the joint value of every position
    // other than i and j; integer counts keep the computation exact until the
    // final logs.
    struct Cell {
        int joint[toy::kNumSymbols][toy::kNumSymbols] = {};
        int total = 0;
    };
    std::map<std::array<int, toy::kSeqLen>, Cell> contexts;
    for (const auto& seq : consistent) {
        std::array<int, toy::kSeqLen> key = seq;
        key[i] = -1;
        key[j] = -1;
        Cell& c = contexts[key];
        ++c.joint[seq[i]][seq[j]];
        ++c.total;
    }

    const double total = static_cast<double>(consistent.size());
    double mi = 0.0;
    for (const auto& [key, cell] : contexts) {
        int mi_row[toy::kNumSymbols] = {};
        int mi_col[toy::kNumSymbols] = {};
        for (int a = 0; a < toy::kNumSymbols; ++a)
            for (int b = 0; b < toy::kNumSymbols; ++b) {
                mi_row[a] += cell.joint[a][b];
                mi_col[b] += cell.joint[a][b];
            }
        double inner = 0.0;
        for (int a = 0; a < toy::kNumSymbols; ++a) {
            for (int b = 0; b < toy::kNumSymbols; ++b) {
                const int c = cell.joint[a][b];
                if (c == 0) continue;
                inner += (static_cast<double>(c) / cell.total) *
                         std::log(static_cast<double>(c) * cell.total /
                                  (static_cast<double>(mi_row[a]) * mi_col[b]));
            }
        }
        mi += (cell.total / total) * inner;
    }
    return std::max(mi, 0.0);
}

DenoiserOutput oracle_denoiser(const SequenceState& state) {
    const Observed obs = observed_from_state(state);
    const auto marginals = oracle_marginals(obs);

    DenoiserOutput out;
    out.positions = state.masked_positions();
    out.marginals.reserve(out.positions.size());
    for (int pos : out.positions) {
        const auto& row = marginals.at(pos);
        out.marginals.emplace_back(row.begin(), row.end());
    }

    // Binary ground-truth adjacency over masked pairs, exported as a
    // single-layer single-head map.
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(toy::kSeqLen, toy::kSeqLen);
    const auto sub = ground_truth_subgraph(out.positions);
    for (int a = 0; a < sub.size(); ++a)
        for (int b = 0; b < sub.size(); ++b)
            if (sub.adjacent(a, b)) scores(sub.positions[a], sub.positions[b]) = 1.0;
    out.attention = {{std::move(scores)}};
    return out;
}

}  // namespace dapd::oracle
