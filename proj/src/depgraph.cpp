#include "dapd/depgraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dapd {

int DependencyGraph::edge_count() const {
    const int n = size();
    int count = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) count += adjacent(i, j);
    return count;
}

void TauSchedule::validate() const {
    if (tau_min < 0.0 || tau_max < tau_min)
        throw std::invalid_argument("TauSchedule: require 0 <= tau_min <= tau_max");
}

Eigen::MatrixXd aggregate_attention(const AttentionStack& attention, double top_layer_fraction) {
    if (attention.empty()) throw std::invalid_argument("no attention layers");
    if (top_layer_fraction <= 0.0 || top_layer_fraction > 1.0)
        throw std::invalid_argument("top_layer_fraction must be in (0, 1]");

    const int num_layers = static_cast<int>(attention.size());
    const int take = std::max(1, static_cast<int>(std::ceil(top_layer_fraction * num_layers)));
    const int first = num_layers - take;

    Eigen::MatrixXd sum;
    int maps = 0;
    for (int l = first; l < num_layers; ++l) {
        for (const auto& head : attention[l]) {
            if (maps == 0) {
                sum = head;
            } else {
                if (head.rows() != sum.rows() || head.cols() != sum.cols())
                    throw std::invalid_argument("attention maps have inconsistent shapes");
                sum += head;
            }
            ++maps;
        }
    }
    if (maps == 0) throw std::invalid_argument("no attention layers");
    return sum / static_cast<double>(maps);
}

EdgeScoreMatrix symmetrize_scores(const Eigen::MatrixXd& agg, const std::vector<int>& masked) {
    const int L = static_cast<int>(agg.rows());
    std::vector<int> positions = masked;
    std::sort(positions.begin(), positions.end());
    if (std::adjacent_find(positions.begin(), positions.end()) != positions.end())
        throw std::invalid_argument("symmetrize_scores: duplicate masked index");
    for (int p : positions)
        if (p < 0 || p >= L) throw std::invalid_argument("symmetrize_scores: masked index out of range");

    const int n = static_cast<int>(positions.size());
    EdgeScoreMatrix out;
    out.positions = std::move(positions);
    out.scores = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double s = 0.5 * (agg(out.positions[i], out.positions[j]) +
                                    agg(out.positions[j], out.positions[i]));
            out.scores(i, j) = s;
            out.scores(j, i) = s;
        }
    }
    return out;
}

double tau_at(const TauSchedule& schedule, double progress) {
    schedule.validate();
    if (!(progress >= 0.0 && progress <= 1.0))
        throw std::invalid_argument("tau_at: progress must be in [0, 1]");
    return schedule.tau_min + (schedule.tau_max - schedule.tau_min) * progress;
}

DependencyGraph build_graph(const EdgeScoreMatrix& scores, double tau) {
    if (tau < 0.0) throw std::invalid_argument("build_graph: tau must be >= 0");
    const int n = scores.size();
    DependencyGraph g;
    g.positions = scores.positions;
    g.threshold = tau;
    g.adj.assign(static_cast<std::size_t>(n) * n, 0);
    g.proxy_degree = scores.scores.rowwise().sum();
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (scores.scores(i, j) > tau) {
                g.adj[static_cast<std::size_t>(i) * n + j] = 1;
                g.adj[static_cast<std::size_t>(j) * n + i] = 1;
            }
        }
    }
    return g;
}

IndependentSet welsh_powell_select(const DependencyGraph& graph, const Eigen::VectorXd& weights) {
    const int n = graph.size();
    if (n == 0) throw std::invalid_argument("no masked positions");
    if (weights.size() != n)
        throw std::invalid_argument("welsh_powell_select: weight length mismatch");
    for (int i = 0; i < n; ++i)
        if (!std::isfinite(weights[i]))
            throw std::invalid_argument("welsh_powell_select: non-finite weight");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (weights[a] != weights[b]) return weights[a] > weights[b];
        return graph.positions[a] < graph.positions[b];
    });

    std::vector<int> chosen;  // local node indices
    for (int v : order) {
        bool ok = true;
        for (int u : chosen) {
            if (graph.adjacent(v, u)) {
                ok = false;
                break;
            }
        }
        if (ok) chosen.push_back(v);
    }

    IndependentSet s;
    s.members.reserve(chosen.size());
    for (int v : chosen) s.members.push_back(graph.positions[v]);
    std::sort(s.members.begin(), s.members.end());
    return s;
}

int segment_count(const SequenceState& state, int begin, int end) {
    if (begin < 0 || end > state.length() || begin > end)
        throw std::invalid_argument("segment_count: region out of bounds");
    int count = 0;
    bool in_run = false;
    for (int i = begin; i < end; ++i) {
        const bool unmasked = !state.is_masked(i);
        if (unmasked && !in_run) ++count;
        in_run = unmasked;
    }
    return count;
}

}  // namespace dapd
