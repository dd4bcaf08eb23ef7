#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dapd/state.hpp"

namespace dapd {

// Attention maps from one forward pass: layers -> heads -> LxL matrices,
// where entry (i,j) is the weight position i places on position j.
using AttentionStack = std::vector<std::vector<Eigen::MatrixXd>>;

// Symmetric pairwise interaction scores over the currently masked positions.
struct EdgeScoreMatrix {
    std::vector<int> positions;  // absolute sequence indices, ascending
    Eigen::MatrixXd scores;      // n x n, symmetric, zero diagonal, >= 0

    int size() const { return static_cast<int>(positions.size()); }
};

// Thresholded dependency graph plus proxy degrees for the same node set.
// proxy_degree aggregates the raw scores, so it does not change with the
// threshold.
struct DependencyGraph {
    std::vector<int> positions;       // absolute sequence indices, ascending
    std::vector<std::uint8_t> adj;    // n x n row-major boolean adjacency
    Eigen::VectorXd proxy_degree;     // row sums of the raw score matrix
    double threshold = 0.0;

    int size() const { return static_cast<int>(positions.size()); }
    bool adjacent(int i, int j) const { return adj[static_cast<std::size_t>(i) * positions.size() + j] != 0; }
    int edge_count() const;
};

// Linearly increasing edge-score threshold over decoding progress.
struct TauSchedule {
    double tau_min = 0.01;
    double tau_max = 0.05;

    void validate() const;
};

struct IndependentSet {
    std::vector<int> members;  // absolute sequence indices, ascending
};

// Mean attention over all heads of the top ceil(fraction * num_layers)
// layers. Expects row-stochastic inputs; the mean is then row-stochastic too.
Eigen::MatrixXd aggregate_attention(const AttentionStack& attention, double top_layer_fraction);

// s_ij = (a_ij + a_ji) / 2 restricted to masked-to-masked pairs, diagonal 0.
EdgeScoreMatrix symmetrize_scores(const Eigen::MatrixXd& agg, const std::vector<int>& masked);

// tau_min + (tau_max - tau_min) * progress, progress in [0, 1].
double tau_at(const TauSchedule& schedule, double progress);

// Edge (i,j) iff scores(i,j) > tau (strict). Proxy degrees from raw scores.
DependencyGraph build_graph(const EdgeScoreMatrix& scores, double tau);

// Greedy maximal independent set: scan nodes in non-increasing weight order
// (ties broken by ascending absolute index), admit a node iff it is
// non-adjacent to everything admitted so far.
IndependentSet welsh_powell_select(const DependencyGraph& graph, const Eigen::VectorXd& weights);

// Number of maximal runs of unmasked tokens in [begin, end).
int segment_count(const SequenceState& state, int begin, int end);

}  // namespace dapd
