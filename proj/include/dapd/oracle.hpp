#pragma once

#include <array>
#include <map>
#include <vector>

#include "dapd/decode.hpp"
#include "dapd/toy.hpp"

namespace dapd::oracle {

// position -> observed symbol; positions not present are latent.
using Observed = std::map<int, int>;

// The 12-edge union of the four constraint triangles {X_i, X_{i+1}, Y_i}.
struct GroundTruthGraph {
    std::vector<int> positions;     // node subset, ascending absolute indices
    std::vector<std::uint8_t> adj;  // n x n row-major
    std::vector<int> degree;        // induced degrees

    int size() const { return static_cast<int>(positions.size()); }
    bool adjacent(int i, int j) const { return adj[static_cast<std::size_t>(i) * positions.size() + j] != 0; }
};

// True in the full 9-node graph, by absolute position.
bool true_edge(int a, int b);

// Induced subgraph of the ground-truth MRF on the given masked set.
GroundTruthGraph ground_truth_subgraph(const std::vector<int>& masked);

// All valid sequences agreeing with the observations. Empty result signals an
// inconsistent partial sequence.
std::vector<toy::Example> enumerate_consistent(const Observed& observed);

// Exact conditional marginals for every unobserved position, as ratios of
// integer counts over the consistent set. Throws ZeroSupportError when no
// consistent sequence exists.
std::map<int, std::array<double, toy::kNumSymbols>> oracle_marginals(const Observed& observed);

// Exact I(X_i ; X_j | all other unobserved positions, observed) in nats.
double conditional_mi(const Observed& observed, int i, int j);

// Denoiser backed by exact enumeration: marginals are true conditionals and
// the attention slot carries the binary ground-truth adjacency over masked
// pairs as a single-layer, single-head map. Any tau in (0,1) recovers the
// true edge set from it.
DenoiserOutput oracle_denoiser(const SequenceState& state);

// Adapter with the engine's callable signature.
inline Denoiser make_oracle_denoiser() {
    return [](const SequenceState& s) { return oracle_denoiser(s); };
}

}  // namespace dapd::oracle
