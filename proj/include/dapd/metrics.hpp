#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dapd/checkpoint.hpp"
#include "dapd/decode.hpp"
#include "dapd/toy.hpp"

namespace dapd::metrics {

// Rank-based AUC (Mann-Whitney), ties contributing 1/2. Labels are 0/1.
// Throws std::invalid_argument("AUC undefined") when only one class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// mean(scores over label 1) / mean(scores over label 0).
double edge_ratio(std::span<const double> scores, std::span<const int> labels);

// Order violation rate: fraction of ALL pairs (denominator C(n,2)) whose
// strict true-degree order is reversed by the proxy.
double ovr(std::span<const double> proxy, std::span<const int> true_deg);

// Fraction of sequences satisfying all four toy constraints. Sequences must
// be length 9 over {0,1,2}; anything else is an error.
double validity_rate(const std::vector<std::vector<int>>& sequences);

// (1/2) sum |empirical - exact| against the uniform distribution over the 243
// valid sequences; invalid sequences in the histogram carry exact mass 0.
double tv_to_uniform243(const std::map<toy::Example, long>& histogram, long total);

// ---- graph evaluation (edge detection / degree estimation) ----

struct StepStats {
    int step = 0;  // 1-based decoding step
    double auc = 0.0, auc_std = 0.0;
    double ratio = 0.0, ratio_std = 0.0;
    double ovr = 0.0, ovr_std = 0.0;
    int auc_paths = 0;  // paths contributing AUC/ratio (both classes present)
    int ovr_paths = 0;
};

struct GraphEvalReport {
    int paths = 0;
    std::vector<std::uint64_t> seeds;  // model seeds used
    std::vector<StepStats> per_step;   // steps 1..7
    struct Overall {
        double auc = 0.0, ratio = 0.0, ovr = 0.0;
    };
    Overall overall;         // mean over per-step means
    Overall overall_pooled;  // mean over all (path, step) samples
};

// Step-by-step decoding in uniformly random order with sampled commitments;
// at steps 1..7 the masked-pair edge scores are evaluated against the
// ground-truth subgraph. workers enables OpenMP fan-out over paths; results
// are identical for any worker count.
GraphEvalReport eval_graph_run(const Checkpoint& ckpt, int paths, std::uint64_t seed,
                               int workers = 1);

// Same evaluation with the oracle's exact marginals and binary ground-truth
// edge scores in place of the model: the perfect-proxy ceiling.
GraphEvalReport eval_graph_run_oracle(int paths, std::uint64_t seed, int workers = 1);

std::string graph_report_to_json(const GraphEvalReport& r);
std::string graph_report_to_csv(const GraphEvalReport& r);

// ---- strategy comparison ----

struct StrategyResult {
    std::string name;
    double mean_nfe = 0.0;
    double validity = 0.0;
    std::optional<double> tv;  // oracle runs with sampled commitments only
    std::vector<double> mean_segment_trajectory;
    double mean_peak_segments = 0.0;
};

struct CompareReport {
    int samples = 0;
    std::uint64_t seed = 0;
    std::string committer;
    std::vector<StrategyResult> strategies;
};

// Runs `samples` seeded decodes per strategy against the given denoiser.
// oracle_exact enables the TV-vs-uniform measurement (meaningful only when
// the denoiser is the exact oracle and commitments are sampled).
CompareReport run_compare(const Denoiser& denoiser,
                          const std::vector<std::pair<std::string, StrategyConfig>>& strategies,
                          int samples, std::uint64_t seed, bool oracle_exact, int workers = 1);

std::string compare_report_to_json(const CompareReport& r);
std::string compare_report_to_csv(const CompareReport& r);

}  // namespace dapd::metrics
