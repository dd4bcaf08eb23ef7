#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dapd/depgraph.hpp"
#include "dapd/state.hpp"

namespace dapd {

// One forward pass worth of model outputs: a marginal distribution for each
// currently masked position plus the attention maps.
struct DenoiserOutput {
    std::vector<int> positions;                   // masked positions, ascending
    std::vector<std::vector<double>> marginals;   // one row per masked position
    AttentionStack attention;                     // layers -> heads -> LxL

    double confidence(int local_idx) const;
    // Local index of an absolute position; -1 if not present.
    int local_index(int position) const;
};

using Denoiser = std::function<DenoiserOutput(const SequenceState&)>;

enum class StrategyKind { sequential, topk, conf_threshold, kl_stability, dapd };
enum class Committer { argmax, sample };

std::string strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::sequential;
    int k = 1;                         // topk
    double conf_thresh = 0.9;          // conf_threshold, kl_stability, dapd switch
    double kl_thresh = 0.001;          // kl_stability
    TauSchedule tau_schedule{};        // dapd
    double switch_mask_ratio = 0.5;    // dapd: graph phase while mask ratio >= this
    double top_layer_fraction = 0.25;  // dapd attention aggregation
    Committer committer = Committer::argmax;

    void validate() const;
};

struct StepRecord {
    int idx = 0;                     // 0-based step index
    std::optional<double> tau;       // threshold used (dapd graph phase only)
    std::vector<int> unmasked;       // positions committed this step, ascending
    std::vector<int> tokens;         // committed symbols, aligned with unmasked
    std::vector<double> confs;       // marginal confidences, aligned with unmasked
    int segments = 0;                // segment count over the generation region after the step
};

struct DecodeTrace {
    std::uint64_t seed = 0;
    std::string strategy;
    int nfe = 0;  // one forward pass per step
    std::vector<StepRecord> steps;
    std::vector<int> final_tokens;

    int peak_segments() const;
};

// Position selectors. Each returns a non-empty subset of out.positions.
std::vector<int> select_sequential(const DenoiserOutput& out);
std::vector<int> select_topk(const DenoiserOutput& out, int k);
std::vector<int> select_conf_threshold(const DenoiserOutput& out, double thresh);
std::vector<int> select_kl_stability(const DenoiserOutput& out, const DenoiserOutput* prev,
                                     double conf_thresh, double kl_thresh);
// DAPD step: graph phase (attention -> scores -> thresholded graph ->
// confidence-weighted Welsh-Powell) while the mask ratio over the generation
// region is >= cfg.switch_mask_ratio, confidence-threshold phase afterwards.
// tau_used is set only in the graph phase.
std::vector<int> select_dapd(const DenoiserOutput& out, const SequenceState& state,
                             const StrategyConfig& cfg, double progress,
                             std::optional<double>* tau_used = nullptr);

// Iterative unmasking until no masks remain. One denoiser call per step; every
// step commits at least one position; committed positions never change.
std::pair<SequenceState, DecodeTrace> decode(const Denoiser& denoiser, const StrategyConfig& strategy,
                                             const SequenceState& initial, std::uint64_t rng_seed);

// One line of the line-delimited JSON trace format:
// {seed, strategy, nfe, steps:[{idx, tau, unmasked, tokens, confs, segments}], final}
std::string trace_to_json(const DecodeTrace& trace);

}  // namespace dapd
