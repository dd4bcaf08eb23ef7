#include "dapd/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dapd/rng.hpp"

namespace dapd {

namespace {

constexpr double kMarginalSumTol = 1e-5;
constexpr double kKlEpsilon = 1e-10;

// Highest-confidence local index, ties broken by lowest absolute position.
int argmax_confidence(const DenoiserOutput& out) {
    int best = 0;
    double best_conf = out.confidence(0);
    for (int i = 1; i < static_cast<int>(out.positions.size()); ++i) {
        const double c = out.confidence(i);
        if (c > best_conf) {
            best = i;
            best_conf = c;
        }
    }
    return best;
}

double kl_divergence(const std::vector<double>& p_raw, const std::vector<double>& q_raw) {
    if (p_raw.size() != q_raw.size())
        throw std::invalid_argument("kl_divergence: dimension mismatch");
    // Additive smoothing keeps the divergence finite for zero entries.
    double psum = 0.0, qsum = 0.0;
    for (std::size_t i = 0; i < p_raw.size(); ++i) {
        psum += p_raw[i] + kKlEpsilon;
        qsum += q_raw[i] + kKlEpsilon;
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p_raw.size(); ++i) {
        const double p = (p_raw[i] + kKlEpsilon) / psum;
        const double q = (q_raw[i] + kKlEpsilon) / qsum;
        kl += p * std::log(p / q);
    }
    return kl;
}

void validate_output(const DenoiserOutput& out, const SequenceState& state) {
    const auto masked = state.masked_positions();
    if (out.positions != masked)
        throw std::runtime_error("denoiser output positions do not match masked set");
    if (out.marginals.size() != masked.size())
        throw std::runtime_error("denoiser output has wrong marginal count");
    for (const auto& row : out.marginals) {
        if (row.empty()) throw std::runtime_error("denoiser returned empty marginal");
        double sum = 0.0;
        for (double p : row) {
            if (!(p >= 0.0) || !std::isfinite(p))
                throw std::runtime_error("denoiser returned negative or non-finite probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > kMarginalSumTol)
            throw std::runtime_error("denoiser marginal does not sum to 1");
    }
}

}  // namespace

double DenoiserOutput::confidence(int local_idx) const {
    const auto& row = marginals.at(local_idx);
    return *std::max_element(row.begin(), row.end());
}

int DenoiserOutput::local_index(int position) const {
    const auto it = std::lower_bound(positions.begin(), positions.end(), position);
    if (it == positions.end() || *it != position) return -1;
    return static_cast<int>(it - positions.begin());
}

int DecodeTrace::peak_segments() const {
    int peak = 0;
    for (const auto& s : steps) peak = std::max(peak, s.segments);
    return peak;
}

std::string strategy_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::sequential: return "sequential";
        case StrategyKind::topk: return "topk";
        case StrategyKind::conf_threshold: return "conf_threshold";
        case StrategyKind::kl_stability: return "kl_stability";
        case StrategyKind::dapd: return "dapd";
    }
    throw std::logic_error("unreachable strategy kind");
}

StrategyKind strategy_from_name(const std::string& name) {
    if (name == "sequential") return StrategyKind::sequential;
    if (name == "topk") return StrategyKind::topk;
    if (name == "conf_threshold") return StrategyKind::conf_threshold;
    if (name == "kl_stability") return StrategyKind::kl_stability;
    if (name == "dapd") return StrategyKind::dapd;
    throw std::invalid_argument("unknown strategy: " + name +
                                " (valid: sequential, topk, conf_threshold, kl_stability, dapd)");
}

void StrategyConfig::validate() const {
    if (k < 1) throw std::invalid_argument("StrategyConfig: k must be >= 1");
    if (conf_thresh < 0.0 || conf_thresh > 1.0)
        throw std::invalid_argument("StrategyConfig: conf_thresh must be in [0, 1]");
    if (kl_thresh < 0.0) throw std::invalid_argument("StrategyConfig: kl_thresh must be >= 0");
    if (!(switch_mask_ratio > 0.0 && switch_mask_ratio <= 1.0))
        throw std::invalid_argument("StrategyConfig: switch_mask_ratio must be in (0, 1]");
    if (!(top_layer_fraction > 0.0 && top_layer_fraction <= 1.0))
        throw std::invalid_argument("StrategyConfig: top_layer_fraction must be in (0, 1]");
    tau_schedule.validate();
}

std::vector<int> select_sequential(const DenoiserOutput& out) {
    if (out.positions.empty()) throw std::invalid_argument("select_sequential: no masked positions");
    return {out.positions[argmax_confidence(out)]};
}

std::vector<int> select_topk(const DenoiserOutput& out, int k) {
    if (k < 1) throw std::invalid_argument("select_topk: k must be >= 1");
    const int n = static_cast<int>(out.positions.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double ca = out.confidence(a), cb = out.confidence(b);
        if (ca != cb) return ca > cb;
        return out.positions[a] < out.positions[b];
    });
    const int take = std::min(k, n);
    std::vector<int> result;
    result.reserve(take);
    for (int i = 0; i < take; ++i) result.push_back(out.positions[order[i]]);
    std::sort(result.begin(), result.end());
    return result;
}

std::vector<int> select_conf_threshold(const DenoiserOutput& out, double thresh) {
    std::vector<int> result;
    for (int i = 0; i < static_cast<int>(out.positions.size()); ++i)
        if (out.confidence(i) > thresh) result.push_back(out.positions[i]);
    if (result.empty())  // progress guarantee
        result.push_back(out.positions[argmax_confidence(out)]);
    return result;
}

std::vector<int> select_kl_stability(const DenoiserOutput& out, const DenoiserOutput* prev,
                                     double conf_thresh, double kl_thresh) {
    std::vector<int> result;
    if (prev != nullptr) {
        for (int i = 0; i < static_cast<int>(out.positions.size()); ++i) {
            if (out.confidence(i) <= conf_thresh) continue;
            const int pi = prev->local_index(out.positions[i]);
            if (pi < 0) continue;  // not masked in the previous step
            if (kl_divergence(out.marginals[i], prev->marginals[pi]) < kl_thresh)
                result.push_back(out.positions[i]);
        }
    }
    if (result.empty())  // first step, or nothing both confident and stable
        result.push_back(out.positions[argmax_confidence(out)]);
    return result;
}

std::vector<int> select_dapd(const DenoiserOutput& out, const SequenceState& state,
                             const StrategyConfig& cfg, double progress,
                             std::optional<double>* tau_used) {
    if (tau_used) tau_used->reset();
    const int masked = static_cast<int>(out.positions.size());
    const double mask_ratio = static_cast<double>(masked) / static_cast<double>(state.gen_len);
    if (mask_ratio < cfg.switch_mask_ratio)
        return select_conf_threshold(out, cfg.conf_thresh);

    const Eigen::MatrixXd agg = aggregate_attention(out.attention, cfg.top_layer_fraction);
    const EdgeScoreMatrix scores = symmetrize_scores(agg, out.positions);
    const double tau = tau_at(cfg.tau_schedule, progress);
    const DependencyGraph graph = build_graph(scores, tau);

    // Expected effective degree: structural weight discounted by confidence.
    Eigen::VectorXd weights(masked);
    for (int i = 0; i < masked; ++i) weights[i] = graph.proxy_degree[i] * out.confidence(i);

    if (tau_used) *tau_used = tau;
    return welsh_powell_select(graph, weights).members;
}

std::pair<SequenceState, DecodeTrace> decode(const Denoiser& denoiser, const StrategyConfig& strategy,
                                             const SequenceState& initial, std::uint64_t rng_seed) {
    strategy.validate();
    initial.validate();
    const int initially_masked = initial.masked_count();
    if (initially_masked < 1) throw std::invalid_argument("decode: initial state has no masked positions");

    SequenceState state = initial;
    DecodeTrace trace;
    trace.seed = rng_seed;
    trace.strategy = strategy_name(strategy.kind);
    Rng rng(Rng::derive(rng_seed, /*stream=*/0x6465636fULL, 0));

    std::optional<DenoiserOutput> prev;
    int step_idx = 0;
    while (state.masked_count() > 0) {
        DenoiserOutput out = denoiser(state);
        std::sort(out.positions.begin(), out.positions.end());  // contract: ascending
        validate_output(out, state);

        const double progress =
            static_cast<double>(initially_masked - state.masked_count()) / initially_masked;

        std::optional<double> tau_used;
        std::vector<int> chosen;
        switch (strategy.kind) {
            case StrategyKind::sequential: chosen = select_sequential(out); break;
            case StrategyKind::topk: chosen = select_topk(out, strategy.k); break;
            case StrategyKind::conf_threshold:
                chosen = select_conf_threshold(out, strategy.conf_thresh);
                break;
            case StrategyKind::kl_stability:
                chosen = select_kl_stability(out, prev ? &*prev : nullptr, strategy.conf_thresh,
                                             strategy.kl_thresh);
                break;
            case StrategyKind::dapd:
                chosen = select_dapd(out, state, strategy, progress, &tau_used);
                break;
        }
        if (chosen.empty()) throw std::logic_error("decode: selector returned empty set");
        std::sort(chosen.begin(), chosen.end());

        StepRecord rec;
        rec.idx = step_idx;
        rec.tau = tau_used;
        for (int pos : chosen) {
            const int li = out.local_index(pos);
            if (li < 0 || !state.is_masked(pos))
                throw std::logic_error("decode: selector chose an unmasked position");
            const auto& row = out.marginals[li];
            int token;
            if (strategy.committer == Committer::argmax) {
                token = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            } else {
                token = rng.sample_categorical(row);
            }
            state.tokens[pos] = token;
            rec.unmasked.push_back(pos);
            rec.tokens.push_back(token);
            rec.confs.push_back(out.confidence(li));
        }
        rec.segments = segment_count(state, state.prompt_len, state.length());
        trace.steps.push_back(std::move(rec));
        prev = std::move(out);
        ++step_idx;
    }

    trace.nfe = static_cast<int>(trace.steps.size());
    trace.final_tokens = state.tokens;
    return {std::move(state), std::move(trace)};
}

std::string trace_to_json(const DecodeTrace& trace) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : trace.steps) {
        nlohmann::json rec{{"idx", s.idx},
                           {"unmasked", s.unmasked},
                           {"tokens", s.tokens},
                           {"confs", s.confs},
                           {"segments", s.segments}};
        rec["tau"] = s.tau ? nlohmann::json(*s.tau) : nlohmann::json(nullptr);
        steps.push_back(std::move(rec));
    }
    const nlohmann::json doc{{"seed", trace.seed},
                             {"strategy", trace.strategy},
                             {"nfe", trace.nfe},
                             {"steps", std::move(steps)},
                             {"final", trace.final_tokens}};
    return doc.dump();
}

}  // namespace dapd
