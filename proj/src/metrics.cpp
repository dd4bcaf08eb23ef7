#include "dapd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dapd/denoiser.hpp"
#include "dapd/oracle.hpp"
#include "dapd/rng.hpp"

namespace dapd::metrics {

namespace {

constexpr std::uint64_t kStreamEval = 0x6576616cULL;
constexpr std::uint64_t kStreamCompare = 0x636d7072ULL;
constexpr int kEvalSteps = 7;  // beyond this too few masked pairs remain

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("roc_auc: size mismatch");
    const int n = static_cast<int>(scores.size());
    int n1 = 0;
    for (int lab : labels) {
        if (lab != 0 && lab != 1) throw std::invalid_argument("roc_auc: labels must be 0/1");
        n1 += lab;
    }
    const int n0 = n - n1;
    if (n1 == 0 || n0 == 0) throw std::invalid_argument("AUC undefined");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });

    // average ranks over tied blocks
    std::vector<double> rank(n);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * (i + j) + 1.0;  // ranks are 1-based
        for (int k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }

    double r1 = 0.0;
    for (int k = 0; k < n; ++k)
        if (labels[k] == 1) r1 += rank[k];
    const double u = r1 - 0.5 * static_cast<double>(n1) * (n1 + 1);
    return u / (static_cast<double>(n1) * n0);
}

double edge_ratio(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("edge_ratio: size mismatch");
    double sum1 = 0.0, sum0 = 0.0;
    int n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) {
            sum1 += scores[i];
            ++n1;
        } else {
            sum0 += scores[i];
            ++n0;
        }
    }
    if (n1 == 0 || n0 == 0) throw std::invalid_argument("edge_ratio: both classes required");
    const double mean0 = sum0 / n0;
    if (mean0 <= 0.0) throw std::invalid_argument("edge_ratio: zero non-edge mean");
    return (sum1 / n1) / mean0;
}

double ovr(std::span<const double> proxy, std::span<const int> true_deg) {
    if (proxy.size() != true_deg.size())
        throw std::invalid_argument("ovr: size mismatch");
    const int n = static_cast<int>(proxy.size());
    if (n < 2) throw std::invalid_argument("ovr: need at least 2 nodes");
    long violations = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (true_deg[i] < true_deg[j] && proxy[i] > proxy[j]) ++violations;
            if (true_deg[j] < true_deg[i] && proxy[j] > proxy[i]) ++violations;
        }
    }
    return static_cast<double>(violations) / (0.5 * n * (n - 1));
}

double validity_rate(const std::vector<std::vector<int>>& sequences) {
    if (sequences.empty()) throw std::invalid_argument("validity_rate: no sequences");
    long valid = 0;
    for (const auto& s : sequences) {
        if (static_cast<int>(s.size()) != toy::kSeqLen)
            throw std::invalid_argument("validity_rate: malformed sequence length");
        toy::Example e{};
        for (int i = 0; i < toy::kSeqLen; ++i) {
            if (s[i] < 0 || s[i] >= toy::kNumSymbols)
                throw std::invalid_argument("validity_rate: symbol out of range");
            e[i] = s[i];
        }
        valid += toy::is_valid(e);
    }
    return static_cast<double>(valid) / static_cast<double>(sequences.size());
}

double tv_to_uniform243(const std::map<toy::Example, long>& histogram, long total) {
    if (total <= 0) throw std::invalid_argument("tv_to_uniform243: empty histogram");
    const double u = 1.0 / 243.0;
    double acc = 0.0;
    int valid_seen = 0;
    for (const auto& [seq, count] : histogram) {
        const double p = static_cast<double>(count) / static_cast<double>(total);
        if (toy::is_valid(seq)) {
            acc += std::abs(p - u);
            ++valid_seen;
        } else {
            acc += p;
        }
    }
    acc += (243 - valid_seen) * u;
    return 0.5 * acc;
}

namespace {

struct PathResult {
    // one slot per evaluated step; NaN marks "not contributing"
    std::array<double, kEvalSteps> auc, ratio, ovr_val;
};

// Random-order step-by-step decode with sampled commitments, evaluating the
// masked-pair edge scores at steps 1..7 against the ground-truth subgraph.
PathResult eval_one_path(const Denoiser& denoiser, double top_layer_fraction, std::uint64_t path_seed) {
    PathResult res;
    res.auc.fill(std::nan(""));
    res.ratio.fill(std::nan(""));
    res.ovr_val.fill(std::nan(""));

    Rng rng(path_seed);
    SequenceState state = toy::fully_masked_state();
    for (int step = 1; step <= toy::kSeqLen; ++step) {
        const DenoiserOutput out = denoiser(state);
        if (step <= kEvalSteps) {
            const Eigen::MatrixXd agg = aggregate_attention(out.attention, top_layer_fraction);
            const EdgeScoreMatrix esm = symmetrize_scores(agg, out.positions);
            const auto sub = oracle::ground_truth_subgraph(out.positions);

            const int n = esm.size();
            std::vector<double> pair_scores;
            std::vector<int> pair_labels;
            for (int i = 0; i < n; ++i) {
                for (int j = i + 1; j < n; ++j) {
                    pair_scores.push_back(esm.scores(i, j));
                    pair_labels.push_back(sub.adjacent(i, j) ? 1 : 0);
                }
            }
            const int n_edges = std::accumulate(pair_labels.begin(), pair_labels.end(), 0);
            const bool both_classes =
                n_edges > 0 && n_edges < static_cast<int>(pair_labels.size());
            if (both_classes) {
                res.auc[step - 1] = roc_auc(pair_scores, pair_labels);
                double non_edge_sum = 0.0;
                for (std::size_t p = 0; p < pair_scores.size(); ++p)
                    if (pair_labels[p] == 0) non_edge_sum += pair_scores[p];
                if (non_edge_sum > 0.0) res.ratio[step - 1] = edge_ratio(pair_scores, pair_labels);
            }
            const Eigen::VectorXd proxy = esm.scores.rowwise().sum();
            std::vector<double> proxy_v(proxy.data(), proxy.data() + proxy.size());
            res.ovr_val[step - 1] = ovr(proxy_v, sub.degree);
        }

        // unmask one uniformly random position with a sampled commitment
        const int pick = static_cast<int>(rng.next_below(out.positions.size()));
        const int pos = out.positions[pick];
        state.tokens[pos] = rng.sample_categorical(out.marginals[pick]);
    }
    return res;
}

GraphEvalReport eval_graph_paths(const Denoiser& denoiser, double top_layer_fraction, int paths,
                                 std::uint64_t seed, int workers,
                                 std::vector<std::uint64_t> seeds_meta) {
    if (paths < 1) throw std::invalid_argument("eval_graph: paths must be >= 1");
    std::vector<PathResult> results(paths);

#pragma omp parallel for schedule(static) num_threads(std::max(1, workers))
    for (int p = 0; p < paths; ++p)
        results[p] = eval_one_path(denoiser, top_layer_fraction, Rng::derive(seed, kStreamEval, p));

    GraphEvalReport report;
    report.paths = paths;
    report.seeds = std::move(seeds_meta);
    std::vector<double> pooled_auc, pooled_ratio, pooled_ovr;
    for (int s = 0; s < kEvalSteps; ++s) {
        std::vector<double> aucs, ratios, ovrs;
        for (const auto& r : results) {
            if (!std::isnan(r.auc[s])) aucs.push_back(r.auc[s]);
            if (!std::isnan(r.ratio[s])) ratios.push_back(r.ratio[s]);
            if (!std::isnan(r.ovr_val[s])) ovrs.push_back(r.ovr_val[s]);
        }
        pooled_auc.insert(pooled_auc.end(), aucs.begin(), aucs.end());
        pooled_ratio.insert(pooled_ratio.end(), ratios.begin(), ratios.end());
        pooled_ovr.insert(pooled_ovr.end(), ovrs.begin(), ovrs.end());
        StepStats st;
        st.step = s + 1;
        st.auc = mean_of(aucs);
        st.auc_std = std_of(aucs);
        st.ratio = mean_of(ratios);
        st.ratio_std = std_of(ratios);
        st.ovr = mean_of(ovrs);
        st.ovr_std = std_of(ovrs);
        st.auc_paths = static_cast<int>(aucs.size());
        st.ovr_paths = static_cast<int>(ovrs.size());
        report.per_step.push_back(st);
    }

    std::vector<double> step_auc, step_ratio, step_ovr;
    for (const auto& st : report.per_step) {
        if (st.auc_paths > 0) {
            step_auc.push_back(st.auc);
            step_ratio.push_back(st.ratio);
        }
        if (st.ovr_paths > 0) step_ovr.push_back(st.ovr);
    }
    report.overall.auc = mean_of(step_auc);
    report.overall.ratio = mean_of(step_ratio);
    report.overall.ovr = mean_of(step_ovr);
    report.overall_pooled.auc = mean_of(pooled_auc);
    report.overall_pooled.ratio = mean_of(pooled_ratio);
    report.overall_pooled.ovr = mean_of(pooled_ovr);
    return report;
}

}  // namespace

GraphEvalReport eval_graph_run(const Checkpoint& ckpt, int paths, std::uint64_t seed, int workers) {
    const ModelDenoiser denoiser(ckpt);
    return eval_graph_paths([&denoiser](const SequenceState& s) { return denoiser(s); }, 0.25,
                            paths, seed, workers, {ckpt.meta.seed});
}

GraphEvalReport eval_graph_run_oracle(int paths, std::uint64_t seed, int workers) {
    return eval_graph_paths(oracle::make_oracle_denoiser(), 0.25, paths, seed, workers, {});
}

std::string graph_report_to_json(const GraphEvalReport& r) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.per_step) {
        steps.push_back({{"step", s.step},
                         {"auc", s.auc},
                         {"auc_std", s.auc_std},
                         {"edge_nonedge_ratio", s.ratio},
                         {"ratio_std", s.ratio_std},
                         {"ovr", s.ovr},
                         {"ovr_std", s.ovr_std},
                         {"counts", {{"auc_paths", s.auc_paths}, {"ovr_paths", s.ovr_paths}}}});
    }
    const nlohmann::json doc{
        {"paths", r.paths},
        {"seeds", r.seeds},
        {"per_step", std::move(steps)},
        {"overall",
         {{"auc", r.overall.auc}, {"edge_nonedge_ratio", r.overall.ratio}, {"ovr", r.overall.ovr}}},
        {"overall_pooled",
         {{"auc", r.overall_pooled.auc},
          {"edge_nonedge_ratio", r.overall_pooled.ratio},
          {"ovr", r.overall_pooled.ovr}}}};
    return doc.dump(2);
}

std::string graph_report_to_csv(const GraphEvalReport& r) {
    std::ostringstream out;
    out << "step,auc,auc_std,edge_nonedge_ratio,ratio_std,ovr,ovr_std,auc_paths,ovr_paths\n";
    for (const auto& s : r.per_step) {
        out << s.step << ',' << s.auc << ',' << s.auc_std << ',' << s.ratio << ',' << s.ratio_std
            << ',' << s.ovr << ',' << s.ovr_std << ',' << s.auc_paths << ',' << s.ovr_paths << '\n';
    }
    return out.str();
}

CompareReport run_compare(const Denoiser& denoiser,
                          const std::vector<std::pair<std::string, StrategyConfig>>& strategies,
                          int samples, std::uint64_t seed, bool oracle_exact, int workers) {
    if (samples < 1) throw std::invalid_argument("run_compare: samples must be >= 1");
    if (strategies.empty()) throw std::invalid_argument("run_compare: no strategies");

    CompareReport report;
    report.samples = samples;
    report.seed = seed;
    report.committer =
        strategies.front().second.committer == Committer::sample ? "sample" : "argmax";

    for (std::size_t si = 0; si < strategies.size(); ++si) {
        const auto& [name, cfg] = strategies[si];
        std::vector<int> nfes(samples);
        std::vector<int> peaks(samples);
        std::vector<std::vector<int>> trajectories(samples);
        std::vector<std::vector<int>> finals(samples);

#pragma omp parallel for schedule(static) num_threads(std::max(1, workers))
        for (int s = 0; s < samples; ++s) {
            const std::uint64_t ds = Rng::derive(seed, kStreamCompare + si, s);
            auto [state, trace] = decode(denoiser, cfg, toy::fully_masked_state(), ds);
            nfes[s] = trace.nfe;
            peaks[s] = trace.peak_segments();
            std::vector<int> traj;
            traj.reserve(trace.steps.size());
            for (const auto& st : trace.steps) traj.push_back(st.segments);
            trajectories[s] = std::move(traj);
            finals[s] = state.tokens;
        }

        StrategyResult res;
        res.name = name;
        res.mean_nfe = std::accumulate(nfes.begin(), nfes.end(), 0.0) / samples;
        res.mean_peak_segments = std::accumulate(peaks.begin(), peaks.end(), 0.0) / samples;
        res.validity = validity_rate(finals);

        std::size_t max_len = 0;
        for (const auto& t : trajectories) max_len = std::max(max_len, t.size());
        res.mean_segment_trajectory.assign(max_len, 0.0);
        for (const auto& t : trajectories) {
            for (std::size_t i = 0; i < max_len; ++i) {
                // after a decode finishes, the region stays one segment
                const double v = i < t.size() ? t[i] : t.back();
                res.mean_segment_trajectory[i] += v;
            }
        }
        for (auto& v : res.mean_segment_trajectory) v /= samples;

        if (oracle_exact && cfg.committer == Committer::sample) {
            std::map<toy::Example, long> hist;
            for (const auto& f : finals) {
                toy::Example e{};
                std::copy(f.begin(), f.end(), e.begin());
                ++hist[e];
            }
            res.tv = tv_to_uniform243(hist, samples);
        }
        report.strategies.push_back(std::move(res));
    }
    return report;
}

std::string compare_report_to_json(const CompareReport& r) {
    nlohmann::json strategies = nlohmann::json::object();
    for (const auto& s : r.strategies) {
        nlohmann::json entry{{"mean_nfe", s.mean_nfe},
                             {"validity_rate", s.validity},
                             {"mean_segment_trajectory", s.mean_segment_trajectory},
                             {"mean_peak_segments", s.mean_peak_segments}};
        entry["tv_distance"] = s.tv ? nlohmann::json(*s.tv) : nlohmann::json(nullptr);
        strategies[s.name] = std::move(entry);
    }
    const nlohmann::json doc{{"samples", r.samples},
                             {"seed", r.seed},
                             {"committer", r.committer},
                             {"strategies", std::move(strategies)}};
    return doc.dump(2);
}

std::string compare_report_to_csv(const CompareReport& r) {
    std::ostringstream out;
    out << "strategy,mean_nfe,validity_rate,tv_distance,mean_peak_segments,mean_segment_trajectory\n";
    for (const auto& s : r.strategies) {
        out << s.name << ',' << s.mean_nfe << ',' << s.validity << ',';
        if (s.tv) out << *s.tv;
        out << ',' << s.mean_peak_segments << ',';
        for (std::size_t i = 0; i < s.mean_segment_trajectory.size(); ++i) {
            if (i) out << ';';
            out << s.mean_segment_trajectory[i];
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace dapd::metrics
