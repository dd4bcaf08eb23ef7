// Command-line front end: dataset generation, training, graph evaluation,
// decoding, strategy comparison, and oracle table dumps.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "dapd/checkpoint.hpp"
#include "dapd/decode.hpp"
#include "dapd/denoiser.hpp"
#include "dapd/errors.hpp"
#include "dapd/metrics.hpp"
#include "dapd/oracle.hpp"
#include "dapd/toy.hpp"
#include "dapd/train.hpp"

namespace {

using namespace dapd;

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

struct StrategyFlags {
    int k = 1;
    double conf_thresh = 0.9;
    double kl_thresh = 0.001;
    double tau_min = 0.01;
    double tau_max = 0.05;
    double switch_mask_ratio = 0.5;
    double top_layer_fraction = 0.25;
    std::string committer = "argmax";

    void add_options(CLI::App* cmd) {
        cmd->add_option("--k", k, "top-k strategy: positions per step")->capture_default_str();
        cmd->add_option("--conf-thresh", conf_thresh,
                        "confidence threshold (conf_threshold, kl_stability, dapd switch)")
            ->capture_default_str();
        cmd->add_option("--kl-thresh", kl_thresh, "KL stability threshold")->capture_default_str();
        cmd->add_option("--tau-min", tau_min, "dapd: edge threshold at decoding start")
            ->capture_default_str();
        cmd->add_option("--tau-max", tau_max, "dapd: edge threshold at decoding end")
            ->capture_default_str();
        cmd->add_option("--switch-mask-ratio", switch_mask_ratio,
                        "dapd: confidence phase below this remaining mask ratio")
            ->capture_default_str();
        cmd->add_option("--top-layer-fraction", top_layer_fraction,
                        "dapd: fraction of top layers aggregated for edge scores")
            ->capture_default_str();
        cmd->add_option("--committer", committer, "token commitment: argmax or sample")
            ->check(CLI::IsMember({"argmax", "sample"}))
            ->capture_default_str();
    }

    // `name` may be a strategy kind or the alias "fullparallel" (topk, k = 9).
    std::pair<std::string, StrategyConfig> make(const std::string& name) const {
        StrategyConfig cfg;
        cfg.k = k;
        cfg.conf_thresh = conf_thresh;
        cfg.kl_thresh = kl_thresh;
        cfg.tau_schedule = TauSchedule{tau_min, tau_max};
        cfg.switch_mask_ratio = switch_mask_ratio;
        cfg.top_layer_fraction = top_layer_fraction;
        cfg.committer = committer == "sample" ? Committer::sample : Committer::argmax;
        if (name == "fullparallel") {
            cfg.kind = StrategyKind::topk;
            cfg.k = toy::kSeqLen;
            return {name, cfg};
        }
        try {
            cfg.kind = strategy_from_name(name);
        } catch (const std::invalid_argument&) {
            throw std::invalid_argument(
                "unknown strategy: " + name +
                " (valid: sequential, topk, conf_threshold, kl_stability, dapd, fullparallel)");
        }
        return {name, cfg};
    }
};

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Flat key=value config support with fixed precedence: command-line flags
// override config values, config values override built-in defaults. Entries
// for flags already present on the command line are dropped; the rest are
// appended as synthetic flags before parsing.
std::vector<std::string> merge_config_args(std::vector<std::string> args) {
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            break;
        }
    }
    if (config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config file: " + config_path);

    std::set<std::string> given;
    for (const auto& a : args)
        if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string entry = trim(line);
        if (entry.empty() || entry[0] == '#') continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config parse error (expect key=value) at " + config_path +
                                        ":" + std::to_string(lineno));
        const std::string flag = "--" + trim(entry.substr(0, eq));
        const std::string value = trim(entry.substr(eq + 1));
        if (flag == "--" || given.count(flag)) continue;
        args.push_back(flag);
        args.push_back(value);
    }
    return args;
}

oracle::Observed parse_observations(const std::string& spec) {
    oracle::Observed obs;
    for (const auto& entry : split_csv(spec)) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("bad --observe entry (expect POS=VAL): " + entry);
        const int pos = toy::position_from_label(entry.substr(0, eq));
        const int val = std::stoi(entry.substr(eq + 1));
        if (val < 0 || val >= toy::kNumSymbols)
            throw std::invalid_argument("observed value out of range in: " + entry);
        if (obs.count(pos)) throw std::invalid_argument("duplicate observation: " + entry);
        obs[pos] = val;
    }
    return obs;
}

// ---- subcommand bodies ----

int cmd_gen_data(int n, std::uint64_t seed, const std::string& out_path) {
    const auto data = toy::gen_dataset(n, seed);
    long valid = 0;
    for (const auto& e : data) valid += toy::is_valid(e);
    toy::write_dataset(data, out_path);
    std::cout << "wrote " << data.size() << " examples to " << out_path << " (" << valid
              << " valid)\n";
    return 0;
}

int cmd_train(const std::string& data_path, const std::string& out_path, const std::string& log_path,
              const ModelConfig& mcfg, const TrainConfig& tcfg) {
    const auto data = toy::read_dataset(data_path);
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot open training log for writing: " + log_path);
    log << "step,loss\n";
    const Checkpoint ckpt = train(data, mcfg, tcfg, [&](int step, double loss) {
        log << step << ',' << loss << '\n';
        if (step % 500 == 0) std::cout << "step " << step << " loss " << loss << std::endl;
    });
    if (!log) throw IoError("training log write failed: " + log_path);
    save_checkpoint(ckpt, out_path);
    std::cout << "final loss " << ckpt.meta.final_loss << ", checkpoint written to " << out_path
              << "\n";
    return 0;
}

int cmd_eval_graph(const std::string& ckpt_path, int paths, std::uint64_t seed, int workers,
                   const std::string& out_base) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto report = metrics::eval_graph_run(ckpt, paths, seed, workers);
    write_text(out_base + ".json", metrics::graph_report_to_json(report));
    write_text(out_base + ".csv", metrics::graph_report_to_csv(report));
    std::cout << "overall auc " << report.overall.auc << ", edge/non-edge ratio "
              << report.overall.ratio << ", ovr " << report.overall.ovr << "\n"
              << "reports written to " << out_base << ".json / .csv\n";
    return 0;
}

int cmd_decode(const std::optional<std::string>& ckpt_path, bool use_oracle,
               const std::string& strategy, const StrategyFlags& flags, int num,
               std::uint64_t seed, const std::string& out_path) {
    std::optional<ModelDenoiser> model;
    Denoiser denoiser;
    if (use_oracle) {
        denoiser = oracle::make_oracle_denoiser();
    } else {
        model.emplace(load_checkpoint(*ckpt_path));
        denoiser = [&model](const SequenceState& s) { return (*model)(s); };
    }
    const auto [name, cfg] = flags.make(strategy);

    std::ofstream out(out_path);
    if (!out) throw IoError("cannot open for writing: " + out_path);
    double nfe_sum = 0.0;
    std::vector<std::vector<int>> finals;
    for (int i = 0; i < num; ++i) {
        auto [state, trace] = decode(denoiser, cfg, toy::fully_masked_state(),
                                     Rng::derive(seed, 0x646563ULL, i));
        nfe_sum += trace.nfe;
        finals.push_back(state.tokens);
        out << trace_to_json(trace) << '\n';
    }
    if (!out) throw IoError("write failed: " + out_path);
    std::cout << "decoded " << num << " sequences with " << name << ": mean nfe "
              << nfe_sum / num << ", validity " << metrics::validity_rate(finals) << "\n"
              << "traces written to " << out_path << "\n";
    return 0;
}

int cmd_compare(const std::optional<std::string>& ckpt_path, bool use_oracle,
                const std::string& strategies_csv, const StrategyFlags& flags, int samples,
                std::uint64_t seed, int workers, const std::string& out_base) {
    std::optional<ModelDenoiser> model;
    Denoiser denoiser;
    if (use_oracle) {
        denoiser = oracle::make_oracle_denoiser();
    } else {
        model.emplace(load_checkpoint(*ckpt_path));
        denoiser = [&model](const SequenceState& s) { return (*model)(s); };
    }

    std::vector<std::pair<std::string, StrategyConfig>> strategies;
    for (const auto& name : split_csv(strategies_csv)) strategies.push_back(flags.make(name));
    if (strategies.empty()) throw std::invalid_argument("no strategies given");

    const auto report = metrics::run_compare(denoiser, strategies, samples, seed, use_oracle, workers);
    write_text(out_base + ".json", metrics::compare_report_to_json(report));
    write_text(out_base + ".csv", metrics::compare_report_to_csv(report));
    for (const auto& s : report.strategies) {
        std::cout << s.name << ": mean nfe " << s.mean_nfe << ", validity " << s.validity;
        if (s.tv) std::cout << ", tv " << *s.tv;
        std::cout << "\n";
    }
    std::cout << "reports written to " << out_base << ".json / .csv\n";
    return 0;
}

int cmd_oracle(const std::string& mode, const std::string& observe, const std::string& out_path) {
    const oracle::Observed obs = parse_observations(observe);
    std::ostringstream csv;
    if (mode == "marginals") {
        const auto marg = oracle::oracle_marginals(obs);
        csv << "position,p0,p1,p2\n";
        for (const auto& [pos, row] : marg) {
            csv << toy::position_label(pos);
            for (double p : row) csv << ',' << p;
            csv << '\n';
        }
    } else if (mode == "mi") {
        std::vector<int> latent;
        for (int p = 0; p < toy::kSeqLen; ++p)
            if (!obs.count(p)) latent.push_back(p);
        if (latent.size() < 2) throw std::invalid_argument("mi needs at least two latent positions");
        csv << "position";
        for (int p : latent) csv << ',' << toy::position_label(p);
        csv << '\n';
        for (int a : latent) {
            csv << toy::position_label(a);
            for (int b : latent) csv << ',' << (a == b ? 0.0 : oracle::conditional_mi(obs, a, b));
            csv << '\n';
        }
    } else {  // graph
        std::vector<int> latent;
        for (int p = 0; p < toy::kSeqLen; ++p)
            if (!obs.count(p)) latent.push_back(p);
        if (latent.empty()) throw std::invalid_argument("graph needs at least one latent position");
        const auto sub = oracle::ground_truth_subgraph(latent);
        csv << "position";
        for (int i = 0; i < sub.size(); ++i) csv << ',' << toy::position_label(sub.positions[i]);
        csv << ",true_degree\n";
        for (int i = 0; i < sub.size(); ++i) {
            csv << toy::position_label(sub.positions[i]);
            for (int j = 0; j < sub.size(); ++j) csv << ',' << (sub.adjacent(i, j) ? 1 : 0);
            csv << ',' << sub.degree[i] << '\n';
        }
    }
    write_text(out_path, csv.str());
    std::cout << "table written to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dependency-aware parallel decoding for masked denoisers (toy testbed)"};
    app.require_subcommand(1);
    std::string config_file;
    constexpr const char* kConfigHelp = "flat key=value config file (flags take precedence)";

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", config_file, kConfigHelp);
    int gen_n = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "number of examples")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "generator seed")->required();
    gen->add_option("--out", gen_out, "output dataset path")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a masked denoiser");
    tr->add_option("--config", config_file, kConfigHelp);
    std::string tr_data, tr_out, tr_log;
    ModelConfig mcfg;
    TrainConfig tcfg;
    tr->add_option("--data", tr_data, "dataset file")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "checkpoint output path")->required();
    tr->add_option("--log", tr_log, "training log CSV (default <out>.train.csv)");
    tr->add_option("--seed", tcfg.seed, "training seed")->required();
    tr->add_option("--steps", tcfg.steps, "gradient steps")->capture_default_str();
    tr->add_option("--lr", tcfg.lr, "learning rate")->capture_default_str();
    tr->add_option("--batch-size", tcfg.batch_size, "minibatch size")->capture_default_str();
    tr->add_option("--weight-decay", tcfg.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    tr->add_option("--clip-norm", tcfg.clip_norm, "global gradient-norm clip (0 disables)")
        ->capture_default_str();
    tr->add_option("--t-floor", tcfg.t_floor, "lower bound of the mask-rate distribution")
        ->capture_default_str();
    tr->add_option("--layers", mcfg.num_layers, "transformer blocks")->capture_default_str();
    tr->add_option("--heads", mcfg.num_heads, "attention heads")->capture_default_str();
    tr->add_option("--dim", mcfg.model_dim, "model width")->capture_default_str();

    // eval-graph
    auto* ev = app.add_subcommand("eval-graph", "edge-detection / degree-estimation evaluation");
    ev->add_option("--config", config_file, kConfigHelp);
    std::string ev_ckpt, ev_out;
    int ev_paths = 100, ev_workers = 1;
    std::uint64_t ev_seed = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
    ev->add_option("--paths", ev_paths, "random sampling paths")->capture_default_str();
    ev->add_option("--seed", ev_seed, "evaluation seed")->required();
    ev->add_option("--workers", ev_workers, "parallel path workers")->capture_default_str();
    ev->add_option("--out", ev_out, "report base path (writes .json and .csv)")->required();

    // decode
    auto* de = app.add_subcommand("decode", "run decodes and write JSONL traces");
    de->add_option("--config", config_file, kConfigHelp);
    std::string de_ckpt, de_strategy = "dapd", de_out;
    bool de_oracle = false;
    int de_num = 1;
    std::uint64_t de_seed = 0;
    StrategyFlags de_flags;
    auto* de_ckpt_opt =
        de->add_option("--ckpt", de_ckpt, "checkpoint path")->check(CLI::ExistingFile);
    de->add_flag("--oracle", de_oracle, "use the exact enumeration denoiser")
        ->excludes(de_ckpt_opt);
    de->add_option("--strategy", de_strategy,
                   "sequential | topk | conf_threshold | kl_stability | dapd | fullparallel")
        ->capture_default_str();
    de->add_option("--num", de_num, "number of decodes")->capture_default_str();
    de->add_option("--seed", de_seed, "decode seed")->required();
    de->add_option("--out", de_out, "JSONL trace output path")->required();
    de_flags.add_options(de);

    // compare
    auto* cp = app.add_subcommand("compare", "compare decoding strategies");
    cp->add_option("--config", config_file, kConfigHelp);
    std::string cp_ckpt, cp_out;
    std::string cp_strategies = "sequential,topk,conf_threshold,kl_stability,dapd";
    bool cp_oracle = false;
    int cp_samples = 1000, cp_workers = 1;
    std::uint64_t cp_seed = 0;
    StrategyFlags cp_flags;
    cp_flags.committer = "sample";  // compare reports distributional statistics
    auto* cp_ckpt_opt =
        cp->add_option("--ckpt", cp_ckpt, "checkpoint path")->check(CLI::ExistingFile);
    cp->add_flag("--oracle", cp_oracle, "use the exact enumeration denoiser")
        ->excludes(cp_ckpt_opt);
    cp->add_option("--strategies", cp_strategies, "comma-separated strategy list")
        ->capture_default_str();
    cp->add_option("--samples", cp_samples, "decodes per strategy")->capture_default_str();
    cp->add_option("--seed", cp_seed, "comparison seed")->required();
    cp->add_option("--workers", cp_workers, "parallel decode workers")->capture_default_str();
    cp->add_option("--out", cp_out, "report base path (writes .json and .csv)")->required();
    cp_flags.add_options(cp);

    // oracle
    auto* orc = app.add_subcommand("oracle", "exact marginal / MI / graph tables");
    orc->add_option("--config", config_file, kConfigHelp);
    std::string orc_mode, orc_observe, orc_out;
    orc->add_option("--mode", orc_mode, "marginals | mi | graph")
        ->required()
        ->check(CLI::IsMember({"marginals", "mi", "graph"}));
    orc->add_option("--observe", orc_observe, "observations, e.g. X1=0,Y2=1");
    orc->add_option("--out", orc_out, "output CSV path")->required();

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = merge_config_args(std::move(args));
        std::vector<const char*> cargs;
        cargs.push_back(argv[0]);
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());

        if (gen->parsed()) return cmd_gen_data(gen_n, gen_seed, gen_out);
        if (tr->parsed()) {
            if (tr_log.empty()) tr_log = tr_out + ".train.csv";
            return cmd_train(tr_data, tr_out, tr_log, mcfg, tcfg);
        }
        if (ev->parsed()) return cmd_eval_graph(ev_ckpt, ev_paths, ev_seed, ev_workers, ev_out);
        if (de->parsed()) {
            if (!de_oracle && de_ckpt.empty())
                throw std::invalid_argument("decode needs --ckpt or --oracle");
            return cmd_decode(de_ckpt.empty() ? std::nullopt : std::make_optional(de_ckpt),
                              de_oracle, de_strategy, de_flags, de_num, de_seed, de_out);
        }
        if (cp->parsed()) {
            if (!cp_oracle && cp_ckpt.empty())
                throw std::invalid_argument("compare needs --ckpt or --oracle");
            return cmd_compare(cp_ckpt.empty() ? std::nullopt : std::make_optional(cp_ckpt),
                               cp_oracle, cp_strategies, cp_flags, cp_samples, cp_seed, cp_workers,
                               cp_out);
        }
        if (orc->parsed()) return cmd_oracle(orc_mode, orc_observe, orc_out);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const dapd::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const dapd::DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 3;
    } catch (const dapd::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const dapd::ZeroSupportError& e) {
        std::cerr << "oracle error: " << e.what() << "\n";
        return 5;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
