#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <nlohmann/json.hpp>
#include <set>

#include "dapd/decode.hpp"
#include "dapd/oracle.hpp"
#include "dapd/rng.hpp"
#include "dapd/toy.hpp"

using namespace dapd;

namespace {

// Denoiser output over arbitrary positions where the confidence (max entry)
// equals exactly the requested value; the rest of the mass is spread over ten
// filler symbols so any confidence above 1/11 is realizable.
DenoiserOutput fake_output(const std::vector<int>& positions, const std::vector<double>& confs) {
    DenoiserOutput out;
    out.positions = positions;
    for (double c : confs) {
        std::vector<double> row(11, (1.0 - c) / 10.0);
        row[0] = c;
        out.marginals.push_back(std::move(row));
    }
    return out;
}

StrategyConfig dapd_config(Committer committer = Committer::sample) {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::dapd;
    cfg.committer = committer;
    return cfg;
}

}  // namespace

TEST_CASE("select_sequential takes the confidence argmax, lowest index on ties") {
    CHECK(select_sequential(fake_output({10, 20, 30}, {0.3, 0.9, 0.5})) == std::vector<int>{20});
    CHECK(select_sequential(fake_output({4, 7, 8}, {0.5, 0.5, 0.5})) == std::vector<int>{4});
    CHECK(select_sequential(fake_output({3}, {0.7})) == std::vector<int>{3});
}

TEST_CASE("select_topk takes the k most confident positions") {
    const auto out = fake_output({10, 20, 30}, {0.3, 0.9, 0.5});
    CHECK(select_topk(out, 2) == std::vector<int>{20, 30});
    CHECK(select_topk(out, 7) == std::vector<int>{10, 20, 30});
    SUBCASE("k = 1 reduces to sequential") {
        Rng rng(3);
        for (int rep = 0; rep < 200; ++rep) {
            const int n = 1 + static_cast<int>(rng.next_below(8));
            std::vector<int> pos;
            std::vector<double> confs;
            for (int i = 0; i < n; ++i) {
                pos.push_back(i * 2);
                confs.push_back(0.34 + 0.66 * rng.next_unit());
            }
            const auto o = fake_output(pos, confs);
            CHECK(select_topk(o, 1) == select_sequential(o));
        }
    }
}

TEST_CASE("select_conf_threshold filters with a singleton fallback") {
    CHECK(select_conf_threshold(fake_output({1, 2, 3}, {0.95, 0.5, 0.99}), 0.9) ==
          std::vector<int>{1, 3});
    CHECK(select_conf_threshold(fake_output({1, 2, 3}, {0.8, 0.5, 0.6}), 0.9) ==
          std::vector<int>{1});
    CHECK(select_conf_threshold(fake_output({1, 2, 3}, {0.8, 0.5, 0.6}), 0.0) ==
          std::vector<int>{1, 2, 3});
}

TEST_CASE("select_kl_stability requires confidence and stability") {
    const auto curr = fake_output({5, 6}, {0.95, 0.97});
    SUBCASE("first step falls back to the argmax singleton") {
        CHECK(select_kl_stability(curr, nullptr, 0.9, 0.001) == std::vector<int>{6});
    }
    SUBCASE("identical consecutive marginals pass (zero divergence)") {
        const auto prev = curr;
        CHECK(select_kl_stability(curr, &prev, 0.9, 0.001) == std::vector<int>{5, 6});
    }
    SUBCASE("confident but unstable positions are excluded") {
        auto prev = fake_output({5, 6}, {0.95, 0.97});
        prev.marginals[0] = fake_output({5}, {0.10}).marginals[0];  // large shift at position 5
        const auto sel = select_kl_stability(curr, &prev, 0.9, 0.001);
        CHECK(sel == std::vector<int>{6});
    }
}

TEST_CASE("select_dapd switches between graph and confidence phases") {
    SequenceState state = toy::fully_masked_state();
    StrategyConfig cfg = dapd_config();

    SUBCASE("graph phase on the toy ground-truth scores picks the degree hubs") {
        const auto out = oracle::oracle_denoiser(state);
        std::optional<double> tau;
        const auto sel = select_dapd(out, state, cfg, 0.0, &tau);
        CHECK(sel == std::vector<int>{1, 3});  // X2, X4
        REQUIRE(tau.has_value());
        CHECK(*tau == doctest::Approx(0.01));
    }
    SUBCASE("edgeless graph phase unmasks everything") {
        auto out = oracle::oracle_denoiser(state);
        out.attention[0][0].setZero();
        const auto sel = select_dapd(out, state, cfg, 0.0, nullptr);
        CHECK(sel.size() == 9);
    }
    SUBCASE("below the switch ratio the confidence rule takes over") {
        // 4 of 9 masked -> ratio 0.44 < 0.5
        for (int i = 0; i < 5; ++i) state.tokens[i] = 0;
        auto out = oracle::oracle_denoiser(state);
        std::optional<double> tau;
        const auto sel = select_dapd(out, state, cfg, 5.0 / 9.0, &tau);
        CHECK_FALSE(tau.has_value());
        CHECK(sel.size() == 4);  // all Y's are deterministic, confidence 1 > 0.9
    }
    SUBCASE("graph-phase selection is invariant to uniform weight rescaling") {
        for (double scale : {0.03, 1.0, 40.0}) {
            auto out = oracle::oracle_denoiser(state);
            out.attention[0][0] *= scale;  // scales every proxy degree by `scale`
            cfg.tau_schedule = TauSchedule{0.01 * scale, 0.01 * scale};
            const auto sel = select_dapd(out, state, cfg, 0.0, nullptr);
            CHECK(sel == std::vector<int>{1, 3});
        }
    }
}

TEST_CASE("decode sequential over the oracle takes one position per step") {
    const auto [state, trace] =
        decode(oracle::make_oracle_denoiser(), StrategyConfig{}, toy::fully_masked_state(), 1);
    CHECK(trace.nfe == 9);
    CHECK(trace.steps.size() == 9);
    for (const auto& s : trace.steps) CHECK(s.unmasked.size() == 1);
    CHECK(state.masked_count() == 0);
    toy::Example e{};
    std::copy(state.tokens.begin(), state.tokens.end(), e.begin());
    CHECK(toy::is_valid(e));
}

TEST_CASE("decode finishes in one step when every confidence clears the threshold") {
    // point-mass denoiser: every masked position fully determined
    const Denoiser point = [](const SequenceState& s) {
        DenoiserOutput out;
        out.positions = s.masked_positions();
        for (std::size_t i = 0; i < out.positions.size(); ++i)
            out.marginals.push_back({1.0, 0.0, 0.0});
        return out;
    };
    StrategyConfig cfg;
    cfg.kind = StrategyKind::conf_threshold;
    cfg.conf_thresh = 0.9;
    const auto [state, trace] = decode(point, cfg, toy::fully_masked_state(), 1);
    CHECK(trace.nfe == 1);
    CHECK(trace.steps[0].unmasked.size() == 9);
}

TEST_CASE("dapd over the oracle decodes in exactly three steps") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto [state, trace] =
            decode(oracle::make_oracle_denoiser(), dapd_config(), toy::fully_masked_state(), seed);
        REQUIRE(trace.nfe == 3);
        CHECK(trace.steps[0].unmasked == std::vector<int>{1, 3});         // X2, X4
        CHECK(trace.steps[1].unmasked == std::vector<int>{0, 2, 4});      // X1, X3, X5
        CHECK(trace.steps[2].unmasked == std::vector<int>{5, 6, 7, 8});   // Y1..Y4
        CHECK(trace.steps[0].segments == 2);
        CHECK(trace.steps[1].segments == 1);
        CHECK(trace.steps[2].segments == 1);
        toy::Example e{};
        std::copy(state.tokens.begin(), state.tokens.end(), e.begin());
        CHECK(toy::is_valid(e));
    }
}

TEST_CASE("decode trace invariants hold across strategies and prompts") {
    Rng rng(99);
    const std::vector<StrategyKind> kinds{StrategyKind::sequential, StrategyKind::topk,
                                          StrategyKind::conf_threshold, StrategyKind::kl_stability,
                                          StrategyKind::dapd};
    for (int rep = 0; rep < 120; ++rep) {
        StrategyConfig cfg;
        cfg.kind = kinds[rep % kinds.size()];
        // Against the exact-constraint oracle only k = 1 (strictly sequential)
        // and k >= masked count (single-shot) keep every intermediate state
        // consistent; other k can co-sample dependent positions into a
        // contradiction, which the oracle denoiser reports as an error.
        cfg.k = rng.next_unit() < 0.5 ? 1 : 9;
        cfg.committer = rep % 2 ? Committer::sample : Committer::argmax;

        // sometimes fix a consistent prompt prefix
        SequenceState initial = toy::fully_masked_state();
        if (rng.next_unit() < 0.5) {
            const int plen = 1 + static_cast<int>(rng.next_below(4));
            for (int i = 0; i < plen; ++i) initial.tokens[i] = static_cast<int>(rng.next_below(3));
            initial.prompt_len = plen;
            initial.gen_len = 9 - plen;
        }
        const auto initially_masked = initial.masked_positions();

        const auto [state, trace] =
            decode(oracle::make_oracle_denoiser(), cfg, initial, rng.next_u64());

        CHECK(trace.nfe == static_cast<int>(trace.steps.size()));
        CHECK(trace.nfe <= static_cast<int>(initially_masked.size()));
        std::set<int> seen;
        for (const auto& s : trace.steps) {
            CHECK_FALSE(s.unmasked.empty());
            for (int p : s.unmasked) {
                CHECK(p >= initial.prompt_len);  // prompts are never touched
                CHECK(seen.insert(p).second);    // each position exactly once
            }
        }
        CHECK(seen == std::set<int>(initially_masked.begin(), initially_masked.end()));
        for (int i = 0; i < initial.prompt_len; ++i) CHECK(state.tokens[i] == initial.tokens[i]);
    }
}

TEST_CASE("sampled decodes are bit-reproducible per seed") {
    StrategyConfig cfg = dapd_config(Committer::sample);
    cfg.kind = StrategyKind::topk;
    cfg.k = 3;
    const auto [s1, t1] = decode(oracle::make_oracle_denoiser(), cfg, toy::fully_masked_state(), 42);
    const auto [s2, t2] = decode(oracle::make_oracle_denoiser(), cfg, toy::fully_masked_state(), 42);
    CHECK(trace_to_json(t1) == trace_to_json(t2));
    CHECK(s1.tokens == s2.tokens);
}

TEST_CASE("decode rejects malformed denoiser output") {
    const Denoiser broken = [](const SequenceState& s) {
        DenoiserOutput out;
        out.positions = s.masked_positions();
        for (std::size_t i = 0; i < out.positions.size(); ++i)
            out.marginals.push_back({0.5, 0.2, 0.0});  // sums to 0.7
        return out;
    };
    CHECK_THROWS_AS(decode(broken, StrategyConfig{}, toy::fully_masked_state(), 1),
                    std::runtime_error);
}

TEST_CASE("trace JSONL carries the exact field set") {
    const auto [state, trace] =
        decode(oracle::make_oracle_denoiser(), dapd_config(), toy::fully_masked_state(), 5);
    const auto doc = nlohmann::json::parse(trace_to_json(trace));
    CHECK(doc.at("seed").get<std::uint64_t>() == 5);
    CHECK(doc.at("strategy").get<std::string>() == "dapd");
    CHECK(doc.at("nfe").get<int>() == 3);
    CHECK(doc.at("final").size() == 9);
    REQUIRE(doc.at("steps").size() == 3);
    const auto& step0 = doc.at("steps")[0];
    for (const char* key : {"idx", "tau", "unmasked", "tokens", "confs", "segments"})
        CHECK(step0.contains(key));
    CHECK(step0.at("idx").get<int>() == 0);
    CHECK(step0.at("tau").get<double>() == doctest::Approx(0.01));
    CHECK(step0.at("unmasked") == nlohmann::json({1, 3}));
    // confidence-phase steps carry a null tau
    CHECK(doc.at("steps")[2].at("tau").is_null());
}
