#include "dapd/model.hpp"

#include <stdexcept>

namespace dapd {

void ModelConfig::validate() const {
    if (num_layers < 2) throw std::invalid_argument("ModelConfig: num_layers must be >= 2");
    if (num_heads < 1) throw std::invalid_argument("ModelConfig: num_heads must be >= 1");
    if (model_dim < 1 || model_dim % num_heads != 0)
        throw std::invalid_argument("ModelConfig: model_dim must be divisible by num_heads");
    if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
    if (seq_len < 1) throw std::invalid_argument("ModelConfig: seq_len must be >= 1");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.model_dim;
    const std::size_t m = cfg.mlp_dim();
    const std::size_t V = cfg.vocab_size;
    const std::size_t S = cfg.seq_len;

    auto add = [&](const std::string& name, std::size_t count) {
        sections_.push_back({name, total_, count});
        total_ += count;
        return sections_.back().offset;
    };

    tok_emb = add("tok_emb", V * d);
    if (cfg.learned_pos) pos_emb = add("pos_emb", S * d);

    layers.resize(cfg.num_layers);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer& L = layers[l];
        L.ln1_g = add(p + "ln1.g", d);
        L.ln1_b = add(p + "ln1.b", d);
        L.wq = add(p + "attn.wq", d * d);
        L.bq = add(p + "attn.bq", d);
        L.wk = add(p + "attn.wk", d * d);
        L.bk = add(p + "attn.bk", d);
        L.wv = add(p + "attn.wv", d * d);
        L.bv = add(p + "attn.bv", d);
        L.wo = add(p + "attn.wo", d * d);
        L.bo = add(p + "attn.bo", d);
        L.ln2_g = add(p + "ln2.g", d);
        L.ln2_b = add(p + "ln2.b", d);
        L.w1 = add(p + "mlp.w1", d * m);
        L.b1 = add(p + "mlp.b1", m);
        L.w2 = add(p + "mlp.w2", m * d);
        L.b2 = add(p + "mlp.b2", d);
    }

    final_ln_g = add("final_ln.g", d);
    final_ln_b = add("final_ln.b", d);
    head_w = add("head.w", d * V);
    head_b = add("head.b", V);
}

const ParamSection& ParamLayout::section(const std::string& name) const {
    for (const auto& s : sections_)
        if (s.name == name) return s;
    throw std::invalid_argument("unknown parameter section: " + name);
}

template <typename T>
std::vector<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    const ParamLayout layout(cfg);
    std::vector<T> params(layout.total(), T(0));
    Rng rng(Rng::derive(seed, /*stream=*/0x696e6974ULL, 0));

    auto fill_normal = [&](std::size_t off, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i)
            params[off + i] = static_cast<T>(0.02 * rng.next_normal());
    };
    auto fill_ones = [&](std::size_t off, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) params[off + i] = T(1);
    };

    // Draw in section order so initialization is independent of access order.
    for (const auto& s : layout.sections()) {
        const bool is_gain = s.name.ends_with("ln1.g") || s.name.ends_with("ln2.g") ||
                             s.name == "final_ln.g";
        const bool is_bias = s.name.ends_with(".b") || s.name.ends_with("bq") ||
                             s.name.ends_with("bk") || s.name.ends_with("bv") ||
                             s.name.ends_with("bo") || s.name.ends_with("b1") ||
                             s.name.ends_with("b2");
        if (is_gain)
            fill_ones(s.offset, s.count);
        else if (is_bias)
            continue;  // zeros
        else
            fill_normal(s.offset, s.count);
    }
    return params;
}

template std::vector<float> init_params<float>(const ModelConfig&, std::uint64_t);
template std::vector<double> init_params<double>(const ModelConfig&, std::uint64_t);

}  // namespace dapd
