#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dapd/rng.hpp"

namespace dapd {

// Bidirectional masked-denoising transformer over the toy alphabet.
// vocab_size counts the three data symbols plus the mask symbol, which is
// always the last vocabulary id.
struct ModelConfig {
    int num_layers = 8;
    int num_heads = 4;
    int model_dim = 64;
    int vocab_size = 4;
    int seq_len = 9;
    bool learned_pos = true;

    int head_dim() const { return model_dim / num_heads; }
    int mlp_dim() const { return 4 * model_dim; }
    int mask_id() const { return vocab_size - 1; }
    int data_symbols() const { return vocab_size - 1; }

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Named view into the flat parameter vector. Section order is the
// serialization order.
struct ParamSection {
    std::string name;
    std::size_t offset = 0;
    std::size_t count = 0;
};

class ParamLayout {
  public:
    explicit ParamLayout(const ModelConfig& cfg);

    std::size_t total() const { return total_; }
    const std::vector<ParamSection>& sections() const { return sections_; }
    const ParamSection& section(const std::string& name) const;

    // Frequently used offsets, resolved once.
    std::size_t tok_emb = 0, pos_emb = 0;
    struct Layer {
        std::size_t ln1_g, ln1_b;
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
        std::size_t ln2_g, ln2_b;
        std::size_t w1, b1, w2, b2;
    };
    std::vector<Layer> layers;
    std::size_t final_ln_g = 0, final_ln_b = 0, head_w = 0, head_b = 0;

  private:
    std::vector<ParamSection> sections_;
    std::size_t total_ = 0;
};

// Seeded initialization: weights and embeddings N(0, 0.02), layer-norm gains
// one, all biases zero.
template <typename T>
std::vector<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

extern template std::vector<float> init_params<float>(const ModelConfig&, std::uint64_t);
extern template std::vector<double> init_params<double>(const ModelConfig&, std::uint64_t);

}  // namespace dapd
