#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dapd/depgraph.hpp"
#include "dapd/model.hpp"
#include "dapd/state.hpp"
#include "dapd/toy.hpp"

// Serial single-example kernels written as plain loops. This is the reference
// implementation the parallel training path is tested against, and it is also
// the inference path (instantiated at double precision, with attention
// capture). The gradient is validated against central finite differences.
namespace dapd::ref {

template <typename T>
struct Workspace {
    explicit Workspace(const ModelConfig& cfg);

    const ModelConfig cfg;
    // Per-layer activations kept for the backward pass.
    struct LayerAct {
        std::vector<T> xhat1, h, q, k, v, probs, ctx, xr, xhat2, h2, u, act;
        std::vector<T> rstd1, rstd2;
    };
    std::vector<T> x0;  // embedded input
    std::vector<LayerAct> layers;
    std::vector<T> xhatf, rstdf, f, logits;
    // backward scratch
    std::vector<T> dx, dxr, dh, dq, dk, dv, dctx, du, dh2, row_scratch;
};

// Full forward pass; logits land in ws.logits (seq_len x vocab, row-major).
// When capture is non-null, all layer/head attention maps are exported as
// row-stochastic matrices (converted to double).
template <typename T>
void forward(std::span<const T> params, const std::vector<int>& tokens, Workspace<T>& ws,
             AttentionStack* capture = nullptr);

// Marginals over the data symbols at position pos, from ws.logits after a
// forward pass. The mask symbol is excluded and the rest renormalized.
template <typename T>
std::vector<double> data_marginal(const Workspace<T>& ws, int pos);

// Weighted masked cross-entropy: (1/t) * sum over masked positions of
// -log p(x0_i | x_t). Deterministic given the corrupted state.
template <typename T>
T masked_ce_loss(std::span<const T> params, const toy::Example& x0, const SequenceState& xt,
                 double t, Workspace<T>& ws);

// Same loss, also accumulating d loss / d params into grad (+=).
template <typename T>
T loss_and_grad(std::span<const T> params, const toy::Example& x0, const SequenceState& xt,
                double t, std::span<T> grad, Workspace<T>& ws);

// Each position masked independently with probability t; at least one mask is
// enforced by resampling the whole pattern.
SequenceState corrupt(const toy::Example& x0, double t, Rng& rng);

// Samples t uniform on (0,1], corrupts, and returns the corresponding loss.
template <typename T>
T mdm_loss(std::span<const T> params, const toy::Example& x0, Rng& rng, Workspace<T>& ws);

extern template struct Workspace<float>;
extern template struct Workspace<double>;
extern template void forward<float>(std::span<const float>, const std::vector<int>&,
                                    Workspace<float>&, AttentionStack*);
extern template void forward<double>(std::span<const double>, const std::vector<int>&,
                                     Workspace<double>&, AttentionStack*);
extern template std::vector<double> data_marginal<float>(const Workspace<float>&, int);
extern template std::vector<double> data_marginal<double>(const Workspace<double>&, int);
extern template float masked_ce_loss<float>(std::span<const float>, const toy::Example&,
                                            const SequenceState&, double, Workspace<float>&);
extern template double masked_ce_loss<double>(std::span<const double>, const toy::Example&,
                                              const SequenceState&, double, Workspace<double>&);
extern template float loss_and_grad<float>(std::span<const float>, const toy::Example&,
                                           const SequenceState&, double, std::span<float>,
                                           Workspace<float>&);
extern template double loss_and_grad<double>(std::span<const double>, const toy::Example&,
                                             const SequenceState&, double, std::span<double>,
                                             Workspace<double>&);
extern template float mdm_loss<float>(std::span<const float>, const toy::Example&, Rng&,
                                      Workspace<float>&);
extern template double mdm_loss<double>(std::span<const double>, const toy::Example&, Rng&,
                                        Workspace<double>&);

}  // namespace dapd::ref
