#include "dapd/denoiser.hpp"

#include "dapd/reference.hpp"

namespace dapd {

ModelDenoiser::ModelDenoiser(const Checkpoint& ckpt) : cfg_(ckpt.config) {
    cfg_.validate();
    const ParamLayout layout(cfg_);
    if (ckpt.params.size() != layout.total())
        throw std::invalid_argument("ModelDenoiser: parameter count mismatch");
    params_.assign(ckpt.params.begin(), ckpt.params.end());
}

DenoiserOutput ModelDenoiser::operator()(const SequenceState& state) const {
    if (state.length() != cfg_.seq_len)
        throw std::invalid_argument("ModelDenoiser: state length mismatch");
    if (state.masked_count() < 1)
        throw std::invalid_argument("ModelDenoiser: state has no masked positions");

    ref::Workspace<double> ws(cfg_);
    DenoiserOutput out;
    ref::forward<double>(params_, state.tokens, ws, &out.attention);
    out.positions = state.masked_positions();
    out.marginals.reserve(out.positions.size());
    for (int pos : out.positions) out.marginals.push_back(ref::data_marginal(ws, pos));
    return out;
}

}  // namespace dapd
