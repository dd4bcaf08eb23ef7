#pragma once

#include <memory>
#include <vector>

#include "dapd/checkpoint.hpp"
#include "dapd/decode.hpp"

namespace dapd {

// Checkpoint-backed denoiser. Parameters are widened to double once at
// construction; a forward pass is a pure function of the state, so a single
// instance is safe to share across threads.
class ModelDenoiser {
  public:
    explicit ModelDenoiser(const Checkpoint& ckpt);

    DenoiserOutput operator()(const SequenceState& state) const;

    const ModelConfig& config() const { return cfg_; }

  private:
    ModelConfig cfg_;
    std::vector<double> params_;
};

}  // namespace dapd
