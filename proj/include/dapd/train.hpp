#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dapd/checkpoint.hpp"
#include "dapd/model.hpp"
#include "dapd/reference.hpp"
#include "dapd/toy.hpp"

namespace dapd {

struct TrainConfig {
    int steps = 20000;
    double lr = 1e-3;
    int batch_size = 256;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    // The 1/t loss weight is heavy-tailed; clipping the global gradient norm
    // keeps rare tiny-t batches from stalling the adaptive moments. 0 disables.
    double clip_norm = 1.0;
    // Training samples t uniformly from (t_floor, 1]. Without a floor the
    // per-example weight 1/t has unbounded variance and single near-zero-t
    // draws dominate whole batches. 0 restores the unfloored distribution.
    double t_floor = 0.05;
    std::uint64_t seed = 1;

    void validate() const;
};

// One corrupted training item. The derivation is a pure function of
// (seed, step, slot), so batches are identical for any thread count.
struct BatchItem {
    int example_idx = 0;
    double t = 0.0;
    SequenceState xt;
};

std::vector<BatchItem> derive_batch(const std::vector<toy::Example>& data, std::uint64_t seed,
                                    int step, int batch_size, double t_floor = 0.0);

// Mean mdm loss of the given parameters over one derived batch, computed with
// the serial reference kernels. Used to cross-check the fast path.
double reference_batch_loss(const ModelConfig& cfg, std::span<const float> params,
                            const std::vector<toy::Example>& data,
                            const std::vector<BatchItem>& batch);

// Batched gradient of the mean loss, serial reference path (per-example
// accumulation in slot order).
double reference_batch_grad(const ModelConfig& cfg, std::span<const float> params,
                            const std::vector<toy::Example>& data,
                            const std::vector<BatchItem>& batch, std::span<float> grad);

// Fast path: examples are processed in fixed-size chunks whose gradients are
// reduced in chunk order, so the result is bit-identical for any number of
// OpenMP threads. Returns the mean batch loss.
double parallel_batch_grad(const ModelConfig& cfg, std::span<const float> params,
                           const std::vector<toy::Example>& data,
                           const std::vector<BatchItem>& batch, std::span<float> grad);

// AdamW training loop over minibatched mdm loss. Throws DivergenceError when
// the loss stops being finite. log_cb, when set, receives (step, loss) each
// step.
Checkpoint train(const std::vector<toy::Example>& data, const ModelConfig& model_cfg,
                 const TrainConfig& train_cfg,
                 const std::function<void(int, double)>& log_cb = {});

}  // namespace dapd
