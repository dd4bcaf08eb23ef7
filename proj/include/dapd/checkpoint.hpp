#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dapd/model.hpp"

namespace dapd {

inline constexpr int kCheckpointVersion = 1;

struct TrainMeta {
    int steps_done = 0;
    double final_loss = 0.0;
    std::uint64_t seed = 0;
    int format_version = kCheckpointVersion;
};

// Trained model snapshot. Parameters are serialized as little-endian 32-bit
// floats in section order; the header carries the config and the named
// section index.
struct Checkpoint {
    ModelConfig config;
    std::vector<float> params;
    TrainMeta meta;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dapd
