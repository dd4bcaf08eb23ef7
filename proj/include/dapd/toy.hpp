#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dapd/rng.hpp"
#include "dapd/state.hpp"

namespace dapd::toy {

inline constexpr int kSeqLen = 9;
inline constexpr int kNumSymbols = 3;  // data alphabet {0,1,2}
inline constexpr int kNumX = 5;
inline constexpr int kNumY = 4;

// Layout: positions 0..4 hold X1..X5, positions 5..8 hold Y1..Y4 with
// Y_i = (X_i + X_{i+1}) mod 3.
using Example = std::array<int, kSeqLen>;

// Index of Y_i (1-based i in 1..4).
inline constexpr int y_position(int i) { return kNumX + (i - 1); }

inline Example from_x(const std::array<int, kNumX>& x) {
    Example e{};
    for (int i = 0; i < kNumX; ++i) e[i] = x[i];
    for (int i = 0; i < kNumY; ++i) e[kNumX + i] = (x[i] + x[i + 1]) % kNumSymbols;
    return e;
}

// All four modular constraints hold and symbols are in range.
bool is_valid(const Example& e);

// X1..X5 i.i.d. uniform over {0,1,2}; Y determined. Reproducible per seed.
std::vector<Example> gen_dataset(int n, std::uint64_t seed);

// "X1".."X5", "Y1".."Y4".
std::string position_label(int pos);
// Inverse of position_label; throws std::invalid_argument on bad label.
int position_from_label(const std::string& label);

// Dataset file I/O: one example per line, nine space-separated integers.
void write_dataset(const std::vector<Example>& data, const std::string& path);
std::vector<Example> read_dataset(const std::string& path);

inline SequenceState fully_masked_state() { return fully_masked(kSeqLen); }

}  // namespace dapd::toy
