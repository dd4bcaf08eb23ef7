#include "dapd/rng.hpp"

#include <cmath>
#include <numbers>

namespace dapd {

double Rng::next_normal() {
    // Box-Muller, one value per call. u1 in (0,1] keeps the log finite.
    const double u1 = next_open_unit();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::sample_categorical(std::span<const double> probs) {
    if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
    double total = 0.0;
    for (double p : probs) {
        if (p < 0.0 || !std::isfinite(p)) throw std::invalid_argument("sample_categorical: bad weight");
        total += p;
    }
    if (total <= 0.0) throw std::invalid_argument("sample_categorical: zero mass");
    const double u = next_unit() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);  // u landed on accumulated rounding
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    // Feed the three words through the splitmix finalizer twice; the result
    // seeds an independent Rng whose draws do not collide across streams.
    Rng mixer(seed ^ (stream * 0x9e3779b97f4a7c15ULL) ^ (index * 0xd1b54a32d192ed03ULL));
    mixer.next_u64();
    return mixer.next_u64();
}

}  // namespace dapd
