#include "dapd/toy.hpp"

#include <fstream>
#include <sstream>

#include "dapd/errors.hpp"

namespace dapd::toy {

bool is_valid(const Example& e) {
    for (int v : e)
        if (v < 0 || v >= kNumSymbols) return false;
    for (int i = 0; i < kNumY; ++i)
        if (e[kNumX + i] != (e[i] + e[i + 1]) % kNumSymbols) return false;
    return true;
}

std::vector<Example> gen_dataset(int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("gen_dataset: n must be >= 1");
    Rng rng(Rng::derive(seed, /*stream=*/0x646174ULL, 0));
    std::vector<Example> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::array<int, kNumX> x{};
        for (int j = 0; j < kNumX; ++j) x[j] = static_cast<int>(rng.next_below(kNumSymbols));
        out.push_back(from_x(x));
    }
    return out;
}

std::string position_label(int pos) {
    if (pos < 0 || pos >= kSeqLen) throw std::invalid_argument("position_label: out of range");
    if (pos < kNumX) return "X" + std::to_string(pos + 1);
    return "Y" + std::to_string(pos - kNumX + 1);
}

int position_from_label(const std::string& label) {
    if (label.size() == 2 && (label[0] == 'X' || label[0] == 'Y')) {
        const int idx = label[1] - '1';
        if (label[0] == 'X' && idx >= 0 && idx < kNumX) return idx;
        if (label[0] == 'Y' && idx >= 0 && idx < kNumY) return kNumX + idx;
    }
    throw std::invalid_argument("bad position label: " + label + " (expect X1..X5 or Y1..Y4)");
}

void write_dataset(const std::vector<Example>& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& e : data) {
        for (int i = 0; i < kSeqLen; ++i) {
            if (i) out << ' ';
            out << e[i];
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<Example> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::vector<Example> data;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        Example e{};
        for (int i = 0; i < kSeqLen; ++i) {
            if (!(ss >> e[i]))
                throw IoError("dataset parse error at " + path + ":" + std::to_string(lineno));
        }
        if (!is_valid(e))
            throw IoError("invalid example at " + path + ":" + std::to_string(lineno));
        data.push_back(e);
    }
    return data;
}

}  // namespace dapd::toy
