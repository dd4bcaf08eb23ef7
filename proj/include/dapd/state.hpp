#pragma once

#include <stdexcept>
#include <vector>

namespace dapd {

// Sentinel for a masked position. Kept out of the data alphabet so the
// decoding engine stays agnostic to any particular vocabulary.
inline constexpr int kMaskToken = -1;

// Partially unmasked token sequence. Prompt positions are fixed context and
// are never masked; generation positions start masked and are committed
// exactly once (absorbing unmasking).
struct SequenceState {
    std::vector<int> tokens;
    int prompt_len = 0;
    int gen_len = 0;

    int length() const { return static_cast<int>(tokens.size()); }
    bool is_masked(int pos) const { return tokens[pos] == kMaskToken; }

    std::vector<int> masked_positions() const {
        std::vector<int> out;
        for (int i = 0; i < length(); ++i)
            if (tokens[i] == kMaskToken) out.push_back(i);
        return out;
    }

    int masked_count() const {
        int n = 0;
        for (int t : tokens) n += (t == kMaskToken);
        return n;
    }

    void validate() const {
        if (prompt_len < 0 || gen_len < 0 || prompt_len + gen_len != length())
            throw std::invalid_argument("SequenceState: prompt_len + gen_len must equal length");
        for (int i = 0; i < prompt_len; ++i)
            if (tokens[i] == kMaskToken)
                throw std::invalid_argument("SequenceState: prompt positions may not be masked");
    }
};

// Fully masked generation state with an optional fixed prefix.
inline SequenceState fully_masked(int gen_len, std::vector<int> prompt = {}) {
    SequenceState s;
    s.prompt_len = static_cast<int>(prompt.size());
    s.gen_len = gen_len;
    s.tokens = std::move(prompt);
    s.tokens.resize(s.prompt_len + gen_len, kMaskToken);
    return s;
}

}  // namespace dapd
