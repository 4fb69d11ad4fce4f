#pragma once

#include <cstdint>

namespace smre {

/// Invocation counters for branch-isolation checks. The evaluation path must
/// leave the support-set and text-encoder counters untouched; tests and the
/// ablation harness assert on these.
struct Counters {
    std::uint64_t compute_weights_calls = 0;
    std::uint64_t build_support_calls = 0;
    std::uint64_t encode_text_calls = 0;

    void reset() { *this = Counters{}; }

    static Counters& global() {
        static Counters c;
        return c;
    }
};

}  // namespace smre
