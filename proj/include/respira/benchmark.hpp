// Wall-clock inference latency of a single-clip predict call. Warmup trials
// are excluded; run on one worker with nothing else loading the machine.
#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <vector>

#include "respira/errors.hpp"

namespace respira {

struct LatencyStats {
    double mean_s = 0.0;
    double p50_s = 0.0;
    double p95_s = 0.0;
    size_t trials = 0;
};

inline LatencyStats benchmark_inference(const std::function<void()>& call, size_t n_trials,
                                        size_t warmup = 10) {
    if (n_trials == 0) throw EmptyBenchmark("benchmark needs at least one timed trial");
    for (size_t i = 0; i < warmup; ++i) call();
    std::vector<double> seconds(n_trials);
    for (size_t i = 0; i < n_trials; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        call();
        const auto t1 = std::chrono::steady_clock::now();
        seconds[i] = std::chrono::duration<double>(t1 - t0).count();
    }
    LatencyStats st;
    st.trials = n_trials;
    for (double s : seconds) st.mean_s += s;
    st.mean_s /= static_cast<double>(n_trials);
    std::sort(seconds.begin(), seconds.end());
    st.p50_s = seconds[(n_trials - 1) / 2];
    st.p95_s = seconds[(n_trials - 1) * 95 / 100];
    return st;
}

}  // namespace respira
