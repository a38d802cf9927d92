#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mfliq {

/// Splits [0,n) into contiguous blocks, one per worker, and runs fn(begin, end).
/// Block boundaries depend only on (n, workers), so per-index work is
/// reproducible; the first exception raised by any block is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (n == 0) return;
    unsigned w = std::max(1u, workers);
    if (w == 1 || n == 1) {
        fn(std::size_t{0}, n);
        return;
    }
    w = static_cast<unsigned>(std::min<std::size_t>(w, n));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(w);
    const std::size_t chunk = (n + w - 1) / w;
    for (unsigned j = 0; j < w; ++j) {
        std::size_t b = j * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&, j, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Pairwise (cascade) summation in a fixed order.
template <class It>
double pairwise_sum(It first, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += first[i];
        return s;
    }
    std::size_t h = n / 2;
    return pairwise_sum(first, h) + pairwise_sum(first + h, n - h);
}

template <class Vec>
double pairwise_mean(const Vec& v) {
    return v.empty() ? 0.0 : pairwise_sum(v.begin(), v.size()) / static_cast<double>(v.size());
}

}  // namespace mfliq
