#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ipl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Design matrix does not have full column rank (and no ridge was requested).
struct SingularDesignError : Error {
    SingularDesignError(const std::string& msg, int rank, int needed)
        : Error(msg), rank(rank), needed(needed) {}
    int rank;
    int needed;
};

/// Rejection sampling for distinct-index resamples ran out of attempts.
struct ResampleBudgetError : Error {
    using Error::Error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derives an independent sub-seed from a master seed and a path of indices
/// (environment index, repetition index, ...). Stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(master);
    for (std::uint64_t v : path) h = splitmix64(h ^ splitmix64(v + 0x9E3779B97F4A7C15ULL));
    return h;
}

/// Seeded random stream. All distributions are implemented explicitly so that
/// draws are bit-identical for a given seed regardless of the standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via the Marsaglia polar method.
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        cache_ = v * f;
        has_cache_ = true;
        return u * f;
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

/// Categorical sampler over nonnegative weights (not necessarily normalized).
class CategoricalSampler {
public:
    explicit CategoricalSampler(const std::vector<double>& weights) {
        cumulative_.reserve(weights.size());
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w))
                throw Error("categorical weights must be finite and nonnegative");
            total += w;
            cumulative_.push_back(total);
        }
        if (!(total > 0.0)) throw Error("categorical weights sum to zero");
    }

    int draw(Rng& rng) const {
        const double u = rng.uniform() * cumulative_.back();
        auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
        if (it == cumulative_.end()) --it;
        // Skip zero-weight cells that share a cumulative value with a predecessor.
        std::size_t i = static_cast<std::size_t>(it - cumulative_.begin());
        while (i + 1 < cumulative_.size() && cell_weight(i) == 0.0) ++i;
        return static_cast<int>(i);
    }

    double total() const { return cumulative_.back(); }

private:
    double cell_weight(std::size_t i) const {
        return i == 0 ? cumulative_[0] : cumulative_[i] - cumulative_[i - 1];
    }
    std::vector<double> cumulative_;
};

/// Runs fn(0..n-1), optionally on a small thread pool. Each task must only
/// write to its own output slot; results are then independent of job count.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min(static_cast<std::size_t>(jobs), n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mutex;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ipl
