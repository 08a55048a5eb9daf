#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <mutex>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

namespace qdb {

// Pairwise summation: deterministic and O(log n) error growth regardless of
// how the terms were produced.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

struct SampleStats {
    std::size_t n = 0;
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double stderr_mean = 0.0;
    double ci95_halfwidth = 0.0;
};

inline SampleStats sample_stats(std::span<const double> v) {
    SampleStats s;
    s.n = v.size();
    if (s.n == 0) return s;
    s.mean = pairwise_sum(v) / static_cast<double>(s.n);
    if (s.n > 1) {
        std::vector<double> sq(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double d = v[i] - s.mean;
            sq[i] = d * d;
        }
        s.variance = pairwise_sum(sq) / static_cast<double>(s.n - 1);
        s.stderr_mean = std::sqrt(s.variance / static_cast<double>(s.n));
        s.ci95_halfwidth = 1.959963984540054 * s.stderr_mean;
    }
    return s;
}

// Neville polynomial extrapolation of (x_i, y_i) samples to x = 0. Returns the
// extrapolated value and the weights w_i with value = sum_i w_i y_i, so a
// caller can propagate per-sample uncertainty.
struct Extrapolation {
    double value = 0.0;
    std::vector<double> weights;
};

inline Extrapolation neville_to_zero(std::span<const double> xs, std::span<const double> ys) {
    const std::size_t n = xs.size();
    if (n == 0 || ys.size() != n) throw std::invalid_argument("neville_to_zero: bad inputs");
    // Lagrange weights at 0; the nodes are distinct step sizes.
    Extrapolation ex;
    ex.weights.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double w = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            w *= (0.0 - xs[j]) / (xs[i] - xs[j]);
        }
        ex.weights[i] = w;
        ex.value += w * ys[i];
    }
    return ex;
}

// exp(A) for skew-symmetric A by scaling-and-squaring with a truncation-free
// Taylor evaluation of the scaled block. ||A/2^s|| <= 1/2 makes the series
// converge past double precision in ~20 terms; relative target 1e-12 is met
// with margin. The result of a skew exponential is orthogonal.
inline Eigen::MatrixXd expm_skew(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("expm_skew: square matrix required");
    const int n = static_cast<int>(a.rows());
    if (n == 1) return Eigen::MatrixXd::Ones(1, 1);
    const double norm = a.norm();
    if (norm == 0.0 || !std::isfinite(norm)) {
        if (!std::isfinite(norm)) throw std::invalid_argument("expm_skew: non-finite entries");
        return Eigen::MatrixXd::Identity(n, n);
    }
    int squarings = 0;
    double scale = 1.0;
    while (norm * scale > 0.5) {
        ++squarings;
        scale *= 0.5;
    }
    const Eigen::MatrixXd b = a * scale;
    Eigen::MatrixXd result = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
    for (int k = 1; k <= 24; ++k) {
        term = (term * b / static_cast<double>(k)).eval();
        result += term;
        if (term.norm() < 1e-18 * result.norm()) break;
    }
    for (int s = 0; s < squarings; ++s) result = (result * result).eval();
    return result;
}

// Runs fn(i) for i in [0, n) on up to n_threads workers, partitioned in
// contiguous blocks. Each index owns its output slot, so results are
// identical to a serial loop.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned n_threads = 0) {
    if (n == 0) return;
    if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, n));
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    const std::size_t chunk = (n + n_threads - 1) / n_threads;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned t = 0; t < n_threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out;
    out.reserve(n);
    if (n == 1) {
        out.push_back(0.5 * (lo + hi));
        return out;
    }
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
    return out;
}

}  // namespace qdb
