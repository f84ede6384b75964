#include "mipl/kernels.hpp"

#include <atomic>
#include <cstdint>

namespace mipl::kernels {

namespace {

std::atomic<Exec> g_exec{Exec::parallel};

// Below this many multiply-adds the fork/join overhead dominates; the model's
// per-bag gemms sit under it, dataset-level work sits above.
constexpr std::int64_t kParallelGrain = 1 << 15;

inline std::int64_t work(int m, int k, int n) {
    return static_cast<std::int64_t>(m) * k * n;
}

} // namespace

void set_exec(Exec e) { g_exec.store(e, std::memory_order_relaxed); }
Exec exec() { return g_exec.load(std::memory_order_relaxed); }

void gemm_nn_ref(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(t) * n + j];
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = acc ? out + s : s;
        }
    }
}

void gemm_tn_ref(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += a[static_cast<std::size_t>(t) * m + i] * b[static_cast<std::size_t>(t) * n + j];
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = acc ? out + s : s;
        }
    }
}

void gemm_nt_ref(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(j) * k + t];
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = acc ? out + s : s;
        }
    }
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    const bool par = exec() == Exec::parallel && work(m, k, n) > kParallelGrain;
#pragma omp parallel for if (par) schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(t) * n + j];
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = acc ? out + s : s;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    const bool par = exec() == Exec::parallel && work(m, k, n) > kParallelGrain;
#pragma omp parallel for if (par) schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += a[static_cast<std::size_t>(t) * m + i] * b[static_cast<std::size_t>(t) * n + j];
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = acc ? out + s : s;
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    const bool par = exec() == Exec::parallel && work(m, k, n) > kParallelGrain;
#pragma omp parallel for if (par) schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(j) * k + t];
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = acc ? out + s : s;
        }
    }
}

} // namespace mipl::kernels
