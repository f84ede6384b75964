#ifndef MIPL_KERNELS_HPP
#define MIPL_KERNELS_HPP

#include <cstddef>

namespace mipl::kernels {

enum class Exec { serial, parallel };

// Process-wide execution mode for the gemm kernels. The parallel variants
// split work across OpenMP threads by output row with an unchanged inner
// accumulation order, so results are bit-identical to the serial reference
// for any thread count.
void set_exec(Exec e);
Exec exec();

// c (m x n) = a (m x k) * b (k x n); += when acc is set.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
// c (m x n) = a^T * b, a stored (k x m), b stored (k x n).
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
// c (m x n) = a * b^T, a stored (m x k), b stored (n x k).
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

// Serial reference implementations, kept for the equivalence tests and the
// benchmark baseline. Never parallel regardless of exec().
void gemm_nn_ref(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void gemm_tn_ref(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void gemm_nt_ref(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

} // namespace mipl::kernels

#endif
