#pragma once

// Inner-loop arithmetic used by the tensor engine and graph construction.
//
// Every kernel has a scalar reference implementation. Vector variants
// (AVX2+FMA on x86-64, NEON on AArch64) are picked once at startup from the
// CPU feature set, or forced through SAHGNN_KERNELS=scalar|avx2|neon.
// Vector variants reassociate sums, so they agree with the reference only up
// to rounding; tests/test_kernels.cpp pins that agreement.

#include <cstddef>
#include <string_view>

namespace sahgnn::kernels {

enum class Backend { scalar, avx2, neon };

/// Function table for one backend. Matrices are row-major and dense.
struct KernelTable {
  Backend backend;
  /// sum_i x[i] * y[i]
  double (*dot)(std::size_t n, const double* x, const double* y);
  /// y[i] += alpha * x[i]
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  /// C(m x n) += A(m x k) * B(k x n)
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  /// C(m x n) += A(m x k) * B(n x k)^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  /// C(m x n) += A(k x m)^T * B(k x n)
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
};

const KernelTable& scalar_table();
/// nullptr when the backend was not compiled in or the CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

/// Table in use. Resolved on first call.
const KernelTable& active();
/// Override the active backend. Returns false if unavailable.
bool select(Backend backend);
std::string_view name(Backend backend);

inline double dot(std::size_t n, const double* x, const double* y) { return active().dot(n, x, y); }
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  active().axpy(n, alpha, x, y);
}
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  active().gemm_nn(m, n, k, a, b, c);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  active().gemm_nt(m, n, k, a, b, c);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  active().gemm_tn(m, n, k, a, b, c);
}

}  // namespace sahgnn::kernels
