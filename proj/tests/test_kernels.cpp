#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "sahgnn/kernels.hpp"

using namespace sahgnn;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

void check_close(const std::vector<double>& ref, const std::vector<double>& got, double tol) {
  REQUIRE(ref.size() == got.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(ref[i] - got[i]) <= tol * std::max(1.0, std::abs(ref[i])));
}

std::vector<const kernels::KernelTable*> vector_tables() {
  std::vector<const kernels::KernelTable*> out;
  if (auto* t = kernels::avx2_table()) out.push_back(t);
  if (auto* t = kernels::neon_table()) out.push_back(t);
  return out;
}

}  // namespace

TEST_CASE("scalar reference kernels compute textbook products") {
  const auto& s = kernels::scalar_table();
  const std::vector<double> x{1, 2, 3}, y{4, 5, 6};
  CHECK(s.dot(3, x.data(), y.data()) == 32.0);

  // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c(4, 0.0);
  s.gemm_nn(2, 2, 2, a.data(), b.data(), c.data());
  CHECK(c == std::vector<double>{19, 22, 43, 50});

  std::fill(c.begin(), c.end(), 0.0);
  s.gemm_nt(2, 2, 2, a.data(), b.data(), c.data());  // A * B^T
  CHECK(c == std::vector<double>{17, 23, 39, 53});

  std::fill(c.begin(), c.end(), 0.0);
  s.gemm_tn(2, 2, 2, a.data(), b.data(), c.data());  // A^T * B
  CHECK(c == std::vector<double>{26, 30, 38, 44});
}

TEST_CASE("vector kernels agree with the scalar reference") {
  const auto tables = vector_tables();
  if (tables.empty()) {
    MESSAGE("no vector backend available on this CPU; equivalence not exercised");
    return;
  }
  std::mt19937_64 rng(42);
  const auto& ref = kernels::scalar_table();
  for (const auto* simd : tables) {
    CAPTURE(kernels::name(simd->backend));
    for (std::size_t n : {0, 1, 3, 4, 7, 8, 9, 16, 31, 64, 129}) {
      auto x = random_vector(n, rng), y = random_vector(n, rng);
      const double r = ref.dot(n, x.data(), y.data());
      CHECK(std::abs(simd->dot(n, x.data(), y.data()) - r) <= 1e-12 * std::max<double>(1.0, n));

      auto y_ref = y, y_simd = y;
      ref.axpy(n, 0.37, x.data(), y_ref.data());
      simd->axpy(n, 0.37, x.data(), y_simd.data());
      check_close(y_ref, y_simd, 1e-14);
    }
    struct Dims {
      std::size_t m, n, k;
    };
    for (auto [m, n, k] : std::vector<Dims>{{1, 1, 1}, {3, 5, 4}, {7, 9, 13}, {16, 16, 16}, {30, 33, 5}, {2, 64, 17}}) {
      auto a = random_vector(m * k, rng), b = random_vector(k * n, rng);
      auto bt = random_vector(n * k, rng), at = random_vector(k * m, rng);
      std::vector<double> c_ref(m * n, 0.5), c_simd(m * n, 0.5);
      ref.gemm_nn(m, n, k, a.data(), b.data(), c_ref.data());
      simd->gemm_nn(m, n, k, a.data(), b.data(), c_simd.data());
      check_close(c_ref, c_simd, 1e-12);

      std::fill(c_ref.begin(), c_ref.end(), 0.0);
      std::fill(c_simd.begin(), c_simd.end(), 0.0);
      ref.gemm_nt(m, n, k, a.data(), bt.data(), c_ref.data());
      simd->gemm_nt(m, n, k, a.data(), bt.data(), c_simd.data());
      check_close(c_ref, c_simd, 1e-12);

      std::fill(c_ref.begin(), c_ref.end(), 0.0);
      std::fill(c_simd.begin(), c_simd.end(), 0.0);
      ref.gemm_tn(m, n, k, at.data(), b.data(), c_ref.data());
      simd->gemm_tn(m, n, k, at.data(), b.data(), c_simd.data());
      check_close(c_ref, c_simd, 1e-12);
    }
  }
}

TEST_CASE("backend selection") {
  const auto original = kernels::active().backend;
  CHECK(kernels::select(kernels::Backend::scalar));
  CHECK(kernels::active().backend == kernels::Backend::scalar);
  CHECK(kernels::select(kernels::Backend::avx2) == (kernels::avx2_table() != nullptr));
  CHECK(kernels::select(kernels::Backend::neon) == (kernels::neon_table() != nullptr));
  kernels::select(original);
  CHECK(kernels::name(kernels::Backend::avx2) == "avx2");
}
