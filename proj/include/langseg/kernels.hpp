#pragma once

// Data-parallel arithmetic kernels used by the tensor/autograd layer and the
// image utilities. Every kernel has a scalar reference implementation and,
// on x86-64, an AVX2+FMA variant. The active variant is chosen once at
// runtime from CPUID; LANGSEG_KERNELS={auto,scalar,avx2} overrides it.
// The scalar and SIMD variants are equivalence-tested against each other.

#include <cstddef>
#include <string>

namespace langseg::kernels {

// ---- dispatched entry points -------------------------------------------

double dot(std::size_t n, const double* x, const double* y);
double sum(std::size_t n, const double* x);
void axpy(std::size_t n, double a, const double* x, double* y);   // y += a*x
void scal(std::size_t n, double a, double* x);                    // x *= a
void vadd(std::size_t n, const double* x, const double* y, double* out);
void vmul(std::size_t n, const double* x, const double* y, double* out);

float dotf(std::size_t n, const float* x, const float* y);
float sumf(std::size_t n, const float* x);
void axpyf(std::size_t n, float a, const float* x, float* y);
void scalf(std::size_t n, float a, float* x);

// Row-major contiguous GEMM. accumulate=false overwrites C.
//   nn: C(MxN) = A(MxK) * B(KxN)
//   nt: C(MxN) = A(MxK) * B(NxK)^T
//   tn: C(MxN) = A(KxM)^T * B(KxN)
void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);

// Fused Adam update for one parameter vector.
//   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
//   p -= lr * (m/bias1) / (sqrt(v/bias2) + eps)
void adam_step(std::size_t n, double* p, const double* g, double* m, double* v,
               double lr, double beta1, double beta2, double eps,
               double bias1, double bias2);

// Name of the backend serving the dispatched calls: "avx2" or "scalar".
const std::string& active_backend();

// ---- direct access to both variants (for equivalence tests) -------------

namespace scalar {
double dot(std::size_t n, const double* x, const double* y);
double sum(std::size_t n, const double* x);
void axpy(std::size_t n, double a, const double* x, double* y);
void scal(std::size_t n, double a, double* x);
void vadd(std::size_t n, const double* x, const double* y, double* out);
void vmul(std::size_t n, const double* x, const double* y, double* out);
float dotf(std::size_t n, const float* x, const float* y);
float sumf(std::size_t n, const float* x);
void axpyf(std::size_t n, float a, const float* x, float* y);
void scalf(std::size_t n, float a, float* x);
void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void adam_step(std::size_t n, double* p, const double* g, double* m, double* v,
               double lr, double beta1, double beta2, double eps,
               double bias1, double bias2);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define LANGSEG_HAVE_AVX2_BUILD 1
namespace avx2 {
double dot(std::size_t n, const double* x, const double* y);
double sum(std::size_t n, const double* x);
void axpy(std::size_t n, double a, const double* x, double* y);
void scal(std::size_t n, double a, double* x);
void vadd(std::size_t n, const double* x, const double* y, double* out);
void vmul(std::size_t n, const double* x, const double* y, double* out);
float dotf(std::size_t n, const float* x, const float* y);
float sumf(std::size_t n, const float* x);
void axpyf(std::size_t n, float a, const float* x, float* y);
void scalf(std::size_t n, float a, float* x);
void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate);
void adam_step(std::size_t n, double* p, const double* g, double* m, double* v,
               double lr, double beta1, double beta2, double eps,
               double bias1, double bias2);
}  // namespace avx2
#endif

bool cpu_has_avx2();

}  // namespace langseg::kernels
