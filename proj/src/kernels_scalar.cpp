#include "langseg/kernels.hpp"

#include <cmath>
#include <cstring>

namespace langseg::kernels::scalar {

double dot(std::size_t n, const double* x, const double* y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double sum(std::size_t n, const double* x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal(std::size_t n, double a, double* x) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void vadd(std::size_t n, const double* x, const double* y, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void vmul(std::size_t n, const double* x, const double* y, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

float dotf(std::size_t n, const float* x, const float* y) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

float sumf(std::size_t n, const float* x) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpyf(std::size_t n, float a, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scalf(std::size_t n, float a, float* x) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  if (!accumulate) std::memset(C, 0, M * N * sizeof(double));
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      double* c = C + i * N + j;
      *c = accumulate ? *c + acc : acc;
    }
  }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  if (!accumulate) std::memset(C, 0, M * N * sizeof(double));
  for (std::size_t k = 0; k < K; ++k) {
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const double a = A[k * M + i];
      double* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

void adam_step(std::size_t n, double* p, const double* g, double* m, double* v,
               double lr, double beta1, double beta2, double eps,
               double bias1, double bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    const double mhat = m[i] / bias1;
    const double vhat = v[i] / bias2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace langseg::kernels::scalar
