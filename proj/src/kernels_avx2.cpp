// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; nothing here may run unless cpu_has_avx2() returned true,
// which the dispatcher guarantees.

#include "langseg/kernels.hpp"

#if defined(LANGSEG_HAVE_AVX2_BUILD)

#include <immintrin.h>

#include <cmath>
#include <cstring>

namespace langseg::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

inline float hsumf(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

}  // namespace

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double sum(std::size_t n, const double* x) {
  __m256d acc0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double acc = hsum(acc0);
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scal(std::size_t n, double a, double* x) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

void vadd(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void vmul(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

float dotf(std::size_t n, const float* x, const float* y) {
  __m256 acc0 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  }
  float acc = hsumf(acc0);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

float sumf(std::size_t n, const float* x) {
  __m256 acc0 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc0 = _mm256_add_ps(acc0, _mm256_loadu_ps(x + i));
  float acc = hsumf(acc0);
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void axpyf(std::size_t n, float a, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scalf(std::size_t n, float a, float* x) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  if (!accumulate) std::memset(C, 0, M * N * sizeof(double));
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const __m256d va = _mm256_set1_pd(A[i * K + k]);
      const double* b = B + k * N;
      std::size_t j = 0;
      for (; j + 8 <= N; j += 8) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        __m256d c1 = _mm256_loadu_pd(c + j + 4);
        c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
        c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j + 4), c1);
        _mm256_storeu_pd(c + j, c0);
        _mm256_storeu_pd(c + j + 4, c1);
      }
      for (; j + 4 <= N; j += 4) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
        _mm256_storeu_pd(c + j, c0);
      }
      const double a = A[i * K + k];
      for (; j < N; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const double d = dot(K, a, B + j * K);
      double* c = C + i * N + j;
      *c = accumulate ? *c + d : d;
    }
  }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  if (!accumulate) std::memset(C, 0, M * N * sizeof(double));
  for (std::size_t k = 0; k < K; ++k) {
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const __m256d va = _mm256_set1_pd(A[k * M + i]);
      double* c = C + i * N;
      std::size_t j = 0;
      for (; j + 4 <= N; j += 4) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
        _mm256_storeu_pd(c + j, c0);
      }
      const double a = A[k * M + i];
      for (; j < N; ++j) c[j] += a * b[j];
    }
  }
}

void adam_step(std::size_t n, double* p, const double* g, double* m, double* v,
               double lr, double beta1, double beta2, double eps,
               double bias1, double bias2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vib1 = _mm256_set1_pd(1.0 / bias1);
  const __m256d vib2 = _mm256_set1_pd(1.0 / bias2);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vg = _mm256_loadu_pd(g + i);
    __m256d vm = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    vm = _mm256_add_pd(_mm256_mul_pd(vb1, vm), _mm256_mul_pd(vb1c, vg));
    vv = _mm256_add_pd(_mm256_mul_pd(vb2, vv), _mm256_mul_pd(vb2c, _mm256_mul_pd(vg, vg)));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_mul_pd(vm, vib1);
    const __m256d vhat = _mm256_mul_pd(vv, vib2);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    __m256d vp = _mm256_loadu_pd(p + i);
    vp = _mm256_sub_pd(vp, _mm256_div_pd(_mm256_mul_pd(vlr, mhat), denom));
    _mm256_storeu_pd(p + i, vp);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    const double mhat = m[i] * (1.0 / bias1);
    const double vhat = v[i] * (1.0 / bias2);
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace langseg::kernels::avx2

#endif  // LANGSEG_HAVE_AVX2_BUILD
