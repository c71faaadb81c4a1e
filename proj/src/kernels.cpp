#include "langseg/kernels.hpp"

#include <cstdlib>
#include <mutex>

namespace langseg::kernels {

bool cpu_has_avx2() {
#if defined(LANGSEG_HAVE_AVX2_BUILD)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

struct Vtable {
  double (*dot)(std::size_t, const double*, const double*);
  double (*sum)(std::size_t, const double*);
  void (*axpy)(std::size_t, double, const double*, double*);
  void (*scal)(std::size_t, double, double*);
  void (*vadd)(std::size_t, const double*, const double*, double*);
  void (*vmul)(std::size_t, const double*, const double*, double*);
  float (*dotf)(std::size_t, const float*, const float*);
  float (*sumf)(std::size_t, const float*);
  void (*axpyf)(std::size_t, float, const float*, float*);
  void (*scalf)(std::size_t, float, float*);
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
  void (*adam_step)(std::size_t, double*, const double*, double*, double*,
                    double, double, double, double, double, double);
  std::string name;
};

Vtable make_scalar() {
  return {scalar::dot, scalar::sum, scalar::axpy, scalar::scal, scalar::vadd,
          scalar::vmul, scalar::dotf, scalar::sumf, scalar::axpyf, scalar::scalf,
          scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn, scalar::adam_step,
          "scalar"};
}

#if defined(LANGSEG_HAVE_AVX2_BUILD)
Vtable make_avx2() {
  return {avx2::dot, avx2::sum, avx2::axpy, avx2::scal, avx2::vadd,
          avx2::vmul, avx2::dotf, avx2::sumf, avx2::axpyf, avx2::scalf,
          avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn, avx2::adam_step,
          "avx2"};
}
#endif

const Vtable& table() {
  static Vtable t = [] {
    const char* pref = std::getenv("LANGSEG_KERNELS");
    const std::string want = pref ? pref : "auto";
#if defined(LANGSEG_HAVE_AVX2_BUILD)
    if (want == "avx2" || (want != "scalar" && cpu_has_avx2())) return make_avx2();
#endif
    return make_scalar();
  }();
  return t;
}

}  // namespace

double dot(std::size_t n, const double* x, const double* y) { return table().dot(n, x, y); }
double sum(std::size_t n, const double* x) { return table().sum(n, x); }
void axpy(std::size_t n, double a, const double* x, double* y) { table().axpy(n, a, x, y); }
void scal(std::size_t n, double a, double* x) { table().scal(n, a, x); }
void vadd(std::size_t n, const double* x, const double* y, double* out) { table().vadd(n, x, y, out); }
void vmul(std::size_t n, const double* x, const double* y, double* out) { table().vmul(n, x, y, out); }
float dotf(std::size_t n, const float* x, const float* y) { return table().dotf(n, x, y); }
float sumf(std::size_t n, const float* x) { return table().sumf(n, x); }
void axpyf(std::size_t n, float a, const float* x, float* y) { table().axpyf(n, a, x, y); }
void scalf(std::size_t n, float a, float* x) { table().scalf(n, a, x); }

void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  table().gemm_nn(M, N, K, A, B, C, accumulate);
}
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  table().gemm_nt(M, N, K, A, B, C, accumulate);
}
void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C, bool accumulate) {
  table().gemm_tn(M, N, K, A, B, C, accumulate);
}
void adam_step(std::size_t n, double* p, const double* g, double* m, double* v,
               double lr, double beta1, double beta2, double eps,
               double bias1, double bias2) {
  table().adam_step(n, p, g, m, v, lr, beta1, beta2, eps, bias1, bias2);
}

const std::string& active_backend() { return table().name; }

}  // namespace langseg::kernels
