#pragma once

// Dense double-precision inner-loop kernels. Scalar reference
// implementations plus AVX2 variants selected once at startup.
// All higher-level tensor ops route through this dispatch table.

#include <cstddef>

namespace mvcl::kernels {

struct Dispatch {
    // z[i] = x[i] + y[i]
    void (*add)(const double* x, const double* y, double* z, std::size_t n);
    // z[i] = x[i] - y[i]
    void (*sub)(const double* x, const double* y, double* z, std::size_t n);
    // z[i] = x[i] * y[i]
    void (*mul)(const double* x, const double* y, double* z, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // y[i] = a * x[i]
    void (*scale)(double a, const double* x, double* y, std::size_t n);
    // sum_i x[i] * y[i]
    double (*dot)(const double* x, const double* y, std::size_t n);
    // sum_i x[i]
    double (*sum)(const double* x, std::size_t n);
    const char* name;
};

// Scalar reference kernels (always available; the equivalence baseline).
namespace scalar {
void add(const double* x, const double* y, double* z, std::size_t n);
void sub(const double* x, const double* y, double* z, std::size_t n);
void mul(const double* x, const double* y, double* z, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, const double* x, double* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define MVCL_HAVE_AVX2_BUILD 1
namespace avx2 {
void add(const double* x, const double* y, double* z, std::size_t n);
void sub(const double* x, const double* y, double* z, std::size_t n);
void mul(const double* x, const double* y, double* z, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, const double* x, double* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace avx2
#endif

const Dispatch& scalar_table();
#ifdef MVCL_HAVE_AVX2_BUILD
const Dispatch& avx2_table();
#endif

// Active table, chosen at first use from CPUID (MVCL_FORCE_SCALAR=1 in the
// environment pins the scalar path).
const Dispatch& active();

inline void add(const double* x, const double* y, double* z, std::size_t n) { active().add(x, y, z, n); }
inline void sub(const double* x, const double* y, double* z, std::size_t n) { active().sub(x, y, z, n); }
inline void mul(const double* x, const double* y, double* z, std::size_t n) { active().mul(x, y, z, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { active().axpy(a, x, y, n); }
inline void scale(double a, const double* x, double* y, std::size_t n) { active().scale(a, x, y, n); }
inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline double sum(const double* x, std::size_t n) { return active().sum(x, n); }

// C[m x n] += A[m x k] * B[k x n], row-major. Uses axpy over rows of B.
void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n);

// C[m x n] += A[m x k] * B[n x k]^T, row-major. Uses dot over rows.
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

// C[k x n] += A[m x k]^T * B[m x n], row-major.
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

}  // namespace mvcl::kernels
