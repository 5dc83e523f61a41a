#include "mvcl/kernels.hpp"

#include <cstdlib>

namespace mvcl::kernels {

namespace scalar {

void add(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void sub(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
}

void mul(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sum(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

}  // namespace scalar



const Dispatch& scalar_table() {
    static const Dispatch t{scalar::add, scalar::sub, scalar::mul, scalar::axpy,
                            scalar::scale, scalar::dot, scalar::sum, "scalar"};
    return t;
}

#ifdef MVCL_HAVE_AVX2_BUILD
const Dispatch& avx2_table() {
    static const Dispatch t{avx2::add, avx2::sub, avx2::mul, avx2::axpy,
                            avx2::scale, avx2::dot, avx2::sum, "avx2"};
    return t;
}
#endif

const Dispatch& active() {
    static const Dispatch* chosen = [] {
        if (const char* force = std::getenv("MVCL_FORCE_SCALAR"); force && force[0] == '1') {
            return &scalar_table();
        }
#ifdef MVCL_HAVE_AVX2_BUILD
        if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
            return &avx2_table();
        }
#endif
        return &scalar_table();
    }();
    return *chosen;
}

void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            axpy(arow[p], b + p * n, crow, n);
        }
    }
}

void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] += dot(arow, b + j * k, k);
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            axpy(arow[p], brow, c + p * n, n);
        }
    }
}

}  // namespace mvcl::kernels
