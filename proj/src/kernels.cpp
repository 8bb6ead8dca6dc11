#include "veriloop/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace veriloop::kernels {

namespace detail {

// One output element of a matvec / matmul. Shared by the serial and parallel
// paths so both run identical arithmetic in identical order.
inline double row_dot(const double* a, const double* x, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * x[i];
    return acc;
}

inline double col_dot(const double* w, const double* x, int rows, int cols, int j) {
    double acc = 0.0;
    for (int i = 0; i < rows; ++i) acc += w[static_cast<std::size_t>(i) * cols + j] * x[i];
    return acc;
}

// Partial sums over fixed-size chunks, combined in ascending chunk order.
// The chunk loop is what gets parallelized; the combine stays serial.
template <typename ChunkFn>
double chunked_reduce_serial(std::size_t n, ChunkFn&& chunk) {
    const std::size_t n_chunks = (n + kReduceChunk - 1) / kReduceChunk;
    double total = 0.0;
    for (std::size_t c = 0; c < n_chunks; ++c) total += chunk(c);
    return total;
}

template <typename ChunkFn>
double chunked_reduce_par(std::size_t n, ChunkFn&& chunk) {
    const std::size_t n_chunks = (n + kReduceChunk - 1) / kReduceChunk;
    std::vector<double> partial(n_chunks, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long c = 0; c < static_cast<long long>(n_chunks); ++c)
        partial[static_cast<std::size_t>(c)] = chunk(static_cast<std::size_t>(c));
    double total = 0.0;
    for (std::size_t c = 0; c < n_chunks; ++c) total += partial[c];
    return total;
}

inline double dot_chunk(const double* x, const double* y, std::size_t n, std::size_t c) {
    const std::size_t lo = c * kReduceChunk;
    const std::size_t hi = std::min(n, lo + kReduceChunk);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += x[i] * y[i];
    return acc;
}

inline double sq_chunk(const double* x, std::size_t n, std::size_t c) {
    const std::size_t lo = c * kReduceChunk;
    const std::size_t hi = std::min(n, lo + kReduceChunk);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += x[i] * x[i];
    return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------

namespace serial {

void matvec(const double* w, const double* x, double* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        y[r] = detail::row_dot(w + static_cast<std::size_t>(r) * cols, x, cols);
}

void matvec_t(const double* w, const double* x, double* y, int rows, int cols) {
    for (int j = 0; j < cols; ++j) y[j] = detail::col_dot(w, x, rows, cols, j);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = detail::col_dot(b, arow, k, n, j);
    }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale(double alpha, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] *= alpha;
}

void rank1_update(double* w, double alpha, const double* u, const double* v, int rows,
                  int cols) {
    for (int r = 0; r < rows; ++r) {
        double* wrow = w + static_cast<std::size_t>(r) * cols;
        const double au = alpha * u[r];
        for (int j = 0; j < cols; ++j) wrow[j] += au * v[j];
    }
}

double dot(const double* x, const double* y, std::size_t n) {
    return detail::chunked_reduce_serial(
        n, [&](std::size_t c) { return detail::dot_chunk(x, y, n, c); });
}

double sum_squares(const double* x, std::size_t n) {
    return detail::chunked_reduce_serial(
        n, [&](std::size_t c) { return detail::sq_chunk(x, n, c); });
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP implementations. Each parallel loop iterates over independent output
// elements (or independent chunks), running the exact inner loops above.
// ---------------------------------------------------------------------------

namespace par {

void matvec(const double* w, const double* x, double* y, int rows, int cols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int r = 0; r < rows; ++r)
        y[r] = detail::row_dot(w + static_cast<std::size_t>(r) * cols, x, cols);
}

void matvec_t(const double* w, const double* x, double* y, int rows, int cols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int j = 0; j < cols; ++j) y[j] = detail::col_dot(w, x, rows, cols, j);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = detail::col_dot(b, arow, k, n, j);
    }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, double* y, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] *= alpha;
}

void rank1_update(double* w, double alpha, const double* u, const double* v, int rows,
                  int cols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int r = 0; r < rows; ++r) {
        double* wrow = w + static_cast<std::size_t>(r) * cols;
        const double au = alpha * u[r];
        for (int j = 0; j < cols; ++j) wrow[j] += au * v[j];
    }
}

double dot(const double* x, const double* y, std::size_t n) {
    return detail::chunked_reduce_par(
        n, [&](std::size_t c) { return detail::dot_chunk(x, y, n, c); });
}

double sum_squares(const double* x, std::size_t n) {
    return detail::chunked_reduce_par(
        n, [&](std::size_t c) { return detail::sq_chunk(x, n, c); });
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatch.
// ---------------------------------------------------------------------------

bool openmp_enabled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

namespace {

inline bool worth_threads(std::size_t ops) {
#ifdef _OPENMP
    return ops >= kParThreshold;
#else
    (void)ops;
    return false;
#endif
}

}  // namespace

void matvec(const double* w, const double* x, double* y, int rows, int cols) {
    const std::size_t ops = static_cast<std::size_t>(rows) * cols;
    if (worth_threads(ops))
        par::matvec(w, x, y, rows, cols);
    else
        serial::matvec(w, x, y, rows, cols);
}

void matvec_t(const double* w, const double* x, double* y, int rows, int cols) {
    const std::size_t ops = static_cast<std::size_t>(rows) * cols;
    if (worth_threads(ops))
        par::matvec_t(w, x, y, rows, cols);
    else
        serial::matvec_t(w, x, y, rows, cols);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    const std::size_t ops = static_cast<std::size_t>(m) * k * n;
    if (worth_threads(ops))
        par::matmul(a, b, c, m, k, n);
    else
        serial::matmul(a, b, c, m, k, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    if (worth_threads(n))
        par::axpy(alpha, x, y, n);
    else
        serial::axpy(alpha, x, y, n);
}

void scale(double alpha, double* y, std::size_t n) {
    if (worth_threads(n))
        par::scale(alpha, y, n);
    else
        serial::scale(alpha, y, n);
}

void rank1_update(double* w, double alpha, const double* u, const double* v, int rows,
                  int cols) {
    const std::size_t ops = static_cast<std::size_t>(rows) * cols;
    if (worth_threads(ops))
        par::rank1_update(w, alpha, u, v, rows, cols);
    else
        serial::rank1_update(w, alpha, u, v, rows, cols);
}

double dot(const double* x, const double* y, std::size_t n) {
    if (worth_threads(n))
        return par::dot(x, y, n);
    return serial::dot(x, y, n);
}

double sum_squares(const double* x, std::size_t n) {
    if (worth_threads(n))
        return par::sum_squares(x, n);
    return serial::sum_squares(x, n);
}

}  // namespace veriloop::kernels
