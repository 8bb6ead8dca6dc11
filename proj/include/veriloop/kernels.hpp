#pragma once
// Dense numeric kernels. Two implementations ship side by side:
//
//   kernels::serial — plain reference loops, kept as the ground truth for
//                     bitwise comparisons in tests and benchmarks;
//   kernels::par    — OpenMP variants that parallelize only across
//                     independent output elements, or across fixed-size
//                     chunks whose partial sums are combined serially in
//                     chunk order.
//
// Both paths run the same inner arithmetic in the same order per output, so
// results are bitwise identical for any thread count. The unqualified entry
// points dispatch to the parallel path when OpenMP is compiled in and the
// problem is large enough to pay for the fork.

#include <cstddef>

namespace veriloop::kernels {

// Fixed chunk size for order-stable reductions. Partial sums are always
// combined in ascending chunk order, so the result does not depend on how
// chunks are scheduled across threads.
inline constexpr std::size_t kReduceChunk = 4096;

// Minimum number of element-ops before the dispatcher bothers with threads.
inline constexpr std::size_t kParThreshold = 32 * 1024;

namespace serial {

// y = W x, W row-major rows x cols.
void matvec(const double* w, const double* x, double* y, int rows, int cols);

// y = W^T x, W row-major rows x cols; y has cols entries.
void matvec_t(const double* w, const double* x, double* y, int rows, int cols);

// C = A B with A m x k, B k x n, all row-major.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// y += alpha * x.
void axpy(double alpha, const double* x, double* y, std::size_t n);

// y *= alpha.
void scale(double alpha, double* y, std::size_t n);

// W += alpha * u v^T, W row-major rows x cols.
void rank1_update(double* w, double alpha, const double* u, const double* v, int rows,
                  int cols);

// Order-stable reductions (fixed-size chunks combined in chunk order).
double dot(const double* x, const double* y, std::size_t n);
double sum_squares(const double* x, std::size_t n);

}  // namespace serial

namespace par {

void matvec(const double* w, const double* x, double* y, int rows, int cols);
void matvec_t(const double* w, const double* x, double* y, int rows, int cols);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* y, std::size_t n);
void rank1_update(double* w, double alpha, const double* u, const double* v, int rows,
                  int cols);
double dot(const double* x, const double* y, std::size_t n);
double sum_squares(const double* x, std::size_t n);

}  // namespace par

// Dispatching entry points used by the library's hot paths.
void matvec(const double* w, const double* x, double* y, int rows, int cols);
void matvec_t(const double* w, const double* x, double* y, int rows, int cols);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* y, std::size_t n);
void rank1_update(double* w, double alpha, const double* u, const double* v, int rows,
                  int cols);
double dot(const double* x, const double* y, std::size_t n);
double sum_squares(const double* x, std::size_t n);

// True when the library was built with OpenMP support.
bool openmp_enabled();

}  // namespace veriloop::kernels
