// Benchmark of the serial reference kernels against the OpenMP variants.
// Also asserts that both paths agree bitwise on every problem they run,
// which is the property the rest of the library leans on.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "veriloop/common.hpp"
#include "veriloop/kernels.hpp"

using namespace veriloop;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = draw_normal(rng);
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

template <typename Fn>
double time_ms(int reps, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const std::string& name, double serial_ms, double par_ms, bool equal) {
    std::printf("%-22s serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx   %s\n", name.c_str(),
                serial_ms, par_ms, serial_ms / par_ms, equal ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
    std::printf("openmp: %s\n", kernels::openmp_enabled() ? "enabled" : "disabled (serial build)");
    Rng rng = make_rng(0x62656e6368ULL);
    int failures = 0;

    {
        const int rows = 4096, cols = 1024;
        const std::vector<double> w = random_vec(static_cast<std::size_t>(rows) * cols, rng);
        const std::vector<double> x = random_vec(cols, rng);
        std::vector<double> ys(rows), yp(rows);
        const double ts = time_ms(20, [&] { kernels::serial::matvec(w.data(), x.data(), ys.data(), rows, cols); });
        const double tp = time_ms(20, [&] { kernels::par::matvec(w.data(), x.data(), yp.data(), rows, cols); });
        const bool eq = bitwise_equal(ys, yp);
        failures += !eq;
        report("matvec 4096x1024", ts, tp, eq);
    }
    {
        const int rows = 4096, cols = 1024;
        const std::vector<double> w = random_vec(static_cast<std::size_t>(rows) * cols, rng);
        const std::vector<double> x = random_vec(rows, rng);
        std::vector<double> ys(cols), yp(cols);
        const double ts = time_ms(20, [&] { kernels::serial::matvec_t(w.data(), x.data(), ys.data(), rows, cols); });
        const double tp = time_ms(20, [&] { kernels::par::matvec_t(w.data(), x.data(), yp.data(), rows, cols); });
        const bool eq = bitwise_equal(ys, yp);
        failures += !eq;
        report("matvec_t 4096x1024", ts, tp, eq);
    }
    {
        const int m = 384, k = 384, n = 384;
        const std::vector<double> a = random_vec(static_cast<std::size_t>(m) * k, rng);
        const std::vector<double> b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<double> cs(static_cast<std::size_t>(m) * n), cp(cs.size());
        const double ts = time_ms(5, [&] { kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n); });
        const double tp = time_ms(5, [&] { kernels::par::matmul(a.data(), b.data(), cp.data(), m, k, n); });
        const bool eq = bitwise_equal(cs, cp);
        failures += !eq;
        report("matmul 384^3", ts, tp, eq);
    }
    {
        const std::size_t n = 1 << 22;
        const std::vector<double> x = random_vec(n, rng);
        const std::vector<double> y = random_vec(n, rng);
        double ds = 0.0, dp = 0.0;
        const double ts = time_ms(20, [&] { ds = kernels::serial::dot(x.data(), y.data(), n); });
        const double tp = time_ms(20, [&] { dp = kernels::par::dot(x.data(), y.data(), n); });
        const bool eq = std::memcmp(&ds, &dp, sizeof(double)) == 0;
        failures += !eq;
        report("dot 4M", ts, tp, eq);
    }
    {
        const int rows = 2048, cols = 2048;
        const std::vector<double> u = random_vec(rows, rng);
        const std::vector<double> v = random_vec(cols, rng);
        std::vector<double> ws(static_cast<std::size_t>(rows) * cols, 0.0), wp = ws;
        const double ts = time_ms(10, [&] { kernels::serial::rank1_update(ws.data(), 0.5, u.data(), v.data(), rows, cols); });
        const double tp = time_ms(10, [&] { kernels::par::rank1_update(wp.data(), 0.5, u.data(), v.data(), rows, cols); });
        const bool eq = bitwise_equal(ws, wp);
        failures += !eq;
        report("rank1 2048x2048", ts, tp, eq);
    }

    if (failures) {
        std::fprintf(stderr, "error: %d kernel(s) disagreed with the serial reference\n",
                     failures);
        return 1;
    }
    return 0;
}
