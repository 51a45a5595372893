// Compares the serial reference GEMM kernels against the OpenMP variants:
// correctness (max abs difference) and wall time over repeated runs.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "recon/tensor.hpp"

using recon::kernels::gemm_nn_omp;
using recon::kernels::gemm_nn_serial;
using recon::kernels::gemm_nt_omp;
using recon::kernels::gemm_nt_serial;
using recon::kernels::gemm_tn_omp;
using recon::kernels::gemm_tn_serial;

namespace {

using Kernel = void (*)(const double*, const double*, double*, std::size_t, std::size_t,
                        std::size_t);

double time_ms(const std::function<void()>& f, int reps) {
  f();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void bench_pair(const char* name, Kernel serial, Kernel omp, std::size_t n, std::size_t k,
                std::size_t m, int reps) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> a(n * k), b(k * m), cs(n * m), cp(n * m);
  for (double& v : a) v = dist(rng);
  for (double& v : b) v = dist(rng);

  serial(a.data(), b.data(), cs.data(), n, k, m);
  omp(a.data(), b.data(), cp.data(), n, k, m);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < cs.size(); ++i)
    max_diff = std::max(max_diff, std::fabs(cs[i] - cp[i]));

  const double ts = time_ms([&] { serial(a.data(), b.data(), cs.data(), n, k, m); }, reps);
  const double tp = time_ms([&] { omp(a.data(), b.data(), cp.data(), n, k, m); }, reps);
  std::printf("%-8s %4zux%4zux%4zu  serial %8.3f ms  omp %8.3f ms  speedup %5.2fx  max|diff| %.3e\n",
              name, n, k, m, ts, tp, ts / tp, max_diff);
}

}  // namespace

int main() {
  struct Case {
    std::size_t n, k, m;
    int reps;
  };
  const Case cases[] = {{64, 64, 64, 200}, {256, 256, 256, 20}, {512, 512, 512, 5},
                        {2048, 128, 64, 20}, {128, 2048, 64, 20}};
  for (const Case& c : cases) {
    bench_pair("gemm_nn", gemm_nn_serial, gemm_nn_omp, c.n, c.k, c.m, c.reps);
    bench_pair("gemm_tn", gemm_tn_serial, gemm_tn_omp, c.n, c.k, c.m, c.reps);
    bench_pair("gemm_nt", gemm_nt_serial, gemm_nt_omp, c.n, c.k, c.m, c.reps);
  }
  return 0;
}
