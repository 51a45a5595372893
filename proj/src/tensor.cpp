#include "recon/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace recon {

namespace {
Precision g_precision = Precision::F64;
bool g_parallel = true;
}  // namespace

Precision default_precision() { return g_precision; }
void set_default_precision(Precision p) { g_precision = p; }

double round_scalar(double v) {
  if (g_precision == Precision::F32) return static_cast<double>(static_cast<float>(v));
  return v;
}

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  data.assign(n, fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::from_vector(const std::vector<double>& v) {
  Tensor t({v.size()});
  t.data = v;
  return t;
}

std::size_t Tensor::cols() const {
  if (shape.size() <= 1) return shape.empty() ? 1 : shape[0];
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
  return c;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void Tensor::quantize() {
  if (g_precision != Precision::F32) return;
  for (double& v : data) v = static_cast<double>(static_cast<float>(v));
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace kernels {

bool parallel_enabled() { return g_parallel; }
void set_parallel_enabled(bool on) { g_parallel = on; }

void gemm_nn_serial(const double* a, const double* b, double* c,
                    std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = 0.0;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nn_omp(const double* a, const double* b, double* c,
                 std::size_t n, std::size_t k, std::size_t m) {
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = 0.0;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn_serial(const double* a, const double* b, double* c,
                    std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n * m; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * n;
    const double* bp = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ap[i];
      double* ci = c + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn_omp(const double* a, const double* b, double* c,
                 std::size_t n, std::size_t k, std::size_t m) {
  // Each thread owns a contiguous row range of C, so results do not depend
  // on the schedule.
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * n + i];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt_serial(const double* a, const double* b, double* c,
                    std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void gemm_nt_omp(const double* a, const double* b, double* c,
                 std::size_t n, std::size_t k, std::size_t m) {
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t n, std::size_t k, std::size_t m) {
  if (g_parallel) gemm_nn_omp(a, b, c, n, k, m);
  else gemm_nn_serial(a, b, c, n, k, m);
}

void gemm_tn(const double* a, const double* b, double* c,
             std::size_t n, std::size_t k, std::size_t m) {
  if (g_parallel) gemm_tn_omp(a, b, c, n, k, m);
  else gemm_tn_serial(a, b, c, n, k, m);
}

void gemm_nt(const double* a, const double* b, double* c,
             std::size_t n, std::size_t k, std::size_t m) {
  if (g_parallel) gemm_nt_omp(a, b, c, n, k, m);
  else gemm_nt_serial(a, b, c, n, k, m);
}

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw TensorError("matmul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor c({a.rows(), b.cols()});
  kernels::gemm_nn(a.data.data(), b.data.data(), c.data.data(), a.rows(), a.cols(), b.cols());
  c.quantize();
  return c;
}

}  // namespace recon
