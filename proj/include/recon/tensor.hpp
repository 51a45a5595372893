#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace recon {

// Global numeric precision. Storage is always double; in F32 mode every
// kernel rounds its outputs through float so the arithmetic behaves like
// 32-bit end to end.
enum class Precision { F32, F64 };

Precision default_precision();
void set_default_precision(Precision p);

double round_scalar(double v);

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major array. Mostly used as a 2-D matrix: rows() is the first
// extent, cols() the product of the remaining ones.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, double fill = 0.0);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s), 0.0); }
  static Tensor full(std::vector<std::size_t> s, double v) { return Tensor(std::move(s), v); }
  static Tensor scalar(double v);
  static Tensor from_vector(const std::vector<double>& v);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const;

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  // Rounds all entries to the active precision (no-op in F64 mode).
  void quantize();
};

bool all_finite(const Tensor& t);

namespace kernels {

// Parallel/serial kernel selection. The OpenMP variants are the production
// path; the serial ones are the reference implementations used by tests and
// the kernel benchmark.
bool parallel_enabled();
void set_parallel_enabled(bool on);

// C = A * B, A is n x k, B is k x m.
void gemm_nn_serial(const double* a, const double* b, double* c,
                    std::size_t n, std::size_t k, std::size_t m);
void gemm_nn_omp(const double* a, const double* b, double* c,
                 std::size_t n, std::size_t k, std::size_t m);

// C = A^T * B, A is k x n, B is k x m.
void gemm_tn_serial(const double* a, const double* b, double* c,
                    std::size_t n, std::size_t k, std::size_t m);
void gemm_tn_omp(const double* a, const double* b, double* c,
                 std::size_t n, std::size_t k, std::size_t m);

// C = A * B^T, A is n x k, B is m x k.
void gemm_nt_serial(const double* a, const double* b, double* c,
                    std::size_t n, std::size_t k, std::size_t m);
void gemm_nt_omp(const double* a, const double* b, double* c,
                 std::size_t n, std::size_t k, std::size_t m);

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t n, std::size_t k, std::size_t m);

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace recon
