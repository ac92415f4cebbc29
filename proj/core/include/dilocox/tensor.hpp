#pragma once

#include <cstdint>
#include <vector>

#include "dilocox/errors.hpp"
#include "dilocox/rng.hpp"

namespace dilocox {

// Dense row-major float32 tensor. Reductions that feed back into stored
// values run with float64 accumulators in a fixed element order, so results
// are reproducible bit-for-bit across runs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  // Validates shape/count agreement and rejects NaN/Inf (external inputs).
  static Tensor from_data(std::vector<int64_t> shape, std::vector<float> values);
  static Tensor uniform(std::vector<int64_t> shape, float lo, float hi, RngStream& rng);
  static Tensor gaussian(std::vector<int64_t> shape, RngStream& rng);
  static Tensor identity(int64_t n);

  const std::vector<int64_t>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t rows() const { return shape_[0]; }
  int64_t cols() const { return shape_[1]; }

  float& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols() + j)]; }
  float at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * cols() + j)]; }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

 private:
  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

// C = A[m,k] * B[k,n]. Inner sums accumulate in float64, k ascending.
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A^T * B with A[k,m], B[k,n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// C = A * B^T with A[m,k], B[n,k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

struct OrthoResult {
  Tensor q;
  int replaced_columns = 0;  // rank-deficient columns replaced by seeded random ones
};

// Column orthonormalization (modified Gram-Schmidt with reorthogonalization).
// Input n x r with n >= r; dependent columns are swapped for fresh seeded
// random directions and the status reports how many.
OrthoResult orthonormalize(const Tensor& m);

// Singular values of a 2-D tensor, descending, via the eigenvalues of the
// smaller Gram matrix (Householder tridiagonalization + implicit-shift QL).
std::vector<double> singular_values(const Tensor& m);

double frobenius_norm_sq(const Tensor& m);
double frobenius_norm_sq(const std::vector<float>& v);

}  // namespace dilocox
