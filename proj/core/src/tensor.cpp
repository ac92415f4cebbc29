#include "dilocox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dilocox {

namespace {

int64_t shape_count(const std::vector<int64_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

void require_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw ShapeError(std::string(who) + ": expected a 2-D tensor");
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_count(shape_)), 0.0f);
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<float> values) {
  const int64_t n = shape_count(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw ShapeError("element count does not match shape");
  for (float v : values)
    if (!std::isfinite(v)) throw ValidationError("tensor values must be finite");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, float lo, float hi, RngStream& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data_) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::gaussian(std::vector<int64_t> shape, RngStream& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data_) v = rng.normal();
  return t;
}

Tensor Tensor::identity(int64_t n) {
  Tensor t({n, n});
  for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

// All kernels accumulate each output element in float64 over ascending k, so
// results match a naive triple loop bit for bit regardless of the blocking.

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions disagree");
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  constexpr int64_t kRowBlock = 4;  // stream B once per row block
  std::vector<double> acc(static_cast<size_t>(kRowBlock * n));
  for (int64_t i0 = 0; i0 < m; i0 += kRowBlock) {
    const int64_t rows = std::min(kRowBlock, m - i0);
    std::fill(acc.begin(), acc.begin() + rows * n, 0.0);
    for (int64_t p = 0; p < k; ++p) {
      const float* brow = b.data() + p * n;
      for (int64_t t = 0; t < rows; ++t) {
        const double av = static_cast<double>(a.data()[(i0 + t) * k + p]);
        double* dst = acc.data() + t * n;
        for (int64_t j = 0; j < n; ++j) dst[j] += av * static_cast<double>(brow[j]);
      }
    }
    for (int64_t t = 0; t < rows; ++t) {
      float* crow = c.data() + (i0 + t) * n;
      const double* src = acc.data() + t * n;
      for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(src[j]);
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_tn");
  require_2d(b, "matmul_tn");
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: leading dimensions disagree");
  const int64_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c({m, n});
  if (k <= 8) {
    // Rank-k update (backward dW with a small batch): no big accumulator.
    std::vector<double> acc(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int64_t p = 0; p < k; ++p) {
        const double av = static_cast<double>(a.data()[p * m + i]);
        const float* brow = b.data() + p * n;
        for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
      }
      float* crow = c.data() + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }
    return c;
  }
  std::vector<double> acc(static_cast<size_t>(m * n), 0.0);
  for (int64_t p = 0; p < k; ++p) {
    const float* arow = a.data() + p * m;
    const float* brow = b.data() + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = static_cast<double>(arow[i]);
      double* dst = acc.data() + i * n;
      for (int64_t j = 0; j < n; ++j) dst[j] += av * static_cast<double>(brow[j]);
    }
  }
  for (int64_t i = 0; i < m * n; ++i) c[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: trailing dimensions disagree");
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  constexpr int64_t kRowBlock = 4;
  for (int64_t i0 = 0; i0 < m; i0 += kRowBlock) {
    const int64_t rows = std::min(kRowBlock, m - i0);
    // One pass over B; each output keeps its own sequential k accumulator.
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b.data() + j * k;
      double acc[kRowBlock] = {0.0, 0.0, 0.0, 0.0};
      for (int64_t p = 0; p < k; ++p) {
        const double bv = static_cast<double>(brow[p]);
        for (int64_t t = 0; t < rows; ++t)
          acc[t] += static_cast<double>(a.data()[(i0 + t) * k + p]) * bv;
      }
      for (int64_t t = 0; t < rows; ++t) c.data()[(i0 + t) * n + j] = static_cast<float>(acc[t]);
    }
  }
  return c;
}

Tensor transpose(const Tensor& m) {
  require_2d(m, "transpose");
  const int64_t r = m.rows(), c = m.cols();
  Tensor t({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) t.at(j, i) = m.at(i, j);
  return t;
}

double frobenius_norm_sq(const Tensor& m) { return frobenius_norm_sq(m.values()); }

double frobenius_norm_sq(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return s;
}

OrthoResult orthonormalize(const Tensor& m) {
  require_2d(m, "orthonormalize");
  const int64_t n = m.rows(), r = m.cols();
  if (n < r) throw ShapeError("orthonormalize: need rows >= cols");

  // Work column-major in double.
  std::vector<std::vector<double>> col(static_cast<size_t>(r), std::vector<double>(static_cast<size_t>(n)));
  double max_norm = 0.0;
  for (int64_t j = 0; j < r; ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(m.at(i, j));
      col[static_cast<size_t>(j)][static_cast<size_t>(i)] = v;
      s += v * v;
    }
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  const double dep_tol = 1e-7 * std::max(1.0, max_norm);

  OrthoResult out;
  for (int64_t j = 0; j < r; ++j) {
    auto& cj = col[static_cast<size_t>(j)];
    for (int attempt = 0;; ++attempt) {
      // Two Gram-Schmidt passes against the already-fixed columns.
      for (int pass = 0; pass < 2; ++pass) {
        for (int64_t p = 0; p < j; ++p) {
          const auto& cp = col[static_cast<size_t>(p)];
          double dot = 0.0;
          for (int64_t i = 0; i < n; ++i) dot += cj[static_cast<size_t>(i)] * cp[static_cast<size_t>(i)];
          for (int64_t i = 0; i < n; ++i) cj[static_cast<size_t>(i)] -= dot * cp[static_cast<size_t>(i)];
        }
      }
      double norm = 0.0;
      for (double v : cj) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > dep_tol) {
        const double inv = 1.0 / norm;
        for (double& v : cj) v *= inv;
        break;
      }
      // Dependent (or zero) column: substitute a seeded random direction.
      RngStream rng(0x5eedc01u, stream_key({static_cast<uint64_t>(n), static_cast<uint64_t>(r),
                                            static_cast<uint64_t>(j), static_cast<uint64_t>(attempt)}));
      for (int64_t i = 0; i < n; ++i) cj[static_cast<size_t>(i)] = static_cast<double>(rng.uniform(-1.0f, 1.0f));
      if (attempt == 0) ++out.replaced_columns;
    }
  }

  out.q = Tensor({n, r});
  for (int64_t j = 0; j < r; ++j)
    for (int64_t i = 0; i < n; ++i)
      out.q.at(i, j) = static_cast<float>(col[static_cast<size_t>(j)][static_cast<size_t>(i)]);
  return out;
}

namespace {

// Householder reduction of a symmetric matrix to tridiagonal form
// (eigenvalues only), followed by implicit-shift QL. Classic dense
// formulation; everything in double with fixed loop order.
void tridiagonalize(std::vector<double>& a, int n, std::vector<double>& d, std::vector<double>& e) {
  auto A = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  d.assign(static_cast<size_t>(n), 0.0);
  e.assign(static_cast<size_t>(n), 0.0);
  for (int i = n - 1; i >= 1; --i) {
    const int l = i - 1;
    double h = 0.0, scale = 0.0;
    if (l > 0) {
      for (int k = 0; k <= l; ++k) scale += std::fabs(A(i, k));
      if (scale == 0.0) {
        e[static_cast<size_t>(i)] = A(i, l);
      } else {
        for (int k = 0; k <= l; ++k) {
          A(i, k) /= scale;
          h += A(i, k) * A(i, k);
        }
        double f = A(i, l);
        double g = (f >= 0.0) ? -std::sqrt(h) : std::sqrt(h);
        e[static_cast<size_t>(i)] = scale * g;
        h -= f * g;
        A(i, l) = f - g;
        f = 0.0;
        for (int j = 0; j <= l; ++j) {
          g = 0.0;
          for (int k = 0; k <= j; ++k) g += A(j, k) * A(i, k);
          for (int k = j + 1; k <= l; ++k) g += A(k, j) * A(i, k);
          e[static_cast<size_t>(j)] = g / h;
          f += e[static_cast<size_t>(j)] * A(i, j);
        }
        const double hh = f / (h + h);
        for (int j = 0; j <= l; ++j) {
          f = A(i, j);
          e[static_cast<size_t>(j)] = g = e[static_cast<size_t>(j)] - hh * f;
          for (int k = 0; k <= j; ++k) A(j, k) -= f * e[static_cast<size_t>(k)] + g * A(i, k);
        }
      }
    } else {
      e[static_cast<size_t>(i)] = A(i, l);
    }
    d[static_cast<size_t>(i)] = h;
  }
  for (int i = 0; i < n; ++i) d[static_cast<size_t>(i)] = A(i, i);
}

void ql_implicit(std::vector<double>& d, std::vector<double>& e, int n) {
  auto sign = [](double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); };
  for (int i = 1; i < n; ++i) e[static_cast<size_t>(i - 1)] = e[static_cast<size_t>(i)];
  e[static_cast<size_t>(n - 1)] = 0.0;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::fabs(d[static_cast<size_t>(m)]) + std::fabs(d[static_cast<size_t>(m + 1)]);
        if (std::fabs(e[static_cast<size_t>(m)]) <= 1e-300 + 2.3e-16 * dd) break;
      }
      if (m != l) {
        if (++iter == 64) throw NumericError("eigenvalue iteration failed to converge");
        double g = (d[static_cast<size_t>(l + 1)] - d[static_cast<size_t>(l)]) / (2.0 * e[static_cast<size_t>(l)]);
        double r = std::hypot(g, 1.0);
        g = d[static_cast<size_t>(m)] - d[static_cast<size_t>(l)] + e[static_cast<size_t>(l)] / (g + sign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        for (int i = m - 1; i >= l; --i) {
          double f = s * e[static_cast<size_t>(i)];
          const double b = c * e[static_cast<size_t>(i)];
          r = std::hypot(f, g);
          e[static_cast<size_t>(i + 1)] = r;
          if (r == 0.0) {
            d[static_cast<size_t>(i + 1)] -= p;
            e[static_cast<size_t>(m)] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[static_cast<size_t>(i + 1)] - p;
          r = (d[static_cast<size_t>(i)] - g) * s + 2.0 * c * b;
          p = s * r;
          d[static_cast<size_t>(i + 1)] = g + p;
          g = c * r - b;
        }
        if (r == 0.0 && m - 1 >= l) continue;
        d[static_cast<size_t>(l)] -= p;
        e[static_cast<size_t>(l)] = g;
        e[static_cast<size_t>(m)] = 0.0;
      }
    } while (m != l);
  }
}

}  // namespace

std::vector<double> singular_values(const Tensor& m) {
  require_2d(m, "singular_values");
  const int64_t a = m.rows(), b = m.cols();
  const int n = static_cast<int>(std::min(a, b));

  // Gram matrix on the smaller side, double accumulation.
  std::vector<double> gram(static_cast<size_t>(n) * n, 0.0);
  if (a <= b) {
    for (int64_t i = 0; i < a; ++i)
      for (int64_t j = 0; j <= i; ++j) {
        double s = 0.0;
        const float* ri = m.data() + i * b;
        const float* rj = m.data() + j * b;
        for (int64_t k = 0; k < b; ++k) s += static_cast<double>(ri[k]) * static_cast<double>(rj[k]);
        gram[static_cast<size_t>(i) * n + j] = s;
        gram[static_cast<size_t>(j) * n + i] = s;
      }
  } else {
    for (int64_t p = 0; p < a; ++p) {
      const float* row = m.data() + p * b;
      for (int64_t i = 0; i < b; ++i) {
        const double v = static_cast<double>(row[i]);
        double* dst = gram.data() + i * n;
        for (int64_t j = 0; j <= i; ++j) dst[j] += v * static_cast<double>(row[j]);
      }
    }
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) gram[static_cast<size_t>(i) * n + j] = gram[static_cast<size_t>(j) * n + i];
  }

  std::vector<double> d, e;
  tridiagonalize(gram, n, d, e);
  ql_implicit(d, e, n);
  std::sort(d.begin(), d.end(), std::greater<double>());
  for (double& v : d) v = std::sqrt(std::max(0.0, v));
  return d;
}

}  // namespace dilocox
