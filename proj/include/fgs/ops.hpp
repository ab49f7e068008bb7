#pragma once

#include <cmath>
#include <string>

#include "fgs/tensor.hpp"

// Plain tensor kernels shared by the graph ops and by code that works on
// parameters directly (merge, fedavg, SGD).
namespace fgs::ops {

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " expects a matrix, got " + to_string(t.shape()));
}

inline ShapeError mismatch(const char* op, const Tensor& a, const Tensor& b) {
  return ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// a[m,k] * b[k,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw mismatch("matmul", a, b);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * b.at(p, j);
    }
  }
  return out;
}

// a[m,k] * b[n,k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw mismatch("matmul_nt", a, b);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
      out.at(i, j) = s;
    }
  }
  return out;
}

// a[k,m]^T * b[k,n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) throw mismatch("matmul_tn", a, b);
  Tensor out({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const double api = a.at(p, i);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += api * b.at(p, j);
    }
  }
  return out;
}

inline void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) throw mismatch("add", dst, src);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// dst += s * src
inline void axpy(Tensor& dst, double s, const Tensor& src) {
  if (dst.shape() != src.shape()) throw mismatch("axpy", dst, src);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

inline Tensor scaled(const Tensor& t, double s) {
  Tensor out = t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return out;
}

}  // namespace fgs::ops
