#include "mspk/kernels.hpp"

#include <cmath>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mspk {
namespace kernels {

namespace {
bool g_parallel = true;
}

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel_enabled() { return g_parallel; }

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

inline std::size_t op_rows(const Tensor& t, bool trans) {
  return trans ? t.cols : t.rows;
}
inline std::size_t op_cols(const Tensor& t, bool trans) {
  return trans ? t.rows : t.cols;
}
inline double op_at(const Tensor& t, bool trans, std::size_t i,
                    std::size_t j) {
  return trans ? t.at(j, i) : t.at(i, j);
}

void gemm_row(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c,
              bool accumulate, std::size_t i, std::size_t n, std::size_t k) {
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    if (!ta && !tb) {
      const double* ap = a.row_ptr(i);
      for (std::size_t l = 0; l < k; ++l) acc += ap[l] * b.at(l, j);
    } else {
      for (std::size_t l = 0; l < k; ++l)
        acc += op_at(a, ta, i, l) * op_at(b, tb, l, j);
    }
    if (accumulate)
      c.at(i, j) += acc;
    else
      c.at(i, j) = acc;
  }
}

void gemm_impl(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c,
               bool accumulate) {
  const std::size_t m = op_rows(a, ta);
  const std::size_t k = op_cols(a, ta);
  const std::size_t n = op_cols(b, tb);
  if (op_rows(b, tb) != k)
    throw NumericError("gemm: inner dimension mismatch " + std::to_string(k) +
                       " vs " + std::to_string(op_rows(b, tb)));
  if (c.rows != m || c.cols != n) {
    if (accumulate) throw NumericError("gemm_acc: output shape mismatch");
    c = Tensor(m, n);
  }
  if (g_parallel && m * n * k > 16384) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(m); ++i)
      gemm_row(a, ta, b, tb, c, accumulate, static_cast<std::size_t>(i), n, k);
  } else {
    for (std::size_t i = 0; i < m; ++i)
      gemm_row(a, ta, b, tb, c, accumulate, i, n, k);
  }
}

void affinity_row(const Tensor& e, Tensor& out,
                  const std::vector<double>& norms, std::size_t i) {
  const std::size_t n = e.rows;
  const std::size_t d = e.cols;
  const double* ei = e.row_ptr(i);
  for (std::size_t j = 0; j < n; ++j) {
    const double* ej = e.row_ptr(j);
    double dot = 0.0;
    for (std::size_t l = 0; l < d; ++l) dot += ei[l] * ej[l];
    out.at(i, j) = dot / (norms[i] * norms[j]);
  }
}

void affinity_impl(const Tensor& e, Tensor& out, bool parallel) {
  const std::size_t n = e.rows;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* p = e.row_ptr(i);
    for (std::size_t l = 0; l < e.cols; ++l) s += p[l] * p[l];
    if (s <= 0.0)
      throw NumericError("cosine_affinity: zero-norm embedding at row " +
                         std::to_string(i));
    norms[i] = std::sqrt(s);
  }
  out = Tensor(n, n);
  if (parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      affinity_row(e, out, norms, static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) affinity_row(e, out, norms, i);
  }
  // exact symmetry by averaging with the transpose
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = 0.5 * (out.at(i, j) + out.at(j, i));
      out.at(i, j) = v;
      out.at(j, i) = v;
    }
  for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
}

}  // namespace

void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
  gemm_impl(a, ta, b, tb, c, false);
}

void gemm_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
  gemm_impl(a, ta, b, tb, c, true);
}

void cosine_affinity_matrix(const Tensor& e, Tensor& out) {
  affinity_impl(e, out, g_parallel);
}

namespace serial {

void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c,
          bool accumulate) {
  bool saved = g_parallel;
  g_parallel = false;
  try {
    gemm_impl(a, ta, b, tb, c, accumulate);
  } catch (...) {
    g_parallel = saved;
    throw;
  }
  g_parallel = saved;
}

void cosine_affinity_matrix(const Tensor& e, Tensor& out) {
  affinity_impl(e, out, false);
}

}  // namespace serial

}  // namespace kernels
}  // namespace mspk
