#ifndef MSPK_KERNELS_HPP
#define MSPK_KERNELS_HPP

#include <cstddef>

#include "mspk/tensor.hpp"

namespace mspk {
namespace kernels {

// Global switch between the OpenMP kernels and the serial reference.
// Parallelization is over output rows with a fixed per-element reduction
// order, so both paths produce bit-identical results.
void set_parallel(bool enabled);
bool parallel_enabled();
void set_num_threads(int n);

// C = op(A) * op(B), op = transpose when the flag is set.
// Shapes after op: A is m x k, B is k x n, C is m x n.
void gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b,
          Tensor& c);

// C += op(A) * op(B)
void gemm_acc(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b,
              Tensor& c);

// Pairwise cosine similarity between rows of e (n x d) -> n x n.
// Throws NumericError on a zero-norm row.
void cosine_affinity_matrix(const Tensor& e, Tensor& out);

// Serial reference implementations, kept for the equivalence tests and the
// benchmark target.
namespace serial {
void gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b,
          Tensor& c, bool accumulate);
void cosine_affinity_matrix(const Tensor& e, Tensor& out);
}  // namespace serial

}  // namespace kernels
}  // namespace mspk

#endif
