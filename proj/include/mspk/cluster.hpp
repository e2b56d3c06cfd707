#ifndef MSPK_CLUSTER_HPP
#define MSPK_CLUSTER_HPP

#include <cstdint>
#include <vector>

#include "mspk/tensor.hpp"

namespace mspk {

// Cosine affinity between rows of an n x d embedding matrix; symmetric,
// unit diagonal. Throws NumericError on a zero-norm row.
Tensor cosine_affinity(const Tensor& embeddings);

// Per row keep the p largest off-diagonal entries as 1 (ties broken toward
// the lower column index), keep the diagonal, then symmetrize as
// (B + B^T) / 2. Entries are in {0, 0.5, 1}.
Tensor binarize_affinity(const Tensor& a, int p);

// Jacobi rotation eigensolver for symmetric matrices: eigenvalues ascending,
// eigenvectors as columns of `vectors`.
void eigh_symmetric(const Tensor& m, std::vector<double>& values,
                    Tensor& vectors);

struct NmeResult {
  int best_p = 0;
  int k_est = 1;
  std::vector<int> p_grid;
  std::vector<double> g_p;    // normalized max eigengap per candidate p
  std::vector<double> ratio;  // p / g_p
  std::vector<int> k_at_p;
};

// Default binarization search grid {1, ..., ceil(n/4)} clipped to [1, n-1].
std::vector<int> default_p_grid(std::size_t n);

// For each p: binarize, form L = D - B, take ascending eigenvalues, and use
// the normalized maximum eigengap g_p = max_i (l_{i+1} - l_i) / l_n over
// i in [1, min(n-1, 8)] (the window is capped at a plausible speaker count).
// Selects the p minimizing p / g_p; the cluster count is the argmax eigengap
// index at that p. A fully disconnected graph falls back to counting
// connected components.
NmeResult nme_search(const Tensor& a, const std::vector<int>& p_grid);

// Oracle-k variant: with the cluster count known, pick the p whose binarized
// graph maximizes the normalized eigengap at index k (minimizes p / g_p(k)).
// A graph that falls apart into exactly k components wins outright.
int nme_best_p_for_k(const Tensor& a, const std::vector<int>& p_grid, int k);

// Spectral embedding from the k lowest eigenvectors of L = D - A, clustered
// with k-means (k-means++ seeding, 10 restarts, best inertia).
std::vector<int> spectral_cluster(const Tensor& a, int k, uint64_t seed = 0);

// k-means over rows of points; returns labels.
std::vector<int> kmeans(const Tensor& points, int k, int restarts,
                        uint64_t seed);

struct AhcStop {
  bool use_threshold = true;
  double threshold = 0.0;
  int target_k = 1;
};

// Average-linkage agglomeration on a symmetric similarity matrix: merge
// while the best pair similarity clears the threshold, or down to target_k.
std::vector<int> ahc_cluster(const Tensor& scores, const AhcStop& stop);

// Connected components of a nonzero-off-diagonal adjacency structure.
int count_components(const Tensor& adjacency);

}  // namespace mspk

#endif
