#include "mspk/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "mspk/error.hpp"
#include "mspk/kernels.hpp"

namespace mspk {

Tensor cosine_affinity(const Tensor& embeddings) {
  if (embeddings.rows < 1) throw UsageError("cosine_affinity: empty input");
  Tensor out;
  kernels::cosine_affinity_matrix(embeddings, out);
  return out;
}

Tensor binarize_affinity(const Tensor& a, int p) {
  const std::size_t n = a.rows;
  if (a.cols != n) throw UsageError("binarize_affinity: matrix not square");
  if (p < 1 || static_cast<std::size_t>(p) > n - 1)
    throw UsageError("binarize_affinity: p=" + std::to_string(p) +
                     " outside [1, " + std::to_string(n - 1) + "]");
  Tensor b(n, n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) {
                       if (a.at(i, x) != a.at(i, y))
                         return a.at(i, x) > a.at(i, y);
                       return x < y;
                     });
    for (int k = 0; k < p; ++k) b.at(i, order[k]) = 1.0;
    b.at(i, i) = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (b.at(i, j) + b.at(j, i));
      b.at(i, j) = v;
      b.at(j, i) = v;
    }
  return b;
}

void eigh_symmetric(const Tensor& m, std::vector<double>& values,
                    Tensor& vectors) {
  const std::size_t n = m.rows;
  if (m.cols != n) throw UsageError("eigh_symmetric: matrix not square");
  double scale = 0.0;
  for (double v : m.data) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-8 * std::max(1.0, scale))
        throw UsageError("eigh_symmetric: input not symmetric at (" +
                         std::to_string(i) + "," + std::to_string(j) + ")");

  Tensor a = m;
  vectors = Tensor(n, n);
  for (std::size_t i = 0; i < n; ++i) vectors.at(i, i) = 1.0;

  // cyclic Jacobi sweeps
  const int max_sweeps = 100;
  const double tol = 1e-12;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (std::sqrt(2.0 * off) <= tol * std::max(1.0, scale)) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double app = a.at(p, p), aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vectors.at(k, p), vkq = vectors.at(k, q);
          vectors.at(k, p) = c * vkp - s * vkq;
          vectors.at(k, q) = s * vkp + c * vkq;
        }
      }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a.at(i, i);

  // ascending order
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return values[x] < values[y];
  });
  std::vector<double> sorted_vals(n);
  Tensor sorted_vecs(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted_vals[j] = values[order[j]];
    for (std::size_t i = 0; i < n; ++i)
      sorted_vecs.at(i, j) = vectors.at(i, order[j]);
  }
  values = std::move(sorted_vals);
  vectors = std::move(sorted_vecs);
}

int count_components(const Tensor& adjacency) {
  const std::size_t n = adjacency.rows;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (adjacency.at(i, j) != 0.0) parent[find(i)] = find(j);
  int count = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (find(i) == i) ++count;
  return count;
}

std::vector<int> default_p_grid(std::size_t n) {
  std::vector<int> grid;
  const int hi = std::min<int>(static_cast<int>(n) - 1,
                               static_cast<int>((n + 3) / 4));
  for (int p = 1; p <= hi; ++p) grid.push_back(p);
  if (grid.empty()) grid.push_back(1);
  return grid;
}

namespace {

Tensor laplacian(const Tensor& b) {
  const std::size_t n = b.rows;
  Tensor l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += b.at(i, j);
    for (std::size_t j = 0; j < n; ++j) l.at(i, j) = -b.at(i, j);
    l.at(i, i) += deg;
  }
  return l;
}

}  // namespace

// Plausible upper bound on concurrent speakers for the eigengap search.
constexpr std::size_t kMaxEigengapIndex = 8;

NmeResult nme_search(const Tensor& a, const std::vector<int>& p_grid) {
  const std::size_t n = a.rows;
  if (p_grid.empty()) throw UsageError("nme_search: empty p grid");
  if (n < 2) {
    NmeResult r;
    r.best_p = 1;
    r.k_est = 1;
    return r;
  }
  NmeResult r;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (int p : p_grid) {
    const Tensor b = binarize_affinity(a, p);
    const Tensor l = laplacian(b);
    std::vector<double> vals;
    Tensor vecs;
    eigh_symmetric(l, vals, vecs);
    const double lmax = vals.back();
    double g = 0.0;
    int k = 1;
    if (lmax <= 1e-10) {
      // fully disconnected: every eigenvalue is 0
      k = count_components(b);
      g = 0.0;
    } else {
      // Restrict the eigengap search to plausible cluster counts. Over the
      // full spectrum a small-p near-matching graph always wins the ratio
      // with a nonsense k equal to its component count; capping at a max
      // speaker count (as reference NME-SC implementations do) removes the
      // pathology.
      const std::size_t window = std::min(n - 1, kMaxEigengapIndex);
      double best_gap = -1.0;
      for (std::size_t i = 1; i <= window; ++i) {
        const double gap = vals[i] - vals[i - 1];
        if (gap > best_gap) {
          best_gap = gap;
          k = static_cast<int>(i);
        }
      }
      g = best_gap / lmax;
    }
    const double ratio = (g > 0.0)
                             ? static_cast<double>(p) / g
                             : std::numeric_limits<double>::infinity();
    r.p_grid.push_back(p);
    r.g_p.push_back(g);
    r.ratio.push_back(ratio);
    r.k_at_p.push_back(k);
    if (ratio < best_ratio) {
      best_ratio = ratio;
      r.best_p = p;
      r.k_est = k;
    }
  }
  if (r.best_p == 0) {
    // every candidate degenerate; fall back to component counting at p = 1
    r.best_p = p_grid.front();
    r.k_est = r.k_at_p.front();
  }
  return r;
}

int nme_best_p_for_k(const Tensor& a, const std::vector<int>& p_grid, int k) {
  const std::size_t n = a.rows;
  if (p_grid.empty()) throw UsageError("nme_best_p_for_k: empty p grid");
  if (k < 1) throw UsageError("nme_best_p_for_k: k must be >= 1");
  if (n < 2 || static_cast<std::size_t>(k) >= n) return p_grid.front();
  int best_p = 0;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (int p : p_grid) {
    const Tensor b = binarize_affinity(a, p);
    const Tensor l = laplacian(b);
    std::vector<double> vals;
    Tensor vecs;
    eigh_symmetric(l, vals, vecs);
    const double lmax = vals.back();
    if (lmax <= 1e-10) {
      // fully disconnected; perfect only if it breaks into exactly k pieces
      if (count_components(b) == k) return p;
      continue;
    }
    const double g = (vals[k] - vals[k - 1]) / lmax;
    if (g <= 0.0) continue;
    const double ratio = static_cast<double>(p) / g;
    if (ratio < best_ratio) {
      best_ratio = ratio;
      best_p = p;
    }
  }
  return best_p > 0 ? best_p : p_grid.front();
}

std::vector<int> kmeans(const Tensor& points, int k, int restarts,
                        uint64_t seed) {
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw UsageError("kmeans: k outside [1, n]");
  std::mt19937_64 rng(seed);
  auto sq_dist = [&](std::size_t i, const std::vector<double>& c) {
    double s = 0.0;
    const double* p = points.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = p[j] - c[j];
      s += diff * diff;
    }
    return s;
  };

  std::vector<int> best_labels(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    // k-means++ seeding
    std::vector<std::vector<double>> centers;
    std::uniform_int_distribution<std::size_t> u(0, n - 1);
    std::size_t first = u(rng);
    centers.emplace_back(points.row_ptr(first), points.row_ptr(first) + d);
    std::vector<double> dist(n);
    while (centers.size() < static_cast<std::size_t>(k)) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) m = std::min(m, sq_dist(i, c));
        dist[i] = m;
        total += m;
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        std::uniform_real_distribution<double> ur(0.0, total);
        double target = ur(rng), acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += dist[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = u(rng);
      }
      centers.emplace_back(points.row_ptr(pick), points.row_ptr(pick) + d);
    }

    std::vector<int> labels(n, 0);
    double inertia = 0.0, prev_inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 100; ++iter) {
      inertia = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        int bestc = 0;
        for (int c = 0; c < k; ++c) {
          const double s = sq_dist(i, centers[c]);
          if (s < m) {
            m = s;
            bestc = c;
          }
        }
        labels[i] = bestc;
        inertia += m;
      }
      std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
      std::vector<int> counts(k, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = points.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) sums[labels[i]][j] += p[j];
        ++counts[labels[i]];
      }
      for (int c = 0; c < k; ++c)
        if (counts[c] > 0)
          for (std::size_t j = 0; j < d; ++j)
            centers[c][j] = sums[c][j] / counts[c];
      if (prev_inertia - inertia <
          1e-9 * std::max(1.0, std::abs(prev_inertia)))
        break;
      prev_inertia = inertia;
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

std::vector<int> spectral_cluster(const Tensor& a, int k, uint64_t seed) {
  const std::size_t n = a.rows;
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw UsageError("spectral_cluster: k outside [1, n]");
  if (k == 1) return std::vector<int>(n, 0);
  const Tensor l = laplacian(a);
  std::vector<double> vals;
  Tensor vecs;
  eigh_symmetric(l, vals, vecs);
  Tensor embedding(n, static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) embedding.at(i, j) = vecs.at(i, j);
  return kmeans(embedding, k, 10, seed);
}

std::vector<int> ahc_cluster(const Tensor& scores, const AhcStop& stop) {
  const std::size_t n = scores.rows;
  if (scores.cols != n) throw UsageError("ahc_cluster: matrix not square");
  if (!stop.use_threshold &&
      (stop.target_k < 1 || static_cast<std::size_t>(stop.target_k) > n))
    throw UsageError("ahc_cluster: target_k outside [1, n]");

  // Lance-Williams average linkage on similarities
  std::vector<int> size(n, 1);
  std::vector<bool> alive(n, true);
  Tensor sim = scores;
  std::vector<int> labels(n);
  std::iota(labels.begin(), labels.end(), 0);
  int active = static_cast<int>(n);
  const int stop_k = stop.use_threshold ? 1 : stop.target_k;
  while (active > stop_k) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        if (sim.at(i, j) > best) {
          best = sim.at(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    if (stop.use_threshold && best < stop.threshold) break;
    // merge bj into bi
    for (std::size_t k2 = 0; k2 < n; ++k2) {
      if (!alive[k2] || k2 == bi || k2 == bj) continue;
      const double merged = (size[bi] * sim.at(bi, k2) +
                             size[bj] * sim.at(bj, k2)) /
                            (size[bi] + size[bj]);
      sim.at(bi, k2) = merged;
      sim.at(k2, bi) = merged;
    }
    size[bi] += size[bj];
    alive[bj] = false;
    for (std::size_t k2 = 0; k2 < n; ++k2)
      if (labels[k2] == static_cast<int>(bj)) labels[k2] = static_cast<int>(bi);
    --active;
  }
  // compact label ids
  std::map<int, int> remap;
  for (int& l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
  return labels;
}

}  // namespace mspk
