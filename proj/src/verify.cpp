#include "mspk/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "mspk/cluster.hpp"
#include "mspk/error.hpp"
#include "mspk/kernels.hpp"

namespace mspk {

Tensor cholesky(const Tensor& m) {
  const std::size_t n = m.rows;
  if (m.cols != n) throw UsageError("cholesky: matrix not square");
  Tensor l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (s <= 0.0)
          throw NumericError("cholesky: matrix not positive definite at " +
                             std::to_string(i));
        l.at(i, i) = std::sqrt(s);
      } else {
        l.at(i, j) = s / l.at(j, j);
      }
    }
  }
  return l;
}

namespace {

// solve L x = b (forward substitution)
std::vector<double> forward_solve(const Tensor& l, const std::vector<double>& b) {
  const std::size_t n = l.rows;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * x[k];
    x[i] = s / l.at(i, i);
  }
  return x;
}

// solve L^T x = b (back substitution)
std::vector<double> backward_solve(const Tensor& l,
                                   const std::vector<double>& b) {
  const std::size_t n = l.rows;
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l.at(k, i) * x[k];
    x[i] = s / l.at(i, i);
  }
  return x;
}

// M = L^{-1} A L^{-T} for symmetric A
Tensor whiten_symmetric(const Tensor& l, const Tensor& a) {
  const std::size_t n = l.rows;
  Tensor tmp(n, n), out(n, n);
  std::vector<double> col(n);
  // tmp = L^{-1} A
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = a.at(i, j);
    const auto x = forward_solve(l, col);
    for (std::size_t i = 0; i < n; ++i) tmp.at(i, j) = x[i];
  }
  // out = tmp L^{-T}: rows of out solve L y = row^T
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) col[j] = tmp.at(i, j);
    const auto x = forward_solve(l, col);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x[j];
  }
  // enforce exact symmetry
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (out.at(i, j) + out.at(j, i));
      out.at(i, j) = v;
      out.at(j, i) = v;
    }
  return out;
}

Tensor inverse_spd(const Tensor& m) {
  const std::size_t n = m.rows;
  const Tensor l = cholesky(m);
  Tensor inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const auto x = backward_solve(l, forward_solve(l, e));
    for (std::size_t i = 0; i < n; ++i) inv.at(i, j) = x[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (inv.at(i, j) + inv.at(j, i));
      inv.at(i, j) = v;
      inv.at(j, i) = v;
    }
  return inv;
}

double logdet_spd(const Tensor& m) {
  const Tensor l = cholesky(m);
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i) s += std::log(l.at(i, i));
  return 2.0 * s;
}

// floor eigenvalues of a symmetric matrix
Tensor floor_eigenvalues(const Tensor& m, double floor) {
  std::vector<double> vals;
  Tensor vecs;
  eigh_symmetric(m, vals, vecs);
  const std::size_t n = m.rows;
  Tensor out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double v = std::max(vals[k], floor);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out.at(i, j) += v * vecs.at(i, k) * vecs.at(j, k);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (out.at(i, j) + out.at(j, i));
      out.at(i, j) = v;
      out.at(j, i) = v;
    }
  return out;
}

}  // namespace

std::vector<double> LdaTransform::apply(const std::vector<double>& x) const {
  if (x.size() != projection.rows)
    throw UsageError("lda apply: dimension mismatch");
  std::vector<double> y(projection.cols, 0.0);
  for (std::size_t i = 0; i < projection.rows; ++i) {
    const double c = x[i] - mean[i];
    for (std::size_t j = 0; j < projection.cols; ++j)
      y[j] += projection.at(i, j) * c;
  }
  return y;
}

LdaTransform fit_lda(const Tensor& embeddings, const std::vector<int>& labels,
                     int out_dim) {
  const std::size_t n = embeddings.rows;
  const std::size_t d = embeddings.cols;
  if (labels.size() != n) throw UsageError("fit_lda: label count mismatch");
  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) classes[labels[i]].push_back(i);
  if (classes.size() <= static_cast<std::size_t>(out_dim))
    throw UsageError("fit_lda: need more than " + std::to_string(out_dim) +
                     " classes, got " + std::to_string(classes.size()));
  bool any_multi = false;
  for (const auto& [c, idx] : classes) any_multi |= idx.size() >= 2;
  if (!any_multi)
    throw UsageError("fit_lda: no class with at least 2 samples");

  std::vector<double> gmean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) gmean[j] += embeddings.at(i, j);
  for (double& v : gmean) v /= static_cast<double>(n);

  Tensor sw(d, d), sb(d, d);
  std::vector<double> cmean(d);
  for (const auto& [c, idx] : classes) {
    std::fill(cmean.begin(), cmean.end(), 0.0);
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < d; ++j) cmean[j] += embeddings.at(i, j);
    for (double& v : cmean) v /= static_cast<double>(idx.size());
    for (std::size_t i : idx)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
          sw.at(a, b) += (embeddings.at(i, a) - cmean[a]) *
                         (embeddings.at(i, b) - cmean[b]);
    const double w = static_cast<double>(idx.size());
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        sb.at(a, b) += w * (cmean[a] - gmean[a]) * (cmean[b] - gmean[b]);
  }
  for (double& v : sw.data) v /= static_cast<double>(n);
  for (double& v : sb.data) v /= static_cast<double>(n);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += sw.at(i, i);
  const double reg = 1e-6 * trace / static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) sw.at(i, i) += std::max(reg, 1e-12);

  const Tensor l = cholesky(sw);
  const Tensor m = whiten_symmetric(l, sb);
  std::vector<double> vals;
  Tensor vecs;
  eigh_symmetric(m, vals, vecs);

  LdaTransform out;
  out.mean = gmean;
  out.projection = Tensor(d, static_cast<std::size_t>(out_dim));
  std::vector<double> u(d);
  for (int k = 0; k < out_dim; ++k) {
    const std::size_t col = d - 1 - static_cast<std::size_t>(k);  // largest
    for (std::size_t i = 0; i < d; ++i) u[i] = vecs.at(i, col);
    const auto v = backward_solve(l, u);  // v = L^{-T} u
    for (std::size_t i = 0; i < d; ++i) out.projection.at(i, k) = v[i];
  }
  return out;
}

void length_normalize(std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  if (s <= 0.0) throw NumericError("length_normalize: zero vector");
  const double inv = 1.0 / std::sqrt(s);
  for (double& v : x) v *= inv;
}

PldaFitResult fit_plda(const Tensor& embeddings, const std::vector<int>& labels,
                       int iters) {
  const std::size_t n = embeddings.rows;
  const std::size_t d = embeddings.cols;
  if (labels.size() != n) throw UsageError("fit_plda: label count mismatch");
  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) classes[labels[i]].push_back(i);
  std::size_t multi = 0;
  for (const auto& [c, idx] : classes) multi += idx.size() >= 2;
  if (classes.size() < 2 || multi < 1)
    throw UsageError("fit_plda: need >= 2 classes with >= 2 samples in one");

  const std::size_t num_classes = classes.size();
  std::vector<double> counts;
  Tensor class_means(num_classes, d);
  Tensor within_scatter(d, d);  // sum over classes of S_i
  {
    std::size_t ci = 0;
    for (const auto& [c, idx] : classes) {
      for (std::size_t i : idx)
        for (std::size_t j = 0; j < d; ++j)
          class_means.at(ci, j) += embeddings.at(i, j);
      for (std::size_t j = 0; j < d; ++j)
        class_means.at(ci, j) /= static_cast<double>(idx.size());
      for (std::size_t i : idx)
        for (std::size_t a = 0; a < d; ++a)
          for (std::size_t b = 0; b < d; ++b)
            within_scatter.at(a, b) +=
                (embeddings.at(i, a) - class_means.at(ci, a)) *
                (embeddings.at(i, b) - class_means.at(ci, b));
      counts.push_back(static_cast<double>(idx.size()));
      ++ci;
    }
  }
  double scatter_norm = 0.0;
  for (std::size_t i = 0; i < d; ++i) scatter_norm += within_scatter.at(i, i);
  if (scatter_norm <= 0.0) {
    // all points within every class identical; check across classes too
    bool degenerate = true;
    for (std::size_t j = 0; j < d && degenerate; ++j)
      for (std::size_t c2 = 1; c2 < num_classes && degenerate; ++c2)
        if (class_means.at(c2, j) != class_means.at(0, j)) degenerate = false;
    if (degenerate)
      throw UsageError("fit_plda: degenerate data (all points equal)");
  }

  PldaModel model;
  model.mu.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) model.mu[j] += embeddings.at(i, j);
  for (double& v : model.mu) v /= static_cast<double>(n);

  // initial estimates: scatter of class means / pooled within covariance
  model.between_cov = Tensor(d, d);
  for (std::size_t c2 = 0; c2 < num_classes; ++c2)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        model.between_cov.at(a, b) += (class_means.at(c2, a) - model.mu[a]) *
                                      (class_means.at(c2, b) - model.mu[b]);
  for (double& v : model.between_cov.data)
    v /= static_cast<double>(num_classes);
  model.within_cov = within_scatter;
  for (double& v : model.within_cov.data) v /= static_cast<double>(n);
  const double kFloor = 1e-6;
  model.between_cov = floor_eigenvalues(model.between_cov, kFloor);
  model.within_cov = floor_eigenvalues(model.within_cov, kFloor);

  PldaFitResult result;
  auto log_likelihood = [&]() {
    const Tensor w_inv = inverse_spd(model.within_cov);
    const double logdet_w = logdet_spd(model.within_cov);
    double tr_winv_s = 0.0;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        tr_winv_s += w_inv.at(a, b) * within_scatter.at(b, a);
    double ll = 0.0;
    for (std::size_t c2 = 0; c2 < num_classes; ++c2) {
      const double ni = counts[c2];
      Tensor wnb(d, d);  // W + n_i B
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
          wnb.at(a, b) =
              model.within_cov.at(a, b) + ni * model.between_cov.at(a, b);
      std::vector<double> m(d);
      for (std::size_t j = 0; j < d; ++j)
        m[j] = class_means.at(c2, j) - model.mu[j];
      const Tensor lw = cholesky(wnb);
      const auto half = forward_solve(lw, m);
      double quad = 0.0;
      for (double v : half) quad += v * v;
      double logdet_wnb = 0.0;
      for (std::size_t i = 0; i < d; ++i) logdet_wnb += std::log(lw.at(i, i));
      logdet_wnb *= 2.0;
      ll += -0.5 * (ni * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
                    (ni - 1.0) * logdet_w + logdet_wnb + ni * quad);
    }
    ll += -0.5 * tr_winv_s;
    return ll;
  };

  for (int iter = 0; iter < iters; ++iter) {
    const Tensor b_inv = inverse_spd(model.between_cov);
    const Tensor w_inv = inverse_spd(model.within_cov);
    std::vector<double> b_inv_mu(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t j = 0; j < d; ++j)
        b_inv_mu[a] += b_inv.at(a, j) * model.mu[j];

    Tensor y_hat(num_classes, d);
    std::vector<Tensor> post_cov(num_classes);
    for (std::size_t c2 = 0; c2 < num_classes; ++c2) {
      const double ni = counts[c2];
      Tensor prec(d, d);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
          prec.at(a, b) = b_inv.at(a, b) + ni * w_inv.at(a, b);
      post_cov[c2] = inverse_spd(prec);
      std::vector<double> rhs(d, 0.0);
      for (std::size_t a = 0; a < d; ++a) {
        rhs[a] = b_inv_mu[a];
        for (std::size_t j = 0; j < d; ++j)
          rhs[a] += ni * w_inv.at(a, j) * class_means.at(c2, j);
      }
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          s += post_cov[c2].at(a, j) * rhs[j];
        y_hat.at(c2, a) = s;
      }
    }
    // M-step
    std::vector<double> new_mu(d, 0.0);
    for (std::size_t c2 = 0; c2 < num_classes; ++c2)
      for (std::size_t j = 0; j < d; ++j) new_mu[j] += y_hat.at(c2, j);
    for (double& v : new_mu) v /= static_cast<double>(num_classes);

    Tensor new_b(d, d), new_w = within_scatter;
    for (std::size_t c2 = 0; c2 < num_classes; ++c2) {
      const double ni = counts[c2];
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
          new_b.at(a, b) += post_cov[c2].at(a, b) +
                            (y_hat.at(c2, a) - new_mu[a]) *
                                (y_hat.at(c2, b) - new_mu[b]);
          new_w.at(a, b) += ni * (post_cov[c2].at(a, b) +
                                  (class_means.at(c2, a) - y_hat.at(c2, a)) *
                                      (class_means.at(c2, b) -
                                       y_hat.at(c2, b)));
        }
    }
    for (double& v : new_b.data) v /= static_cast<double>(num_classes);
    for (double& v : new_w.data) v /= static_cast<double>(n);
    model.mu = new_mu;
    model.between_cov = floor_eigenvalues(new_b, kFloor);
    model.within_cov = floor_eigenvalues(new_w, kFloor);
    result.log_likelihood.push_back(log_likelihood());
  }
  result.model = model;
  return result;
}

PldaScorer::PldaScorer(const PldaModel& model) : mu_(model.mu) {
  const std::size_t d = model.mu.size();
  const Tensor l = cholesky(model.within_cov);
  const Tensor m = whiten_symmetric(l, model.between_cov);
  std::vector<double> vals;
  Tensor vecs;
  eigh_symmetric(m, vals, vecs);
  psi_ = vals;
  // T = V^T L^{-1}: row k of T solves L^T x = v_k, then transpose
  transform_ = Tensor(d, d);
  std::vector<double> v(d);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < d; ++i) v[i] = vecs.at(i, k);
    // row_k(T) = v_k^T L^{-1}  =>  solve L^T y = v_k gives y^T = v^T L^{-1}
    const auto y = backward_solve(l, v);
    for (std::size_t j = 0; j < d; ++j) transform_.at(k, j) = y[j];
  }
}

double PldaScorer::score(const std::vector<double>& e1,
                         const std::vector<double>& e2) const {
  const std::size_t d = mu_.size();
  if (e1.size() != d || e2.size() != d)
    throw UsageError("plda score: dimension mismatch with model");
  std::vector<double> u1(d, 0.0), u2(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      u1[i] += transform_.at(i, j) * (e1[j] - mu_[j]);
      u2[i] += transform_.at(i, j) * (e2[j] - mu_[j]);
    }
  double llr = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double a = psi_[i] + 1.0;
    const double b = psi_[i];
    const double det = a * a - b * b;
    const double s1 = u1[i], s2 = u2[i];
    const double q_same = (a * (s1 * s1 + s2 * s2) - 2.0 * b * s1 * s2) / det;
    const double q_diff = (s1 * s1 + s2 * s2) / a;
    llr += -0.5 * (std::log(det) - 2.0 * std::log(a)) -
           0.5 * (q_same - q_diff);
  }
  return llr;
}

double cosine_score(const std::vector<double>& e1,
                    const std::vector<double>& e2) {
  if (e1.size() != e2.size()) throw UsageError("cosine: dimension mismatch");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    dot += e1[i] * e2[i];
    n1 += e1[i] * e1[i];
    n2 += e2[i] * e2[i];
  }
  if (n1 <= 0.0 || n2 <= 0.0) throw NumericError("cosine: zero-norm input");
  return dot / std::sqrt(n1 * n2);
}

TrialMetrics evaluate_trials(const std::vector<TrialRecord>& trials,
                             double p_target, double c_miss, double c_fa) {
  std::vector<double> tg, nt;
  for (const auto& t : trials)
    (t.is_target ? tg : nt).push_back(t.score);
  if (tg.empty() || nt.empty())
    throw UsageError("evaluate_trials: need at least one target and one "
                     "non-target trial");
  std::sort(tg.begin(), tg.end());
  std::sort(nt.begin(), nt.end());
  std::vector<double> thresholds;
  thresholds.reserve(tg.size() + nt.size() + 1);
  for (double s : tg) thresholds.push_back(s);
  for (double s : nt) thresholds.push_back(s);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  thresholds.push_back(thresholds.back() + 1.0);  // reject everything

  const double num_tg = static_cast<double>(tg.size());
  const double num_nt = static_cast<double>(nt.size());
  auto rates = [&](double t) {
    // accept iff score >= t
    const double frr =
        static_cast<double>(std::lower_bound(tg.begin(), tg.end(), t) -
                            tg.begin()) /
        num_tg;
    const double far =
        static_cast<double>(nt.end() -
                            std::lower_bound(nt.begin(), nt.end(), t)) /
        num_nt;
    return std::make_pair(far, frr);
  };

  TrialMetrics out;
  double min_cost = std::numeric_limits<double>::infinity();
  double prev_far = 1.0, prev_frr = 0.0;
  bool crossed = false;
  for (double t : thresholds) {
    const auto [far, frr] = rates(t);
    const double cost = p_target * c_miss * frr + (1.0 - p_target) * c_fa * far;
    min_cost = std::min(min_cost, cost);
    if (!crossed && frr >= far) {
      const double d1 = prev_far - prev_frr;
      const double d2 = far - frr;
      if (d1 <= 0.0) {
        out.eer = 0.5 * (far + frr);
      } else {
        const double alpha = d1 / (d1 - d2);
        const double e_far = prev_far + alpha * (far - prev_far);
        const double e_frr = prev_frr + alpha * (frr - prev_frr);
        out.eer = 0.5 * (e_far + e_frr);
      }
      crossed = true;
    }
    prev_far = far;
    prev_frr = frr;
  }
  if (!crossed) out.eer = 0.5 * (prev_far + prev_frr);
  out.min_dcf = min_cost;
  out.min_dcf_norm =
      min_cost / std::min(p_target * c_miss, (1.0 - p_target) * c_fa);
  return out;
}

std::vector<TrialRecord> read_trials(const std::string& path,
                                     bool with_scores) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open trial file: " + path);
  std::vector<TrialRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    TrialRecord t;
    std::string kind;
    if (!(ls >> t.enroll_utt >> t.test_utt >> kind))
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected 'enroll test target|nontarget'");
    if (kind == "target")
      t.is_target = true;
    else if (kind == "nontarget")
      t.is_target = false;
    else
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": bad trial kind '" + kind + "'");
    if (with_scores && !(ls >> t.score))
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": missing score");
    out.push_back(std::move(t));
  }
  return out;
}

void write_scores(const std::string& path,
                  const std::vector<TrialRecord>& trials) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write score file: " + path);
  os.precision(12);
  for (const auto& t : trials)
    os << t.enroll_utt << " " << t.test_utt << " "
       << (t.is_target ? "target" : "nontarget") << " " << t.score << "\n";
}

namespace {
constexpr char kEmbMagic[8] = {'M', 'S', 'P', 'K', 'E', 'M', 'B', '1'};
}

void save_embeddings(const std::string& path,
                     const std::map<std::string, std::vector<double>>& embs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write embedding archive: " + path);
  if (embs.empty()) throw UsageError("save_embeddings: empty archive");
  os.write(kEmbMagic, 8);
  const uint32_t count = static_cast<uint32_t>(embs.size());
  const uint32_t dim = static_cast<uint32_t>(embs.begin()->second.size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  os.write(reinterpret_cast<const char*>(&dim), 4);
  std::vector<float> buf(dim);
  for (const auto& [id, e] : embs) {
    if (e.size() != dim)
      throw UsageError("save_embeddings: inconsistent dimension at " + id);
    const uint32_t len = static_cast<uint32_t>(id.size());
    os.write(reinterpret_cast<const char*>(&len), 4);
    os.write(id.data(), len);
    for (uint32_t i = 0; i < dim; ++i) buf[i] = static_cast<float>(e[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), dim * 4);
  }
  if (!os) throw IoError("write failed: " + path);
}

std::map<std::string, std::vector<double>> load_embeddings(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open embedding archive: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kEmbMagic, 8) != 0)
    throw FormatError(path + ": bad embedding archive magic");
  uint32_t count = 0, dim = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  is.read(reinterpret_cast<char*>(&dim), 4);
  if (!is) throw FormatError(path + ": truncated embedding archive header");
  std::map<std::string, std::vector<double>> out;
  std::vector<float> buf(dim);
  for (uint32_t k = 0; k < count; ++k) {
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 4);
    std::string id(len, '\0');
    is.read(id.data(), len);
    is.read(reinterpret_cast<char*>(buf.data()), dim * 4);
    if (!is) throw FormatError(path + ": truncated embedding archive");
    std::vector<double> e(dim);
    for (uint32_t i = 0; i < dim; ++i) e[i] = buf[i];
    out.emplace(std::move(id), std::move(e));
  }
  return out;
}

}  // namespace mspk
