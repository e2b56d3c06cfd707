#ifndef MSPK_VERIFY_HPP
#define MSPK_VERIFY_HPP

#include <map>
#include <string>
#include <vector>

#include "mspk/tensor.hpp"

namespace mspk {

struct LdaTransform {
  Tensor projection;         // D x out_dim
  std::vector<double> mean;  // D
  std::vector<double> apply(const std::vector<double>& x) const;
};

// Fisher LDA via the generalized eigenproblem S_b v = lambda S_w v, with
// S_w regularized by 1e-6 * trace/D * I. Projected vectors are expected to
// be length-normalized afterwards.
LdaTransform fit_lda(const Tensor& embeddings,
                     const std::vector<int>& labels, int out_dim = 200);

void length_normalize(std::vector<double>& x);

struct PldaModel {
  std::vector<double> mu;
  Tensor between_cov;
  Tensor within_cov;
};

struct PldaFitResult {
  PldaModel model;
  std::vector<double> log_likelihood;  // per EM iteration
};

// Two-covariance PLDA via EM; covariance eigenvalues floored at 1e-6.
PldaFitResult fit_plda(const Tensor& embeddings,
                       const std::vector<int>& labels, int iters = 10);

// Precomputed simultaneous diagonalization for fast trial scoring.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel& model);
  // log p(e1, e2 | same speaker) - log p(e1, e2 | different speakers)
  double score(const std::vector<double>& e1,
               const std::vector<double>& e2) const;

 private:
  std::vector<double> mu_;
  Tensor transform_;          // T with T W T^t = I, T B T^t = diag(psi)
  std::vector<double> psi_;
};

double cosine_score(const std::vector<double>& e1,
                    const std::vector<double>& e2);

struct TrialRecord {
  std::string enroll_utt;
  std::string test_utt;
  bool is_target = false;
  double score = 0.0;
};

struct TrialMetrics {
  double eer = 0.0;
  double min_dcf = 0.0;       // raw detection cost
  double min_dcf_norm = 0.0;  // normalized by min(P*Cmiss, (1-P)*Cfa)
};

// EER by threshold sweep with linear interpolation at the FAR/FRR crossing;
// minDCF at P_target with C_miss = C_fa = 1.
TrialMetrics evaluate_trials(const std::vector<TrialRecord>& trials,
                             double p_target = 0.01, double c_miss = 1.0,
                             double c_fa = 1.0);

// Trial file: "enroll_utt test_utt target|nontarget"; score file appends the
// score as a fourth column.
std::vector<TrialRecord> read_trials(const std::string& path,
                                     bool with_scores);
void write_scores(const std::string& path,
                  const std::vector<TrialRecord>& trials);

// Embedding archive: magic "MSPKEMB1", u32 count, u32 dim, then per record
// a length-prefixed utt_id and dim f32 values.
void save_embeddings(const std::string& path,
                     const std::map<std::string, std::vector<double>>& embs);
std::map<std::string, std::vector<double>> load_embeddings(
    const std::string& path);

// Cholesky of a symmetric positive definite matrix (lower factor); shared
// by LDA and PLDA.
Tensor cholesky(const Tensor& m);

}  // namespace mspk

#endif
