#pragma once

#include <span>
#include <vector>

#include "pecon/matrix.hpp"

namespace pecon {

// Joint-space features for one contrastive batch: rows 0..B-1 are the CT
// features, rows B..2B-1 the EHR features, row i and row B+i belonging to
// the same patient. All rows are unit-norm on the pipeline path.
struct ContrastiveBatch {
  Matrix z;                 // 2B x d'
  std::vector<int> labels;  // 2B, labels[i] == labels[B+i]
  double tau = 0.8;

  std::size_t pair_count() const { return z.rows / 2; }
  // Checks the type invariants (even row count, pairing, unit norms, tau).
  void validate(double norm_tol = 1e-6) const;
};

struct LossResult {
  double value = 0.0;
  Matrix grad_z;  // matches the z input
};

struct PairedLossResult {
  double value = 0.0;
  Matrix grad_ct;   // B x d'
  Matrix grad_ehr;  // B x d'
};

// Supervised contrastive loss over the 2B multimodal features: every
// feature serves as an anchor; positives are the same-label features among
// the other 2B-1, negatives the rest. Value is the sum over anchors;
// gradients are with respect to the z rows as given (chaining through any
// normalization is the caller's job).
LossResult pecon_loss(const ContrastiveBatch& batch);

// Bidirectional InfoNCE over paired views; `direction_weight` w blends
// CT->EHR and EHR->CT: value = (1/B) sum_i [w*L_c2e(i) + (1-w)*L_e2c(i)].
PairedLossResult infonce_loss(const Matrix& z_ct, const Matrix& z_ehr, double tau,
                              double direction_weight = 0.5);

// Cross-correlation redundancy-reduction loss: columns of each view are
// standardized over the batch (population std), C = Zct^T Zehr / B,
// value = sum_j (1-C_jj)^2 + lambda_bt * sum_{j!=k} C_jk^2.
PairedLossResult barlow_twins_loss(const Matrix& z_ct, const Matrix& z_ehr,
                                   double lambda_bt = 0.005);

struct BceResult {
  double value = 0.0;
  std::vector<double> grad_logits;  // (sigmoid(x) - y) / B
};

// Mean binary cross-entropy over logits, computed with the stable
// log-sigmoid form; no overflow for any finite logit.
BceResult binary_cross_entropy(std::span<const double> logits,
                               std::span<const int> labels);

}  // namespace pecon
