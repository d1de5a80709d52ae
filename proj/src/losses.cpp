#include "pecon/losses.hpp"

#include <cmath>
#include <string>

#include "pecon/error.hpp"
#include "pecon/kernels.hpp"

namespace pecon {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) {
    fail(ErrorKind::invalid_argument,
         "temperature must be positive, got " + std::to_string(tau));
  }
}

void check_pair_shapes(const Matrix& z_ct, const Matrix& z_ehr) {
  if (!z_ct.same_shape(z_ehr)) {
    fail(ErrorKind::width_mismatch, "paired feature matrices must share a shape");
  }
  if (z_ct.rows < 1) fail(ErrorKind::empty_input, "empty contrastive batch");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void ContrastiveBatch::validate(double norm_tol) const {
  check_tau(tau);
  if (z.rows == 0 || z.rows % 2 != 0) {
    fail(ErrorKind::invalid_argument, "contrastive batch needs 2B rows, got " +
                                          std::to_string(z.rows));
  }
  if (labels.size() != z.rows) {
    fail(ErrorKind::width_mismatch, "labels size does not match feature rows");
  }
  const std::size_t b = pair_count();
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] != labels[b + i]) {
      fail(ErrorKind::invalid_argument,
           "label pairing violated at patient " + std::to_string(i));
    }
  }
  const auto& ops = kernels::active();
  for (std::size_t i = 0; i < z.rows; ++i) {
    const double norm = std::sqrt(ops.dot(z.row(i), z.row(i)));
    if (std::abs(norm - 1.0) > norm_tol) {
      fail(ErrorKind::invalid_argument,
           "feature row " + std::to_string(i) + " is not unit-norm (|z| = " +
               std::to_string(norm) + ")");
    }
  }
}

LossResult pecon_loss(const ContrastiveBatch& batch) {
  check_tau(batch.tau);
  const Matrix& z = batch.z;
  if (z.rows == 0 || z.rows % 2 != 0) {
    fail(ErrorKind::invalid_argument, "contrastive batch needs 2B rows, got " +
                                          std::to_string(z.rows));
  }
  if (batch.labels.size() != z.rows) {
    fail(ErrorKind::width_mismatch, "labels size does not match feature rows");
  }
  const std::size_t n = z.rows;
  const std::size_t b = batch.pair_count();
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.labels[i] != batch.labels[b + i]) {
      fail(ErrorKind::invalid_argument,
           "label pairing violated at patient " + std::to_string(i));
    }
  }

  const auto& ops = kernels::active();

  // Temperature-scaled similarities t_ij = (z_i . z_j)/tau; diagonal unused.
  Matrix t(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = ops.dot(z.row(i), z.row(j)) / batch.tau;
      t.at(i, j) = s;
      t.at(j, i) = s;
    }
  }

  // dL/dt per anchor: softmax over A(i) minus the positive-set indicator.
  Matrix g_t(n, n);
  double value = 0.0;
  std::vector<double> others;
  others.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(t.at(i, j));
    }
    const double m = ops.max(others);
    double denom = 0.0;
    for (double v : others) denom += std::exp(v - m);
    const double lse = m + std::log(denom);

    std::size_t p_count = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && batch.labels[j] == batch.labels[i]) ++p_count;
    }
    // The cross-modal partner always shares the label, so P(i) is nonempty.
    double anchor_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double softmax = std::exp(t.at(i, j) - m) / denom;
      const bool positive = batch.labels[j] == batch.labels[i];
      if (positive) anchor_sum += t.at(i, j) - lse;
      g_t.at(i, j) =
          softmax - (positive ? 1.0 / static_cast<double>(p_count) : 0.0);
    }
    value += -anchor_sum / static_cast<double>(p_count);
  }

  // s_ij = s_ji is one variable of z: grad_z = (G + G^T) z / tau.
  LossResult result;
  result.value = value;
  result.grad_z = Matrix(n, z.cols);
  const double inv_tau = 1.0 / batch.tau;
  for (std::size_t i = 0; i < n; ++i) {
    auto out = result.grad_z.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      ops.axpy((g_t.at(i, j) + g_t.at(j, i)) * inv_tau, z.row(j), out);
    }
  }
  return result;
}

PairedLossResult infonce_loss(const Matrix& z_ct, const Matrix& z_ehr, double tau,
                              double direction_weight) {
  check_tau(tau);
  check_pair_shapes(z_ct, z_ehr);
  if (!(direction_weight >= 0.0 && direction_weight <= 1.0)) {
    fail(ErrorKind::invalid_argument, "direction_weight must be in [0,1]");
  }
  const std::size_t b = z_ct.rows;
  const auto& ops = kernels::active();
  const double w = direction_weight;
  const double inv_b = 1.0 / static_cast<double>(b);

  Matrix m(b, b);  // m[i][k] = z_ct(i) . z_ehr(k) / tau
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < b; ++k) {
      m.at(i, k) = ops.dot(z_ct.row(i), z_ehr.row(k)) / tau;
    }
  }

  Matrix g_m(b, b);
  double value = 0.0;

  // CT -> EHR: softmax over each row.
  for (std::size_t i = 0; i < b; ++i) {
    const double mx = ops.max(m.row(i));
    double denom = 0.0;
    for (std::size_t k = 0; k < b; ++k) denom += std::exp(m.at(i, k) - mx);
    const double lse = mx + std::log(denom);
    value += w * inv_b * (lse - m.at(i, i));
    for (std::size_t k = 0; k < b; ++k) {
      const double p = std::exp(m.at(i, k) - mx) / denom;
      g_m.at(i, k) += w * inv_b * (p - (k == i ? 1.0 : 0.0));
    }
  }

  // EHR -> CT: softmax over each column.
  std::vector<double> col(b);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t k = 0; k < b; ++k) col[k] = m.at(k, j);
    const double mx = ops.max(col);
    double denom = 0.0;
    for (std::size_t k = 0; k < b; ++k) denom += std::exp(col[k] - mx);
    const double lse = mx + std::log(denom);
    value += (1.0 - w) * inv_b * (lse - m.at(j, j));
    for (std::size_t k = 0; k < b; ++k) {
      const double q = std::exp(col[k] - mx) / denom;
      g_m.at(k, j) += (1.0 - w) * inv_b * (q - (k == j ? 1.0 : 0.0));
    }
  }

  PairedLossResult result;
  result.value = value;
  result.grad_ct = Matrix(b, z_ct.cols);
  result.grad_ehr = Matrix(b, z_ct.cols);
  const double inv_tau = 1.0 / tau;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < b; ++k) {
      const double g = g_m.at(i, k) * inv_tau;
      if (g == 0.0) continue;
      ops.axpy(g, z_ehr.row(k), result.grad_ct.row(i));
      ops.axpy(g, z_ct.row(i), result.grad_ehr.row(k));
    }
  }
  return result;
}

PairedLossResult barlow_twins_loss(const Matrix& z_ct, const Matrix& z_ehr,
                                   double lambda_bt) {
  check_pair_shapes(z_ct, z_ehr);
  if (z_ct.rows < 2) {
    fail(ErrorKind::invalid_argument, "barlow_twins_loss needs a batch of >= 2");
  }
  if (!(lambda_bt >= 0.0)) {
    fail(ErrorKind::invalid_argument, "lambda_bt must be >= 0");
  }
  const std::size_t b = z_ct.rows;
  const std::size_t d = z_ct.cols;
  const double inv_b = 1.0 / static_cast<double>(b);

  // Column standardization with the population std, so perfectly
  // correlated columns give C_jj exactly 1.
  struct ColumnStats {
    std::vector<double> mean, std;
  };
  const auto standardize = [&](const Matrix& in, ColumnStats& stats,
                               const char* view) {
    stats.mean.assign(d, 0.0);
    stats.std.assign(d, 0.0);
    Matrix out(b, d);
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < b; ++r) mean += in.at(r, j);
      mean *= inv_b;
      double var = 0.0;
      for (std::size_t r = 0; r < b; ++r) {
        const double c = in.at(r, j) - mean;
        var += c * c;
      }
      var *= inv_b;
      if (var <= 1e-24) {
        fail(ErrorKind::degenerate_input,
             std::string("barlow_twins_loss: zero-variance column ") +
                 std::to_string(j) + " in " + view + " view");
      }
      const double sd = std::sqrt(var);
      stats.mean[j] = mean;
      stats.std[j] = sd;
      for (std::size_t r = 0; r < b; ++r) out.at(r, j) = (in.at(r, j) - mean) / sd;
    }
    return out;
  };

  ColumnStats stats_ct, stats_ehr;
  const Matrix zc = standardize(z_ct, stats_ct, "ct");
  const Matrix ze = standardize(z_ehr, stats_ehr, "ehr");

  // C = Zc^T Ze / B
  Matrix c(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t r = 0; r < b; ++r) acc += zc.at(r, j) * ze.at(r, k);
      c.at(j, k) = acc * inv_b;
    }
  }

  double value = 0.0;
  Matrix g_c(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      if (j == k) {
        const double diff = 1.0 - c.at(j, j);
        value += diff * diff;
        g_c.at(j, j) = -2.0 * diff;
      } else {
        value += lambda_bt * c.at(j, k) * c.at(j, k);
        g_c.at(j, k) = 2.0 * lambda_bt * c.at(j, k);
      }
    }
  }

  // dL/dZc = Ze Gc^T / B,  dL/dZe = Zc Gc / B (on the standardized views).
  Matrix g_zc(b, d);
  Matrix g_ze(b, d);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc_c = 0.0;
      double acc_e = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        acc_c += ze.at(r, k) * g_c.at(j, k);
        acc_e += zc.at(r, k) * g_c.at(k, j);
      }
      g_zc.at(r, j) = acc_c * inv_b;
      g_ze.at(r, j) = acc_e * inv_b;
    }
  }

  // Chain through the standardization, one column at a time:
  // dL/dx = (g - mean(g) - xhat * mean(g*xhat)) / std.
  const auto unstandardize_grad = [&](const Matrix& xhat, const Matrix& g,
                                      const ColumnStats& stats) {
    Matrix out(b, d);
    for (std::size_t j = 0; j < d; ++j) {
      double g_mean = 0.0;
      double gx_mean = 0.0;
      for (std::size_t r = 0; r < b; ++r) {
        g_mean += g.at(r, j);
        gx_mean += g.at(r, j) * xhat.at(r, j);
      }
      g_mean *= inv_b;
      gx_mean *= inv_b;
      for (std::size_t r = 0; r < b; ++r) {
        out.at(r, j) =
            (g.at(r, j) - g_mean - xhat.at(r, j) * gx_mean) / stats.std[j];
      }
    }
    return out;
  };

  PairedLossResult result;
  result.value = value;
  result.grad_ct = unstandardize_grad(zc, g_zc, stats_ct);
  result.grad_ehr = unstandardize_grad(ze, g_ze, stats_ehr);
  return result;
}

BceResult binary_cross_entropy(std::span<const double> logits,
                               std::span<const int> labels) {
  if (logits.empty()) fail(ErrorKind::empty_input, "binary_cross_entropy: empty batch");
  if (logits.size() != labels.size()) {
    fail(ErrorKind::width_mismatch, "binary_cross_entropy: size mismatch");
  }
  const double inv_b = 1.0 / static_cast<double>(logits.size());
  BceResult result;
  result.grad_logits.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    if (!std::isfinite(x)) {
      fail(ErrorKind::invalid_argument, "binary_cross_entropy: non-finite logit");
    }
    const double y = labels[i] != 0 ? 1.0 : 0.0;
    // max(x,0) - x*y + log(1 + exp(-|x|))
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    result.grad_logits[i] = (stable_sigmoid(x) - y) * inv_b;
  }
  result.value = total * inv_b;
  return result;
}

}  // namespace pecon
