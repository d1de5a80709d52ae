#include "pecon/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "pecon/error.hpp"

namespace pecon {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) {
  return v.has_value() ? fmt_double(*v) : "nan";
}

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a == 0) fail(ErrorKind::empty_input, std::string(what) + ": empty input");
  if (a != b) fail(ErrorKind::width_mismatch, std::string(what) + ": length mismatch");
}

}  // namespace

double fuse(double p_ct, double p_ehr, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    fail(ErrorKind::invalid_argument, "fuse: lambda must be in [0,1]");
  }
  return lambda * p_ct + (1.0 - lambda) * p_ehr;
}

double accuracy(std::span<const double> preds, std::span<const int> labels,
                double threshold) {
  check_lengths(preds.size(), labels.size(), "accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int predicted = preds[i] >= threshold ? 1 : 0;
    if (predicted == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double f1_score(std::span<const double> preds, std::span<const int> labels,
                double threshold) {
  check_lengths(preds.size(), labels.size(), "f1_score");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int predicted = preds[i] >= threshold ? 1 : 0;
    if (predicted == 1 && labels[i] == 1) ++tp;
    if (predicted == 1 && labels[i] == 0) ++fp;
    if (predicted == 0 && labels[i] == 1) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size(), "auroc");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y != 0 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    fail(ErrorKind::single_class, "auroc undefined: only one class present");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks within tie groups; ranks are 1-based.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

PredictionSet predict(const Classifier& visual_model, const Classifier& ehr_model,
                      const Dataset& test) {
  if (test.size() == 0) fail(ErrorKind::empty_input, "predict: empty dataset");
  std::vector<std::size_t> idx(test.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Matrix ct_feats = ct_feature_matrix(test, idx);
  const Matrix ehr_feats = ehr_feature_matrix(test, idx);

  PredictionSet out;
  out.p_ct = classifier_probabilities(visual_model, ct_feats);
  out.p_ehr = classifier_probabilities(ehr_model, ehr_feats);
  out.patient_ids.reserve(test.size());
  out.labels.reserve(test.size());
  out.pe_types.reserve(test.size());
  for (const auto& s : test.samples) {
    out.patient_ids.push_back(s.patient_id);
    out.labels.push_back(s.label);
    out.pe_types.push_back(s.pe_type);
  }
  return out;
}

namespace {

MetricTriple metric_triple(std::span<const double> preds, std::span<const int> labels,
                           double threshold, std::string& annotation,
                           const char* mode) {
  MetricTriple t;
  t.accuracy = accuracy(preds, labels, threshold);
  t.f1 = f1_score(preds, labels, threshold);
  try {
    t.auroc = auroc(preds, labels);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::single_class) throw;
    if (!annotation.empty()) annotation += "; ";
    annotation += std::string(mode) + ": " + e.what();
  }
  return t;
}

}  // namespace

MetricsReport evaluate(const Classifier& visual_model, const Classifier& ehr_model,
                       const Dataset& test, double lambda,
                       bool include_subsegmental, double threshold) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    fail(ErrorKind::invalid_argument, "evaluate: lambda must be in [0,1]");
  }
  const Dataset view = include_subsegmental ? test : filter_subsegmental(test);
  if (view.size() == 0) {
    fail(ErrorKind::empty_input, "evaluate: test view is empty after filtering");
  }
  const PredictionSet preds = predict(visual_model, ehr_model, view);

  std::vector<double> fused(preds.p_ct.size());
  for (std::size_t i = 0; i < fused.size(); ++i) {
    fused[i] = fuse(preds.p_ct[i], preds.p_ehr[i], lambda);
  }

  MetricsReport report;
  report.lambda = lambda;
  report.include_subsegmental = include_subsegmental;
  report.ct_only =
      metric_triple(preds.p_ct, preds.labels, threshold, report.annotation, "ct_only");
  report.ehr_only =
      metric_triple(preds.p_ehr, preds.labels, threshold, report.annotation, "ehr_only");
  report.fused =
      metric_triple(fused, preds.labels, threshold, report.annotation, "fused");
  return report;
}

void write_metrics_csv(std::ostream& os, const MetricsReport& report) {
  os << "mode,lambda,include_subsegmental,accuracy,f1,auroc\n";
  const auto row = [&](const char* mode, const MetricTriple& t) {
    os << mode << ',' << fmt_double(report.lambda) << ','
       << (report.include_subsegmental ? 1 : 0) << ',' << fmt_double(t.accuracy)
       << ',' << fmt_double(t.f1) << ',' << fmt_optional(t.auroc) << "\n";
  };
  row("ct_only", report.ct_only);
  row("ehr_only", report.ehr_only);
  row("fused", report.fused);
}

SweepResult sweep_lambda(const Classifier& visual_model, const Classifier& ehr_model,
                         const Dataset& val, std::span<const double> grid,
                         double threshold) {
  if (grid.empty()) fail(ErrorKind::empty_input, "sweep_lambda: empty grid");
  for (double l : grid) {
    if (!(l >= 0.0 && l <= 1.0)) {
      fail(ErrorKind::invalid_argument, "sweep_lambda: grid values must be in [0,1]");
    }
  }
  const PredictionSet preds = predict(visual_model, ehr_model, val);

  SweepResult result;
  std::vector<double> fused(preds.p_ct.size());
  for (double lambda : grid) {
    for (std::size_t i = 0; i < fused.size(); ++i) {
      fused[i] = fuse(preds.p_ct[i], preds.p_ehr[i], lambda);
    }
    SweepRow row;
    row.lambda = lambda;
    row.accuracy = accuracy(fused, preds.labels, threshold);
    row.f1 = f1_score(fused, preds.labels, threshold);
    try {
      row.auroc = auroc(fused, preds.labels);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::single_class) throw;
    }
    result.rows.push_back(row);
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    if (result.rows[i].f1 > result.rows[best].f1) best = i;
  }
  result.best_lambda = result.rows[best].lambda;
  return result;
}

void write_sweep_csv(std::ostream& os, const SweepResult& sweep) {
  os << "lambda,accuracy,f1,auroc\n";
  for (const auto& row : sweep.rows) {
    os << fmt_double(row.lambda) << ',' << fmt_double(row.accuracy) << ','
       << fmt_double(row.f1) << ',' << fmt_optional(row.auroc) << "\n";
  }
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 8; ++i) grid.push_back(static_cast<double>(i) * 0.125);
  return grid;
}

void export_embeddings(const Mlp& f_ct, const Mlp& f_ehr, const Dataset& ds,
                       const std::filesystem::path& path) {
  if (ds.size() == 0) fail(ErrorKind::empty_input, "export_embeddings: empty dataset");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Matrix z_ct = forward(f_ct, ct_feature_matrix(ds, idx));
  const Matrix z_ehr = forward(f_ehr, ehr_feature_matrix(ds, idx));

  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os << "patient_id,modality,label";
  for (std::size_t j = 0; j < z_ct.cols; ++j) os << ",z" << j;
  os << "\n";
  const auto write_row = [&](const std::string& id, const char* modality, int label,
                             std::span<const double> z) {
    os << id << ',' << modality << ',' << label;
    for (double v : z) os << ',' << fmt_double(v);
    os << "\n";
  };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    write_row(s.patient_id, "ct", s.label, z_ct.row(i));
    write_row(s.patient_id, "ehr", s.label, z_ehr.row(i));
  }
  if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

}  // namespace pecon
