#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pecon/datamodel.hpp"
#include "pecon/training.hpp"

namespace pecon {

// Late fusion: lambda*p_ct + (1-lambda)*p_ehr.
double fuse(double p_ct, double p_ehr, double lambda);

// Threshold metrics; predictions at exactly the threshold count as positive.
double accuracy(std::span<const double> preds, std::span<const int> labels,
                double threshold = 0.5);
// Positive-class F1; 0 when the 2TP+FP+FN denominator is empty.
double f1_score(std::span<const double> preds, std::span<const int> labels,
                double threshold = 0.5);

// Mann-Whitney AUROC with average-rank tie handling. Throws single_class
// when only one label is present.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct PredictionSet {
  std::vector<std::string> patient_ids;
  std::vector<double> p_ct;
  std::vector<double> p_ehr;
  std::vector<int> labels;
  std::vector<PeType> pe_types;
};

PredictionSet predict(const Classifier& visual_model, const Classifier& ehr_model,
                      const Dataset& test);

struct MetricTriple {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> auroc;  // empty when the view is single-class
};

struct MetricsReport {
  MetricTriple ct_only;
  MetricTriple ehr_only;
  MetricTriple fused;
  double lambda = 0.375;
  bool include_subsegmental = true;
  std::string annotation;  // degenerate-metric notes, empty otherwise
};

MetricsReport evaluate(const Classifier& visual_model, const Classifier& ehr_model,
                       const Dataset& test, double lambda,
                       bool include_subsegmental, double threshold = 0.5);

// CSV: mode,lambda,include_subsegmental,accuracy,f1,auroc (one row per mode).
void write_metrics_csv(std::ostream& os, const MetricsReport& report);

struct SweepRow {
  double lambda = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> auroc;
};

struct SweepResult {
  std::vector<SweepRow> rows;       // one per grid value, in grid order
  double best_lambda = 0.0;         // argmax F1, earliest on ties
};

SweepResult sweep_lambda(const Classifier& visual_model, const Classifier& ehr_model,
                         const Dataset& val, std::span<const double> grid,
                         double threshold = 0.5);

// CSV: lambda,accuracy,f1,auroc
void write_sweep_csv(std::ostream& os, const SweepResult& sweep);

// 0, 0.125, ..., 1
std::vector<double> default_lambda_grid();

// Joint-space export for external visualization: one ct and one ehr row per
// patient, CSV `patient_id,modality,label,z0..z{d'-1}`.
void export_embeddings(const Mlp& f_ct, const Mlp& f_ehr, const Dataset& ds,
                       const std::filesystem::path& path);

}  // namespace pecon
