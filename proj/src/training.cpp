#include "pecon/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "pecon/error.hpp"
#include "pecon/rng.hpp"

namespace pecon {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::finetune_visual: return "finetune_visual";
    case Stage::finetune_ehr: return "finetune_ehr";
  }
  return "?";
}

const char* to_string(LossStrategy s) {
  switch (s) {
    case LossStrategy::pecon: return "pecon";
    case LossStrategy::infonce: return "infonce";
    case LossStrategy::barlow_twins: return "barlow_twins";
  }
  return "?";
}

LossStrategy loss_strategy_from_string(const std::string& s) {
  if (s == "pecon") return LossStrategy::pecon;
  if (s == "infonce") return LossStrategy::infonce;
  if (s == "barlow_twins") return LossStrategy::barlow_twins;
  fail(ErrorKind::parse, "invalid loss_strategy '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(base_lr >= 0.0)) {
    fail(ErrorKind::invalid_argument, "base_lr must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    fail(ErrorKind::invalid_argument, "momentum must be in [0,1)");
  }
  if (epochs < 1) fail(ErrorKind::invalid_argument, "epochs must be >= 1");
  if (stage == Stage::pretrain && batch_size < 2) {
    fail(ErrorKind::invalid_argument, "pretraining batch_size must be >= 2");
  }
  if (batch_size < 1) fail(ErrorKind::invalid_argument, "batch_size must be >= 1");
  if (!(tau > 0.0)) fail(ErrorKind::invalid_argument, "tau must be > 0");
  if (scheduler_step < 1) {
    fail(ErrorKind::invalid_argument, "scheduler_step must be >= 1");
  }
  if (!(scheduler_gamma > 0.0)) {
    fail(ErrorKind::invalid_argument, "scheduler_gamma must be > 0");
  }
  if (!(infonce_direction_weight >= 0.0 && infonce_direction_weight <= 1.0)) {
    fail(ErrorKind::invalid_argument, "infonce_direction_weight must be in [0,1]");
  }
  if (!(barlow_lambda >= 0.0)) {
    fail(ErrorKind::invalid_argument, "barlow_lambda must be >= 0");
  }
}

TrainConfig default_config(Stage stage) {
  TrainConfig cfg;
  cfg.stage = stage;
  switch (stage) {
    case Stage::pretrain:
      cfg.base_lr = 0.1;
      cfg.epochs = 100;
      cfg.scheduler_step = 100;  // no decay within the default run
      break;
    case Stage::finetune_visual:
      cfg.base_lr = 0.01;
      cfg.epochs = 25;
      cfg.scheduler_step = 20;
      break;
    case Stage::finetune_ehr:
      cfg.base_lr = 0.1;
      cfg.epochs = 25;
      cfg.scheduler_step = 10;
      break;
  }
  return cfg;
}

std::size_t select_best_epoch(const TrainHistory& history) {
  if (history.epochs.empty()) {
    fail(ErrorKind::empty_input, "select_best_epoch: empty history");
  }
  std::size_t best = 0;
  for (std::size_t e = 1; e < history.epochs.size(); ++e) {
    if (history.epochs[e].val_loss < history.epochs[best].val_loss) best = e;
  }
  return best;
}

void write_history_csv(const std::filesystem::path& path,
                       const TrainHistory& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os << "epoch,train_loss,val_loss,lr\n";
  char buf[128];
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& rec = history.epochs[e];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e, rec.train_loss,
                  rec.val_loss, rec.lr);
    os << buf;
  }
  if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

Dataset apply_stage_filter(const Dataset& ds, const TrainConfig& cfg) {
  const bool exclude = cfg.stage == Stage::pretrain
                           ? cfg.exclude_subsegmental_pretrain
                           : cfg.exclude_subsegmental_finetune;
  return exclude ? filter_subsegmental(ds) : ds;
}

namespace {

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), src.cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto row = src.row(indices[i]);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               std::span<const std::size_t> indices) {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

struct StageLoss {
  double recorded = 0.0;  // per-anchor / per-pair convention (see header)
  Matrix grad_ct;
  Matrix grad_ehr;
};

StageLoss contrastive_loss(const TrainConfig& cfg, const Matrix& z_ct,
                           const Matrix& z_ehr, const std::vector<int>& labels,
                           bool want_grads) {
  const std::size_t b = z_ct.rows;
  StageLoss out;
  switch (cfg.loss_strategy) {
    case LossStrategy::pecon: {
      ContrastiveBatch batch;
      batch.tau = cfg.tau;
      batch.z = Matrix(2 * b, z_ct.cols);
      for (std::size_t i = 0; i < b; ++i) {
        const auto ct = z_ct.row(i);
        std::copy(ct.begin(), ct.end(), batch.z.row(i).begin());
        const auto ehr = z_ehr.row(i);
        std::copy(ehr.begin(), ehr.end(), batch.z.row(b + i).begin());
      }
      batch.labels.resize(2 * b);
      for (std::size_t i = 0; i < b; ++i) {
        batch.labels[i] = labels[i];
        batch.labels[b + i] = labels[i];
      }
      batch.validate();
      LossResult r = pecon_loss(batch);
      const double scale = 1.0 / static_cast<double>(2 * b);
      out.recorded = r.value * scale;
      if (want_grads) {
        out.grad_ct = Matrix(b, z_ct.cols);
        out.grad_ehr = Matrix(b, z_ct.cols);
        for (std::size_t i = 0; i < b; ++i) {
          const auto gc = r.grad_z.row(i);
          const auto ge = r.grad_z.row(b + i);
          for (std::size_t j = 0; j < z_ct.cols; ++j) {
            out.grad_ct.at(i, j) = gc[j] * scale;
            out.grad_ehr.at(i, j) = ge[j] * scale;
          }
        }
      }
      break;
    }
    case LossStrategy::infonce: {
      PairedLossResult r =
          infonce_loss(z_ct, z_ehr, cfg.tau, cfg.infonce_direction_weight);
      out.recorded = r.value;
      if (want_grads) {
        out.grad_ct = std::move(r.grad_ct);
        out.grad_ehr = std::move(r.grad_ehr);
      }
      break;
    }
    case LossStrategy::barlow_twins: {
      PairedLossResult r = barlow_twins_loss(z_ct, z_ehr, cfg.barlow_lambda);
      out.recorded = r.value;
      if (want_grads) {
        out.grad_ct = std::move(r.grad_ct);
        out.grad_ehr = std::move(r.grad_ehr);
      }
      break;
    }
  }
  return out;
}

}  // namespace

double contrastive_validation_loss(const Mlp& f_ct, const Mlp& f_ehr,
                                   const Matrix& ct_features,
                                   const Matrix& ehr_features,
                                   const std::vector<int>& labels,
                                   const TrainConfig& cfg) {
  const Matrix z_ct = forward(f_ct, ct_features);
  const Matrix z_ehr = forward(f_ehr, ehr_features);
  return contrastive_loss(cfg, z_ct, z_ehr, labels, /*want_grads=*/false).recorded;
}

PretrainResult pretrain(const Dataset& train, const Dataset& val, Mlp f_ct,
                        Mlp f_ehr, const TrainConfig& cfg) {
  if (cfg.stage != Stage::pretrain) {
    fail(ErrorKind::invalid_argument, "pretrain: config stage must be 'pretrain'");
  }
  cfg.validate();
  if (train.size() == 0) fail(ErrorKind::empty_input, "pretrain: empty training set");
  if (val.size() == 0) fail(ErrorKind::empty_input, "pretrain: empty validation set");
  if (f_ct.input_width() != train.image_width) {
    fail(ErrorKind::width_mismatch,
         "pretrain: visual head expects width " + std::to_string(f_ct.input_width()) +
             ", dataset has " + std::to_string(train.image_width));
  }
  if (f_ehr.input_width() != train.ehr_width) {
    fail(ErrorKind::width_mismatch,
         "pretrain: EHR head expects width " + std::to_string(f_ehr.input_width()) +
             ", dataset has " + std::to_string(train.ehr_width));
  }
  if (f_ct.output_width() != f_ehr.output_width()) {
    fail(ErrorKind::width_mismatch, "pretrain: heads must share the joint width");
  }
  if (f_ct.output_transform != OutputTransform::l2_normalized ||
      f_ehr.output_transform != OutputTransform::l2_normalized) {
    fail(ErrorKind::invalid_argument,
         "pretrain: projection heads must use l2_normalized outputs");
  }

  const std::size_t n = train.size();
  const auto train_idx = all_indices(n);
  const Matrix ct_feats = ct_feature_matrix(train, train_idx);
  const Matrix ehr_feats = ehr_feature_matrix(train, train_idx);
  const std::vector<int> labels = label_vector(train, train_idx);

  const auto val_idx = all_indices(val.size());
  const Matrix val_ct = ct_feature_matrix(val, val_idx);
  const Matrix val_ehr = ehr_feature_matrix(val, val_idx);
  const std::vector<int> val_labels = label_vector(val, val_idx);

  OptimizerState state_ct = make_optimizer_state(f_ct, cfg.momentum);
  OptimizerState state_ehr = make_optimizer_state(f_ehr, cfg.momentum);

  PretrainResult result;
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        step_lr(epoch, cfg.base_lr, cfg.scheduler_step, cfg.scheduler_gamma);
    const auto batches =
        make_batches(n, cfg.batch_size, derive_seed(cfg.seed, "shuffle", epoch),
                     /*shuffle=*/true, /*drop_last=*/true);
    if (batches.empty()) {
      fail(ErrorKind::degenerate_input,
           "pretrain: batch size " + std::to_string(cfg.batch_size) +
               " exceeds the training split (" + std::to_string(n) + " samples)");
    }

    double loss_accum = 0.0;
    for (const auto& batch : batches) {
      const Matrix x_ct = gather_rows(ct_feats, batch);
      const Matrix x_ehr = gather_rows(ehr_feats, batch);
      const std::vector<int> y = gather_labels(labels, batch);

      ForwardCache cache_ct, cache_ehr;
      const Matrix z_ct = forward(f_ct, x_ct, &cache_ct);
      const Matrix z_ehr = forward(f_ehr, x_ehr, &cache_ehr);

      StageLoss sl = contrastive_loss(cfg, z_ct, z_ehr, y, /*want_grads=*/true);
      loss_accum += sl.recorded;

      const BackwardResult back_ct = backward(f_ct, cache_ct, sl.grad_ct);
      const BackwardResult back_ehr = backward(f_ehr, cache_ehr, sl.grad_ehr);
      sgd_step(f_ct, back_ct.params, state_ct, lr);
      sgd_step(f_ehr, back_ehr.params, state_ehr, lr);
    }

    EpochRecord rec;
    rec.train_loss = loss_accum / static_cast<double>(batches.size());
    rec.val_loss =
        contrastive_validation_loss(f_ct, f_ehr, val_ct, val_ehr, val_labels, cfg);
    rec.lr = lr;
    result.history.epochs.push_back(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.history.best_epoch = epoch;
      result.f_ct = f_ct;
      result.f_ehr = f_ehr;
    }
  }
  return result;
}

std::vector<double> classifier_logits(const Classifier& model, const Matrix& inputs) {
  const Matrix z = forward(model.head, inputs);
  const Matrix logits = forward(model.output, z);
  std::vector<double> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) out[i] = logits.at(i, 0);
  return out;
}

std::vector<double> classifier_probabilities(const Classifier& model,
                                             const Matrix& inputs) {
  std::vector<double> logits = classifier_logits(model, inputs);
  for (double& v : logits) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return logits;
}

FinetuneResult finetune_head(Mlp pretrained_head, const Dataset& train,
                             const Dataset& val, const TrainConfig& cfg) {
  if (cfg.stage != Stage::finetune_visual && cfg.stage != Stage::finetune_ehr) {
    fail(ErrorKind::invalid_argument, "finetune_head: config stage must select a modality");
  }
  cfg.validate();
  if (train.size() == 0) fail(ErrorKind::empty_input, "finetune: empty training set");
  if (val.size() == 0) fail(ErrorKind::empty_input, "finetune: empty validation set");

  const bool visual = cfg.stage == Stage::finetune_visual;
  const std::size_t feature_width = visual ? train.image_width : train.ehr_width;
  if (pretrained_head.input_width() != feature_width) {
    fail(ErrorKind::width_mismatch,
         "finetune: head expects width " +
             std::to_string(pretrained_head.input_width()) + ", " +
             (visual ? "image" : "EHR") + " features have " +
             std::to_string(feature_width));
  }

  const std::size_t n = train.size();
  const auto train_idx = all_indices(n);
  const Matrix feats = visual ? ct_feature_matrix(train, train_idx)
                              : ehr_feature_matrix(train, train_idx);
  const std::vector<int> labels = label_vector(train, train_idx);

  const auto val_idx = all_indices(val.size());
  const Matrix val_feats = visual ? ct_feature_matrix(val, val_idx)
                                  : ehr_feature_matrix(val, val_idx);
  const std::vector<int> val_labels = label_vector(val, val_idx);

  FinetuneResult result;
  Classifier model;
  model.head = std::move(pretrained_head);
  const std::size_t joint_width = model.head.output_width();
  const std::size_t out_dims[2] = {joint_width, 1};
  model.output = init_mlp(out_dims, OutputTransform::linear,
                          derive_seed(cfg.seed, "classifier"));

  OptimizerState state_head = make_optimizer_state(model.head, cfg.momentum);
  OptimizerState state_out = make_optimizer_state(model.output, cfg.momentum);

  double best_val = std::numeric_limits<double>::infinity();

  const auto bce_on = [&](const Matrix& x, const std::vector<int>& y) {
    const std::vector<double> logits = classifier_logits(model, x);
    return binary_cross_entropy(logits, y).value;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        step_lr(epoch, cfg.base_lr, cfg.scheduler_step, cfg.scheduler_gamma);
    const auto batches =
        make_batches(n, cfg.batch_size, derive_seed(cfg.seed, "shuffle", epoch),
                     /*shuffle=*/true, /*drop_last=*/false);

    double loss_accum = 0.0;
    for (const auto& batch : batches) {
      const Matrix x = gather_rows(feats, batch);
      const std::vector<int> y = gather_labels(labels, batch);

      ForwardCache cache_head, cache_out;
      const Matrix z = forward(model.head, x, &cache_head);
      const Matrix logit_m = forward(model.output, z, &cache_out);
      std::vector<double> logits(logit_m.rows);
      for (std::size_t i = 0; i < logit_m.rows; ++i) logits[i] = logit_m.at(i, 0);

      const BceResult bce = binary_cross_entropy(logits, y);
      loss_accum += bce.value * static_cast<double>(batch.size());

      Matrix grad_logits(logit_m.rows, 1);
      for (std::size_t i = 0; i < logit_m.rows; ++i) {
        grad_logits.at(i, 0) = bce.grad_logits[i];
      }
      const BackwardResult back_out = backward(model.output, cache_out, grad_logits);
      const BackwardResult back_head =
          backward(model.head, cache_head, back_out.input_grad);
      sgd_step(model.output, back_out.params, state_out, lr);
      sgd_step(model.head, back_head.params, state_head, lr);
    }

    EpochRecord rec;
    rec.train_loss = loss_accum / static_cast<double>(n);
    rec.val_loss = bce_on(val_feats, val_labels);
    rec.lr = lr;
    result.history.epochs.push_back(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.history.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

void save_classifier(const Classifier& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, model.head, meta);
  write_checkpoint(os, model.output, meta);
  if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

ClassifierCheckpoint load_classifier(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open classifier '" + path.string() + "'");
  const std::string context = "'" + path.string() + "'";
  Checkpoint head = read_checkpoint(is, context);
  Checkpoint output = read_checkpoint(is, context);
  if (output.mlp.input_width() != head.mlp.output_width() ||
      output.mlp.output_width() != 1) {
    fail(ErrorKind::corrupt_checkpoint,
         context + ": classifier records have inconsistent widths");
  }
  ClassifierCheckpoint ckpt;
  ckpt.model.head = std::move(head.mlp);
  ckpt.model.output = std::move(output.mlp);
  ckpt.meta = head.meta;
  return ckpt;
}

}  // namespace pecon
