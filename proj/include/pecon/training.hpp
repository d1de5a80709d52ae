#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pecon/datamodel.hpp"
#include "pecon/losses.hpp"
#include "pecon/neuralnet.hpp"

namespace pecon {

enum class Stage { pretrain, finetune_visual, finetune_ehr };
enum class LossStrategy { pecon, infonce, barlow_twins };

const char* to_string(Stage s);
const char* to_string(LossStrategy s);
LossStrategy loss_strategy_from_string(const std::string& s);  // throws parse

struct TrainConfig {
  Stage stage = Stage::pretrain;
  LossStrategy loss_strategy = LossStrategy::pecon;  // pretraining only
  double base_lr = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  double tau = 0.8;
  std::size_t scheduler_step = 100;
  double scheduler_gamma = 0.1;
  std::uint64_t seed = 1;
  bool exclude_subsegmental_pretrain = false;
  bool exclude_subsegmental_finetune = false;
  double infonce_direction_weight = 0.5;
  double barlow_lambda = 0.005;

  void validate() const;  // throws invalid_argument
};

// Stage hyperparameter presets: pretraining LR 0.1 / tau 0.8 / 100 epochs;
// visual fine-tuning LR 0.01 with scheduler step 20; EHR fine-tuning LR 0.1
// with step 10; both fine-tunings run 25 epochs.
TrainConfig default_config(Stage stage);

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
};

// Argmin of validation loss; earliest epoch wins ties.
std::size_t select_best_epoch(const TrainHistory& history);

// CSV: epoch,train_loss,val_loss,lr
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

// Applies this stage's subsegmental exclusion flag to a dataset view.
Dataset apply_stage_filter(const Dataset& ds, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Stage 1: joint contrastive pretraining of both projection heads over
// frozen CT embeddings and normalized EHR vectors. Heads must have
// l2_normalized outputs of a common width. Returns the heads from the epoch
// with the lowest validation loss.
// ---------------------------------------------------------------------------

struct PretrainResult {
  Mlp f_ct;
  Mlp f_ehr;
  TrainHistory history;
};

PretrainResult pretrain(const Dataset& train, const Dataset& val, Mlp f_ct,
                        Mlp f_ehr, const TrainConfig& cfg);

// Recorded loss convention: the supervised contrastive value is reported
// per anchor (batch sum divided by 2B) so epochs with different batch
// layouts stay comparable; InfoNCE is already a per-pair mean and the
// cross-correlation loss does not scale with batch size. Validation loss
// is computed over the whole validation split as a single batch.
double contrastive_validation_loss(const Mlp& f_ct, const Mlp& f_ehr,
                                   const Matrix& ct_features,
                                   const Matrix& ehr_features,
                                   const std::vector<int>& labels,
                                   const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Stage 2: per-modality fine-tuning. The classifier is the pretrained
// projection head plus one linear unit on the normalized joint features,
// producing a single logit; the whole stack trains under BCE.
// ---------------------------------------------------------------------------

struct Classifier {
  Mlp head;    // projection head, l2_normalized output of width d'
  Mlp output;  // single linear layer d' -> 1
};

std::vector<double> classifier_logits(const Classifier& model, const Matrix& inputs);
std::vector<double> classifier_probabilities(const Classifier& model,
                                             const Matrix& inputs);

struct FinetuneResult {
  Classifier model;
  TrainHistory history;
};

FinetuneResult finetune_head(Mlp pretrained_head, const Dataset& train,
                             const Dataset& val, const TrainConfig& cfg);

// Classifier checkpoints are two back-to-back PECK records (head, then
// output layer) in one file.
struct ClassifierCheckpoint {
  Classifier model;
  CheckpointMeta meta;
};

void save_classifier(const Classifier& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
ClassifierCheckpoint load_classifier(const std::filesystem::path& path);

}  // namespace pecon
