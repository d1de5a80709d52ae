// pecon command-line tool: synthetic data generation, two-stage training,
// evaluation, lambda sweeps and joint-space embedding export, all driven by
// one JSON config. Logs go to stderr, data to stdout and files.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "pecon/config.hpp"
#include "pecon/datamodel.hpp"
#include "pecon/error.hpp"
#include "pecon/evaluation.hpp"
#include "pecon/training.hpp"

namespace fs = std::filesystem;
using namespace pecon;

namespace {

// Projection head architectures: visual d -> 512 -> 256 -> 128, EHR
// D_e -> 128 -> 128; both L2-normalized into the shared 128-d joint space.
constexpr std::size_t kJointDim = 128;

Mlp make_visual_head(std::size_t image_width, std::uint64_t seed) {
  const std::size_t dims[4] = {image_width, 512, 256, kJointDim};
  return init_mlp(dims, OutputTransform::l2_normalized, seed);
}

Mlp make_ehr_head(std::size_t ehr_width, std::uint64_t seed) {
  const std::size_t dims[3] = {ehr_width, 128, kJointDim};
  return init_mlp(dims, OutputTransform::l2_normalized, seed);
}

struct PreparedData {
  Dataset train;
  Dataset val;
  Dataset test;
  Dataset full;  // all splits, EHR normalized
};

fs::path resolve_manifest(const RunConfig& cfg) {
  if (cfg.manifest.has_value()) return *cfg.manifest;
  const fs::path generated = cfg.out_dir / "data" / "manifest.csv";
  if (fs::exists(generated)) return generated;
  fail(ErrorKind::missing_prerequisite,
       "no manifest: set data.manifest or run 'pecon generate' first (looked for '" +
           generated.string() + "')");
}

PreparedData load_and_prepare(const RunConfig& cfg) {
  const fs::path manifest = resolve_manifest(cfg);
  PreparedData data;
  data.full = load_manifest(manifest);
  // Normalization statistics come from the training split only.
  const EhrStats stats = compute_ehr_stats(data.full, Split::train);
  apply_ehr_normalization(data.full, stats);
  data.train = subset(data.full, Split::train);
  data.val = subset(data.full, Split::val);
  data.test = subset(data.full, Split::test);
  return data;
}

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create out_dir '" + cfg.out_dir.string() + "'");
}

fs::path head_checkpoint_path(const RunConfig& cfg, bool visual) {
  return cfg.out_dir / (visual ? "pretrain_fc.peck" : "pretrain_fe.peck");
}

fs::path classifier_path(const RunConfig& cfg, bool visual) {
  return cfg.out_dir / (visual ? "finetune_visual.peck" : "finetune_ehr.peck");
}

int cmd_generate(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const fs::path manifest = generate_synthetic(cfg.synthetic, cfg.out_dir / "data");
  std::cout << manifest.string() << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  PreparedData data = load_and_prepare(cfg);
  const Dataset train = apply_stage_filter(data.train, cfg.pretrain);
  const Dataset val = apply_stage_filter(data.val, cfg.pretrain);

  Mlp f_ct = make_visual_head(data.full.image_width,
                              derive_seed(cfg.pretrain.seed, "init_fc"));
  Mlp f_ehr =
      make_ehr_head(data.full.ehr_width, derive_seed(cfg.pretrain.seed, "init_fe"));

  std::cerr << "pretrain: strategy " << to_string(cfg.pretrain.loss_strategy)
            << ", " << train.size() << " train / " << val.size()
            << " val samples, " << cfg.pretrain.epochs << " epochs\n";
  PretrainResult result =
      pretrain(train, val, std::move(f_ct), std::move(f_ehr), cfg.pretrain);

  const std::size_t best = result.history.best_epoch;
  CheckpointMeta meta{static_cast<std::uint32_t>(best),
                      result.history.epochs[best].val_loss};
  const fs::path fc_path = head_checkpoint_path(cfg, true);
  const fs::path fe_path = head_checkpoint_path(cfg, false);
  save_checkpoint(result.f_ct, meta, fc_path);
  save_checkpoint(result.f_ehr, meta, fe_path);
  const fs::path history_path = cfg.out_dir / "pretrain_history.csv";
  write_history_csv(history_path, result.history);

  std::cerr << "pretrain: best epoch " << best << " (val loss "
            << meta.val_loss << ")\n";
  std::cout << fc_path.string() << "\n" << fe_path.string() << "\n"
            << history_path.string() << "\n";
  return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& modality,
                 bool from_scratch) {
  ensure_out_dir(cfg);
  const bool visual = modality == "visual";
  const TrainConfig& stage_cfg = visual ? cfg.finetune_visual : cfg.finetune_ehr;

  PreparedData data = load_and_prepare(cfg);
  const Dataset train = apply_stage_filter(data.train, stage_cfg);
  const Dataset val = apply_stage_filter(data.val, stage_cfg);

  Mlp head;
  if (from_scratch) {
    const std::uint64_t seed = derive_seed(stage_cfg.seed, "init_head");
    head = visual ? make_visual_head(data.full.image_width, seed)
                  : make_ehr_head(data.full.ehr_width, seed);
  } else {
    const fs::path ckpt = head_checkpoint_path(cfg, visual);
    if (!fs::exists(ckpt)) {
      fail(ErrorKind::missing_prerequisite,
           "pretrained checkpoint '" + ckpt.string() +
               "' not found; run 'pecon pretrain' or pass --from-scratch");
    }
    head = load_checkpoint(ckpt).mlp;
  }

  std::cerr << "finetune " << modality << (from_scratch ? " (from scratch)" : "")
            << ": " << train.size() << " train / " << val.size() << " val samples, "
            << stage_cfg.epochs << " epochs\n";
  FinetuneResult result = finetune_head(std::move(head), train, val, stage_cfg);

  const std::size_t best = result.history.best_epoch;
  CheckpointMeta meta{static_cast<std::uint32_t>(best),
                      result.history.epochs[best].val_loss};
  const fs::path model_path = classifier_path(cfg, visual);
  save_classifier(result.model, meta, model_path);
  const fs::path history_path =
      cfg.out_dir / (visual ? "finetune_visual_history.csv" : "finetune_ehr_history.csv");
  write_history_csv(history_path, result.history);

  std::cerr << "finetune " << modality << ": best epoch " << best << " (val loss "
            << meta.val_loss << ")\n";
  std::cout << model_path.string() << "\n" << history_path.string() << "\n";
  return 0;
}

Classifier load_classifier_or_fail(const RunConfig& cfg, bool visual) {
  const fs::path path = classifier_path(cfg, visual);
  if (!fs::exists(path)) {
    fail(ErrorKind::missing_prerequisite,
         "classifier checkpoint '" + path.string() + "' not found; run 'pecon finetune --modality " +
             (visual ? std::string("visual") : std::string("ehr")) + "' first");
  }
  return load_classifier(path).model;
}

int cmd_evaluate(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  PreparedData data = load_and_prepare(cfg);
  const Classifier visual = load_classifier_or_fail(cfg, true);
  const Classifier ehr = load_classifier_or_fail(cfg, false);

  const MetricsReport report =
      evaluate(visual, ehr, data.test, cfg.eval.lambda,
               cfg.eval.include_subsegmental, cfg.eval.threshold);

  std::ostringstream csv;
  write_metrics_csv(csv, report);
  std::cout << csv.str();
  const fs::path out_path = cfg.out_dir / "metrics.csv";
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot open '" + out_path.string() + "'");
  os << csv.str();
  if (!report.annotation.empty()) {
    std::cerr << "evaluate: note: " << report.annotation << "\n";
  }
  return 0;
}

int cmd_sweep_lambda(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  PreparedData data = load_and_prepare(cfg);
  const Classifier visual = load_classifier_or_fail(cfg, true);
  const Classifier ehr = load_classifier_or_fail(cfg, false);

  const SweepResult sweep = sweep_lambda(visual, ehr, data.val,
                                         cfg.eval.lambda_grid, cfg.eval.threshold);
  std::ostringstream csv;
  write_sweep_csv(csv, sweep);
  std::cout << csv.str();
  const fs::path out_path = cfg.out_dir / "sweep.csv";
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot open '" + out_path.string() + "'");
  os << csv.str();
  std::cerr << "sweep-lambda: best lambda by F1 = " << sweep.best_lambda << "\n";
  return 0;
}

int cmd_export_embeddings(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  PreparedData data = load_and_prepare(cfg);
  const fs::path fc_path = head_checkpoint_path(cfg, true);
  const fs::path fe_path = head_checkpoint_path(cfg, false);
  for (const auto& p : {fc_path, fe_path}) {
    if (!fs::exists(p)) {
      fail(ErrorKind::missing_prerequisite,
           "pretrained checkpoint '" + p.string() + "' not found; run 'pecon pretrain' first");
    }
  }
  const Mlp f_ct = load_checkpoint(fc_path).mlp;
  const Mlp f_ehr = load_checkpoint(fe_path).mlp;

  const fs::path out_path = cfg.out_dir / "embeddings.csv";
  export_embeddings(f_ct, f_ehr, data.full, out_path);
  std::cout << out_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pecon: supervised contrastive pretraining and late-fusion "
               "classification for paired CT/EHR embeddings"};
  app.require_subcommand(1);

  std::string config_path;
  std::string modality;
  bool from_scratch = false;

  const auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON run configuration")
        ->required();
  };

  CLI::App* generate = app.add_subcommand("generate", "Write a synthetic paired-modality dataset");
  add_config(generate);
  CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "Contrastive pretraining of both projection heads");
  add_config(pretrain_cmd);
  CLI::App* finetune = app.add_subcommand("finetune", "Fine-tune one modality's classifier");
  add_config(finetune);
  finetune->add_option("--modality", modality, "visual or ehr")
      ->required()
      ->check(CLI::IsMember({"visual", "ehr"}));
  finetune->add_flag("--from-scratch", from_scratch,
                     "Initialize the head randomly instead of loading the pretrained checkpoint");
  CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "Late-fusion metrics on the test split");
  add_config(evaluate_cmd);
  CLI::App* sweep = app.add_subcommand("sweep-lambda", "Fused metrics over a lambda grid on the validation split");
  add_config(sweep);
  CLI::App* export_cmd = app.add_subcommand("export-embeddings", "Dump joint-space features for external plotting");
  add_config(export_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "pecon: error: usage: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }

  try {
    const RunConfig cfg = load_run_config(config_path);
    if (generate->parsed()) return cmd_generate(cfg);
    if (pretrain_cmd->parsed()) return cmd_pretrain(cfg);
    if (finetune->parsed()) return cmd_finetune(cfg, modality, from_scratch);
    if (evaluate_cmd->parsed()) return cmd_evaluate(cfg);
    if (sweep->parsed()) return cmd_sweep_lambda(cfg);
    if (export_cmd->parsed()) return cmd_export_embeddings(cfg);
  } catch (const Error& e) {
    std::cerr << "pecon: error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "pecon: error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
