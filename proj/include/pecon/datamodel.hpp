#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pecon/matrix.hpp"
#include "pecon/rng.hpp"

namespace pecon {

enum class PeType { none, central, segmental, subsegmental };
enum class Split { train, val, test };

const char* to_string(PeType t);
const char* to_string(Split s);
PeType pe_type_from_string(const std::string& s);  // throws parse
Split split_from_string(const std::string& s);     // throws parse

// One patient: the image encoder's per-subvolume embeddings (N x d), the
// raw EHR feature vector, the binary PE label and its subtype, and the
// split the patient belongs to.
struct PatientSample {
  std::string patient_id;
  Matrix ct_subvolumes;      // N x d
  std::vector<double> ehr;   // D_e
  int label = 0;             // 0 negative, 1 positive
  PeType pe_type = PeType::none;
  Split split = Split::train;
};

struct Dataset {
  std::vector<PatientSample> samples;
  std::size_t image_width = 0;  // d
  std::size_t ehr_width = 0;    // D_e

  std::size_t size() const { return samples.size(); }
};

// ---------------------------------------------------------------------------
// Manifest + file formats
//
// Manifest: CSV `patient_id,label,pe_type,split,ct_path,ehr_path`, paths
// relative to the manifest's directory. CT embeddings: binary, magic "PECN",
// version 0x01, u32 rows, u32 cols (little-endian), then rows*cols f32
// little-endian row-major. EHR: CSV `patient_id,f0,f1,...`, one file shared
// per split or one per patient, whichever the manifest points at.
// ---------------------------------------------------------------------------

Dataset load_manifest(const std::filesystem::path& manifest_path);

void write_embedding_file(const std::filesystem::path& path, const Matrix& m);
Matrix read_embedding_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Per-sample transforms
// ---------------------------------------------------------------------------

// Column means of the subvolume matrix: the d-vector fed to the visual head.
std::vector<double> average_subvolumes(const Matrix& ct_subvolumes);

// Per-feature min/max, computed over the training split only.
struct EhrStats {
  std::vector<double> min;
  std::vector<double> max;
};
EhrStats compute_ehr_stats(const Dataset& ds, Split split = Split::train);

// (raw - min) / (max - min), clamped to [0,1]; degenerate features map to 0.
std::vector<double> normalize_ehr(std::span<const double> raw, const EhrStats& stats);
void apply_ehr_normalization(Dataset& ds, const EhrStats& stats);

// Dataset views. Order is always preserved.
Dataset filter_subsegmental(const Dataset& ds);
Dataset subset(const Dataset& ds, Split split);

// Feature-matrix assembly for a batch of sample indices.
Matrix ct_feature_matrix(const Dataset& ds, std::span<const std::size_t> indices);
Matrix ehr_feature_matrix(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<int> label_vector(const Dataset& ds, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

// Partitions {0..sample_count-1} into consecutive batches of a (seeded)
// permutation. With drop_last the final incomplete batch is discarded —
// the pretraining rule; fine-tuning and evaluation keep it.
std::vector<std::vector<std::size_t>> make_batches(std::size_t sample_count,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed,
                                                   bool shuffle,
                                                   bool drop_last);

// ---------------------------------------------------------------------------
// Synthetic paired-modality generator
//
// Shared-latent linear model: per patient a class label y, a latent
// u ~ N(mu_y, I) with |mu_1 - mu_0| = class_separation, subvolume
// embeddings W_c u + noise and an EHR vector squash(W_e u + noise). The
// cross-modal correlation is controlled, so alignment behaviour is testable.
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t train_patients = 800;
  std::size_t val_patients = 100;
  std::size_t test_patients = 100;
  std::size_t image_width = 64;  // d
  std::size_t ehr_width = 32;    // D_e
  std::size_t latent_dim = 8;
  double class_separation = 2.0;
  double noise_scale = 1.0;
  std::size_t min_subvolumes = 3;
  std::size_t max_subvolumes = 6;
  double positive_fraction = 0.4;
  double subsegmental_fraction = 0.1;  // of positives
  std::uint64_t seed = 4242;

  void validate() const;  // throws invalid_argument
};

// Writes manifest + embedding + EHR files under out_dir; byte-identical
// output for identical config. Returns the manifest path.
std::filesystem::path generate_synthetic(const SyntheticConfig& cfg,
                                         const std::filesystem::path& out_dir);

}  // namespace pecon
