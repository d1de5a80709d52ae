#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "pecon/matrix.hpp"

namespace pecon {

enum class OutputTransform { linear, l2_normalized };

struct Layer {
  Matrix weight;             // out x in
  std::vector<double> bias;  // out
};

// Dense rectifier network: affine + ReLU for hidden layers, affine for the
// final layer, optionally followed by per-row L2 normalization. Covers the
// projection heads and the fine-tuning classifier stacks.
struct Mlp {
  std::vector<Layer> layers;
  OutputTransform output_transform = OutputTransform::linear;

  std::size_t input_width() const { return layers.front().weight.cols; }
  std::size_t output_width() const { return layers.back().weight.rows; }
  std::vector<std::size_t> layer_dims() const;
};

// He-scaled Gaussian weights (std = sqrt(2/fan_in)), zero biases,
// deterministic per seed.
Mlp init_mlp(std::span<const std::size_t> layer_dims, OutputTransform transform,
             std::uint64_t seed);

struct ForwardCache {
  std::vector<Matrix> inputs;  // per layer: the matrix fed into it
  std::vector<Matrix> affine;  // per layer: pre-activation outputs
  Matrix pre_norm;             // final affine rows (only when l2_normalized)
  std::vector<double> norms;   // per-row norms of pre_norm
};

// Returns the B x out output matrix; fills `cache` when given (required for
// backward). Throws degenerate_input if L2 normalization meets a zero row.
Matrix forward(const Mlp& mlp, const Matrix& inputs, ForwardCache* cache = nullptr);

struct Gradients {
  std::vector<Layer> layers;  // same shapes as the Mlp's parameters
};

struct BackwardResult {
  Gradients params;
  Matrix input_grad;  // B x in
};

// Exact reverse-mode gradients, including the L2-normalization Jacobian
// when that transform is active. `output_grad` is with respect to the
// post-transform outputs.
BackwardResult backward(const Mlp& mlp, const ForwardCache& cache,
                        const Matrix& output_grad);

struct OptimizerState {
  std::vector<Layer> velocity;  // shapes match the parameters
  double momentum = 0.9;
};

OptimizerState make_optimizer_state(const Mlp& mlp, double momentum);

// v <- momentum*v + g;  p <- p - lr*v
void sgd_step(Mlp& mlp, const Gradients& grads, OptimizerState& state, double lr);

// lr = base_lr * gamma^floor(epoch/step_size)
double step_lr(std::size_t epoch, double base_lr, std::size_t step_size, double gamma);

// v / |v|; throws degenerate_input when |v| <= 1e-12.
std::vector<double> l2_normalize(std::span<const double> v);

// ---------------------------------------------------------------------------
// Checkpoints: magic "PECK", version 0x01, architecture descriptor, epoch,
// validation loss, then parameters as f64 little-endian in layer order
// (weights row-major, then bias). Round trips are bit-exact.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::uint32_t epoch = 0;
  double val_loss = 0.0;
};

struct Checkpoint {
  Mlp mlp;
  CheckpointMeta meta;
};

void write_checkpoint(std::ostream& os, const Mlp& mlp, const CheckpointMeta& meta);
Checkpoint read_checkpoint(std::istream& is, const std::string& context);

void save_checkpoint(const Mlp& mlp, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Architecture of the stored checkpoint must match `mlp`.
CheckpointMeta load_checkpoint_into(Mlp& mlp, const std::filesystem::path& path);

}  // namespace pecon
