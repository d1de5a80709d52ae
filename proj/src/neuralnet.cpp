#include "pecon/neuralnet.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pecon/error.hpp"
#include "pecon/kernels.hpp"
#include "pecon/rng.hpp"

namespace pecon {

namespace {
constexpr double kNormEpsilon = 1e-12;
}

std::vector<std::size_t> Mlp::layer_dims() const {
  std::vector<std::size_t> dims;
  dims.push_back(layers.front().weight.cols);
  for (const auto& layer : layers) dims.push_back(layer.weight.rows);
  return dims;
}

Mlp init_mlp(std::span<const std::size_t> layer_dims, OutputTransform transform,
             std::uint64_t seed) {
  if (layer_dims.size() < 2) {
    fail(ErrorKind::invalid_argument, "init_mlp: need at least 2 layer widths");
  }
  for (std::size_t w : layer_dims) {
    if (w < 1) fail(ErrorKind::invalid_argument, "init_mlp: widths must be >= 1");
  }
  Mlp mlp;
  mlp.output_transform = transform;
  Rng rng = Rng(seed).split("init");
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    Layer layer;
    layer.weight = Matrix(layer_dims[k + 1], layer_dims[k]);
    layer.bias.assign(layer_dims[k + 1], 0.0);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(layer_dims[k]));
    for (double& v : layer.weight.data) v = rng.next_gaussian() * std_dev;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

Matrix forward(const Mlp& mlp, const Matrix& inputs, ForwardCache* cache) {
  if (inputs.cols != mlp.input_width()) {
    fail(ErrorKind::width_mismatch,
         "forward: input width " + std::to_string(inputs.cols) +
             " does not match first layer width " + std::to_string(mlp.input_width()));
  }
  const auto& ops = kernels::active();
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->affine.clear();
  }

  Matrix current = inputs;
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    const Layer& layer = mlp.layers[k];
    Matrix out(current.rows, layer.weight.rows);
    for (std::size_t b = 0; b < current.rows; ++b) {
      auto in_row = current.row(b);
      auto out_row = out.row(b);
      for (std::size_t o = 0; o < layer.weight.rows; ++o) {
        out_row[o] = ops.dot(in_row, layer.weight.row(o)) + layer.bias[o];
      }
    }
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(current));
      cache->affine.push_back(out);
    }
    const bool is_last = k + 1 == mlp.layers.size();
    if (!is_last) {
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    }
    current = std::move(out);
  }

  if (mlp.output_transform == OutputTransform::l2_normalized) {
    if (cache != nullptr) {
      cache->pre_norm = current;
      cache->norms.assign(current.rows, 0.0);
    }
    for (std::size_t b = 0; b < current.rows; ++b) {
      auto row = current.row(b);
      const double norm = std::sqrt(ops.dot(row, row));
      if (norm <= kNormEpsilon) {
        fail(ErrorKind::degenerate_input,
             "forward: zero-vector output cannot be L2-normalized (row " +
                 std::to_string(b) + ")");
      }
      ops.scale(1.0 / norm, row);
      if (cache != nullptr) cache->norms[b] = norm;
    }
  }
  return current;
}

BackwardResult backward(const Mlp& mlp, const ForwardCache& cache,
                        const Matrix& output_grad) {
  if (cache.inputs.size() != mlp.layers.size()) {
    fail(ErrorKind::invalid_argument, "backward: cache does not match network");
  }
  if (output_grad.rows != cache.affine.back().rows ||
      output_grad.cols != cache.affine.back().cols) {
    fail(ErrorKind::width_mismatch, "backward: output_grad shape mismatch");
  }
  const auto& ops = kernels::active();

  Matrix grad = output_grad;
  if (mlp.output_transform == OutputTransform::l2_normalized) {
    // Row y with norm n maps to z = y/n; dL/dy = (g - (g.z) z) / n.
    for (std::size_t b = 0; b < grad.rows; ++b) {
      auto g = grad.row(b);
      const auto y = cache.pre_norm.row(b);
      const double n = cache.norms[b];
      std::vector<double> z(y.begin(), y.end());
      ops.scale(1.0 / n, z);
      const double gz = ops.dot(g, z);
      ops.axpy(-gz, z, g);
      ops.scale(1.0 / n, g);
    }
  }

  BackwardResult result;
  result.params.layers.resize(mlp.layers.size());

  for (std::size_t k = mlp.layers.size(); k-- > 0;) {
    const Layer& layer = mlp.layers[k];
    const Matrix& layer_in = cache.inputs[k];
    Layer& g_layer = result.params.layers[k];
    g_layer.weight = Matrix(layer.weight.rows, layer.weight.cols);
    g_layer.bias.assign(layer.bias.size(), 0.0);

    Matrix in_grad(layer_in.rows, layer_in.cols);
    for (std::size_t b = 0; b < grad.rows; ++b) {
      auto g_row = grad.row(b);
      auto in_row = layer_in.row(b);
      auto in_grad_row = in_grad.row(b);
      for (std::size_t o = 0; o < layer.weight.rows; ++o) {
        const double g = g_row[o];
        if (g == 0.0) continue;
        ops.axpy(g, in_row, g_layer.weight.row(o));
        g_layer.bias[o] += g;
        ops.axpy(g, layer.weight.row(o), in_grad_row);
      }
    }

    if (k > 0) {
      // ReLU mask from the previous layer's pre-activations.
      const Matrix& prev_affine = cache.affine[k - 1];
      for (std::size_t i = 0; i < in_grad.data.size(); ++i) {
        if (prev_affine.data[i] <= 0.0) in_grad.data[i] = 0.0;
      }
    }
    grad = std::move(in_grad);
  }

  result.input_grad = std::move(grad);
  return result;
}

OptimizerState make_optimizer_state(const Mlp& mlp, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    fail(ErrorKind::invalid_argument, "momentum must be in [0,1)");
  }
  OptimizerState state;
  state.momentum = momentum;
  for (const auto& layer : mlp.layers) {
    Layer v;
    v.weight = Matrix(layer.weight.rows, layer.weight.cols);
    v.bias.assign(layer.bias.size(), 0.0);
    state.velocity.push_back(std::move(v));
  }
  return state;
}

void sgd_step(Mlp& mlp, const Gradients& grads, OptimizerState& state, double lr) {
  if (grads.layers.size() != mlp.layers.size() ||
      state.velocity.size() != mlp.layers.size()) {
    fail(ErrorKind::width_mismatch, "sgd_step: shape mismatch");
  }
  const auto& ops = kernels::active();
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    Layer& p = mlp.layers[k];
    const Layer& g = grads.layers[k];
    Layer& v = state.velocity[k];
    if (!p.weight.same_shape(g.weight) || p.bias.size() != g.bias.size()) {
      fail(ErrorKind::width_mismatch, "sgd_step: gradient shape mismatch at layer " +
                                          std::to_string(k));
    }
    ops.scale(state.momentum, v.weight.data);
    ops.axpy(1.0, g.weight.data, v.weight.data);
    ops.axpy(-lr, v.weight.data, p.weight.data);
    ops.scale(state.momentum, v.bias);
    ops.axpy(1.0, g.bias, v.bias);
    ops.axpy(-lr, v.bias, p.bias);
  }
}

double step_lr(std::size_t epoch, double base_lr, std::size_t step_size, double gamma) {
  if (step_size < 1) fail(ErrorKind::invalid_argument, "step_lr: step_size must be >= 1");
  return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const auto& ops = kernels::active();
  const double norm = std::sqrt(ops.dot(v, v));
  if (norm <= kNormEpsilon) {
    fail(ErrorKind::degenerate_input, "l2_normalize: vector norm below 1e-12");
  }
  std::vector<double> out(v.begin(), v.end());
  ops.scale(1.0 / norm, out);
  return out;
}

// --------------------------- checkpoint format ----------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'E', 'C', 'K'};
constexpr char kCheckpointVersion = 0x01;

void put_u32le(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void put_f64le(std::ostream& os, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(b, 8);
}

bool get_u32le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) |
      (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

bool get_f64le(std::istream& is, double& v) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  v = std::bit_cast<double>(bits);
  return true;
}

std::string dims_to_string(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ')';
  return os.str();
}

}  // namespace

void write_checkpoint(std::ostream& os, const Mlp& mlp, const CheckpointMeta& meta) {
  os.write(kCheckpointMagic, 4);
  os.put(kCheckpointVersion);
  os.put(mlp.output_transform == OutputTransform::l2_normalized ? 1 : 0);
  const auto dims = mlp.layer_dims();
  put_u32le(os, static_cast<std::uint32_t>(dims.size()));
  for (std::size_t d : dims) put_u32le(os, static_cast<std::uint32_t>(d));
  put_u32le(os, meta.epoch);
  put_f64le(os, meta.val_loss);
  for (const auto& layer : mlp.layers) {
    for (double v : layer.weight.data) put_f64le(os, v);
    for (double v : layer.bias) put_f64le(os, v);
  }
}

Checkpoint read_checkpoint(std::istream& is, const std::string& context) {
  const auto corrupt = [&](const std::string& what) -> void {
    fail(ErrorKind::corrupt_checkpoint, context + ": " + what);
  };
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    corrupt("bad magic");
  }
  const int version = is.get();
  if (version != kCheckpointVersion) {
    corrupt("unsupported version " + std::to_string(version));
  }
  const int transform = is.get();
  if (transform != 0 && transform != 1) corrupt("bad output transform byte");

  std::uint32_t n_dims = 0;
  if (!get_u32le(is, n_dims) || n_dims < 2 || n_dims > 64) corrupt("bad dims header");
  std::vector<std::size_t> dims(n_dims);
  for (auto& d : dims) {
    std::uint32_t v = 0;
    if (!get_u32le(is, v) || v == 0) corrupt("bad layer width");
    d = v;
  }

  Checkpoint ckpt;
  if (!get_u32le(is, ckpt.meta.epoch)) corrupt("truncated meta");
  if (!get_f64le(is, ckpt.meta.val_loss)) corrupt("truncated meta");

  ckpt.mlp.output_transform =
      transform == 1 ? OutputTransform::l2_normalized : OutputTransform::linear;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    Layer layer;
    layer.weight = Matrix(dims[k + 1], dims[k]);
    layer.bias.assign(dims[k + 1], 0.0);
    for (double& v : layer.weight.data) {
      if (!get_f64le(is, v)) corrupt("truncated parameters");
    }
    for (double& v : layer.bias) {
      if (!get_f64le(is, v)) corrupt("truncated parameters");
    }
    ckpt.mlp.layers.push_back(std::move(layer));
  }
  return ckpt;
}

void save_checkpoint(const Mlp& mlp, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, mlp, meta);
  if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is, "'" + path.string() + "'");
}

CheckpointMeta load_checkpoint_into(Mlp& mlp, const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.mlp.layer_dims() != mlp.layer_dims() ||
      ckpt.mlp.output_transform != mlp.output_transform) {
    fail(ErrorKind::architecture_mismatch,
         "checkpoint '" + path.string() + "' has architecture " +
             dims_to_string(ckpt.mlp.layer_dims()) + ", expected " +
             dims_to_string(mlp.layer_dims()));
  }
  mlp = std::move(ckpt.mlp);
  return ckpt.meta;
}

}  // namespace pecon
