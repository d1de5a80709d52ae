#include "pecon/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pecon/error.hpp"

namespace pecon {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& path, const std::string& what) {
  fail(ErrorKind::config, "config key '" + path + "': " + what);
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) bad_key(path, "expected a number");
  return v.get<double>();
}

std::size_t as_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    bad_key(path, "expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::uint64_t as_seed(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    bad_key(path, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) bad_key(path, "expected a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) bad_key(path, "expected a string");
  return v.get<std::string>();
}

void parse_synthetic(const json& obj, SyntheticConfig& out, const std::string& section) {
  if (!obj.is_object()) fail(ErrorKind::config, "config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = section + "." + key;
    if (key == "train_patients") out.train_patients = as_count(value, path);
    else if (key == "val_patients") out.val_patients = as_count(value, path);
    else if (key == "test_patients") out.test_patients = as_count(value, path);
    else if (key == "image_width") out.image_width = as_count(value, path);
    else if (key == "ehr_width") out.ehr_width = as_count(value, path);
    else if (key == "latent_dim") out.latent_dim = as_count(value, path);
    else if (key == "class_separation") out.class_separation = as_double(value, path);
    else if (key == "noise_scale") out.noise_scale = as_double(value, path);
    else if (key == "min_subvolumes") out.min_subvolumes = as_count(value, path);
    else if (key == "max_subvolumes") out.max_subvolumes = as_count(value, path);
    else if (key == "positive_fraction") out.positive_fraction = as_double(value, path);
    else if (key == "subsegmental_fraction") out.subsegmental_fraction = as_double(value, path);
    else if (key == "seed") out.seed = as_seed(value, path);
    else fail(ErrorKind::config, "config: unknown key '" + path + "'");
  }
}

void parse_train(const json& obj, TrainConfig& out, const std::string& section,
                 bool is_pretrain) {
  if (!obj.is_object()) fail(ErrorKind::config, "config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = section + "." + key;
    if (key == "base_lr") out.base_lr = as_double(value, path);
    else if (key == "momentum") out.momentum = as_double(value, path);
    else if (key == "batch_size") out.batch_size = as_count(value, path);
    else if (key == "epochs") out.epochs = as_count(value, path);
    else if (key == "scheduler_step") out.scheduler_step = as_count(value, path);
    else if (key == "scheduler_gamma") out.scheduler_gamma = as_double(value, path);
    else if (key == "seed") out.seed = as_seed(value, path);
    else if (key == "exclude_subsegmental") {
      const bool flag = as_bool(value, path);
      if (is_pretrain) out.exclude_subsegmental_pretrain = flag;
      else out.exclude_subsegmental_finetune = flag;
    } else if (is_pretrain && key == "loss_strategy") {
      try {
        out.loss_strategy = loss_strategy_from_string(as_string(value, path));
      } catch (const Error& e) {
        bad_key(path, e.what());
      }
    } else if (is_pretrain && key == "tau") {
      out.tau = as_double(value, path);
    } else if (is_pretrain && key == "infonce_direction_weight") {
      out.infonce_direction_weight = as_double(value, path);
    } else if (is_pretrain && key == "barlow_lambda") {
      out.barlow_lambda = as_double(value, path);
    } else {
      fail(ErrorKind::config, "config: unknown key '" + path + "'");
    }
  }
}

void parse_eval(const json& obj, EvalConfig& out) {
  if (!obj.is_object()) fail(ErrorKind::config, "config: 'eval' must be an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "eval." + key;
    if (key == "lambda") {
      out.lambda = as_double(value, path);
    } else if (key == "lambda_grid") {
      if (!value.is_array() || value.empty()) bad_key(path, "expected a non-empty array");
      out.lambda_grid.clear();
      for (const auto& v : value) out.lambda_grid.push_back(as_double(v, path));
    } else if (key == "include_subsegmental") {
      out.include_subsegmental = as_bool(value, path);
    } else if (key == "threshold") {
      out.threshold = as_double(value, path);
    } else {
      fail(ErrorKind::config, "config: unknown key '" + path + "'");
    }
  }
}

void apply_seed_override(RunConfig& cfg) {
  const char* env = std::getenv("PECON_SEED");
  if (env == nullptr) return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long seed = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0' || errno != 0) {
    fail(ErrorKind::config, std::string("PECON_SEED must be an unsigned integer, got '") +
                                env + "'");
  }
  cfg.synthetic.seed = seed;
  cfg.pretrain.seed = seed;
  cfg.finetune_visual.seed = seed;
  cfg.finetune_ehr.seed = seed;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::config, "config root must be an object");

  RunConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "out_dir") {
      cfg.out_dir = as_string(value, "out_dir");
    } else if (key == "data") {
      if (!value.is_object()) fail(ErrorKind::config, "config: 'data' must be an object");
      for (const auto& [dkey, dvalue] : value.items()) {
        if (dkey == "manifest") {
          cfg.manifest = as_string(dvalue, "data.manifest");
        } else if (dkey == "synthetic") {
          parse_synthetic(dvalue, cfg.synthetic, "data.synthetic");
        } else {
          fail(ErrorKind::config, "config: unknown key 'data." + dkey + "'");
        }
      }
    } else if (key == "pretrain") {
      parse_train(value, cfg.pretrain, "pretrain", /*is_pretrain=*/true);
    } else if (key == "finetune_visual") {
      parse_train(value, cfg.finetune_visual, "finetune_visual", false);
    } else if (key == "finetune_ehr") {
      parse_train(value, cfg.finetune_ehr, "finetune_ehr", false);
    } else if (key == "eval") {
      parse_eval(value, cfg.eval);
    } else {
      fail(ErrorKind::config, "config: unknown key '" + key + "'");
    }
  }

  apply_seed_override(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  try {
    return parse_run_config(buf.str());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) {
      fail(ErrorKind::config, "'" + path.string() + "': " + e.what());
    }
    throw;
  }
}

}  // namespace pecon
