#include "pecon/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pecon/error.hpp"
#include "pecon/kernels.hpp"

namespace pecon {

namespace fs = std::filesystem;

const char* to_string(PeType t) {
  switch (t) {
    case PeType::none: return "none";
    case PeType::central: return "central";
    case PeType::segmental: return "segmental";
    case PeType::subsegmental: return "subsegmental";
  }
  return "?";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

PeType pe_type_from_string(const std::string& s) {
  if (s == "none") return PeType::none;
  if (s == "central") return PeType::central;
  if (s == "segmental") return PeType::segmental;
  if (s == "subsegmental") return PeType::subsegmental;
  fail(ErrorKind::parse, "invalid pe_type '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorKind::parse, "invalid split '" + s + "'");
}

namespace {

// %.17g round-trips doubles exactly through decimal text.
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string read_line_strip_cr(std::istream& is, bool& ok) {
  std::string line;
  ok = static_cast<bool>(std::getline(is, line));
  if (ok && !line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

double parse_double(const std::string& s, const std::string& context) {
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    fail(ErrorKind::parse, context + ": invalid number '" + s + "'");
  }
  return v;
}

void put_u32le(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

bool get_u32le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) |
      (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

constexpr char kEmbeddingMagic[4] = {'P', 'E', 'C', 'N'};
constexpr char kEmbeddingVersion = 0x01;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void write_embedding_file(const fs::path& path, const Matrix& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os.write(kEmbeddingMagic, 4);
  os.put(kEmbeddingVersion);
  put_u32le(os, static_cast<std::uint32_t>(m.rows));
  put_u32le(os, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) {
    put_u32le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

Matrix read_embedding_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open embedding file '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
    fail(ErrorKind::parse, "'" + path.string() + "': not a PECN embedding file");
  }
  const int version = is.get();
  if (version != kEmbeddingVersion) {
    fail(ErrorKind::parse, "'" + path.string() + "': unsupported version " +
                               std::to_string(version));
  }
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  if (!get_u32le(is, rows) || !get_u32le(is, cols)) {
    fail(ErrorKind::parse, "'" + path.string() + "': truncated header");
  }
  if (rows == 0 || cols == 0) {
    fail(ErrorKind::parse, "'" + path.string() + "': empty embedding matrix");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    std::uint32_t bits = 0;
    if (!get_u32le(is, bits)) {
      fail(ErrorKind::parse, "'" + path.string() + "': truncated data");
    }
    m.data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

namespace {

// One parsed EHR CSV: patient_id -> feature vector, plus the shared width.
struct EhrTable {
  std::unordered_map<std::string, std::vector<double>> rows;
  std::size_t width = 0;
};

EhrTable load_ehr_table(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open EHR file '" + path.string() + "'");
  EhrTable table;
  bool ok = false;
  std::string header = read_line_strip_cr(is, ok);
  if (!ok) fail(ErrorKind::parse, "'" + path.string() + "': empty EHR file");
  auto header_fields = split_csv_line(header);
  if (header_fields.empty() || header_fields[0] != "patient_id") {
    fail(ErrorKind::parse, "'" + path.string() + "': EHR header must start with patient_id");
  }
  table.width = header_fields.size() - 1;
  std::size_t line_no = 1;
  for (;;) {
    std::string line = read_line_strip_cr(is, ok);
    if (!ok) break;
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    const std::string context = "'" + path.string() + "' line " + std::to_string(line_no);
    if (fields.size() != table.width + 1) {
      fail(ErrorKind::parse, context + ": expected " + std::to_string(table.width + 1) +
                                 " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> values(table.width);
    for (std::size_t j = 0; j < table.width; ++j) {
      values[j] = parse_double(fields[j + 1], context);
    }
    table.rows.emplace(fields[0], std::move(values));
  }
  return table;
}

}  // namespace

Dataset load_manifest(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) fail(ErrorKind::io, "cannot open manifest '" + manifest_path.string() + "'");
  const fs::path base = manifest_path.parent_path();

  bool ok = false;
  const std::string header = read_line_strip_cr(is, ok);
  if (!ok) fail(ErrorKind::parse, "manifest is empty");
  if (header != "patient_id,label,pe_type,split,ct_path,ehr_path") {
    fail(ErrorKind::parse, "manifest header mismatch: '" + header + "'");
  }

  Dataset ds;
  std::unordered_set<std::string> seen_ids;
  std::unordered_map<std::string, EhrTable> ehr_cache;
  std::size_t row_no = 0;

  for (;;) {
    std::string line = read_line_strip_cr(is, ok);
    if (!ok) break;
    if (line.empty()) continue;
    ++row_no;
    const std::string where = "manifest row " + std::to_string(row_no);

    auto fields = split_csv_line(line);
    if (fields.size() != 6) {
      fail(ErrorKind::parse, where + ": expected 6 fields, got " +
                                 std::to_string(fields.size()));
    }

    PatientSample sample;
    sample.patient_id = fields[0];
    if (sample.patient_id.empty()) fail(ErrorKind::parse, where + ": empty patient_id");
    if (!seen_ids.insert(sample.patient_id).second) {
      fail(ErrorKind::duplicate_id,
           where + ": duplicate patient_id '" + sample.patient_id + "'");
    }

    if (fields[1] == "0") {
      sample.label = 0;
    } else if (fields[1] == "1") {
      sample.label = 1;
    } else {
      fail(ErrorKind::parse, where + ": label must be 0 or 1, got '" + fields[1] + "'");
    }
    try {
      sample.pe_type = pe_type_from_string(fields[2]);
      sample.split = split_from_string(fields[3]);
    } catch (const Error& e) {
      fail(ErrorKind::parse, where + ": " + e.what());
    }
    if ((sample.label == 0) != (sample.pe_type == PeType::none)) {
      fail(ErrorKind::parse, where + ": label " + std::to_string(sample.label) +
                                 " inconsistent with pe_type " +
                                 to_string(sample.pe_type));
    }

    sample.ct_subvolumes = read_embedding_file(base / fields[4]);

    const fs::path ehr_path = base / fields[5];
    const std::string ehr_key = ehr_path.string();
    auto it = ehr_cache.find(ehr_key);
    if (it == ehr_cache.end()) {
      it = ehr_cache.emplace(ehr_key, load_ehr_table(ehr_path)).first;
    }
    const EhrTable& table = it->second;
    auto row_it = table.rows.find(sample.patient_id);
    if (row_it == table.rows.end()) {
      fail(ErrorKind::parse, where + ": patient '" + sample.patient_id +
                                 "' not found in EHR file '" + fields[5] + "'");
    }
    sample.ehr = row_it->second;

    if (ds.samples.empty()) {
      ds.image_width = sample.ct_subvolumes.cols;
      ds.ehr_width = sample.ehr.size();
    } else {
      if (sample.ct_subvolumes.cols != ds.image_width) {
        fail(ErrorKind::width_mismatch,
             where + ": embedding width " + std::to_string(sample.ct_subvolumes.cols) +
                 " does not match dataset width " + std::to_string(ds.image_width));
      }
      if (sample.ehr.size() != ds.ehr_width) {
        fail(ErrorKind::width_mismatch,
             where + ": EHR width " + std::to_string(sample.ehr.size()) +
                 " does not match dataset width " + std::to_string(ds.ehr_width));
      }
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

std::vector<double> average_subvolumes(const Matrix& ct_subvolumes) {
  if (ct_subvolumes.rows == 0) {
    fail(ErrorKind::empty_input, "average_subvolumes: no subvolumes");
  }
  const auto& ops = kernels::active();
  std::vector<double> acc(ct_subvolumes.cols, 0.0);
  for (std::size_t i = 0; i < ct_subvolumes.rows; ++i) {
    ops.axpy(1.0, ct_subvolumes.row(i), acc);
  }
  ops.scale(1.0 / static_cast<double>(ct_subvolumes.rows), acc);
  return acc;
}

EhrStats compute_ehr_stats(const Dataset& ds, Split split) {
  EhrStats stats;
  bool any = false;
  for (const auto& s : ds.samples) {
    if (s.split != split) continue;
    if (!any) {
      stats.min.assign(s.ehr.begin(), s.ehr.end());
      stats.max.assign(s.ehr.begin(), s.ehr.end());
      any = true;
      continue;
    }
    for (std::size_t j = 0; j < s.ehr.size(); ++j) {
      stats.min[j] = std::min(stats.min[j], s.ehr[j]);
      stats.max[j] = std::max(stats.max[j], s.ehr[j]);
    }
  }
  if (!any) {
    fail(ErrorKind::empty_input, "compute_ehr_stats: no samples in split '" +
                                     std::string(to_string(split)) + "'");
  }
  return stats;
}

std::vector<double> normalize_ehr(std::span<const double> raw, const EhrStats& stats) {
  if (raw.size() != stats.min.size() || raw.size() != stats.max.size()) {
    fail(ErrorKind::width_mismatch,
         "normalize_ehr: vector width " + std::to_string(raw.size()) +
             " does not match stats width " + std::to_string(stats.min.size()));
  }
  std::vector<double> out(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) {
    const double range = stats.max[j] - stats.min[j];
    // Constant features carry no information; out-of-range values at
    // val/test time are clamped so the [0,1] contract survives.
    if (range == 0.0) {
      out[j] = 0.0;
    } else {
      out[j] = std::clamp((raw[j] - stats.min[j]) / range, 0.0, 1.0);
    }
  }
  return out;
}

void apply_ehr_normalization(Dataset& ds, const EhrStats& stats) {
  for (auto& s : ds.samples) s.ehr = normalize_ehr(s.ehr, stats);
}

Dataset filter_subsegmental(const Dataset& ds) {
  Dataset out;
  out.image_width = ds.image_width;
  out.ehr_width = ds.ehr_width;
  for (const auto& s : ds.samples) {
    if (s.pe_type != PeType::subsegmental) out.samples.push_back(s);
  }
  return out;
}

Dataset subset(const Dataset& ds, Split split) {
  Dataset out;
  out.image_width = ds.image_width;
  out.ehr_width = ds.ehr_width;
  for (const auto& s : ds.samples) {
    if (s.split == split) out.samples.push_back(s);
  }
  return out;
}

Matrix ct_feature_matrix(const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix m(indices.size(), ds.image_width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto avg = average_subvolumes(ds.samples[indices[i]].ct_subvolumes);
    std::copy(avg.begin(), avg.end(), m.row(i).begin());
  }
  return m;
}

Matrix ehr_feature_matrix(const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix m(indices.size(), ds.ehr_width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& ehr = ds.samples[indices[i]].ehr;
    std::copy(ehr.begin(), ehr.end(), m.row(i).begin());
  }
  return m;
}

std::vector<int> label_vector(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    labels[i] = ds.samples[indices[i]].label;
  }
  return labels;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t sample_count,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed, bool shuffle,
                                                   bool drop_last) {
  if (batch_size < 1) {
    fail(ErrorKind::invalid_argument, "make_batches: batch_size must be >= 1");
  }
  std::vector<std::size_t> order;
  if (shuffle) {
    order = shuffled_indices(sample_count, Rng(seed).split("shuffle"));
  } else {
    order.resize(sample_count);
    for (std::size_t i = 0; i < sample_count; ++i) order[i] = i;
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < sample_count; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, sample_count);
    if (drop_last && end - start < batch_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void SyntheticConfig::validate() const {
  if (train_patients < 1 || val_patients < 1 || test_patients < 1) {
    fail(ErrorKind::invalid_argument, "synthetic: all split counts must be >= 1");
  }
  if (image_width < 1 || ehr_width < 1 || latent_dim < 1) {
    fail(ErrorKind::invalid_argument, "synthetic: widths must be >= 1");
  }
  if (!(class_separation >= 0.0)) {
    fail(ErrorKind::invalid_argument, "synthetic: class_separation must be >= 0");
  }
  if (!(noise_scale >= 0.0)) {
    fail(ErrorKind::invalid_argument, "synthetic: noise_scale must be >= 0");
  }
  if (min_subvolumes < 1 || max_subvolumes < min_subvolumes) {
    fail(ErrorKind::invalid_argument, "synthetic: invalid subvolume range");
  }
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
    fail(ErrorKind::invalid_argument, "synthetic: positive_fraction must be in (0,1)");
  }
  if (!(subsegmental_fraction >= 0.0 && subsegmental_fraction < 1.0)) {
    fail(ErrorKind::invalid_argument,
         "synthetic: subsegmental_fraction must be in [0,1)");
  }
}

std::filesystem::path generate_synthetic(const SyntheticConfig& cfg,
                                         const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "ct", ec);
  if (ec) fail(ErrorKind::io, "cannot create '" + (out_dir / "ct").string() + "'");

  const Rng root(cfg.seed);

  // Fixed seeded projections shared by all patients.
  Rng proj_rng = root.split("projections");
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  Matrix w_ct(cfg.image_width, cfg.latent_dim);
  for (double& v : w_ct.data) v = proj_rng.next_gaussian() * proj_scale;
  Matrix w_ehr(cfg.ehr_width, cfg.latent_dim);
  for (double& v : w_ehr.data) v = proj_rng.next_gaussian() * proj_scale;

  // Class means sit at +/- (separation/2) along the normalized all-ones
  // latent direction, so |mu_1 - mu_0| = class_separation.
  const double mean_component =
      0.5 * cfg.class_separation / std::sqrt(static_cast<double>(cfg.latent_dim));

  const auto& ops = kernels::active();
  std::ostringstream manifest;
  manifest << "patient_id,label,pe_type,split,ct_path,ehr_path\n";

  const Split splits[3] = {Split::train, Split::val, Split::test};
  const std::size_t counts[3] = {cfg.train_patients, cfg.val_patients,
                                 cfg.test_patients};
  std::size_t global_index = 0;

  for (int si = 0; si < 3; ++si) {
    const Split split = splits[si];
    const std::string split_name = to_string(split);
    Rng rng = root.split("data").split(split_name);

    const std::string ehr_name = "ehr_" + split_name + ".csv";
    std::ofstream ehr_os(out_dir / ehr_name, std::ios::trunc);
    if (!ehr_os) fail(ErrorKind::io, "cannot open '" + (out_dir / ehr_name).string() + "'");
    ehr_os << "patient_id";
    for (std::size_t j = 0; j < cfg.ehr_width; ++j) ehr_os << ",f" << j;
    ehr_os << "\n";

    for (std::size_t p = 0; p < counts[si]; ++p, ++global_index) {
      char idbuf[16];
      std::snprintf(idbuf, sizeof idbuf, "p%05zu", global_index);
      const std::string id = idbuf;

      const int label = rng.next_double() < cfg.positive_fraction ? 1 : 0;
      PeType pe_type = PeType::none;
      if (label == 1) {
        if (rng.next_double() < cfg.subsegmental_fraction) {
          pe_type = PeType::subsegmental;
        } else {
          pe_type = rng.next_below(2) == 0 ? PeType::central : PeType::segmental;
        }
      }

      const std::size_t n_sub =
          cfg.min_subvolumes +
          rng.next_below(cfg.max_subvolumes - cfg.min_subvolumes + 1);

      std::vector<double> latent(cfg.latent_dim);
      const double mu = label == 1 ? mean_component : -mean_component;
      for (double& v : latent) v = mu + rng.next_gaussian();

      Matrix ct(n_sub, cfg.image_width);
      for (std::size_t i = 0; i < n_sub; ++i) {
        auto row = ct.row(i);
        for (std::size_t j = 0; j < cfg.image_width; ++j) {
          row[j] = ops.dot(w_ct.row(j), latent) + cfg.noise_scale * rng.next_gaussian();
        }
      }
      const std::string ct_name = "ct/" + id + ".pecn";
      write_embedding_file(out_dir / ct_name, ct);

      ehr_os << id;
      for (std::size_t j = 0; j < cfg.ehr_width; ++j) {
        const double raw =
            ops.dot(w_ehr.row(j), latent) + cfg.noise_scale * rng.next_gaussian();
        ehr_os << ',' << fmt_double(stable_sigmoid(raw));
      }
      ehr_os << "\n";

      manifest << id << ',' << label << ',' << to_string(pe_type) << ','
               << split_name << ',' << ct_name << ',' << ehr_name << "\n";
    }
    if (!ehr_os) fail(ErrorKind::io, "write failed for '" + ehr_name + "'");
  }

  const fs::path manifest_path = out_dir / "manifest.csv";
  std::ofstream mos(manifest_path, std::ios::trunc);
  if (!mos) fail(ErrorKind::io, "cannot open '" + manifest_path.string() + "'");
  mos << manifest.str();
  if (!mos) fail(ErrorKind::io, "write failed for '" + manifest_path.string() + "'");
  return manifest_path;
}

}  // namespace pecon
