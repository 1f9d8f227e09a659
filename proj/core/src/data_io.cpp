#include "microseq/data_io.hpp"

#include "microseq/warping.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace microseq::data_io {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'F', 'S', 'E', 'Q'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    raise(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

Split parse_split(const std::string& s, const std::string& context) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  raise(ErrorCode::ConfigError, "unknown split '" + s + "' in " + context);
}

}  // namespace

FeatureSequence read_feature_sequence(const std::filesystem::path& path) {
  const std::string raw = read_all(path);
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());

  if (raw.size() < 4 || std::memcmp(raw.data(), kMagic, 4) != 0)
    raise(ErrorCode::BadMagic, path.string() + ": bad magic at byte offset 0");
  if (raw.size() < 16)
    raise(ErrorCode::TruncatedFile,
          path.string() + ": header truncated at byte offset " + std::to_string(raw.size()));

  const std::uint32_t version = get_u32(bytes + 4);
  if (version != kFormatVersion)
    raise(ErrorCode::VersionMismatch,
          path.string() + ": unsupported version " + std::to_string(version) +
              " at byte offset 4");
  const std::uint32_t n = get_u32(bytes + 8);
  const std::uint32_t d = get_u32(bytes + 12);
  if (n < 1 || d < 1)
    raise(ErrorCode::TruncatedFile, path.string() + ": empty dimensions in header at byte offset 8");

  const std::size_t payload = static_cast<std::size_t>(n) * d * 4;
  if (raw.size() < 16 + payload)
    raise(ErrorCode::TruncatedFile,
          path.string() + ": payload truncated at byte offset " + std::to_string(raw.size()) +
              " (expected " + std::to_string(16 + payload) + " bytes)");
  if (raw.size() > 16 + payload)
    raise(ErrorCode::IoFailure,
          path.string() + ": trailing data at byte offset " + std::to_string(16 + payload));

  FeatureSequence seq;
  seq.case_id = path.stem().string();
  seq.features.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      const std::size_t off = 16 + (static_cast<std::size_t>(i) * d + j) * 4;
      const float v = std::bit_cast<float>(get_u32(bytes + off));
      if (!std::isfinite(v))
        raise(ErrorCode::NonFiniteValue,
              path.string() + ": non-finite value at byte offset " + std::to_string(off));
      seq.features(i, j) = static_cast<double>(v);
    }
  }
  return seq;
}

void write_feature_sequence(const FeatureSequence& seq, const std::filesystem::path& path) {
  const Index n = seq.frames(), d = seq.dim();
  if (n < 1 || d < 1)
    raise(ErrorCode::BadDims, "refusing to write empty sequence " + seq.case_id);
  if (!seq.features.allFinite())
    raise(ErrorCode::NonFiniteValue,
          "sequence " + seq.case_id + " has non-finite entries; not written");

  std::string out;
  out.reserve(16 + static_cast<std::size_t>(n) * d * 4);
  out.append(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(d));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(seq.features(i, j))));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) raise(ErrorCode::IoFailure, "short write to " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_all(path));
  } catch (const json::exception& e) {
    raise(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }

  DatasetManifest m;
  try {
    m.num_classes = j.at("num_classes").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    for (const auto& c : j.at("cases")) {
      CaseEntry e;
      e.case_id = c.at("case_id").get<std::string>();
      e.file_path = c.at("file_path").get<std::string>();
      e.label = c.at("label").get<int>();
      e.split = parse_split(c.at("split").get<std::string>(), e.case_id);
      m.cases.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    raise(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }

  if (m.num_classes < 2)
    raise(ErrorCode::ConfigError, path.string() + ": num_classes must be >= 2");
  if (m.feature_dim < 1)
    raise(ErrorCode::ConfigError, path.string() + ": feature_dim must be >= 1");

  std::map<std::string, int> seen;
  for (const auto& c : m.cases) {
    if (++seen[c.case_id] > 1)
      raise(ErrorCode::ConfigError, path.string() + ": duplicate case_id " + c.case_id);
    if (c.label < 0 || c.label >= m.num_classes)
      raise(ErrorCode::BadClass,
            path.string() + ": case " + c.case_id + " label " + std::to_string(c.label) +
                " outside [0, " + std::to_string(m.num_classes) + ")");
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json cases = json::array();
  for (const auto& c : manifest.cases) {
    cases.push_back({{"case_id", c.case_id},
                     {"file_path", c.file_path},
                     {"label", c.label},
                     {"split", to_string(c.split)}});
  }
  const json j = {{"num_classes", manifest.num_classes},
                  {"feature_dim", manifest.feature_dim},
                  {"cases", std::move(cases)}};
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) raise(ErrorCode::IoFailure, "short write to " + path.string());
}

void validate_manifest(const DatasetManifest& manifest, const std::filesystem::path& base_dir) {
  for (const auto& c : manifest.cases) {
    const auto path = base_dir / c.file_path;
    std::ifstream in(path, std::ios::binary);
    if (!in)
      raise(ErrorCode::IoFailure, "case " + c.case_id + ": missing file " + path.string());
    unsigned char header[16];
    in.read(reinterpret_cast<char*>(header), 16);
    if (in.gcount() != 16)
      raise(ErrorCode::TruncatedFile, "case " + c.case_id + ": header truncated in " + path.string());
    if (std::memcmp(header, kMagic, 4) != 0)
      raise(ErrorCode::BadMagic, "case " + c.case_id + ": bad magic at byte offset 0 in " + path.string());
    const std::uint32_t d = get_u32(header + 12);
    if (static_cast<int>(d) != manifest.feature_dim)
      raise(ErrorCode::DimMismatch,
            "case " + c.case_id + ": file dimension " + std::to_string(d) +
                " != manifest feature_dim " + std::to_string(manifest.feature_dim));
  }
}

std::vector<FeatureSequence> load_split(const DatasetManifest& manifest,
                                        const std::filesystem::path& base_dir, Split split) {
  std::vector<FeatureSequence> out;
  for (const auto& c : manifest.cases) {
    if (c.split != split) continue;
    FeatureSequence seq = read_feature_sequence(base_dir / c.file_path);
    seq.case_id = c.case_id;
    seq.label = c.label;
    out.push_back(std::move(seq));
  }
  return out;
}

namespace {

// Largest-remainder apportionment of `target` over per-class pool sizes.
std::vector<int> apportion(const std::vector<int>& pool_sizes, double frac, int target) {
  const std::size_t k = pool_sizes.size();
  std::vector<int> counts(k, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double ideal = frac * pool_sizes[c];
    counts[c] = std::min(pool_sizes[c], static_cast<int>(ideal));
    assigned += counts[c];
    remainders.push_back({ideal - counts[c], c});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i) {
    const auto c = remainders[i].second;
    if (counts[c] < pool_sizes[c]) {
      ++counts[c];
      ++assigned;
    }
  }
  // pools may cap some classes; spill the remainder deterministically
  for (std::size_t c = 0; assigned < target && c < k; ++c) {
    while (assigned < target && counts[c] < pool_sizes[c]) {
      ++counts[c];
      ++assigned;
    }
  }
  return counts;
}

}  // namespace

DatasetManifest split_dataset(const DatasetManifest& manifest, double test_frac,
                              double val_frac, std::uint64_t seed) {
  if (!(test_frac > 0.0 && test_frac < 1.0) || !(val_frac > 0.0 && val_frac < 1.0))
    raise(ErrorCode::ConfigError, "split fractions must lie in (0, 1)");
  const int total = static_cast<int>(manifest.cases.size());
  if (total < 1) raise(ErrorCode::EmptyDataset, "manifest has no cases");

  std::vector<std::vector<std::size_t>> by_class(manifest.num_classes);
  for (std::size_t i = 0; i < manifest.cases.size(); ++i) {
    const int label = manifest.cases[i].label;
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }

  Rng rng(mix_seed(seed, 0x5317ULL));
  for (auto& idx : by_class) rng.shuffle(idx);

  std::vector<int> pool(manifest.num_classes);
  for (int c = 0; c < manifest.num_classes; ++c)
    pool[c] = static_cast<int>(by_class[c].size());

  const int test_target = static_cast<int>(std::lround(test_frac * total));
  const auto test_counts = apportion(pool, test_frac, test_target);

  std::vector<int> remaining(manifest.num_classes);
  int remaining_total = 0;
  for (int c = 0; c < manifest.num_classes; ++c) {
    remaining[c] = pool[c] - test_counts[c];
    remaining_total += remaining[c];
  }
  const int val_target = static_cast<int>(std::lround(val_frac * remaining_total));
  const auto val_counts = apportion(remaining, val_frac, val_target);

  DatasetManifest out = manifest;
  for (int c = 0; c < manifest.num_classes; ++c) {
    const auto& idx = by_class[c];
    const int n_test = test_counts[c], n_val = val_counts[c];
    const int n_train = pool[c] - n_test - n_val;
    if (n_train < 1)
      raise(ErrorCode::TooFewCases,
            "class " + std::to_string(c) + " has no train cases after splitting (" +
                std::to_string(pool[c]) + " total)");
    for (int i = 0; i < pool[c]; ++i) {
      Split s = Split::train;
      if (i < n_test)
        s = Split::test;
      else if (i < n_test + n_val)
        s = Split::val;
      out.cases[idx[static_cast<std::size_t>(i)]].split = s;
    }
  }
  return out;
}

namespace {

// inverse CDF by bisection; the CDF is monotone on [0, 1]
double beta_quantile(double u, int alpha, int beta) {
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (warping::beta_cdf(mid, alpha, beta) < u)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// float32 grid so .fseq round-trips are bit-exact
inline double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

SynthCase synthesize_case(const SynthConfig& cfg, int label, Rng& rng) {
  cfg.validate();
  const int d = cfg.feature_dim;
  const auto n = static_cast<Index>(rng.uniform_int(cfg.min_length, cfg.max_length));

  // per-case scalar offset on every coordinate (slide-level illumination)
  const double brightness = rng.normal(0.0, cfg.brightness_sigma);

  // signal frames start at an onset fraction drawn from the Beta law
  Index onset = n;  // class 0: never
  int axis = -1;
  if (label > 0) {
    const double u = beta_quantile(rng.uniform(), cfg.onset_alpha, cfg.onset_beta);
    onset = static_cast<Index>(std::lround(u * static_cast<double>(n)));
    axis = (label - 1) % d;
  }

  SynthCase out;
  out.features.resize(n, d);
  out.is_signal.assign(static_cast<std::size_t>(n), 0);
  out.is_duplicate.assign(static_cast<std::size_t>(n), 0);

  for (Index i = 0; i < n; ++i) {
    if (i > 0 && rng.uniform() < cfg.duplicate_rate) {
      // near-copy of the previous emitted frame
      for (int j = 0; j < d; ++j)
        out.features(i, j) =
            to_storage(out.features(i - 1, j) + rng.uniform(-1e-5, 1e-5));
      out.is_duplicate[static_cast<std::size_t>(i)] = 1;
      out.is_signal[static_cast<std::size_t>(i)] = out.is_signal[static_cast<std::size_t>(i - 1)];
      continue;
    }
    const bool signal = label > 0 && i >= onset;
    for (int j = 0; j < d; ++j) {
      double v = brightness + rng.normal();
      if (signal && j == axis) v += cfg.separation;
      out.features(i, j) = to_storage(v);
    }
    out.is_signal[static_cast<std::size_t>(i)] = signal ? 1 : 0;
  }
  return out;
}

SynthResult generate_synthetic_dataset(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "cases", ec);
  if (ec) raise(ErrorCode::IoFailure, "cannot create " + (out_dir / "cases").string());

  SynthResult result;
  result.manifest.num_classes = cfg.num_classes;
  result.manifest.feature_dim = cfg.feature_dim;

  for (int label = 0; label < cfg.num_classes; ++label) {
    for (int k = 0; k < cfg.cases_per_class; ++k) {
      // per-case stream keyed on (seed, label, k): generation order-free
      Rng rng(mix_seed(cfg.seed, (static_cast<std::uint64_t>(label) << 32) |
                                     static_cast<std::uint64_t>(k)));
      SynthCase sc = synthesize_case(cfg, label, rng);

      char id[32];
      std::snprintf(id, sizeof(id), "c%d_%04d", label, k);

      FeatureSequence seq;
      seq.case_id = id;
      seq.label = label;
      seq.features = std::move(sc.features);
      const std::string rel = std::string("cases/") + id + ".fseq";
      write_feature_sequence(seq, out_dir / rel);

      result.total_frames += static_cast<std::uint64_t>(seq.frames());
      for (auto flag : sc.is_duplicate) result.duplicate_frames += flag;
      result.manifest.cases.push_back({seq.case_id, rel, label, Split::train});
    }
  }

  save_manifest(result.manifest, out_dir / "manifest.json");
  return result;
}

}  // namespace microseq::data_io
