#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace microseq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
  BadMagic,
  TruncatedFile,
  NonFiniteValue,   // non-finite payload in a file
  IoFailure,
  VersionMismatch,
  TooFewCases,
  EmptyPool,
  EmptyDataset,
  EmptyBank,
  DimMismatch,
  ShapeMismatch,
  LengthMismatch,
  DomainError,
  BadClass,
  BadDims,
  StaleCache,
  ConfigError,
  NumericFailure,   // non-finite value produced at run time
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// mt19937_64 is fully specified by the standard; the distribution mappings
// below are ours, so streams are reproducible across compilers and platforms.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt));
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1), 53-bit resolution
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(
                    static_cast<double>(span) * uniform());
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Dataset domain types
// ---------------------------------------------------------------------------

// One acquisition stream: n frames of d-dimensional embedding coordinates
// plus the case-level weak label.
struct FeatureSequence {
  std::string case_id;
  Matrix features;                 // n x d, one row per frame
  int label = 0;
  std::string magnification_tag;   // optional

  Index frames() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct CaseEntry {
  std::string case_id;
  std::string file_path;   // relative to the manifest location
  int label = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<CaseEntry> cases;
};

// Configuration of the synthetic acquisition-stream generator.
struct SynthConfig {
  std::uint64_t seed = 7;
  int cases_per_class = 50;
  int num_classes = 2;
  int feature_dim = 32;
  int min_length = 40;
  int max_length = 160;
  double duplicate_rate = 0.25;    // probability that a frame is a near-copy of its predecessor
  int onset_alpha = 3;             // signal-appearance law: onset fraction ~ Beta(alpha, beta)
  int onset_beta = 20;
  double separation = 0.6;         // class-signal mean shift along the class axis
  double brightness_sigma = 0.30;  // per-case scalar offset added to every coordinate

  void validate() const {
    if (num_classes < 2) raise(ErrorCode::ConfigError, "num_classes must be >= 2");
    if (cases_per_class < 1) raise(ErrorCode::ConfigError, "cases_per_class must be >= 1");
    if (feature_dim < 1) raise(ErrorCode::ConfigError, "feature_dim must be >= 1");
    if (min_length < 4) raise(ErrorCode::ConfigError, "min_length must be >= 4");
    if (max_length < min_length) raise(ErrorCode::ConfigError, "max_length must be >= min_length");
    if (duplicate_rate < 0.0 || duplicate_rate >= 1.0)
      raise(ErrorCode::ConfigError, "duplicate_rate must be in [0, 1)");
    if (onset_alpha < 1 || onset_beta < 1)
      raise(ErrorCode::ConfigError, "onset parameters must be positive integers");
    if (separation <= 0.0) raise(ErrorCode::ConfigError, "separation must be > 0");
    if (brightness_sigma < 0.0) raise(ErrorCode::ConfigError, "brightness_sigma must be >= 0");
  }
};

}  // namespace microseq
