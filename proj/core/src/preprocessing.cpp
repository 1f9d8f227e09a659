#include "microseq/preprocessing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace microseq::preprocessing {

std::vector<double> adjacent_differences(const FeatureSequence& seq) {
  if (!seq.features.allFinite())
    raise(ErrorCode::NumericFailure,
          "sequence " + seq.case_id + " contains non-finite features");
  const Index n = seq.frames();
  std::vector<double> diffs;
  if (n < 2) return diffs;
  diffs.reserve(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i + 1 < n; ++i)
    diffs.push_back((seq.features.row(i + 1) - seq.features.row(i)).squaredNorm());
  return diffs;
}

double select_tau(const std::vector<FeatureSequence>& sequences, double duplicate_fraction) {
  if (duplicate_fraction < 0.0 || duplicate_fraction >= 1.0)
    raise(ErrorCode::ConfigError, "duplicate_fraction must be in [0, 1)");

  std::vector<double> pool;
  for (const auto& seq : sequences) {
    auto d = adjacent_differences(seq);
    pool.insert(pool.end(), d.begin(), d.end());
  }
  if (pool.empty())
    raise(ErrorCode::EmptyPool, "no adjacent frame pairs to calibrate tau on");

  std::sort(pool.begin(), pool.end());
  const double h = duplicate_fraction * static_cast<double>(pool.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= pool.size()) return pool.back();
  const double frac = h - static_cast<double>(lo);
  return pool[lo] + frac * (pool[lo + 1] - pool[lo]);
}

std::pair<FeatureSequence, DedupReport> deduplicate_sequence(const FeatureSequence& seq,
                                                             double tau) {
  if (tau < 0.0) raise(ErrorCode::ConfigError, "tau must be >= 0");
  const Index n = seq.frames();

  DedupReport report;
  report.tau = tau;
  report.kept_indices.push_back(0);
  Index last_kept = 0;
  for (Index i = 1; i < n; ++i) {
    const double dist =
        (seq.features.row(i) - seq.features.row(last_kept)).squaredNorm();
    if (dist < tau) continue;
    report.kept_indices.push_back(i);
    last_kept = i;
  }
  report.removed_count = n - static_cast<Index>(report.kept_indices.size());

  FeatureSequence out;
  out.case_id = seq.case_id;
  out.label = seq.label;
  out.magnification_tag = seq.magnification_tag;
  out.features = Matrix(static_cast<Index>(report.kept_indices.size()), seq.dim());
  for (std::size_t k = 0; k < report.kept_indices.size(); ++k)
    out.features.row(static_cast<Index>(k)) = seq.features.row(report.kept_indices[k]);
  return {std::move(out), std::move(report)};
}

WaveletPair stationary_haar_decompose(const FeatureSequence& seq) {
  if (!seq.features.allFinite())
    raise(ErrorCode::NumericFailure,
          "sequence " + seq.case_id + " contains non-finite features");
  const Index n = seq.frames();
  if (n < 1) raise(ErrorCode::DimMismatch, "empty sequence");

  WaveletPair pair;
  pair.stable.resize(n, seq.dim());
  pair.rapid.resize(n, seq.dim());
  // symmetric boundary: x[-1] := x[0]
  pair.stable.row(0) = seq.features.row(0);
  pair.rapid.row(0).setZero();
  for (Index i = 1; i < n; ++i) {
    pair.stable.row(i) = 0.5 * (seq.features.row(i) + seq.features.row(i - 1));
    pair.rapid.row(i) = 0.5 * (seq.features.row(i) - seq.features.row(i - 1));
  }
  return pair;
}

PreparedCase prepare_case(const FeatureSequence& seq, double tau, bool use_wavelet) {
  auto [dedup, report] = deduplicate_sequence(seq, tau);
  PreparedCase out;
  out.case_id = dedup.case_id;
  out.label = dedup.label;
  if (use_wavelet) {
    WaveletPair pair = stationary_haar_decompose(dedup);
    out.x_stb = std::move(pair.stable);
    out.x_rpd = std::move(pair.rapid);
    out.x = std::move(dedup.features);
  } else {
    out.x = std::move(dedup.features);
    out.x_stb = out.x;
    out.x_rpd = out.x;
  }
  return out;
}

}  // namespace microseq::preprocessing
