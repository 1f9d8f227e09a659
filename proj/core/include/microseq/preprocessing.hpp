#pragma once

#include "microseq/types.hpp"

#include <utility>
#include <vector>

namespace microseq::preprocessing {

struct DedupReport {
  std::vector<Index> kept_indices;   // strictly increasing, always contains 0
  Index removed_count = 0;
  double tau = 0.0;                  // squared-distance units
};

// Length-preserving single-level decomposition: both components keep the
// input shape and stable + rapid reconstructs the input exactly.
struct WaveletPair {
  Matrix stable;
  Matrix rapid;
};

// entry i = ||x_{i+1} - x_i||^2; empty for single-frame sequences
std::vector<double> adjacent_differences(const FeatureSequence& seq);

// duplicate_fraction-quantile (linear interpolation) of the pooled
// adjacent-difference distribution over the given sequences.
double select_tau(const std::vector<FeatureSequence>& sequences, double duplicate_fraction);

// Sweep comparing each frame to the last retained one; drop when the squared
// distance falls strictly below tau. Every adjacent retained pair ends up at
// squared distance >= tau.
std::pair<FeatureSequence, DedupReport> deduplicate_sequence(const FeatureSequence& seq,
                                                             double tau);

// Undecimated single-level Haar split with symmetric left boundary:
// stable[i] = (x[i] + x[i-1]) / 2, rapid[i] = (x[i] - x[i-1]) / 2.
WaveletPair stationary_haar_decompose(const FeatureSequence& seq);

// Deduplicated model inputs for one case. With the wavelet disabled both
// components alias the deduplicated frames.
struct PreparedCase {
  std::string case_id;
  int label = 0;
  Matrix x, x_stb, x_rpd;
};

PreparedCase prepare_case(const FeatureSequence& seq, double tau, bool use_wavelet);

}  // namespace microseq::preprocessing
