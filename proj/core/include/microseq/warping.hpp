#pragma once

#include "microseq/types.hpp"

namespace microseq::warping {

// Smoothing temperature of the soft alignment cost. The cost between frames
// is fixed to squared Euclidean distance.
struct SoftDtwConfig {
  double gamma = 0.1;

  void validate() const {
    if (!(gamma > 0.0) || gamma > 1e6)
      raise(ErrorCode::ConfigError, "gamma must be in (0, 1e6]");
  }
};

enum class TargetKind { constant, implicit };

inline const char* to_string(TargetKind k) {
  return k == TargetKind::constant ? "constant" : "implicit";
}

// Row-stochastic class trajectory of length l over C classes.
struct TargetSequence {
  Matrix values;   // l x C, rows on the probability simplex
  TargetKind kind = TargetKind::constant;
  int target_class = 0;
};

struct SoftDtwResult {
  double value = 0.0;
  Matrix grad_first;   // gradient w.r.t. the first sequence; empty for value-only calls
  Matrix dp_table;     // (n+2) x (m+2) accumulated-cost table used by the backward pass
};

// cost(i, j) = ||A_i - B_j||^2
Matrix pairwise_cost_matrix(const Matrix& a, const Matrix& b);

// Soft-DTW accumulated cost with soft-min_gamma over the {down, right,
// diagonal} steps. Returns value and the DP table.
SoftDtwResult softdtw_value(const Matrix& a, const Matrix& b, const SoftDtwConfig& cfg);

// Value-only evaluation with rolling rows; used where the table is not needed.
double softdtw_distance(const Matrix& a, const Matrix& b, const SoftDtwConfig& cfg);

// Soft-DTW value plus the analytic gradient w.r.t. the first sequence,
// obtained from the reverse accumulation of soft alignment expectations.
SoftDtwResult softdtw_gradient(const Matrix& a, const Matrix& b, const SoftDtwConfig& cfg);

// Classic min-plus alignment cost; the gamma -> 0 limit of softdtw_value.
double hard_dtw(const Matrix& a, const Matrix& b);

// Regularized incomplete beta function I_x(alpha, beta) for positive integer
// shapes, evaluated through the exact binomial identity.
double beta_cdf(double x, int alpha, int beta);

// Length-l class trajectory target. Constant targets hold the class column at
// one; implicit targets ramp it along the Beta(3,20) CDF with the residual
// mass on class 0. Class 0 itself always gets the constant form.
TargetSequence build_target_sequence(int length, int num_classes, int target_class, TargetKind kind);

// Same construction at the prediction's own length; its distance to the
// length-l target is the attainable floor subtracted from the alignment loss.
TargetSequence build_ideal_reference(int length, int num_classes, int target_class, TargetKind kind);

}  // namespace microseq::warping
