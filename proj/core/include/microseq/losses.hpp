#pragma once

#include "microseq/types.hpp"
#include "microseq/warping.hpp"

namespace microseq::losses {

struct LossWeights {
  double dtw = 1.0;
  double ap = 10.0;
  double align = 10.0;

  void validate() const {
    if (dtw < 0.0 || ap < 0.0 || align < 0.0)
      raise(ErrorCode::ConfigError, "loss weights must be >= 0");
  }
};

struct LossBreakdown {
  double dtw = 0.0;
  double ap = 0.0;
  double align = 0.0;           // differentiable surrogate, enters the total
  double align_reported = 0.0;  // hard argmax-index distance, logged only
  double total = 0.0;
};

// |D(y_attn, target) - D(ideal, target)|. `ideal` may be null, which drops
// the subtracted floor. The gradient is taken w.r.t. the prediction rows.
struct DtwLoss {
  double value = 0.0;
  Matrix grad_y_attn;
};
DtwLoss loss_dtw(const Matrix& y_attn, const warping::TargetSequence& target,
                 const warping::TargetSequence* ideal, const warping::SoftDtwConfig& cfg);

// cross-entropy -log(y_ap[label]); gradient expressed in logit space
struct ApLoss {
  double value = 0.0;
  Vector grad_logits;
};
ApLoss loss_ap(const Vector& y_ap, int label);

enum class AlignMode { soft_argmax, straight_through, metric_only };

// Reported value: |argmax class of the most confident prediction row - argmax
// class of y_ap|. Trained value: L1 distance between temperature-softened
// expected class indices (soft-argmax) of the same two distributions.
// Gradients are w.r.t. the probability inputs.
struct AlignLoss {
  double reported = 0.0;
  double surrogate = 0.0;
  Index selected_row = 0;
  Matrix grad_y_attn;
  Vector grad_y_ap;
};
AlignLoss loss_align(const Matrix& y_attn, const Vector& y_ap, double temperature,
                     AlignMode mode = AlignMode::soft_argmax);

LossBreakdown total_loss(double dtw, double ap, double align_surrogate,
                         double align_reported, const LossWeights& weights);

}  // namespace microseq::losses
