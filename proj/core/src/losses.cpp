#include "microseq/losses.hpp"

#include <cmath>
#include <string>

namespace microseq::losses {

DtwLoss loss_dtw(const Matrix& y_attn, const warping::TargetSequence& target,
                 const warping::TargetSequence* ideal, const warping::SoftDtwConfig& cfg) {
  if (y_attn.cols() != target.values.cols())
    raise(ErrorCode::DimMismatch, "prediction and target class counts differ");

  const auto res = warping::softdtw_gradient(y_attn, target.values, cfg);
  double floor = 0.0;
  if (ideal) {
    if (ideal->values.cols() != target.values.cols())
      raise(ErrorCode::DimMismatch, "ideal reference class count mismatch");
    floor = warping::softdtw_distance(ideal->values, target.values, cfg);
  }

  const double diff = res.value - floor;
  DtwLoss out;
  out.value = std::abs(diff);
  out.grad_y_attn = (diff >= 0.0 ? 1.0 : -1.0) * res.grad_first;
  return out;
}

ApLoss loss_ap(const Vector& y_ap, int label) {
  if (label < 0 || label >= y_ap.size())
    raise(ErrorCode::BadClass,
          "label " + std::to_string(label) + " outside [0, " +
              std::to_string(y_ap.size()) + ")");
  ApLoss out;
  out.value = -std::log(std::max(y_ap(label), 1e-300));
  out.grad_logits = y_ap;
  out.grad_logits(label) -= 1.0;
  return out;
}

namespace {

// q = p^(1/T) / sum p^(1/T); soft index m = sum_c c * q_c
struct SoftIndex {
  double value = 0.0;
  Vector q;
};

SoftIndex soft_index(const Vector& p, double temperature) {
  const Index c = p.size();
  Vector logp(c);
  for (Index i = 0; i < c; ++i)
    logp(i) = std::log(std::max(p(i), 1e-300)) / temperature;
  const double m = logp.maxCoeff();
  Vector q = (logp.array() - m).exp();
  q /= q.sum();
  SoftIndex out;
  out.q = std::move(q);
  for (Index i = 0; i < c; ++i) out.value += static_cast<double>(i) * out.q(i);
  return out;
}

// d m / d p_j = q_j (j - m) / (T p_j)
Vector soft_index_grad(const Vector& p, const SoftIndex& si, double temperature) {
  Vector g(p.size());
  for (Index j = 0; j < p.size(); ++j)
    g(j) = si.q(j) * (static_cast<double>(j) - si.value) /
           (temperature * std::max(p(j), 1e-12));
  return g;
}

Index argmax_index(const Vector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

}  // namespace

AlignLoss loss_align(const Matrix& y_attn, const Vector& y_ap, double temperature,
                     AlignMode mode) {
  if (y_attn.cols() != y_ap.size())
    raise(ErrorCode::DimMismatch, "prediction class counts differ");
  if (!(temperature > 0.0))
    raise(ErrorCode::ConfigError, "align temperature must be > 0");

  // the most probable prediction in the sequence: highest max class
  // probability, earliest index on ties
  Index sel = 0;
  double best = y_attn.row(0).maxCoeff();
  for (Index i = 1; i < y_attn.rows(); ++i) {
    const double m = y_attn.row(i).maxCoeff();
    if (m > best) {
      best = m;
      sel = i;
    }
  }

  const Vector row = y_attn.row(sel).transpose();
  AlignLoss out;
  out.selected_row = sel;
  out.reported = std::abs(static_cast<double>(argmax_index(row)) -
                          static_cast<double>(argmax_index(y_ap)));

  const SoftIndex si_row = soft_index(row, temperature);
  const SoftIndex si_ap = soft_index(y_ap, temperature);
  const double diff = si_row.value - si_ap.value;
  const double soft_value = std::abs(diff);
  const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);

  out.grad_y_attn = Matrix::Zero(y_attn.rows(), y_attn.cols());
  out.grad_y_ap = Vector::Zero(y_ap.size());
  if (mode != AlignMode::metric_only && sign != 0.0) {
    out.grad_y_attn.row(sel) =
        sign * soft_index_grad(row, si_row, temperature).transpose();
    out.grad_y_ap = -sign * soft_index_grad(y_ap, si_ap, temperature);
  }

  switch (mode) {
    case AlignMode::soft_argmax:
      out.surrogate = soft_value;
      break;
    case AlignMode::straight_through:
    case AlignMode::metric_only:
      out.surrogate = out.reported;
      break;
  }
  return out;
}

LossBreakdown total_loss(double dtw, double ap, double align_surrogate,
                         double align_reported, const LossWeights& weights) {
  weights.validate();
  LossBreakdown b;
  b.dtw = dtw;
  b.ap = ap;
  b.align = align_surrogate;
  b.align_reported = align_reported;
  b.total = weights.dtw * dtw + weights.ap * ap + weights.align * align_surrogate;
  return b;
}

}  // namespace microseq::losses
