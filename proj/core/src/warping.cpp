#include "microseq/warping.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace microseq::warping {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_finite(const Matrix& m, const char* name) {
  if (!m.allFinite())
    raise(ErrorCode::NumericFailure, std::string(name) + " contains non-finite values");
}

void check_pair(const Matrix& a, const Matrix& b) {
  if (a.rows() < 1 || b.rows() < 1)
    raise(ErrorCode::DimMismatch, "sequences must have at least one frame");
  if (a.cols() != b.cols())
    raise(ErrorCode::DimMismatch,
          "column count mismatch: " + std::to_string(a.cols()) + " vs " +
              std::to_string(b.cols()));
  check_finite(a, "first sequence");
  check_finite(b, "second sequence");
}

// -gamma * log(exp(-a/g) + exp(-b/g) + exp(-c/g)), max-shifted. Arguments may
// be +inf; at least one must be finite.
inline double soft_min3(double a, double b, double c, double gamma) {
  const double m = std::min(a, std::min(b, c));
  const double s = std::exp(-(a - m) / gamma) + std::exp(-(b - m) / gamma) +
                   std::exp(-(c - m) / gamma);
  return m - gamma * std::log(s);
}

}  // namespace

Matrix pairwise_cost_matrix(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  Matrix cost(a.rows(), b.rows());
  const Vector a_sq = a.rowwise().squaredNorm();
  const Vector b_sq = b.rowwise().squaredNorm();
  cost.noalias() = -2.0 * a * b.transpose();
  cost.colwise() += a_sq;
  cost.rowwise() += b_sq.transpose();
  // clamp the tiny negatives the expansion can produce for near-identical rows
  cost = cost.cwiseMax(0.0);
  return cost;
}

SoftDtwResult softdtw_value(const Matrix& a, const Matrix& b, const SoftDtwConfig& cfg) {
  cfg.validate();
  const Matrix cost = pairwise_cost_matrix(a, b);
  const Index n = a.rows(), m = b.rows();

  Matrix r = Matrix::Constant(n + 2, m + 2, kInf);
  r(0, 0) = 0.0;
  for (Index i = 1; i <= n; ++i) {
    for (Index j = 1; j <= m; ++j) {
      r(i, j) = cost(i - 1, j - 1) +
                soft_min3(r(i - 1, j), r(i, j - 1), r(i - 1, j - 1), cfg.gamma);
    }
  }

  SoftDtwResult out;
  out.value = r(n, m);
  out.dp_table = std::move(r);
  return out;
}

double softdtw_distance(const Matrix& a, const Matrix& b, const SoftDtwConfig& cfg) {
  cfg.validate();
  check_pair(a, b);
  const Index n = a.rows(), m = b.rows();
  const double gamma = cfg.gamma;

  const Vector b_sq = b.rowwise().squaredNorm();
  std::vector<double> prev(static_cast<std::size_t>(m) + 1, kInf);
  std::vector<double> cur(static_cast<std::size_t>(m) + 1, kInf);
  prev[0] = 0.0;  // R(0,0); the rest of row 0 stays +inf

  for (Index i = 0; i < n; ++i) {
    cur[0] = kInf;
    const double a_sq = a.row(i).squaredNorm();
    for (Index j = 0; j < m; ++j) {
      const double cost =
          std::max(0.0, a_sq + b_sq(j) - 2.0 * a.row(i).dot(b.row(j)));
      const std::size_t jj = static_cast<std::size_t>(j);
      cur[jj + 1] = cost + soft_min3(prev[jj + 1], cur[jj], prev[jj], gamma);
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<std::size_t>(m)];
}

SoftDtwResult softdtw_gradient(const Matrix& a, const Matrix& b, const SoftDtwConfig& cfg) {
  SoftDtwResult res = softdtw_value(a, b, cfg);
  const Matrix cost = pairwise_cost_matrix(a, b);
  const Index n = a.rows(), m = b.rows();
  const double gamma = cfg.gamma;

  // Reverse accumulation of soft alignment expectations. Cells outside the
  // n x m grid are killed by the -inf border except the (n+1, m+1) corner,
  // whose cost is zero by construction.
  Matrix& r = res.dp_table;
  for (Index i = 0; i <= n + 1; ++i) r(i, m + 1) = -kInf;
  for (Index j = 0; j <= m; ++j) r(n + 1, j) = -kInf;
  r(n + 1, m + 1) = r(n, m);

  Matrix e = Matrix::Zero(n + 2, m + 2);
  e(n + 1, m + 1) = 1.0;

  for (Index j = m; j >= 1; --j) {
    for (Index i = n; i >= 1; --i) {
      const double rij = r(i, j);
      const double d_down = (i < n) ? cost(i, j - 1) : 0.0;
      const double d_right = (j < m) ? cost(i - 1, j) : 0.0;
      const double d_diag = (i < n && j < m) ? cost(i, j) : 0.0;

      const double w_down = std::exp((r(i + 1, j) - rij - d_down) / gamma);
      const double w_right = std::exp((r(i, j + 1) - rij - d_right) / gamma);
      const double w_diag = std::exp((r(i + 1, j + 1) - rij - d_diag) / gamma);
      e(i, j) = e(i + 1, j) * w_down + e(i, j + 1) * w_right +
                e(i + 1, j + 1) * w_diag;
    }
  }

  // d cost(i,j) / d a_i = 2 (a_i - b_j)
  Matrix grad(n, a.cols());
  for (Index i = 1; i <= n; ++i) {
    double wsum = 0.0;
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(a.cols());
    for (Index j = 1; j <= m; ++j) {
      const double w = e(i, j);
      wsum += w;
      acc += w * b.row(j - 1);
    }
    grad.row(i - 1) = 2.0 * (wsum * a.row(i - 1) - acc);
  }

  if (!grad.allFinite())
    raise(ErrorCode::NumericFailure, "soft-DTW gradient is non-finite");
  res.grad_first = std::move(grad);

  // restore the forward-table borders
  for (Index i = 0; i <= n + 1; ++i) r(i, m + 1) = kInf;
  for (Index j = 0; j <= m + 1; ++j) r(n + 1, j) = kInf;
  return res;
}

double hard_dtw(const Matrix& a, const Matrix& b) {
  const Matrix cost = pairwise_cost_matrix(a, b);
  const Index n = a.rows(), m = b.rows();
  std::vector<double> prev(static_cast<std::size_t>(m) + 1, kInf);
  std::vector<double> cur(static_cast<std::size_t>(m) + 1, kInf);
  prev[0] = 0.0;
  for (Index i = 0; i < n; ++i) {
    cur[0] = kInf;
    for (Index j = 0; j < m; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      cur[jj + 1] = cost(i, j) + std::min({prev[jj + 1], cur[jj], prev[jj]});
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<std::size_t>(m)];
}

double beta_cdf(double x, int alpha, int beta) {
  if (alpha < 1 || beta < 1)
    raise(ErrorCode::DomainError, "beta_cdf requires positive integer shapes");
  if (!(x >= 0.0) || x > 1.0)
    raise(ErrorCode::DomainError, "beta_cdf argument outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;

  // I_x(a, b) = sum_{j=a}^{a+b-1} C(a+b-1, j) x^j (1-x)^{a+b-1-j}.
  // Past the mean, sum the complement instead: the head has few terms and
  // keeps the saturating tail monotone in floating point.
  const int n = alpha + beta - 1;
  const double mean = static_cast<double>(alpha) / (alpha + beta);
  double binom = 1.0;  // C(n, 0)
  if (x <= mean) {
    double sum = 0.0;
    for (int j = 0; j <= n; ++j) {
      if (j >= alpha)
        sum += binom * std::pow(x, j) * std::pow(1.0 - x, n - j);
      binom *= static_cast<double>(n - j) / static_cast<double>(j + 1);
    }
    return std::min(1.0, std::max(0.0, sum));
  }
  double head = 0.0;
  for (int j = 0; j < alpha; ++j) {
    head += binom * std::pow(x, j) * std::pow(1.0 - x, n - j);
    binom *= static_cast<double>(n - j) / static_cast<double>(j + 1);
  }
  return std::min(1.0, std::max(0.0, 1.0 - head));
}

namespace {

TargetSequence build_trajectory(int length, int num_classes, int target_class,
                                TargetKind kind) {
  if (length < 1) raise(ErrorCode::BadClass, "target length must be >= 1");
  if (num_classes < 2) raise(ErrorCode::BadClass, "need at least two classes");
  if (target_class < 0 || target_class >= num_classes)
    raise(ErrorCode::BadClass, "target_class " + std::to_string(target_class) +
                                   " out of range [0, " + std::to_string(num_classes) + ")");

  // a normal case has no onset semantics
  if (target_class == 0) kind = TargetKind::constant;

  TargetSequence t;
  t.kind = kind;
  t.target_class = target_class;
  t.values = Matrix::Zero(length, num_classes);
  if (kind == TargetKind::constant) {
    t.values.col(target_class).setOnes();
  } else {
    for (int row = 0; row < length; ++row) {
      const double cdf = beta_cdf(static_cast<double>(row + 1) / length, 3, 20);
      t.values(row, target_class) = cdf;
      t.values(row, 0) = 1.0 - cdf;
    }
  }
  return t;
}

}  // namespace

TargetSequence build_target_sequence(int length, int num_classes, int target_class,
                                     TargetKind kind) {
  return build_trajectory(length, num_classes, target_class, kind);
}

TargetSequence build_ideal_reference(int length, int num_classes, int target_class,
                                     TargetKind kind) {
  return build_trajectory(length, num_classes, target_class, kind);
}

}  // namespace microseq::warping
