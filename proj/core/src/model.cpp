#include "microseq/model.hpp"

#include <cmath>
#include <string>

namespace microseq::model {

namespace {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid_mat(Matrix m) {
  return m.unaryExpr([](double v) { return sigmoid(v); });
}

void check_finite(const Matrix& m, const char* name) {
  if (!m.allFinite())
    raise(ErrorCode::NumericFailure, std::string(name) + " contains non-finite values");
}

void uniform_fill(Matrix& m, double scale, Rng& rng) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-scale, scale);
}

double glorot_scale(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

void ModelConfig::validate() const {
  if (d < 1 || d_k < 1 || hidden < 1)
    raise(ErrorCode::BadDims, "model widths must be positive");
  if (num_classes < 2) raise(ErrorCode::BadDims, "need at least two classes");
  if (!use_attention && !use_ap)
    raise(ErrorCode::ConfigError, "at least one prediction path must be enabled");
  if (use_attention && use_ap && ap_input == ApInput::raw && d != d_k)
    raise(ErrorCode::ConfigError,
          "ap_input=raw requires d == d_k so the shared reduction head fits both paths");
}

ModelParams shaped_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.lambda_stb = cfg.lambda_stb;
  p.lambda_rpd = cfg.lambda_rpd;

  const int d = cfg.d, k = cfg.d_k, h = cfg.hidden, c = cfg.num_classes;
  if (cfg.use_attention) {
    p.sa_wq = Matrix::Zero(d, k);
    p.sa_wk = Matrix::Zero(d, k);
    p.sa_wv = Matrix::Zero(d, k);
    p.ca_wq = Matrix::Zero(k, k);
    p.ca_wk = Matrix::Zero(d, k);
    p.ca_wv = Matrix::Zero(d, k);
    if (cfg.ca_separate_kv) {
      p.ca_wk_rpd = Matrix::Zero(d, k);
      p.ca_wv_rpd = Matrix::Zero(d, k);
    }
  }
  if (cfg.use_ap) {
    const int pw = cfg.ap_width();
    p.ap_gate_t = Matrix::Zero(pw, pw);
    p.ap_gate_s = Matrix::Zero(pw, pw);
    p.ap_score = Matrix::Zero(pw, 1);
  }
  p.head_w1 = Matrix::Zero(cfg.trunk_width(), h);
  p.head_b1 = Matrix::Zero(h, 1);
  p.head_w2 = Matrix::Zero(h, c);
  p.head_b2 = Matrix::Zero(c, 1);
  return p;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = shaped_params(cfg);
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  p.for_each_tensor([&](const char* name, Matrix& m) {
    if (m.size() == 0) return;
    const std::string n(name);
    if (n == "head.b1" || n == "head.b2") return;  // biases stay zero
    uniform_fill(m, glorot_scale(m.rows(), m.cols()), rng);
  });
  return p;
}

ModelParams zeros_like(const ModelParams& src) {
  ModelParams p;
  p.lambda_stb = src.lambda_stb;
  p.lambda_rpd = src.lambda_rpd;
  std::vector<const Matrix*> from;
  src.for_each_tensor([&](const char*, const Matrix& m) { from.push_back(&m); });
  std::size_t i = 0;
  p.for_each_tensor([&](const char*, Matrix& m) {
    const Matrix& s = *from[i++];
    if (s.size() > 0) m = Matrix::Zero(s.rows(), s.cols());
  });
  return p;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i)
    out.row(i) = softmax(logits.row(i).transpose()).transpose();
  return out;
}

namespace {

Matrix linear_head(const Matrix& z, const ModelParams& p, Matrix* pre, Matrix* hidden) {
  if (z.cols() != p.head_w1.rows())
    raise(ErrorCode::DimMismatch,
          "reduction head expects width " + std::to_string(p.head_w1.rows()) + ", got " +
              std::to_string(z.cols()));
  Matrix l1 = z * p.head_w1;
  l1.rowwise() += p.head_b1.col(0).transpose();
  Matrix r1 = l1.cwiseMax(0.0);
  Matrix logits = r1 * p.head_w2;
  logits.rowwise() += p.head_b2.col(0).transpose();
  if (pre) *pre = std::move(l1);
  if (hidden) *hidden = std::move(r1);
  return logits;
}

Matrix sigmoid_attention(const Matrix& q, const Matrix& k, const Matrix& v, Matrix* attn) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix a = sigmoid_mat(q * k.transpose() * inv_sqrt);
  Matrix out = a * v;
  if (attn) *attn = std::move(a);
  return out;
}

}  // namespace

Matrix self_attention(const Matrix& x, const ModelParams& p, const ModelConfig& cfg) {
  check_finite(x, "self-attention input");
  if (x.cols() != cfg.d || p.sa_wq.rows() != cfg.d)
    raise(ErrorCode::DimMismatch, "self-attention width mismatch");
  return sigmoid_attention(x * p.sa_wq, x * p.sa_wk, x * p.sa_wv, nullptr);
}

Matrix cross_attention(const Matrix& sa_out, const Matrix& x_stb, const Matrix& x_rpd,
                       const ModelParams& p, const ModelConfig& cfg) {
  if (sa_out.cols() != cfg.d_k || x_stb.cols() != cfg.d || x_rpd.cols() != cfg.d ||
      sa_out.rows() != x_stb.rows() || x_stb.rows() != x_rpd.rows())
    raise(ErrorCode::DimMismatch, "cross-attention shape mismatch");
  const Matrix& wk_rpd = cfg.ca_separate_kv ? p.ca_wk_rpd : p.ca_wk;
  const Matrix& wv_rpd = cfg.ca_separate_kv ? p.ca_wv_rpd : p.ca_wv;
  const Matrix q = sa_out * p.ca_wq;
  Matrix out = p.lambda_stb *
               sigmoid_attention(q, x_stb * p.ca_wk, x_stb * p.ca_wv, nullptr);
  out += p.lambda_rpd *
         sigmoid_attention(q, x_rpd * wk_rpd, x_rpd * wv_rpd, nullptr);
  return out;
}

std::pair<Vector, Vector> attention_pool(const Matrix& h, const ModelParams& p) {
  check_finite(h, "attention-pool input");
  if (h.cols() != p.ap_gate_t.cols())
    raise(ErrorCode::DimMismatch, "attention-pool width mismatch");
  const Matrix gate_t = (h * p.ap_gate_t.transpose()).array().tanh();
  const Matrix gate_s = sigmoid_mat(h * p.ap_gate_s.transpose());
  const Vector scores = (gate_t.array() * gate_s.array()).matrix() * p.ap_score.col(0);
  const Vector weights = softmax(scores);
  Vector pooled = h.transpose() * weights;
  return {std::move(pooled), weights};
}

Matrix reduction_head(const Matrix& z, const ModelParams& p) {
  return linear_head(z, p, nullptr, nullptr);
}

PredictionBundle model_forward(const Matrix& x, const Matrix& x_stb, const Matrix& x_rpd,
                               const ModelParams& p, const ModelConfig& cfg,
                               ForwardCache* cache) {
  cfg.validate();
  check_finite(x, "model input");
  if (x.rows() < 1) raise(ErrorCode::DimMismatch, "empty sequence");
  if (x.cols() != cfg.d)
    raise(ErrorCode::DimMismatch, "input width " + std::to_string(x.cols()) +
                                      " != configured d " + std::to_string(cfg.d));

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  c.x = x;

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));

  if (cfg.use_attention) {
    check_finite(x_stb, "stable component");
    check_finite(x_rpd, "rapid component");
    if (x_stb.rows() != x.rows() || x_rpd.rows() != x.rows() ||
        x_stb.cols() != cfg.d || x_rpd.cols() != cfg.d)
      raise(ErrorCode::DimMismatch, "wavelet components must match the input shape");
    c.x_stb = x_stb;
    c.x_rpd = x_rpd;

    c.sa_q.noalias() = x * p.sa_wq;
    c.sa_k.noalias() = x * p.sa_wk;
    c.sa_v.noalias() = x * p.sa_wv;
    c.sa_attn = sigmoid_mat(c.sa_q * c.sa_k.transpose() * inv_sqrt);
    c.sa_out.noalias() = c.sa_attn * c.sa_v;

    const Matrix& wk_rpd = cfg.ca_separate_kv ? p.ca_wk_rpd : p.ca_wk;
    const Matrix& wv_rpd = cfg.ca_separate_kv ? p.ca_wv_rpd : p.ca_wv;
    c.ca_q.noalias() = c.sa_out * p.ca_wq;
    c.ca_k_stb.noalias() = x_stb * p.ca_wk;
    c.ca_v_stb.noalias() = x_stb * p.ca_wv;
    c.ca_k_rpd.noalias() = x_rpd * wk_rpd;
    c.ca_v_rpd.noalias() = x_rpd * wv_rpd;
    c.ca_attn_stb = sigmoid_mat(c.ca_q * c.ca_k_stb.transpose() * inv_sqrt);
    c.ca_attn_rpd = sigmoid_mat(c.ca_q * c.ca_k_rpd.transpose() * inv_sqrt);
    c.trunk = p.lambda_stb * (c.ca_attn_stb * c.ca_v_stb) +
              p.lambda_rpd * (c.ca_attn_rpd * c.ca_v_rpd);
  } else {
    c.trunk = x;
  }

  PredictionBundle bundle;

  if (cfg.use_attention) {
    c.seq_logits = linear_head(c.trunk, p, &c.seq_pre, &c.seq_hidden);
    c.y_attn = row_softmax(c.seq_logits);
    check_finite(c.y_attn, "sequence predictions");
    bundle.y_attn = c.y_attn;
  }

  if (cfg.use_ap) {
    c.ap_in = (cfg.use_attention && cfg.ap_input == ApInput::ca_output) ? c.trunk : c.x;
    const Matrix gate_pre_t = c.ap_in * p.ap_gate_t.transpose();
    const Matrix gate_pre_s = c.ap_in * p.ap_gate_s.transpose();
    c.gate_tanh = gate_pre_t.array().tanh();
    c.gate_sig = sigmoid_mat(gate_pre_s);
    c.ap_scores = (c.gate_tanh.array() * c.gate_sig.array()).matrix() * p.ap_score.col(0);
    c.pool_weights = softmax(c.ap_scores);
    c.pooled = c.ap_in.transpose() * c.pool_weights;

    Matrix pre, hidden;
    const Matrix logits = linear_head(c.pooled.transpose(), p, &pre, &hidden);
    c.pool_pre = pre.row(0).transpose();
    c.pool_hidden = hidden.row(0).transpose();
    c.pool_logits = logits.row(0).transpose();
    c.y_ap = softmax(c.pool_logits);
    if (!c.y_ap.allFinite())
      raise(ErrorCode::NumericFailure, "pooled prediction is non-finite");
    bundle.y_ap = c.y_ap;
    bundle.pool_weights = c.pool_weights;
  }

  c.valid = true;
  return bundle;
}

ModelParams model_backward(const ForwardCache& c, const ModelParams& p,
                           const ModelConfig& cfg, const UpstreamGrads& upstream) {
  if (!c.valid) raise(ErrorCode::StaleCache, "forward cache is not populated");
  if (c.trunk.cols() != cfg.trunk_width() || c.x.cols() != cfg.d)
    raise(ErrorCode::StaleCache, "forward cache does not match the configuration");

  ModelParams g = zeros_like(p);
  const Index n = c.x.rows();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));

  Matrix d_trunk = Matrix::Zero(c.trunk.rows(), c.trunk.cols());

  // sequence path of the shared head
  if (cfg.use_attention && upstream.d_seq_logits.size() > 0) {
    if (upstream.d_seq_logits.rows() != n ||
        upstream.d_seq_logits.cols() != cfg.num_classes)
      raise(ErrorCode::ShapeMismatch, "sequence-logit gradient shape mismatch");
    const Matrix& dl = upstream.d_seq_logits;
    g.head_w2 += c.seq_hidden.transpose() * dl;
    g.head_b2.col(0) += dl.colwise().sum().transpose();
    Matrix d_hidden = dl * p.head_w2.transpose();
    Matrix d_pre =
        (c.seq_pre.array() > 0.0).select(d_hidden, Matrix::Zero(n, d_hidden.cols()));
    g.head_w1 += c.trunk.transpose() * d_pre;
    g.head_b1.col(0) += d_pre.colwise().sum().transpose();
    d_trunk += d_pre * p.head_w1.transpose();
  }

  // pooled path of the shared head, then the pooling gate
  if (cfg.use_ap &&
      (upstream.d_pool_logits.size() > 0 || upstream.d_pool_weights.size() > 0)) {
    Vector d_pool_pre;
    if (upstream.d_pool_logits.size() > 0) {
      if (upstream.d_pool_logits.size() != cfg.num_classes)
        raise(ErrorCode::ShapeMismatch, "pooled-logit gradient shape mismatch");
      const Vector& dl = upstream.d_pool_logits;
      g.head_w2 += c.pool_hidden * dl.transpose();
      g.head_b2.col(0) += dl;
      Vector d_hidden = p.head_w2 * dl;
      d_pool_pre =
          (c.pool_pre.array() > 0.0).select(d_hidden, Vector::Zero(d_hidden.size()));
      g.head_w1 += c.pooled * d_pool_pre.transpose();
      g.head_b1.col(0) += d_pool_pre;
    }

    Vector d_pooled = d_pool_pre.size() > 0 ? Vector(p.head_w1 * d_pool_pre)
                                            : Vector(Vector::Zero(c.pooled.size()));

    // pooled = ap_in^T a
    Matrix d_ap_in = c.pool_weights * d_pooled.transpose();
    Vector d_weights = c.ap_in * d_pooled;
    if (upstream.d_pool_weights.size() > 0) {
      if (upstream.d_pool_weights.size() != n)
        raise(ErrorCode::ShapeMismatch, "pool-weight gradient shape mismatch");
      d_weights += upstream.d_pool_weights;
    }

    // softmax over the gate scores
    const Vector& a = c.pool_weights;
    const double dot = a.dot(d_weights);
    const Vector d_scores = a.array() * (d_weights.array() - dot);

    const Matrix gate = (c.gate_tanh.array() * c.gate_sig.array()).matrix();
    g.ap_score.col(0) += gate.transpose() * d_scores;
    const Matrix d_gate = d_scores * p.ap_score.col(0).transpose();

    const Matrix d_pre_t =
        (d_gate.array() * c.gate_sig.array() * (1.0 - c.gate_tanh.array().square()))
            .matrix();
    const Matrix d_pre_s = (d_gate.array() * c.gate_tanh.array() * c.gate_sig.array() *
                            (1.0 - c.gate_sig.array()))
                               .matrix();
    g.ap_gate_t += d_pre_t.transpose() * c.ap_in;
    g.ap_gate_s += d_pre_s.transpose() * c.ap_in;
    d_ap_in += d_pre_t * p.ap_gate_t + d_pre_s * p.ap_gate_s;

    if (cfg.use_attention && cfg.ap_input == ApInput::ca_output) d_trunk += d_ap_in;
    // raw-input pooling differentiates into the data, which carries no parameters
  }

  if (!cfg.use_attention) return g;

  // cross-attention
  Matrix d_ca_q = Matrix::Zero(n, cfg.d_k);
  auto backprop_branch = [&](double lambda, const Matrix& attn, const Matrix& k_mat,
                             const Matrix& v_mat, const Matrix& x_branch, Matrix& g_wk,
                             Matrix& g_wv) {
    const Matrix d_v = lambda * (attn.transpose() * d_trunk);
    const Matrix d_attn = lambda * (d_trunk * v_mat.transpose());
    const Matrix d_z =
        (d_attn.array() * attn.array() * (1.0 - attn.array())).matrix() * inv_sqrt;
    d_ca_q += d_z * k_mat;
    const Matrix d_k = d_z.transpose() * c.ca_q;
    g_wk += x_branch.transpose() * d_k;
    g_wv += x_branch.transpose() * d_v;
  };
  backprop_branch(p.lambda_stb, c.ca_attn_stb, c.ca_k_stb, c.ca_v_stb, c.x_stb, g.ca_wk,
                  g.ca_wv);
  backprop_branch(p.lambda_rpd, c.ca_attn_rpd, c.ca_k_rpd, c.ca_v_rpd, c.x_rpd,
                  cfg.ca_separate_kv ? g.ca_wk_rpd : g.ca_wk,
                  cfg.ca_separate_kv ? g.ca_wv_rpd : g.ca_wv);

  g.ca_wq += c.sa_out.transpose() * d_ca_q;
  Matrix d_sa_out = d_ca_q * p.ca_wq.transpose();

  // self-attention
  const Matrix d_sa_v = c.sa_attn.transpose() * d_sa_out;
  const Matrix d_attn = d_sa_out * c.sa_v.transpose();
  const Matrix d_z =
      (d_attn.array() * c.sa_attn.array() * (1.0 - c.sa_attn.array())).matrix() *
      inv_sqrt;
  const Matrix d_sa_q = d_z * c.sa_k;
  const Matrix d_sa_k = d_z.transpose() * c.sa_q;
  g.sa_wq += c.x.transpose() * d_sa_q;
  g.sa_wk += c.x.transpose() * d_sa_k;
  g.sa_wv += c.x.transpose() * d_sa_v;

  return g;
}

}  // namespace microseq::model
