#pragma once

#include "microseq/types.hpp"

#include <cstdint>
#include <string>
#include <utility>

namespace microseq::model {

enum class ApInput { ca_output, raw };

struct ModelConfig {
  int d = 32;            // input feature width
  int d_k = 192;         // attention projection width
  int hidden = 96;       // reduction-head hidden width
  int num_classes = 2;

  bool use_attention = true;
  bool use_ap = true;
  ApInput ap_input = ApInput::ca_output;
  bool ca_separate_kv = false;  // per-branch K/V projections instead of shared ones
  double lambda_stb = 1.0;
  double lambda_rpd = 1.0;

  void validate() const;

  // width of the representation feeding the pooling gate and the shared head
  int trunk_width() const { return use_attention ? d_k : d; }
  int ap_width() const {
    return (use_attention && ap_input == ApInput::ca_output) ? d_k : d;
  }
};

// All learnable weights. Tensors not used under the active configuration stay
// empty; vectors are stored as single-column matrices so the optimizer and
// the checkpoint writer can treat every tensor uniformly.
struct ModelParams {
  Matrix sa_wq, sa_wk, sa_wv;        // d x d_k
  Matrix ca_wq;                      // d_k x d_k (queries come from the SA output)
  Matrix ca_wk, ca_wv;               // d x d_k, shared across branches by default
  Matrix ca_wk_rpd, ca_wv_rpd;       // only with ca_separate_kv
  Matrix ap_gate_t, ap_gate_s;       // p x p
  Matrix ap_score;                   // p x 1
  Matrix head_w1, head_b1;           // q x h, h x 1
  Matrix head_w2, head_b2;           // h x C, C x 1
  double lambda_stb = 1.0;           // fixed branch weights, not optimized
  double lambda_rpd = 1.0;

  template <class F>
  void for_each_tensor(F&& f) {
    f("sa.wq", sa_wq);
    f("sa.wk", sa_wk);
    f("sa.wv", sa_wv);
    f("ca.wq", ca_wq);
    f("ca.wk", ca_wk);
    f("ca.wv", ca_wv);
    f("ca.wk_rpd", ca_wk_rpd);
    f("ca.wv_rpd", ca_wv_rpd);
    f("ap.gate_t", ap_gate_t);
    f("ap.gate_s", ap_gate_s);
    f("ap.score", ap_score);
    f("head.w1", head_w1);
    f("head.b1", head_b1);
    f("head.w2", head_w2);
    f("head.b2", head_b2);
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const char* name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }
};

// Zero tensors sized for the given configuration.
ModelParams shaped_params(const ModelConfig& cfg);

// Deterministic uniform(-s, s) initialization with s = sqrt(6 / (fan_in +
// fan_out)); biases zero.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

ModelParams zeros_like(const ModelParams& p);

struct PredictionBundle {
  Matrix y_attn;        // n x C rows on the simplex; empty when attention is off
  Vector y_ap;          // C, on the simplex; empty when pooling is off
  Vector pool_weights;  // n, positive, sums to one; empty when pooling is off
};

// Every intermediate the backward pass needs, captured by model_forward.
struct ForwardCache {
  Matrix x, x_stb, x_rpd;
  Matrix sa_q, sa_k, sa_v, sa_attn, sa_out;
  Matrix ca_q, ca_k_stb, ca_v_stb, ca_k_rpd, ca_v_rpd;
  Matrix ca_attn_stb, ca_attn_rpd, trunk;
  Matrix ap_in, gate_tanh, gate_sig;
  Vector ap_scores, pool_weights, pooled;
  Matrix seq_pre, seq_hidden, seq_logits;
  Vector pool_pre, pool_hidden, pool_logits;
  Matrix y_attn;
  Vector y_ap;
  bool valid = false;
};

// sigmoid(Q K^T / sqrt(d_k)) V with Q = X Wq, K = X Wk, V = X Wv;
// element-wise sigmoid, no row normalization.
Matrix self_attention(const Matrix& x, const ModelParams& p, const ModelConfig& cfg);

// lambda_stb * Attention(Q, K_stb, V_stb) + lambda_rpd * Attention(Q, K_rpd,
// V_rpd); queries come from the SA output, keys/values from each branch.
Matrix cross_attention(const Matrix& sa_out, const Matrix& x_stb, const Matrix& x_rpd,
                       const ModelParams& p, const ModelConfig& cfg);

// gated attention pooling: a = softmax_i(score^T (tanh(Gt h_i) (*) sigmoid(Gs
// h_i))), pooled = sum_i a_i h_i
std::pair<Vector, Vector> attention_pool(const Matrix& h, const ModelParams& p);

// two linear layers with a ReLU in between; shared between the sequence path
// and the pooled path
Matrix reduction_head(const Matrix& z, const ModelParams& p);

Vector softmax(const Vector& logits);
Matrix row_softmax(const Matrix& logits);

PredictionBundle model_forward(const Matrix& x, const Matrix& x_stb, const Matrix& x_rpd,
                               const ModelParams& p, const ModelConfig& cfg,
                               ForwardCache* cache = nullptr);

struct UpstreamGrads {
  Matrix d_seq_logits;   // n x C, gradient w.r.t. the sequence-path logits
  Vector d_pool_logits;  // C, gradient w.r.t. the pooled-path logits
  Vector d_pool_weights; // n, optional direct gradient on the pooling weights
};

// Exact reverse-mode pass through the cached forward; head gradients sum the
// contributions of both prediction paths.
ModelParams model_backward(const ForwardCache& cache, const ModelParams& p,
                           const ModelConfig& cfg, const UpstreamGrads& upstream);

}  // namespace microseq::model
