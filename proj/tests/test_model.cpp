#include <doctest.h>

#include <microseq/model.hpp>

#include "oracles.hpp"

#include <cmath>
#include <vector>

using namespace microseq;
using namespace microseq::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 4;
  cfg.d_k = 4;
  cfg.hidden = 4;
  cfg.num_classes = 2;
  return cfg;
}

// element-wise sigmoid attention evaluated with explicit loops
Matrix naive_sigmoid_attention(const Matrix& x, const Matrix& wq, const Matrix& wk,
                               const Matrix& wv) {
  const Matrix q = oracles::matmul(x, wq);
  const Matrix k = oracles::matmul(x, wk);
  const Matrix v = oracles::matmul(x, wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  Matrix out = Matrix::Zero(x.rows(), wv.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.rows(); ++j) {
      double z = 0.0;
      for (Index a = 0; a < q.cols(); ++a) z += q(i, a) * k(j, a);
      const double w = 1.0 / (1.0 + std::exp(-z * scale));
      for (Index a = 0; a < v.cols(); ++a) out(i, a) += w * v(j, a);
    }
  }
  return out;
}

std::vector<Matrix> wavelet_like(const Matrix& x) {
  Matrix stb(x.rows(), x.cols()), rpd(x.rows(), x.cols());
  stb.row(0) = x.row(0);
  rpd.row(0).setZero();
  for (Index i = 1; i < x.rows(); ++i) {
    stb.row(i) = 0.5 * (x.row(i) + x.row(i - 1));
    rpd.row(i) = 0.5 * (x.row(i) - x.row(i - 1));
  }
  return {stb, rpd};
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("init is deterministic per seed and respects the fan-based bound") {
  const auto cfg = tiny_config();
  const auto a = init_params(cfg, 42);
  const auto b = init_params(cfg, 42);
  const auto c = init_params(cfg, 43);

  bool all_equal = true, any_differs = false;
  std::vector<const Matrix*> av, bv, cv;
  a.for_each_tensor([&](const char*, const Matrix& m) { av.push_back(&m); });
  b.for_each_tensor([&](const char*, const Matrix& m) { bv.push_back(&m); });
  c.for_each_tensor([&](const char*, const Matrix& m) { cv.push_back(&m); });
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i]->size() == 0) continue;
    all_equal &= (*av[i] - *bv[i]).norm() == 0.0;
    any_differs |= (*av[i] - *cv[i]).norm() > 0.0;
    const double bound = std::sqrt(6.0 / static_cast<double>(av[i]->rows() + av[i]->cols()));
    CHECK(av[i]->cwiseAbs().maxCoeff() <= bound);
  }
  CHECK(all_equal);
  CHECK(any_differs);
  CHECK(a.head_b1.norm() == 0.0);
  CHECK(a.head_b2.norm() == 0.0);
}

TEST_CASE("zero query and key projections give half-weight sums") {
  const auto cfg = tiny_config();
  auto p = init_params(cfg, 1);
  p.sa_wq.setZero();
  p.sa_wk.setZero();
  Rng rng(5);
  const Matrix x = oracles::random_matrix(3, 4, rng);
  const Matrix v = x * p.sa_wv;
  const Matrix out = self_attention(x, p, cfg);
  for (Index i = 0; i < 3; ++i)
    CHECK((out.row(i) - 0.5 * v.colwise().sum()).norm() <= 1e-12);
}

TEST_CASE("single-frame self-attention reduces to a scalar gate") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 2);
  Rng rng(6);
  const Matrix x = oracles::random_matrix(1, 4, rng);
  const double z = (x * p.sa_wq).row(0).dot((x * p.sa_wk).row(0)) / 2.0;  // sqrt(4)
  const double gate = 1.0 / (1.0 + std::exp(-z));
  const Matrix expect = gate * (x * p.sa_wv);
  CHECK((self_attention(x, p, cfg) - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("self-attention matches the dense-algebra oracle") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 3);
  Rng rng(7);
  const Matrix x = oracles::random_matrix(3, 4, rng);
  const Matrix expect = naive_sigmoid_attention(x, p.sa_wq, p.sa_wk, p.sa_wv);
  CHECK((self_attention(x, p, cfg) - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("cross-attention branch weights behave linearly") {
  auto cfg = tiny_config();
  auto p = init_params(cfg, 4);
  Rng rng(8);
  const Matrix s = oracles::random_matrix(3, 4, rng);
  const Matrix xb = oracles::random_matrix(3, 4, rng);

  p.lambda_stb = 1.0;
  p.lambda_rpd = 0.0;
  const Matrix one_branch = cross_attention(s, xb, xb, p, cfg);
  p.lambda_rpd = 1.0;
  const Matrix two_branches = cross_attention(s, xb, xb, p, cfg);
  CHECK((two_branches - 2.0 * one_branch).lpNorm<Eigen::Infinity>() <= 1e-12);

  // oracle for the single branch
  const Matrix q = s * p.ca_wq;
  const Matrix k = xb * p.ca_wk;
  const Matrix v = xb * p.ca_wv;
  Matrix expect = Matrix::Zero(3, 4);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) {
      const double w = 1.0 / (1.0 + std::exp(-q.row(i).dot(k.row(j)) / 2.0));
      expect.row(i) += w * v.row(j);
    }
  CHECK((one_branch - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("attention pooling with a zero score vector averages the rows") {
  const auto cfg = tiny_config();
  auto p = init_params(cfg, 5);
  p.ap_score.setZero();
  Rng rng(9);
  const Matrix h = oracles::random_matrix(5, 4, rng);
  const auto [pooled, weights] = attention_pool(h, p);
  for (Index i = 0; i < 5; ++i) CHECK(weights(i) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK((pooled - h.colwise().mean().transpose()).norm() <= 1e-12);
}

TEST_CASE("attention pooling of one row is that row") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 6);
  Rng rng(10);
  const Matrix h = oracles::random_matrix(1, 4, rng);
  const auto [pooled, weights] = attention_pool(h, p);
  CHECK(weights(0) == 1.0);
  CHECK((pooled - h.row(0).transpose()).norm() == 0.0);
}

TEST_CASE("pooled output is permutation invariant, weights permute along") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 7);
  Rng rng(11);
  const Matrix h = oracles::random_matrix(6, 4, rng);
  Matrix perm(6, 4);
  const std::vector<Index> order{3, 0, 5, 1, 4, 2};
  for (Index i = 0; i < 6; ++i) perm.row(i) = h.row(order[static_cast<std::size_t>(i)]);

  const auto [p1, w1] = attention_pool(h, p);
  const auto [p2, w2] = attention_pool(perm, p);
  CHECK((p1 - p2).lpNorm<Eigen::Infinity>() <= 1e-12);
  for (Index i = 0; i < 6; ++i)
    CHECK(w2(i) == doctest::Approx(w1(order[static_cast<std::size_t>(i)])).epsilon(1e-12));
}

TEST_CASE("reduction head with zero weights is uniform after softmax") {
  const auto cfg = tiny_config();
  auto p = init_params(cfg, 8);
  p.head_w1.setZero();
  p.head_w2.setZero();
  const Matrix logits = reduction_head(Matrix::Random(3, 4), p);
  CHECK(logits.norm() == 0.0);
  const Matrix probs = row_softmax(logits);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j) CHECK(probs(i, j) == doctest::Approx(0.5));
}

TEST_CASE("constant output bias shifts every logit row") {
  const auto cfg = tiny_config();
  auto p = init_params(cfg, 9);
  p.head_w2.setZero();
  p.head_b2 << 1.25, -0.5;
  Rng rng(12);
  const Matrix logits = reduction_head(oracles::random_matrix(4, 4, rng), p);
  for (Index i = 0; i < 4; ++i) {
    CHECK(logits(i, 0) == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(logits(i, 1) == doctest::Approx(-0.5).epsilon(1e-12));
  }
}

TEST_CASE("reduction head matches the dense-algebra oracle") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 10);
  Rng rng(13);
  const Matrix z = oracles::random_matrix(3, 4, rng);
  Matrix l1 = oracles::matmul(z, p.head_w1);
  for (Index i = 0; i < l1.rows(); ++i) l1.row(i) += p.head_b1.col(0).transpose();
  const Matrix r1 = l1.cwiseMax(0.0);
  Matrix expect = oracles::matmul(r1, p.head_w2);
  for (Index i = 0; i < expect.rows(); ++i) expect.row(i) += p.head_b2.col(0).transpose();
  CHECK((reduction_head(z, p) - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("forward with all-zero weights is maximally uninformative") {
  const auto cfg = tiny_config();
  const auto p = shaped_params(cfg);
  Rng rng(14);
  const Matrix x = oracles::random_matrix(5, 4, rng);
  const auto w = wavelet_like(x);
  const auto bundle = model_forward(x, w[0], w[1], p, cfg);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 2; ++j) CHECK(bundle.y_attn(i, j) == doctest::Approx(0.5));
  CHECK(bundle.y_ap(0) == doctest::Approx(0.5));
  for (Index i = 0; i < 5; ++i)
    CHECK(bundle.pool_weights(i) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("prediction bundle lives on the probability simplex") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 15);
  Rng rng(16);
  for (int trial = 0; trial < 8; ++trial) {
    const auto n = static_cast<Index>(rng.uniform_int(1, 9));
    const Matrix x = oracles::random_matrix(n, 4, rng, -2.0, 2.0);
    const auto w = wavelet_like(x);
    const auto bundle = model_forward(x, w[0], w[1], p, cfg);
    for (Index i = 0; i < n; ++i) {
      CHECK(bundle.y_attn.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(bundle.y_attn.row(i).minCoeff() > 0.0);
    }
    CHECK(bundle.y_ap.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bundle.pool_weights.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bundle.pool_weights.minCoeff() > 0.0);
  }
}

TEST_CASE("duplicated frames produce identical prediction rows") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 17);
  Rng rng(18);
  Matrix x = oracles::random_matrix(4, 4, rng);
  x.row(2) = x.row(1);  // duplicate
  // flat components keep the duplication symmetry intact
  const auto bundle = model_forward(x, x, x, p, cfg);
  CHECK((bundle.y_attn.row(1) - bundle.y_attn.row(2)).norm() <= 1e-12);
}

TEST_CASE("sequence outputs are permutation covariant") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 19);
  Rng rng(20);
  const Matrix x = oracles::random_matrix(6, 4, rng);
  Matrix xp(6, 4);
  const std::vector<Index> order{5, 2, 0, 4, 1, 3};
  for (Index i = 0; i < 6; ++i) xp.row(i) = x.row(order[static_cast<std::size_t>(i)]);

  const auto a = model_forward(x, x, x, p, cfg);
  const auto b = model_forward(xp, xp, xp, p, cfg);
  for (Index i = 0; i < 6; ++i)
    CHECK((b.y_attn.row(i) - a.y_attn.row(order[static_cast<std::size_t>(i)])).norm() <=
          1e-12);
  CHECK((b.y_ap - a.y_ap).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("sigmoid attention output is bounded by column absolute sums") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 21);
  Rng rng(22);
  const Matrix x = oracles::random_matrix(7, 4, rng, -3.0, 3.0);
  const Matrix v = x * p.sa_wv;
  const Matrix out = self_attention(x, p, cfg);
  for (Index c = 0; c < out.cols(); ++c)
    CHECK(out.col(c).cwiseAbs().maxCoeff() <= v.col(c).cwiseAbs().sum() + 1e-12);
}

TEST_CASE("backward of zero upstream is exactly zero") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 23);
  Rng rng(24);
  const Matrix x = oracles::random_matrix(5, 4, rng);
  const auto w = wavelet_like(x);
  ForwardCache cache;
  model_forward(x, w[0], w[1], p, cfg, &cache);

  UpstreamGrads up;
  up.d_seq_logits = Matrix::Zero(5, 2);
  up.d_pool_logits = Vector::Zero(2);
  const auto g = model_backward(cache, p, cfg, up);
  g.for_each_tensor([](const char*, const Matrix& m) {
    if (m.size() > 0) CHECK(m.norm() == 0.0);
  });
}

TEST_CASE("backward is linear in the upstream gradient") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 25);
  Rng rng(26);
  const Matrix x = oracles::random_matrix(5, 4, rng);
  const auto w = wavelet_like(x);
  ForwardCache cache;
  model_forward(x, w[0], w[1], p, cfg, &cache);

  UpstreamGrads up;
  up.d_seq_logits = oracles::random_matrix(5, 2, rng);
  up.d_pool_logits = oracles::random_matrix(2, 1, rng).col(0);
  const auto g1 = model_backward(cache, p, cfg, up);
  up.d_seq_logits *= 2.0;
  up.d_pool_logits *= 2.0;
  const auto g2 = model_backward(cache, p, cfg, up);

  std::vector<const Matrix*> v1, v2;
  g1.for_each_tensor([&](const char*, const Matrix& m) { v1.push_back(&m); });
  g2.for_each_tensor([&](const char*, const Matrix& m) { v2.push_back(&m); });
  for (std::size_t i = 0; i < v1.size(); ++i) {
    if (v1[i]->size() == 0) continue;
    CHECK((2.0 * (*v1[i]) - *v2[i]).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
}

TEST_CASE("stale caches are rejected") {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 27);
  ForwardCache cache;  // never populated
  UpstreamGrads up;
  CHECK_THROWS_AS(model_backward(cache, p, cfg, up), Error);
}

namespace {

// scalar functional F = <A, seq_logits> + <b, pool_logits>; the exact
// parameter gradient is model_backward with upstream (A, b)
void check_backward_against_fd(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = init_params(cfg, seed);
  Rng rng(seed + 1000);
  const auto n = Index{5};
  const Matrix x = oracles::random_matrix(n, cfg.d, rng);
  const auto w = wavelet_like(x);

  const Matrix weight_seq =
      cfg.use_attention ? oracles::random_matrix(n, cfg.num_classes, rng) : Matrix();
  const Vector weight_pool =
      cfg.use_ap ? Vector(oracles::random_matrix(cfg.num_classes, 1, rng).col(0))
                 : Vector();

  const auto functional = [&]() {
    ForwardCache cache;
    model_forward(x, w[0], w[1], p, cfg, &cache);
    double f = 0.0;
    if (cfg.use_attention) f += (weight_seq.array() * cache.seq_logits.array()).sum();
    if (cfg.use_ap) f += weight_pool.dot(cache.pool_logits);
    return f;
  };

  ForwardCache cache;
  model_forward(x, w[0], w[1], p, cfg, &cache);
  UpstreamGrads up;
  if (cfg.use_attention) up.d_seq_logits = weight_seq;
  if (cfg.use_ap) up.d_pool_logits = weight_pool;
  const auto analytic = model_backward(cache, p, cfg, up);

  std::vector<Matrix*> params;
  std::vector<const Matrix*> grads;
  p.for_each_tensor([&](const char*, Matrix& m) { params.push_back(&m); });
  analytic.for_each_tensor([&](const char*, const Matrix& m) { grads.push_back(&m); });

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t]->size() == 0) continue;
    for (Index i = 0; i < params[t]->rows(); ++i)
      for (Index j = 0; j < params[t]->cols(); ++j) {
        const double fd = oracles::central_diff(functional, (*params[t])(i, j));
        worst = std::max(worst, oracles::rel_err((*grads[t])(i, j), fd));
      }
  }
  CHECK(worst <= 1e-4);
}

}  // namespace

TEST_CASE("backward matches finite differences on the default stack") {
  check_backward_against_fd(tiny_config(), 31);
}

TEST_CASE("backward matches finite differences with separate CA projections") {
  auto cfg = tiny_config();
  cfg.ca_separate_kv = true;
  check_backward_against_fd(cfg, 33);
}

TEST_CASE("backward matches finite differences with raw-input pooling") {
  auto cfg = tiny_config();
  cfg.ap_input = ApInput::raw;  // valid because d == d_k in the tiny stack
  check_backward_against_fd(cfg, 35);
}

TEST_CASE("backward matches finite differences without the attention trunk") {
  auto cfg = tiny_config();
  cfg.use_attention = false;
  check_backward_against_fd(cfg, 37);
}

TEST_CASE("backward matches finite differences without pooling") {
  auto cfg = tiny_config();
  cfg.use_ap = false;
  check_backward_against_fd(cfg, 39);
}

TEST_CASE("raw-input pooling demands matching widths") {
  ModelConfig cfg;
  cfg.d = 4;
  cfg.d_k = 8;
  cfg.ap_input = ApInput::raw;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_SUITE_END();
