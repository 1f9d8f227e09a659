#include <doctest.h>

#include <microseq/inference.hpp>

#include "oracles.hpp"

#include <cmath>

using namespace microseq;
using namespace microseq::inference;
using microseq::warping::SoftDtwConfig;
using microseq::warping::TargetKind;

namespace {

model::PredictionBundle bundle_with_ap(std::initializer_list<double> probs) {
  model::PredictionBundle b;
  b.y_ap = Vector(static_cast<Index>(probs.size()));
  Index i = 0;
  for (const double p : probs) b.y_ap(i++) = p;
  return b;
}

}  // namespace

TEST_SUITE_BEGIN("inference");

TEST_CASE("pooled prediction takes the argmax with low-index ties") {
  CHECK(predict_ap(bundle_with_ap({0.9, 0.1})) == 0);
  CHECK(predict_ap(bundle_with_ap({0.5, 0.5})) == 0);
  CHECK(predict_ap(bundle_with_ap({0.2, 0.5, 0.3})) == 1);
}

TEST_CASE("distance strategy picks the nearest class target") {
  const SoftDtwConfig cfg{0.1};
  // a trajectory that matches the class-1 constant target exactly
  const auto target = warping::build_target_sequence(8, 2, 1, TargetKind::constant);
  const auto [cls, dist] = predict_dtw_distance(target.values, 8, cfg,
                                                TargetKind::constant, 2);
  CHECK(cls == 1);
  REQUIRE(dist.size() == 2);
  CHECK(dist[1] <= dist[0]);
  // gamma -> 0 floor agrees with the hard alignment oracle
  CHECK(std::abs(warping::hard_dtw(target.values, target.values)) == 0.0);
}

TEST_CASE("distance strategy resolves exact ties to class 0") {
  const SoftDtwConfig cfg{0.1};
  // equidistant from both constant targets by symmetry
  Matrix y(4, 2);
  y.setConstant(0.5);
  const auto [cls, dist] = predict_dtw_distance(y, 4, cfg, TargetKind::constant, 2);
  CHECK(std::abs(dist[0] - dist[1]) <= 1e-12);
  CHECK(cls == 0);
}

TEST_CASE("implicit targets classify ramp-shaped trajectories") {
  const SoftDtwConfig cfg{0.1};
  const auto ramp = warping::build_target_sequence(30, 2, 1, TargetKind::implicit);
  const auto [cls, dist] = predict_dtw_distance(ramp.values, 20, cfg,
                                                TargetKind::implicit, 2);
  CHECK(cls == 1);
}

TEST_CASE("KNN follows the labelled neighbours") {
  const SoftDtwConfig cfg{0.1};
  const auto t0 = warping::build_target_sequence(6, 2, 0, TargetKind::constant);
  const auto t1 = warping::build_target_sequence(6, 2, 1, TargetKind::constant);

  std::vector<BankEntry> bank;
  bank.push_back({"a", 1, t1.values});
  CHECK(predict_knn(t1.values, bank, 1, cfg) == 1);
  CHECK(predict_knn(t1.values, bank, 5, cfg) == 1);  // k clipped to the bank

  bank.push_back({"b", 1, t1.values});
  bank.push_back({"c", 1, t1.values});
  bank.push_back({"d", 0, t0.values});
  bank.push_back({"e", 0, t0.values});
  CHECK(predict_knn(t1.values, bank, 5, cfg) == 1);  // majority 3 of 5
  CHECK(predict_knn(t0.values, bank, 2, cfg) == 0);  // both nearest are class 0
}

TEST_CASE("KNN vote ties fall back to the single nearest neighbour") {
  const SoftDtwConfig cfg{0.1};
  const auto t0 = warping::build_target_sequence(6, 2, 0, TargetKind::constant);
  const auto t1 = warping::build_target_sequence(6, 2, 1, TargetKind::constant);
  std::vector<BankEntry> bank;
  bank.push_back({"a", 1, t1.values});
  bank.push_back({"b", 0, t0.values});
  // query next to the class-1 item: the 2-vote ties, nearest wins
  CHECK(predict_knn(t1.values, bank, 2, cfg) == 1);
  CHECK(predict_knn(t0.values, bank, 2, cfg) == 0);
}

TEST_CASE("KNN with k equal to the bank size is the global majority") {
  const SoftDtwConfig cfg{0.1};
  const auto t0 = warping::build_target_sequence(6, 2, 0, TargetKind::constant);
  const auto t1 = warping::build_target_sequence(6, 2, 1, TargetKind::constant);
  std::vector<BankEntry> bank;
  for (int i = 0; i < 4; ++i) bank.push_back({"p" + std::to_string(i), 1, t1.values});
  for (int i = 0; i < 2; ++i) bank.push_back({"n" + std::to_string(i), 0, t0.values});
  CHECK(predict_knn(t0.values, bank, 6, cfg) == 1);
}

TEST_CASE("empty banks are rejected") {
  const SoftDtwConfig cfg{0.1};
  Matrix y = Matrix::Constant(3, 2, 0.5);
  CHECK_THROWS_AS((void)predict_knn(y, {}, 3, cfg), Error);
}

TEST_CASE("majority voting with the documented tie rule") {
  CHECK(predict_vote(1, 1, 0) == 1);
  CHECK(predict_vote(0, 0, 0) == 0);
  CHECK(predict_vote(1, 0, 1) == 1);
  CHECK(predict_vote(0, 1, 1) == 1);
  CHECK(predict_vote(0, 1, 2) == 0);  // all distinct: pooled prediction wins
}

TEST_CASE("evaluation metrics on the worked example") {
  const std::vector<int> labels{1, 1, 0, 0};
  const std::vector<int> preds{1, 0, 0, 0};
  const auto r = evaluate(preds, labels, 2);
  CHECK(r.accuracy == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.confusion(1, 1) == 1.0);
  CHECK(r.confusion(1, 0) == 1.0);
  CHECK(r.confusion(0, 0) == 2.0);
  CHECK(r.confusion(0, 1) == 0.0);
  CHECK(r.accuracy ==
        doctest::Approx(r.confusion.trace() / 4.0).epsilon(1e-12));
}

TEST_CASE("perfect predictions score one") {
  const std::vector<int> labels{0, 1, 0, 1, 1};
  const auto r = evaluate(labels, labels, 2);
  CHECK(r.accuracy == 1.0);
  CHECK(r.f1 == 1.0);
}

TEST_CASE("empty positive class yields zero F1 by convention") {
  const std::vector<int> labels{1, 1, 1};
  const std::vector<int> preds{0, 0, 0};
  const auto r = evaluate(preds, labels, 2);
  CHECK(r.accuracy == 0.0);
  CHECK(r.f1 == 0.0);
}

TEST_CASE("macro F1 averages the per-class scores") {
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const std::vector<int> preds{0, 1, 2, 0, 1, 1};
  const auto r = evaluate(preds, labels, 3);
  // class 0: perfect (f1 1); class 1: tp=2 fp=1 fn=0 -> 0.8; class 2: tp=1 fn=1 -> 2/3
  CHECK(r.f1 == doctest::Approx((1.0 + 0.8 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("mismatched prediction and label lengths are rejected") {
  CHECK_THROWS_AS((void)evaluate({0, 1}, {0}, 2), Error);
}

TEST_CASE("per-case voting always matches one of the strategies") {
  model::ModelConfig mc;
  mc.d = 4;
  mc.d_k = 4;
  mc.hidden = 4;
  mc.num_classes = 2;
  const auto params = model::init_params(mc, 55);

  InferenceConfig icfg;
  icfg.target_len = 6;
  icfg.num_classes = 2;
  icfg.dtw.gamma = 0.1;

  Rng rng(77);
  std::vector<preprocessing::PreparedCase> cases;
  for (int i = 0; i < 8; ++i) {
    preprocessing::PreparedCase pc;
    pc.case_id = "q" + std::to_string(i);
    pc.label = i % 2;
    pc.x = oracles::random_matrix(static_cast<Index>(rng.uniform_int(3, 9)), 4, rng);
    pc.x_stb = pc.x;
    pc.x_rpd = pc.x;
    cases.push_back(std::move(pc));
  }
  const auto bank = build_bank(cases, params, mc);
  for (const auto& pc : cases) {
    const auto bundle = model::model_forward(pc.x, pc.x_stb, pc.x_rpd, params, mc);
    const auto pred = predict_case(bundle, bank, icfg);
    const bool member = pred.vote_class == pred.ap_class ||
                        pred.vote_class == pred.dtw_class ||
                        pred.vote_class == pred.knn_class;
    CHECK(member);
  }
}

TEST_CASE("ablated configurations fall back to the surviving strategy") {
  model::ModelConfig mc;
  mc.d = 4;
  mc.d_k = 4;
  mc.hidden = 4;
  mc.num_classes = 2;

  Rng rng(88);
  preprocessing::PreparedCase pc;
  pc.case_id = "q";
  pc.label = 0;
  pc.x = oracles::random_matrix(5, 4, rng);
  pc.x_stb = pc.x;
  pc.x_rpd = pc.x;

  SUBCASE("pooled only") {
    mc.use_attention = false;
    const auto params = model::init_params(mc, 56);
    const auto bundle = model::model_forward(pc.x, pc.x_stb, pc.x_rpd, params, mc);
    InferenceConfig icfg;
    icfg.num_classes = 2;
    icfg.use_attention = false;
    const auto pred = predict_case(bundle, {}, icfg);
    CHECK(pred.vote_class == pred.ap_class);
    CHECK(pred.dtw_class == -1);
  }
  SUBCASE("sequence only") {
    mc.use_ap = false;
    const auto params = model::init_params(mc, 57);
    const auto bundle = model::model_forward(pc.x, pc.x_stb, pc.x_rpd, params, mc);
    InferenceConfig icfg;
    icfg.num_classes = 2;
    icfg.use_ap = false;
    icfg.target_len = 6;
    const auto bank = build_bank({pc}, params, mc);
    const auto pred = predict_case(bundle, bank, icfg);
    CHECK(pred.vote_class == pred.dtw_class);
    CHECK(pred.ap_class == -1);
  }
}

TEST_CASE("split evaluation is identical across job counts") {
  model::ModelConfig mc;
  mc.d = 4;
  mc.d_k = 4;
  mc.hidden = 4;
  mc.num_classes = 2;
  const auto params = model::init_params(mc, 58);
  InferenceConfig icfg;
  icfg.target_len = 5;
  icfg.num_classes = 2;

  Rng rng(99);
  std::vector<preprocessing::PreparedCase> cases;
  for (int i = 0; i < 10; ++i) {
    preprocessing::PreparedCase pc;
    pc.case_id = "c" + std::to_string(i);
    pc.label = i % 2;
    pc.x = oracles::random_matrix(static_cast<Index>(rng.uniform_int(3, 8)), 4, rng);
    pc.x_stb = pc.x;
    pc.x_rpd = pc.x;
    cases.push_back(std::move(pc));
  }
  const auto bank = build_bank(cases, params, mc);
  const auto serial = evaluate_split(cases, params, mc, icfg, bank, 1);
  const auto parallel = evaluate_split(cases, params, mc, icfg, bank, 3);
  CHECK(serial.per_strategy.at("vote").accuracy ==
        parallel.per_strategy.at("vote").accuracy);
  for (std::size_t i = 0; i < serial.cases.size(); ++i) {
    CHECK(serial.cases[i].pred.vote_class == parallel.cases[i].pred.vote_class);
    CHECK(serial.cases[i].case_id == parallel.cases[i].case_id);
  }
}

TEST_SUITE_END();
