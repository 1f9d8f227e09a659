#include "microseq/inference.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace microseq::inference {

namespace {

int argmax_lowest(const Vector& v) {
  int best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

}  // namespace

int predict_ap(const model::PredictionBundle& bundle) {
  if (bundle.y_ap.size() == 0)
    raise(ErrorCode::ShapeMismatch, "bundle has no pooled prediction");
  return argmax_lowest(bundle.y_ap);
}

std::pair<int, std::vector<double>> predict_dtw_distance(const Matrix& y_attn,
                                                         int target_len,
                                                         const warping::SoftDtwConfig& cfg,
                                                         warping::TargetKind kind,
                                                         int num_classes) {
  std::vector<double> distances(static_cast<std::size_t>(num_classes));
  int best = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto target = warping::build_target_sequence(target_len, num_classes, c, kind);
    distances[static_cast<std::size_t>(c)] =
        warping::softdtw_distance(y_attn, target.values, cfg);
    if (distances[static_cast<std::size_t>(c)] < distances[static_cast<std::size_t>(best)])
      best = c;
  }
  return {best, std::move(distances)};
}

int predict_knn(const Matrix& y_attn, const std::vector<BankEntry>& bank, int k,
                const warping::SoftDtwConfig& cfg) {
  if (bank.empty()) raise(ErrorCode::EmptyBank, "KNN bank is empty");
  if (k < 1) raise(ErrorCode::ConfigError, "k must be >= 1");
  k = std::min<int>(k, static_cast<int>(bank.size()));

  std::vector<std::pair<double, std::size_t>> dist(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i)
    dist[i] = {warping::softdtw_distance(y_attn, bank[i].y_attn, cfg), i};
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());

  std::map<int, int> votes;
  for (int i = 0; i < k; ++i) ++votes[bank[dist[static_cast<std::size_t>(i)].second].label];
  int best_label = -1, best_count = -1;
  bool tie = false;
  for (const auto& [label, count] : votes) {
    if (count > best_count) {
      best_count = count;
      best_label = label;
      tie = false;
    } else if (count == best_count) {
      tie = true;
    }
  }
  if (tie) return bank[dist[0].second].label;
  return best_label;
}

int predict_vote(int ap_class, int dtw_class, int knn_class) {
  if (ap_class == dtw_class || ap_class == knn_class) return ap_class;
  if (dtw_class == knn_class) return dtw_class;
  return ap_class;  // all three distinct: fall back to the pooled prediction
}

StrategyPrediction predict_case(const model::PredictionBundle& bundle,
                                const std::vector<BankEntry>& bank,
                                const InferenceConfig& cfg) {
  StrategyPrediction out;
  if (cfg.use_ap) {
    out.ap_class = predict_ap(bundle);
    out.ap_scores = bundle.y_ap;
  }
  if (cfg.use_attention) {
    auto [cls, distances] = predict_dtw_distance(bundle.y_attn, cfg.target_len, cfg.dtw,
                                                 cfg.target_kind, cfg.num_classes);
    out.dtw_class = cls;
    out.dtw_distances = std::move(distances);
    out.knn_class = predict_knn(bundle.y_attn, bank, cfg.knn_k, cfg.dtw);
  }

  if (cfg.use_ap && cfg.use_attention)
    out.vote_class = predict_vote(out.ap_class, out.dtw_class, out.knn_class);
  else if (cfg.use_ap)
    out.vote_class = out.ap_class;
  else
    out.vote_class = out.dtw_class;
  return out;
}

EvalReport evaluate(const std::vector<int>& predictions, const std::vector<int>& labels,
                    int num_classes) {
  if (predictions.size() != labels.size())
    raise(ErrorCode::LengthMismatch, "prediction and label counts differ");
  if (predictions.empty()) raise(ErrorCode::EmptyDataset, "nothing to evaluate");

  EvalReport r;
  r.confusion = Matrix::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || predictions[i] < 0 ||
        predictions[i] >= num_classes)
      raise(ErrorCode::BadClass, "class index outside [0, num_classes)");
    r.confusion(labels[i], predictions[i]) += 1.0;
  }
  r.accuracy = r.confusion.trace() / static_cast<double>(labels.size());

  auto class_f1 = [&](int c) {
    const double tp = r.confusion(c, c);
    const double fp = r.confusion.col(c).sum() - tp;
    const double fn = r.confusion.row(c).sum() - tp;
    const double denom = 2.0 * tp + fp + fn;
    return denom > 0.0 ? 2.0 * tp / denom : 0.0;
  };

  if (num_classes == 2) {
    r.f1 = class_f1(1);  // malignant class is the positive one
  } else {
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) sum += class_f1(c);
    r.f1 = sum / num_classes;
  }
  return r;
}

std::vector<BankEntry> build_bank(const std::vector<preprocessing::PreparedCase>& cases,
                                  const model::ModelParams& params,
                                  const model::ModelConfig& cfg) {
  std::vector<BankEntry> bank;
  bank.reserve(cases.size());
  for (const auto& pc : cases) {
    const auto bundle = model::model_forward(pc.x, pc.x_stb, pc.x_rpd, params, cfg);
    bank.push_back({pc.case_id, pc.label, bundle.y_attn});
  }
  return bank;
}

SplitEvaluation evaluate_split(const std::vector<preprocessing::PreparedCase>& cases,
                               const model::ModelParams& params,
                               const model::ModelConfig& model_cfg,
                               const InferenceConfig& cfg,
                               const std::vector<BankEntry>& bank, int jobs) {
  if (cases.empty()) raise(ErrorCode::EmptyDataset, "no cases in the requested split");

  SplitEvaluation out;
  out.cases.resize(cases.size());

  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& pc = cases[i];
      const auto bundle =
          model::model_forward(pc.x, pc.x_stb, pc.x_rpd, params, model_cfg);
      out.cases[i] = {pc.case_id, pc.label, predict_case(bundle, bank, cfg)};
    }
  };

  jobs = std::max(1, jobs);
  if (jobs == 1 || cases.size() < 2) {
    worker(0, cases.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t stride = (cases.size() + jobs - 1) / static_cast<std::size_t>(jobs);
    for (std::size_t begin = 0; begin < cases.size(); begin += stride)
      threads.emplace_back(worker, begin, std::min(begin + stride, cases.size()));
    for (auto& t : threads) t.join();
  }

  std::vector<int> labels;
  labels.reserve(cases.size());
  for (const auto& c : out.cases) labels.push_back(c.label);

  auto collect = [&](auto proj) {
    std::vector<int> preds;
    preds.reserve(out.cases.size());
    for (const auto& c : out.cases) preds.push_back(proj(c.pred));
    return evaluate(preds, labels, cfg.num_classes);
  };

  if (cfg.use_ap)
    out.per_strategy["ap"] = collect([](const StrategyPrediction& p) { return p.ap_class; });
  if (cfg.use_attention) {
    out.per_strategy["dtw"] =
        collect([](const StrategyPrediction& p) { return p.dtw_class; });
    out.per_strategy["knn"] =
        collect([](const StrategyPrediction& p) { return p.knn_class; });
  }
  out.per_strategy["vote"] =
      collect([](const StrategyPrediction& p) { return p.vote_class; });
  return out;
}

}  // namespace microseq::inference
