#pragma once

#include "microseq/model.hpp"
#include "microseq/preprocessing.hpp"
#include "microseq/types.hpp"
#include "microseq/warping.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace microseq::inference {

struct InferenceConfig {
  int target_len = 75;
  int num_classes = 2;
  int knn_k = 5;
  warping::SoftDtwConfig dtw;
  warping::TargetKind target_kind = warping::TargetKind::implicit;
  bool use_attention = true;
  bool use_ap = true;
};

// training-split prediction trajectory used as a KNN reference
struct BankEntry {
  std::string case_id;
  int label = 0;
  Matrix y_attn;
};

struct StrategyPrediction {
  int ap_class = -1;
  int dtw_class = -1;
  int knn_class = -1;
  int vote_class = -1;
  Vector ap_scores;
  std::vector<double> dtw_distances;
};

// argmax of y_ap; ties resolve to the lowest index
int predict_ap(const model::PredictionBundle& bundle);

// soft-DTW distance between the prediction trajectory and the per-class
// length-l target; argmin over classes, ties to the lowest index
std::pair<int, std::vector<double>> predict_dtw_distance(const Matrix& y_attn,
                                                         int target_len,
                                                         const warping::SoftDtwConfig& cfg,
                                                         warping::TargetKind kind,
                                                         int num_classes);

// majority label among the k nearest bank trajectories under soft-DTW;
// k is clipped to the bank size; ties go to the single nearest neighbor
int predict_knn(const Matrix& y_attn, const std::vector<BankEntry>& bank, int k,
                const warping::SoftDtwConfig& cfg);

// majority of the three; when all three disagree the pooled prediction wins
int predict_vote(int ap_class, int dtw_class, int knn_class);

// Runs whichever strategies the configuration enables and fuses them. With a
// single available strategy the vote degenerates to it.
StrategyPrediction predict_case(const model::PredictionBundle& bundle,
                                const std::vector<BankEntry>& bank,
                                const InferenceConfig& cfg);

struct EvalReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  Matrix confusion;  // rows = true label, cols = predicted
};

// binary F1 treats class 1 as positive; C > 2 macro-averages with the
// empty-class convention F1 = 0
EvalReport evaluate(const std::vector<int>& predictions, const std::vector<int>& labels,
                    int num_classes);

std::vector<BankEntry> build_bank(const std::vector<preprocessing::PreparedCase>& cases,
                                  const model::ModelParams& params,
                                  const model::ModelConfig& cfg);

struct CaseResult {
  std::string case_id;
  int label = 0;
  StrategyPrediction pred;
};

struct SplitEvaluation {
  std::map<std::string, EvalReport> per_strategy;  // active strategies plus "vote"
  std::vector<CaseResult> cases;
};

SplitEvaluation evaluate_split(const std::vector<preprocessing::PreparedCase>& cases,
                               const model::ModelParams& params,
                               const model::ModelConfig& model_cfg,
                               const InferenceConfig& cfg,
                               const std::vector<BankEntry>& bank, int jobs = 1);

}  // namespace microseq::inference
