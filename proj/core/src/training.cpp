#include "microseq/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace microseq::training {

namespace {

using nlohmann::json;

std::vector<Matrix*> tensor_ptrs(model::ModelParams& p) {
  std::vector<Matrix*> out;
  p.for_each_tensor([&](const char*, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> tensor_ptrs(const model::ModelParams& p) {
  std::vector<const Matrix*> out;
  p.for_each_tensor([&](const char*, const Matrix& m) { out.push_back(&m); });
  return out;
}

// dst += scale * src, tensor-wise
void axpy(model::ModelParams& dst, const model::ModelParams& src, double scale) {
  auto d = tensor_ptrs(dst);
  auto s = tensor_ptrs(src);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (s[i]->size() == 0) continue;
    if (d[i]->size() == 0)
      *d[i] = scale * (*s[i]);
    else
      *d[i] += scale * (*s[i]);
  }
}

void scale_params(model::ModelParams& p, double s) {
  p.for_each_tensor([&](const char*, Matrix& m) {
    if (m.size() > 0) m *= s;
  });
}

// softmax vector-Jacobian product: dz = p (*) (dp - <p, dp>)
Vector softmax_vjp(const Vector& p, const Vector& dp) {
  const double dot = p.dot(dp);
  return (p.array() * (dp.array() - dot)).matrix();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) raise(ErrorCode::ConfigError, "lr must be > 0");
  if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0))
    raise(ErrorCode::ConfigError, "betas must satisfy 0 < beta1 < beta2 < 1");
  if (!(epsilon > 0.0)) raise(ErrorCode::ConfigError, "epsilon must be > 0");
  if (epochs < 1) raise(ErrorCode::ConfigError, "epochs must be >= 1");
  if (accumulation_size < 1) raise(ErrorCode::ConfigError, "accumulation_size must be >= 1");
  if (patience < 0) raise(ErrorCode::ConfigError, "patience must be >= 0");
  if (target_len < 1) raise(ErrorCode::ConfigError, "target_len must be >= 1");
  if (duplicate_fraction < 0.0 || duplicate_fraction >= 1.0)
    raise(ErrorCode::ConfigError, "duplicate_fraction must be in [0, 1)");
  if (tau_override && *tau_override < 0.0)
    raise(ErrorCode::ConfigError, "tau override must be >= 0");
  if (knn_k < 1) raise(ErrorCode::ConfigError, "knn_k must be >= 1");
  if (val_knn_bank < 1) raise(ErrorCode::ConfigError, "val_knn_bank must be >= 1");
  if (!(align_temperature > 0.0))
    raise(ErrorCode::ConfigError, "align_temperature must be > 0");
  if (!use_attention && !use_ap)
    raise(ErrorCode::ConfigError, "cannot disable both prediction paths");
  weights.validate();
  dtw.validate();
}

model::ModelConfig TrainConfig::effective_model_config(int feature_dim,
                                                       int num_classes) const {
  model::ModelConfig m = model;
  m.d = feature_dim;
  m.num_classes = num_classes;
  m.use_attention = use_attention;
  m.use_ap = use_ap;
  m.validate();
  return m;
}

inference::InferenceConfig TrainConfig::inference_config() const {
  inference::InferenceConfig icfg;
  icfg.target_len = target_len;
  icfg.num_classes = model.num_classes;
  icfg.knn_k = knn_k;
  icfg.dtw = dtw;
  icfg.target_kind = effective_target_kind();
  icfg.use_attention = use_attention;
  icfg.use_ap = use_ap;
  return icfg;
}

void adam_step(model::ModelParams& params, const model::ModelParams& grads,
               AdamState& state, const TrainConfig& cfg) {
  if (state.step == 0) {
    state.m = model::zeros_like(params);
    state.v = model::zeros_like(params);
  }
  auto p = tensor_ptrs(params);
  auto g = tensor_ptrs(grads);
  auto m = tensor_ptrs(state.m);
  auto v = tensor_ptrs(state.v);

  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]->size() == 0 && g[i]->size() == 0) continue;
    if (p[i]->rows() != g[i]->rows() || p[i]->cols() != g[i]->cols())
      raise(ErrorCode::ShapeMismatch, "gradient shape does not match parameters");
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]->size() == 0) continue;
    *m[i] = cfg.beta1 * (*m[i]) + (1.0 - cfg.beta1) * (*g[i]);
    *v[i] = cfg.beta2 * (*v[i]).array().matrix() +
            (1.0 - cfg.beta2) * g[i]->array().square().matrix();
    p[i]->array() -=
        cfg.lr * (m[i]->array() / bc1) / ((v[i]->array() / bc2).sqrt() + cfg.epsilon);
  }
}

CaseLoss case_loss_and_gradient(const preprocessing::PreparedCase& pc,
                                const model::ModelParams& params,
                                const TrainConfig& cfg) {
  const model::ModelConfig& mc = cfg.model;
  model::ForwardCache cache;
  const auto bundle = model::model_forward(pc.x, pc.x_stb, pc.x_rpd, params, mc, &cache);

  const int num_classes = mc.num_classes;
  const auto kind = cfg.effective_target_kind();

  double dtw_value = 0.0, ap_value = 0.0, align_surrogate = 0.0, align_reported = 0.0;
  Matrix d_y_attn;      // probability-space gradient on the sequence prediction
  Vector d_pool_logits; // logit-space gradient on the pooled prediction

  if (mc.use_attention) {
    const auto target =
        warping::build_target_sequence(cfg.target_len, num_classes, pc.label, kind);
    warping::TargetSequence ideal;
    const warping::TargetSequence* ideal_ptr = nullptr;
    if (cfg.use_ideal_reference) {
      ideal = warping::build_ideal_reference(static_cast<int>(pc.x.rows()), num_classes,
                                             pc.label, kind);
      ideal_ptr = &ideal;
    }
    const auto dl = losses::loss_dtw(bundle.y_attn, target, ideal_ptr, cfg.dtw);
    dtw_value = dl.value;
    d_y_attn = cfg.weights.dtw * dl.grad_y_attn;
  }

  if (mc.use_ap) {
    const auto al = losses::loss_ap(bundle.y_ap, pc.label);
    ap_value = al.value;
    d_pool_logits = cfg.weights.ap * al.grad_logits;
  }

  if (cfg.use_align && mc.use_attention && mc.use_ap) {
    const auto gl = losses::loss_align(bundle.y_attn, bundle.y_ap,
                                       cfg.align_temperature, cfg.align_mode);
    align_surrogate = gl.surrogate;
    align_reported = gl.reported;
    if (d_y_attn.size() == 0)
      d_y_attn = Matrix::Zero(bundle.y_attn.rows(), bundle.y_attn.cols());
    d_y_attn += cfg.weights.align * gl.grad_y_attn;
    d_pool_logits += cfg.weights.align * softmax_vjp(bundle.y_ap, gl.grad_y_ap);
  }

  model::UpstreamGrads up;
  if (d_y_attn.size() > 0) {
    up.d_seq_logits = Matrix(d_y_attn.rows(), d_y_attn.cols());
    for (Index i = 0; i < d_y_attn.rows(); ++i)
      up.d_seq_logits.row(i) =
          softmax_vjp(bundle.y_attn.row(i).transpose(), d_y_attn.row(i).transpose())
              .transpose();
  }
  if (d_pool_logits.size() > 0) up.d_pool_logits = d_pool_logits;

  CaseLoss out;
  out.grads = model::model_backward(cache, params, mc, up);
  out.breakdown = losses::total_loss(dtw_value, ap_value, align_surrogate,
                                     align_reported, cfg.weights);
  return out;
}

EpochStats train_epoch(const std::vector<preprocessing::PreparedCase>& cases,
                       model::ModelParams& params, AdamState& state,
                       const TrainConfig& cfg, Rng& order_rng) {
  if (cases.empty()) raise(ErrorCode::EmptyDataset, "no training cases");

  std::vector<std::size_t> order(cases.size());
  std::iota(order.begin(), order.end(), 0);
  order_rng.shuffle(order);

  model::ModelParams accum = model::zeros_like(params);
  int window = 0;
  EpochStats sums;

  auto flush = [&] {
    if (window == 0) return;
    scale_params(accum, 1.0 / window);
    adam_step(params, accum, state, cfg);
    accum = model::zeros_like(params);
    window = 0;
  };

  for (const auto idx : order) {
    const auto cl = case_loss_and_gradient(cases[idx], params, cfg);
    if (!std::isfinite(cl.breakdown.total))
      raise(ErrorCode::NumericFailure,
            "training diverged on case " + cases[idx].case_id);
    axpy(accum, cl.grads, 1.0);
    ++window;
    sums.dtw += cl.breakdown.dtw;
    sums.ap += cl.breakdown.ap;
    sums.align += cl.breakdown.align;
    sums.align_reported += cl.breakdown.align_reported;
    sums.total += cl.breakdown.total;
    if (window == cfg.accumulation_size) flush();
  }
  flush();

  const double n = static_cast<double>(cases.size());
  return {sums.dtw / n, sums.ap / n, sums.align / n, sums.align_reported / n,
          sums.total / n};
}

namespace {

// fixed stratified bank subset used for per-epoch validation scoring
std::vector<std::size_t> pick_bank_indices(
    const std::vector<preprocessing::PreparedCase>& cases, int limit,
    std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < cases.size(); ++i) by_label[cases[i].label].push_back(i);
  Rng rng(mix_seed(seed, 0xBA4CULL));
  for (auto& [label, idx] : by_label) rng.shuffle(idx);

  std::vector<std::size_t> out;
  std::size_t round = 0;
  while (out.size() < std::min<std::size_t>(cases.size(), static_cast<std::size_t>(limit))) {
    bool advanced = false;
    for (auto& [label, idx] : by_label) {
      if (round < idx.size() && out.size() < static_cast<std::size_t>(limit)) {
        out.push_back(idx[round]);
        advanced = true;
      }
    }
    if (!advanced) break;
    ++round;
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

FitResult fit(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
              const TrainConfig& cfg_in) {
  cfg_in.validate();

  auto train_seqs = data_io::load_split(manifest, base_dir, Split::train);
  auto val_seqs = data_io::load_split(manifest, base_dir, Split::val);
  if (train_seqs.empty()) raise(ErrorCode::EmptyDataset, "train split is empty");
  if (val_seqs.empty()) raise(ErrorCode::EmptyDataset, "val split is empty");

  std::vector<int> class_seen(manifest.num_classes, 0);
  for (const auto& s : train_seqs) ++class_seen[static_cast<std::size_t>(s.label)];
  for (int c = 0; c < manifest.num_classes; ++c)
    if (class_seen[static_cast<std::size_t>(c)] == 0)
      raise(ErrorCode::TooFewCases,
            "class " + std::to_string(c) + " missing from the train split");

  TrainConfig cfg = cfg_in;
  cfg.model = cfg_in.effective_model_config(manifest.feature_dim, manifest.num_classes);

  double tau;
  if (cfg.tau_override) {
    tau = *cfg.tau_override;
  } else {
    std::vector<FeatureSequence> pooled = train_seqs;
    pooled.insert(pooled.end(), val_seqs.begin(), val_seqs.end());
    tau = preprocessing::select_tau(pooled, cfg.duplicate_fraction);
  }

  std::vector<preprocessing::PreparedCase> train_cases, val_cases;
  train_cases.reserve(train_seqs.size());
  for (const auto& s : train_seqs)
    train_cases.push_back(preprocessing::prepare_case(s, tau, cfg.use_wavelet));
  val_cases.reserve(val_seqs.size());
  for (const auto& s : val_seqs)
    val_cases.push_back(preprocessing::prepare_case(s, tau, cfg.use_wavelet));

  auto params = model::init_params(cfg.model, cfg.seed);
  AdamState state;

  const auto bank_idx = pick_bank_indices(train_cases, cfg.val_knn_bank, cfg.seed);
  std::vector<preprocessing::PreparedCase> bank_cases;
  bank_cases.reserve(bank_idx.size());
  for (const auto i : bank_idx) bank_cases.push_back(train_cases[i]);

  const auto icfg = cfg.inference_config();

  FitResult result;
  result.tau = tau;
  result.model_cfg = cfg.model;
  int best_epoch = 0;
  double best_f1 = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(mix_seed(cfg.seed, 0xE70C0000ULL + static_cast<std::uint64_t>(epoch)));
    const auto stats = train_epoch(train_cases, params, state, cfg, order_rng);

    std::vector<inference::BankEntry> bank;
    if (cfg.model.use_attention)
      bank = inference::build_bank(bank_cases, params, cfg.model);
    const auto ev = inference::evaluate_split(val_cases, params, cfg.model, icfg, bank);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = stats;
    for (const auto& [name, report] : ev.per_strategy) {
      rec.val_accuracy[name] = report.accuracy;
      rec.val_f1[name] = report.f1;
    }
    result.history.push_back(rec);

    const double vote_f1 = ev.per_strategy.at("vote").f1;
    if (vote_f1 > best_f1) {
      best_f1 = vote_f1;
      best_epoch = epoch;
      result.best_params = params;
      result.best_state = state;
    }
    if (epoch - best_epoch >= cfg.patience) break;
  }

  result.best_epoch = best_epoch;
  result.best_val_f1 = best_f1;
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'M', 'C', 'K', 'P'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const unsigned char* p;
  std::size_t size;
  std::size_t pos = 0;
  std::string file;

  void need(std::size_t n) const {
    if (pos + n > size)
      raise(ErrorCode::TruncatedFile,
            file + ": truncated at byte offset " + std::to_string(size));
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
};

void append_block(std::string& out, const std::string& name, const Matrix& m) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  out.push_back(2);  // rank
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

const char* align_mode_name(losses::AlignMode m) {
  switch (m) {
    case losses::AlignMode::soft_argmax: return "soft_argmax";
    case losses::AlignMode::straight_through: return "straight_through";
    case losses::AlignMode::metric_only: return "metric_only";
  }
  return "?";
}

losses::AlignMode parse_align_mode(const std::string& s) {
  if (s == "soft_argmax") return losses::AlignMode::soft_argmax;
  if (s == "straight_through") return losses::AlignMode::straight_through;
  if (s == "metric_only") return losses::AlignMode::metric_only;
  raise(ErrorCode::ConfigError, "unknown align_mode '" + s + "'");
}

warping::TargetKind parse_target_kind(const std::string& s) {
  if (s == "constant") return warping::TargetKind::constant;
  if (s == "implicit") return warping::TargetKind::implicit;
  raise(ErrorCode::ConfigError, "unknown target_kind '" + s + "'");
}

json model_config_to_json(const model::ModelConfig& m) {
  return json{{"d", m.d},
              {"d_k", m.d_k},
              {"hidden", m.hidden},
              {"num_classes", m.num_classes},
              {"use_attention", m.use_attention},
              {"use_ap", m.use_ap},
              {"ap_input", m.ap_input == model::ApInput::ca_output ? "ca_output" : "raw"},
              {"ca_separate_kv", m.ca_separate_kv},
              {"lambda_stb", m.lambda_stb},
              {"lambda_rpd", m.lambda_rpd}};
}

void model_config_from_json(const json& j, model::ModelConfig& m) {
  for (const auto& [key, value] : j.items()) {
    if (key == "d") m.d = value.get<int>();
    else if (key == "d_k") m.d_k = value.get<int>();
    else if (key == "hidden") m.hidden = value.get<int>();
    else if (key == "num_classes") m.num_classes = value.get<int>();
    else if (key == "use_attention") m.use_attention = value.get<bool>();
    else if (key == "use_ap") m.use_ap = value.get<bool>();
    else if (key == "ap_input") {
      const auto s = value.get<std::string>();
      if (s == "ca_output") m.ap_input = model::ApInput::ca_output;
      else if (s == "raw") m.ap_input = model::ApInput::raw;
      else raise(ErrorCode::ConfigError, "unknown ap_input '" + s + "'");
    } else if (key == "ca_separate_kv") m.ca_separate_kv = value.get<bool>();
    else if (key == "lambda_stb") m.lambda_stb = value.get<double>();
    else if (key == "lambda_rpd") m.lambda_rpd = value.get<double>();
    else raise(ErrorCode::ConfigError, "unknown key '" + key + "' in model config");
  }
}

json train_config_to_json_obj(const TrainConfig& c) {
  json j{{"lr", c.lr},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"epsilon", c.epsilon},
         {"epochs", c.epochs},
         {"accumulation_size", c.accumulation_size},
         {"patience", c.patience},
         {"target_len", c.target_len},
         {"target_kind", warping::to_string(c.target_kind)},
         {"weights", {{"dtw", c.weights.dtw}, {"ap", c.weights.ap}, {"align", c.weights.align}}},
         {"gamma", c.dtw.gamma},
         {"align_temperature", c.align_temperature},
         {"align_mode", align_mode_name(c.align_mode)},
         {"seed", c.seed},
         {"duplicate_fraction", c.duplicate_fraction},
         {"knn_k", c.knn_k},
         {"val_knn_bank", c.val_knn_bank},
         {"use_wavelet", c.use_wavelet},
         {"use_implicit_target", c.use_implicit_target},
         {"use_ideal_reference", c.use_ideal_reference},
         {"use_align", c.use_align},
         {"use_attention", c.use_attention},
         {"use_ap", c.use_ap},
         {"model", model_config_to_json(c.model)}};
  if (c.tau_override)
    j["tau_override"] = *c.tau_override;
  else
    j["tau_override"] = nullptr;
  return j;
}

TrainConfig train_config_from_json_obj(const json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "lr") c.lr = value.get<double>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else if (key == "epsilon") c.epsilon = value.get<double>();
    else if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "accumulation_size") c.accumulation_size = value.get<int>();
    else if (key == "patience") c.patience = value.get<int>();
    else if (key == "target_len") c.target_len = value.get<int>();
    else if (key == "target_kind") c.target_kind = parse_target_kind(value.get<std::string>());
    else if (key == "weights") {
      for (const auto& [wk, wv] : value.items()) {
        if (wk == "dtw") c.weights.dtw = wv.get<double>();
        else if (wk == "ap") c.weights.ap = wv.get<double>();
        else if (wk == "align") c.weights.align = wv.get<double>();
        else raise(ErrorCode::ConfigError, "unknown key '" + wk + "' in weights");
      }
    } else if (key == "gamma") c.dtw.gamma = value.get<double>();
    else if (key == "align_temperature") c.align_temperature = value.get<double>();
    else if (key == "align_mode") c.align_mode = parse_align_mode(value.get<std::string>());
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "duplicate_fraction") c.duplicate_fraction = value.get<double>();
    else if (key == "tau_override") {
      if (!value.is_null()) c.tau_override = value.get<double>();
    } else if (key == "knn_k") c.knn_k = value.get<int>();
    else if (key == "val_knn_bank") c.val_knn_bank = value.get<int>();
    else if (key == "use_wavelet") c.use_wavelet = value.get<bool>();
    else if (key == "use_implicit_target") c.use_implicit_target = value.get<bool>();
    else if (key == "use_ideal_reference") c.use_ideal_reference = value.get<bool>();
    else if (key == "use_align") c.use_align = value.get<bool>();
    else if (key == "use_attention") c.use_attention = value.get<bool>();
    else if (key == "use_ap") c.use_ap = value.get<bool>();
    else if (key == "model") model_config_from_json(value, c.model);
    else raise(ErrorCode::ConfigError, "unknown key '" + key + "' in train config");
  }
  return c;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  return train_config_to_json_obj(cfg).dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ConfigError, std::string("train config: ") + e.what());
  }
  return train_config_from_json_obj(j);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string blocks;
  std::uint32_t count = 0;
  const auto add_set = [&](const model::ModelParams& p, const std::string& prefix) {
    p.for_each_tensor([&](const char* name, const Matrix& m) {
      if (m.size() == 0) return;
      append_block(blocks, prefix + name, m);
      ++count;
    });
  };
  add_set(ckpt.params, "param/");
  if (ckpt.state.step > 0) {
    add_set(ckpt.state.m, "adam.m/");
    add_set(ckpt.state.v, "adam.v/");
  }

  json blob = {{"format_version", kCkptVersion},
               {"tau", ckpt.tau},
               {"epochs_done", ckpt.epochs_done},
               {"adam_step", ckpt.state.step},
               {"train", train_config_to_json_obj(ckpt.cfg)}};
  const std::string blob_text = blob.dump();

  std::string out;
  out.append(kCkptMagic, 4);
  put_u32(out, kCkptVersion);
  put_u32(out, count);
  out.append(blocks);
  put_u32(out, static_cast<std::uint32_t>(blob_text.size()));
  out.append(blob_text);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) raise(ErrorCode::IoFailure, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string raw = std::move(buf).str();

  Reader r{reinterpret_cast<const unsigned char*>(raw.data()), raw.size(), 0,
           path.string()};
  if (raw.size() < 4 || std::memcmp(raw.data(), kCkptMagic, 4) != 0)
    raise(ErrorCode::BadMagic, path.string() + ": bad magic at byte offset 0");
  r.pos = 4;
  const auto version = r.u32();
  if (version != kCkptVersion)
    raise(ErrorCode::VersionMismatch,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();

  std::map<std::string, Matrix> tensors;
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto name_len = r.u16();
    const std::string name = r.bytes(name_len);
    r.need(1);
    const int rank = r.p[r.pos++];
    if (rank != 2)
      raise(ErrorCode::IoFailure, path.string() + ": unexpected tensor rank in " + name);
    const auto rows = r.u32();
    const auto cols = r.u32();
    Matrix m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f64();
    tensors.emplace(name, std::move(m));
  }

  const auto blob_len = r.u32();
  const std::string blob_text = r.bytes(blob_len);
  json blob;
  try {
    blob = json::parse(blob_text);
  } catch (const json::exception& e) {
    raise(ErrorCode::IoFailure, path.string() + ": config blob unreadable: " + e.what());
  }

  Checkpoint ckpt;
  ckpt.cfg = train_config_from_json_obj(blob.at("train"));
  ckpt.tau = blob.at("tau").get<double>();
  ckpt.epochs_done = blob.at("epochs_done").get<int>();
  ckpt.state.step = blob.at("adam_step").get<std::int64_t>();

  const auto fill = [&](model::ModelParams& dst, const std::string& prefix) {
    dst = model::shaped_params(ckpt.cfg.model);
    dst.for_each_tensor([&](const char* name, Matrix& m) {
      if (m.size() == 0) return;
      const auto it = tensors.find(prefix + name);
      if (it == tensors.end())
        raise(ErrorCode::IoFailure,
              path.string() + ": missing tensor " + prefix + name);
      if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
        raise(ErrorCode::ShapeMismatch,
              path.string() + ": tensor " + prefix + name + " has unexpected shape");
      m = it->second;
    });
  };
  fill(ckpt.params, "param/");
  if (ckpt.state.step > 0) {
    fill(ckpt.state.m, "adam.m/");
    fill(ckpt.state.v, "adam.v/");
  }
  return ckpt;
}

}  // namespace microseq::training
