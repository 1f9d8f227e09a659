// microseq: batch tool for synthesizing, preprocessing, training and
// evaluating weakly labeled acquisition-stream classifiers.
#include <microseq/data_io.hpp>
#include <microseq/inference.hpp>
#include <microseq/preprocessing.hpp>
#include <microseq/training.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace microseq;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::IoFailure:
    case ErrorCode::VersionMismatch:
      return 3;
    case ErrorCode::NumericFailure:
      return 4;
    default:
      return 2;
  }
}

// ---------------------------------------------------------------------------
// config file
// ---------------------------------------------------------------------------

struct RunConfig {
  SynthConfig synth;
  double test_fraction = 0.2;
  double val_fraction = 0.15;
  training::TrainConfig train;
};

void apply_synth_section(const json& j, SynthConfig& s) {
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") s.seed = value.get<std::uint64_t>();
    else if (key == "cases_per_class") s.cases_per_class = value.get<int>();
    else if (key == "num_classes") s.num_classes = value.get<int>();
    else if (key == "feature_dim") s.feature_dim = value.get<int>();
    else if (key == "min_length") s.min_length = value.get<int>();
    else if (key == "max_length") s.max_length = value.get<int>();
    else if (key == "duplicate_rate") s.duplicate_rate = value.get<double>();
    else if (key == "onset_alpha") s.onset_alpha = value.get<int>();
    else if (key == "onset_beta") s.onset_beta = value.get<int>();
    else if (key == "separation") s.separation = value.get<double>();
    else if (key == "brightness_sigma") s.brightness_sigma = value.get<double>();
    else raise(ErrorCode::ConfigError, "unknown key '" + key + "' in synth config");
  }
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;

  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoFailure, "cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    raise(ErrorCode::ConfigError, path + ": " + e.what());
  }

  json train_section = json::object();
  bool train_has_seed = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      cfg.synth.seed = value.get<std::uint64_t>();
      cfg.train.seed = value.get<std::uint64_t>();
    } else if (key == "synth") {
      apply_synth_section(value, cfg.synth);
    } else if (key == "split") {
      for (const auto& [sk, sv] : value.items()) {
        if (sk == "test_fraction") cfg.test_fraction = sv.get<double>();
        else if (sk == "val_fraction") cfg.val_fraction = sv.get<double>();
        else raise(ErrorCode::ConfigError, "unknown key '" + sk + "' in split config");
      }
    } else if (key == "train") {
      train_section = value;
      train_has_seed = value.contains("seed");
    } else if (key == "model") {
      train_section["model"] = value;
    } else {
      raise(ErrorCode::ConfigError, "unknown key '" + key + "' in config");
    }
  }
  if (!train_section.empty()) {
    const auto base_seed = cfg.train.seed;
    cfg.train = training::train_config_from_json(train_section.dump());
    if (!train_has_seed) cfg.train.seed = base_seed;
  }
  return cfg;
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("MICROSEQ_SEED");
  if (!raw) return std::nullopt;
  try {
    return std::stoull(raw);
  } catch (const std::exception&) {
    raise(ErrorCode::ConfigError, std::string("MICROSEQ_SEED is not an integer: ") + raw);
  }
}

// ---------------------------------------------------------------------------
// KNN bank cache (".bank" beside the checkpoint)
// ---------------------------------------------------------------------------

std::uint64_t params_digest(const model::ModelParams& params) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  const auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  params.for_each_tensor([&](const char*, const Matrix& m) {
    mix(static_cast<std::uint64_t>(m.rows()));
    mix(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) {
        std::uint64_t bits;
        const double v = m(i, j);
        std::memcpy(&bits, &v, 8);
        mix(bits);
      }
  });
  return h;
}

constexpr char kBankMagic[4] = {'M', 'B', 'N', 'K'};

void save_bank(const fs::path& path, std::uint64_t digest,
               const std::vector<inference::BankEntry>& bank) {
  std::string out;
  out.append(kBankMagic, 4);
  const auto put_u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  const auto put_u64 = [&out](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(1);
  put_u64(digest);
  put_u32(static_cast<std::uint32_t>(bank.size()));
  for (const auto& e : bank) {
    put_u32(static_cast<std::uint32_t>(e.case_id.size()));
    out.append(e.case_id);
    put_u32(static_cast<std::uint32_t>(e.label));
    put_u32(static_cast<std::uint32_t>(e.y_attn.rows()));
    put_u32(static_cast<std::uint32_t>(e.y_attn.cols()));
    for (Index i = 0; i < e.y_attn.rows(); ++i)
      for (Index j = 0; j < e.y_attn.cols(); ++j) {
        std::uint64_t bits;
        const double v = e.y_attn(i, j);
        std::memcpy(&bits, &v, 8);
        put_u64(bits);
      }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::optional<std::vector<inference::BankEntry>> load_bank(const fs::path& path,
                                                           std::uint64_t digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string raw = std::move(buf).str();
  std::size_t pos = 0;
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  const auto get_u32 = [&]() -> std::uint32_t {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  };
  const auto get_u64 = [&]() -> std::uint64_t {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  };
  if (raw.size() < 20 || std::memcmp(raw.data(), kBankMagic, 4) != 0) return std::nullopt;
  pos = 4;
  if (get_u32() != 1) return std::nullopt;
  if (get_u64() != digest) return std::nullopt;  // stale cache: rebuild
  const auto count = get_u32();
  std::vector<inference::BankEntry> bank;
  bank.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    if (pos + 4 > raw.size()) return std::nullopt;
    const auto id_len = get_u32();
    if (pos + id_len + 12 > raw.size()) return std::nullopt;
    inference::BankEntry e;
    e.case_id = raw.substr(pos, id_len);
    pos += id_len;
    e.label = static_cast<int>(get_u32());
    const auto rows = get_u32();
    const auto cols = get_u32();
    if (pos + static_cast<std::size_t>(rows) * cols * 8 > raw.size()) return std::nullopt;
    e.y_attn.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        const auto bits = get_u64();
        double v;
        std::memcpy(&v, &bits, 8);
        e.y_attn(i, j) = v;
      }
    bank.push_back(std::move(e));
  }
  return bank;
}

std::vector<preprocessing::PreparedCase> prepare_split(const DatasetManifest& manifest,
                                                       const fs::path& base_dir,
                                                       Split split, double tau,
                                                       bool use_wavelet) {
  const auto seqs = data_io::load_split(manifest, base_dir, split);
  std::vector<preprocessing::PreparedCase> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs)
    out.push_back(preprocessing::prepare_case(s, tau, use_wavelet));
  return out;
}

std::vector<inference::BankEntry> obtain_bank(const training::Checkpoint& ckpt,
                                              const fs::path& bank_path,
                                              const DatasetManifest* manifest,
                                              const fs::path& base_dir) {
  if (!ckpt.cfg.use_attention) return {};
  const auto digest = params_digest(ckpt.params);
  if (auto cached = load_bank(bank_path, digest)) return std::move(*cached);
  if (!manifest)
    raise(ErrorCode::IoFailure,
          "no cached KNN bank at " + bank_path.string() +
              " and no manifest to build one from (run eval first or pass --manifest)");
  const auto train_cases =
      prepare_split(*manifest, base_dir, Split::train, ckpt.tau, ckpt.cfg.use_wavelet);
  if (train_cases.empty()) raise(ErrorCode::EmptyDataset, "train split is empty");
  auto bank = inference::build_bank(train_cases, ckpt.params, ckpt.cfg.model);
  save_bank(bank_path, digest, bank);
  return bank;
}

json report_to_json(const inference::SplitEvaluation& ev) {
  json per_strategy = json::object();
  for (const auto& [name, report] : ev.per_strategy)
    per_strategy[name] = {{"accuracy", report.accuracy}, {"f1", report.f1}};

  const auto& vote = ev.per_strategy.at("vote");
  json confusion = json::array();
  for (Index i = 0; i < vote.confusion.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < vote.confusion.cols(); ++j)
      row.push_back(static_cast<std::int64_t>(vote.confusion(i, j)));
    confusion.push_back(std::move(row));
  }
  return json{{"overall", {{"accuracy", vote.accuracy}, {"f1", vote.f1}}},
              {"per_strategy", std::move(per_strategy)},
              {"confusion", std::move(confusion)}};
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> cases_per_class, num_classes, feature_dim, min_length, max_length;
  std::optional<double> duplicate_rate, separation, brightness_sigma;
  std::optional<double> test_fraction, val_fraction;
};

int cmd_gen_synth(const GenSynthArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  if (const auto seed = env_seed()) cfg.synth.seed = *seed;
  if (args.seed) cfg.synth.seed = *args.seed;
  if (args.cases_per_class) cfg.synth.cases_per_class = *args.cases_per_class;
  if (args.num_classes) cfg.synth.num_classes = *args.num_classes;
  if (args.feature_dim) cfg.synth.feature_dim = *args.feature_dim;
  if (args.min_length) cfg.synth.min_length = *args.min_length;
  if (args.max_length) cfg.synth.max_length = *args.max_length;
  if (args.duplicate_rate) cfg.synth.duplicate_rate = *args.duplicate_rate;
  if (args.separation) cfg.synth.separation = *args.separation;
  if (args.brightness_sigma) cfg.synth.brightness_sigma = *args.brightness_sigma;
  if (args.test_fraction) cfg.test_fraction = *args.test_fraction;
  if (args.val_fraction) cfg.val_fraction = *args.val_fraction;
  cfg.synth.validate();

  const fs::path out_dir(args.out_dir);
  auto result = data_io::generate_synthetic_dataset(cfg.synth, out_dir);
  const auto manifest = data_io::split_dataset(result.manifest, cfg.test_fraction,
                                               cfg.val_fraction, cfg.synth.seed);
  data_io::save_manifest(manifest, out_dir / "manifest.json");

  int train = 0, val = 0, test = 0;
  for (const auto& c : manifest.cases) {
    if (c.split == Split::train) ++train;
    if (c.split == Split::val) ++val;
    if (c.split == Split::test) ++test;
  }
  const double dup_fraction =
      result.total_frames > 0
          ? static_cast<double>(result.duplicate_frames) / result.total_frames
          : 0.0;
  std::cout << "cases: " << manifest.cases.size() << " (" << manifest.num_classes
            << " classes; train " << train << ", val " << val << ", test " << test
            << ")\n"
            << "frames: " << result.total_frames << " (duplicates "
            << result.duplicate_frames << ", fraction " << dup_fraction << ")\n"
            << "manifest: " << (out_dir / "manifest.json").string() << "\n";
  return 0;
}

struct PreprocessArgs {
  std::string manifest_path;
  std::string split = "train";
  std::optional<double> dup_fraction;
  std::optional<double> tau;
  std::string out_path;
};

int cmd_preprocess(const PreprocessArgs& args) {
  const fs::path manifest_path(args.manifest_path);
  const auto manifest = data_io::load_manifest(manifest_path);
  const auto base_dir = manifest_path.parent_path();
  data_io::validate_manifest(manifest, base_dir);

  const double fraction = args.dup_fraction.value_or(0.25);
  double tau;
  if (args.tau) {
    tau = *args.tau;
  } else {
    auto pooled = data_io::load_split(manifest, base_dir, Split::train);
    auto val = data_io::load_split(manifest, base_dir, Split::val);
    pooled.insert(pooled.end(), val.begin(), val.end());
    if (pooled.empty())
      raise(ErrorCode::EmptyDataset, "no train/val cases to calibrate on");
    tau = preprocessing::select_tau(pooled, fraction);
  }

  std::vector<Split> splits;
  if (args.split == "all")
    splits = {Split::train, Split::val, Split::test};
  else if (args.split == "train")
    splits = {Split::train};
  else if (args.split == "val")
    splits = {Split::val};
  else if (args.split == "test")
    splits = {Split::test};
  else
    raise(ErrorCode::ConfigError, "unknown split '" + args.split + "'");

  json cases = json::array();
  std::int64_t before_total = 0, after_total = 0;
  for (const auto split : splits) {
    for (const auto& seq : data_io::load_split(manifest, base_dir, split)) {
      const auto [dedup, report] = preprocessing::deduplicate_sequence(seq, tau);
      before_total += seq.frames();
      after_total += dedup.frames();
      cases.push_back({{"case_id", seq.case_id},
                       {"split", to_string(split)},
                       {"frames", seq.frames()},
                       {"kept", dedup.frames()},
                       {"removed", report.removed_count}});
    }
  }
  if (cases.empty()) raise(ErrorCode::EmptyDataset, "requested split is empty");

  const json out = {
      {"tau", tau},
      {"duplicate_fraction", fraction},
      {"total_frames", before_total},
      {"kept_frames", after_total},
      {"removed_fraction",
       before_total > 0 ? static_cast<double>(before_total - after_total) / before_total
                        : 0.0},
      {"cases", std::move(cases)}};

  if (args.out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream f(args.out_path, std::ios::trunc);
    if (!f) raise(ErrorCode::IoFailure, "cannot open " + args.out_path);
    f << out.dump(2) << "\n";
    std::cout << "stats: " << args.out_path << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string manifest_path;
  std::string config_path;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, accumulation, patience, target_len, knn_k, val_knn_bank;
  std::optional<int> d_k, hidden;
  std::optional<double> lr, gamma, dup_fraction, tau, align_temperature;
  std::optional<std::string> target_kind, align_mode;
  bool no_wavelet = false, no_implicit_target = false, no_ideal_reference = false;
  bool no_align = false, no_attention = false, no_ap = false;
};

training::TrainConfig resolve_train_config(const TrainArgs& args) {
  RunConfig run = load_run_config(args.config_path);
  training::TrainConfig cfg = run.train;
  if (const auto seed = env_seed()) cfg.seed = *seed;
  if (args.seed) cfg.seed = *args.seed;
  if (args.epochs) cfg.epochs = *args.epochs;
  if (args.accumulation) cfg.accumulation_size = *args.accumulation;
  if (args.patience) cfg.patience = *args.patience;
  if (args.target_len) cfg.target_len = *args.target_len;
  if (args.knn_k) cfg.knn_k = *args.knn_k;
  if (args.val_knn_bank) cfg.val_knn_bank = *args.val_knn_bank;
  if (args.d_k) cfg.model.d_k = *args.d_k;
  if (args.hidden) cfg.model.hidden = *args.hidden;
  if (args.lr) cfg.lr = *args.lr;
  if (args.gamma) cfg.dtw.gamma = *args.gamma;
  if (args.dup_fraction) cfg.duplicate_fraction = *args.dup_fraction;
  if (args.tau) cfg.tau_override = *args.tau;
  if (args.align_temperature) cfg.align_temperature = *args.align_temperature;
  if (args.target_kind) {
    if (*args.target_kind == "constant")
      cfg.target_kind = warping::TargetKind::constant;
    else if (*args.target_kind == "implicit")
      cfg.target_kind = warping::TargetKind::implicit;
    else
      raise(ErrorCode::ConfigError, "unknown target kind '" + *args.target_kind + "'");
  }
  if (args.align_mode) {
    if (*args.align_mode == "soft_argmax")
      cfg.align_mode = losses::AlignMode::soft_argmax;
    else if (*args.align_mode == "straight_through")
      cfg.align_mode = losses::AlignMode::straight_through;
    else if (*args.align_mode == "metric_only")
      cfg.align_mode = losses::AlignMode::metric_only;
    else
      raise(ErrorCode::ConfigError, "unknown align mode '" + *args.align_mode + "'");
  }
  if (args.no_wavelet) cfg.use_wavelet = false;
  if (args.no_implicit_target) cfg.use_implicit_target = false;
  if (args.no_ideal_reference) cfg.use_ideal_reference = false;
  if (args.no_align) cfg.use_align = false;
  if (args.no_attention) cfg.use_attention = false;
  if (args.no_ap) cfg.use_ap = false;
  return cfg;
}

int cmd_train(const TrainArgs& args) {
  const fs::path manifest_path(args.manifest_path);
  const auto manifest = data_io::load_manifest(manifest_path);
  const auto base_dir = manifest_path.parent_path();
  data_io::validate_manifest(manifest, base_dir);

  auto cfg = resolve_train_config(args);
  cfg.validate();

  const auto result = training::fit(manifest, base_dir, cfg);

  training::Checkpoint ckpt;
  ckpt.params = result.best_params;
  ckpt.state = result.best_state;
  ckpt.cfg = cfg;
  ckpt.cfg.model = result.model_cfg;
  ckpt.tau = result.tau;
  ckpt.epochs_done = result.best_epoch;
  training::save_checkpoint(ckpt, args.out_path);

  json epochs = json::array();
  for (const auto& rec : result.history) {
    epochs.push_back({{"epoch", rec.epoch},
                      {"train",
                       {{"dtw", rec.train.dtw},
                        {"ap", rec.train.ap},
                        {"align", rec.train.align},
                        {"align_reported", rec.train.align_reported},
                        {"total", rec.train.total}}},
                      {"val_accuracy", rec.val_accuracy},
                      {"val_f1", rec.val_f1}});
  }
  const json history = {{"tau", result.tau},
                        {"best_epoch", result.best_epoch},
                        {"best_val_f1", result.best_val_f1},
                        {"epochs", std::move(epochs)}};
  const fs::path history_path = fs::path(args.out_path).string() + ".history.json";
  std::ofstream hf(history_path, std::ios::trunc);
  if (!hf) raise(ErrorCode::IoFailure, "cannot open " + history_path.string());
  hf << history.dump(2) << "\n";

  const auto& last = result.history.back();
  std::cout << "epochs run: " << result.history.size() << " (best " << result.best_epoch
            << ", val vote F1 " << result.best_val_f1 << ")\n";
  std::cout << "final val:";
  for (const auto& [name, f1] : last.val_f1)
    std::cout << " " << name << " f1=" << f1 << " acc=" << last.val_accuracy.at(name);
  std::cout << "\ncheckpoint: " << args.out_path
            << "\nhistory: " << history_path.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string manifest_path;
  std::string checkpoint_path;
  std::string split = "test";
  std::string bank_path;
  int jobs = 1;
};

int cmd_eval(const EvalArgs& args) {
  const auto ckpt = training::load_checkpoint(args.checkpoint_path);
  const fs::path manifest_path(args.manifest_path);
  const auto manifest = data_io::load_manifest(manifest_path);
  const auto base_dir = manifest_path.parent_path();

  Split split;
  if (args.split == "train") split = Split::train;
  else if (args.split == "val") split = Split::val;
  else if (args.split == "test") split = Split::test;
  else raise(ErrorCode::ConfigError, "unknown split '" + args.split + "'");

  const auto cases =
      prepare_split(manifest, base_dir, split, ckpt.tau, ckpt.cfg.use_wavelet);
  if (cases.empty())
    raise(ErrorCode::EmptyDataset, "split '" + args.split + "' is empty");

  const fs::path bank_path = args.bank_path.empty()
                                 ? fs::path(args.checkpoint_path + ".bank")
                                 : fs::path(args.bank_path);
  const auto bank = obtain_bank(ckpt, bank_path, &manifest, base_dir);

  const auto icfg = ckpt.cfg.inference_config();
  const auto ev = inference::evaluate_split(cases, ckpt.params, ckpt.cfg.model, icfg,
                                            bank, args.jobs);
  std::cout << report_to_json(ev).dump(2) << "\n";
  return 0;
}

struct InferArgs {
  std::string checkpoint_path;
  std::string input_path;
  std::string bank_path;
  std::string manifest_path;
};

int cmd_infer(const InferArgs& args) {
  const auto ckpt = training::load_checkpoint(args.checkpoint_path);
  const auto seq = data_io::read_feature_sequence(args.input_path);
  const auto pc = preprocessing::prepare_case(seq, ckpt.tau, ckpt.cfg.use_wavelet);

  const fs::path bank_path = args.bank_path.empty()
                                 ? fs::path(args.checkpoint_path + ".bank")
                                 : fs::path(args.bank_path);
  std::optional<DatasetManifest> manifest;
  fs::path base_dir;
  if (!args.manifest_path.empty()) {
    manifest = data_io::load_manifest(args.manifest_path);
    base_dir = fs::path(args.manifest_path).parent_path();
  }
  const auto bank =
      obtain_bank(ckpt, bank_path, manifest ? &*manifest : nullptr, base_dir);

  const auto bundle =
      model::model_forward(pc.x, pc.x_stb, pc.x_rpd, ckpt.params, ckpt.cfg.model);
  const auto icfg = ckpt.cfg.inference_config();
  const auto pred = inference::predict_case(bundle, bank, icfg);

  json strategies = json::object();
  if (ckpt.cfg.use_ap) strategies["ap"] = pred.ap_class;
  if (ckpt.cfg.use_attention) {
    strategies["dtw"] = pred.dtw_class;
    strategies["knn"] = pred.knn_class;
  }
  const json out = {{"case_id", seq.case_id},
                    {"strategies", std::move(strategies)},
                    {"vote", pred.vote_class}};
  std::cout << out.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microseq: weakly labeled acquisition-stream classification"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Generate a synthetic dataset");
  gen_cmd->add_option("--config", gen.config_path, "JSON config file");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed (default 7)");
  gen_cmd->add_option("--cases-per-class", gen.cases_per_class,
                      "Cases per class (default 50)");
  gen_cmd->add_option("--num-classes", gen.num_classes, "Number of classes (default 2)");
  gen_cmd->add_option("--feature-dim", gen.feature_dim, "Feature width (default 32)");
  gen_cmd->add_option("--min-length", gen.min_length,
                      "Minimum sequence length (default 40)");
  gen_cmd->add_option("--max-length", gen.max_length,
                      "Maximum sequence length (default 160)");
  gen_cmd->add_option("--dup-rate", gen.duplicate_rate,
                      "Near-duplicate rate (default 0.25)");
  gen_cmd->add_option("--separation", gen.separation,
                      "Class-signal separation (default 0.6)");
  gen_cmd->add_option("--brightness-sigma", gen.brightness_sigma,
                      "Per-case offset scale (default 0.30)");
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "Test fraction (default 0.2)");
  gen_cmd->add_option("--val-fraction", gen.val_fraction,
                      "Validation fraction of the remaining pool (default 0.15)");

  PreprocessArgs prep;
  auto* prep_cmd = app.add_subcommand("preprocess", "Report deduplication statistics");
  prep_cmd->add_option("--manifest", prep.manifest_path, "Dataset manifest")->required();
  prep_cmd->add_option("--split", prep.split, "train|val|test|all (default train)");
  prep_cmd->add_option("--dup-fraction", prep.dup_fraction,
                       "Removal target for tau calibration (default 0.25)");
  prep_cmd->add_option("--tau", prep.tau, "Direct squared-distance threshold override");
  prep_cmd->add_option("--out", prep.out_path, "Write stats JSON here instead of stdout");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--manifest", train.manifest_path, "Dataset manifest")->required();
  train_cmd->add_option("--config", train.config_path, "JSON config file");
  train_cmd->add_option("--out", train.out_path, "Checkpoint output path")->required();
  train_cmd->add_option("--seed", train.seed, "Training seed (default 1)");
  train_cmd->add_option("--epochs", train.epochs, "Epoch cap (default 50)");
  train_cmd->add_option("--lr", train.lr, "Adam learning rate (default 1e-4)");
  train_cmd->add_option("--gamma", train.gamma, "Soft-DTW temperature (default 0.1)");
  train_cmd->add_option("--target-len", train.target_len, "Target length l (default 75)");
  train_cmd->add_option("--target-kind", train.target_kind,
                        "constant|implicit (default implicit)");
  train_cmd->add_option("--align-mode", train.align_mode,
                        "soft_argmax|straight_through|metric_only (default soft_argmax)");
  train_cmd->add_option("--align-temperature", train.align_temperature,
                        "Soft-argmax temperature (default 0.1)");
  train_cmd->add_option("--accumulation", train.accumulation,
                        "Cases per optimizer step (default 8)");
  train_cmd->add_option("--patience", train.patience,
                        "Early-stopping patience (default 10)");
  train_cmd->add_option("--dup-fraction", train.dup_fraction,
                        "Removal target for tau calibration (default 0.25)");
  train_cmd->add_option("--tau", train.tau, "Direct tau override");
  train_cmd->add_option("--knn-k", train.knn_k, "KNN neighbourhood size (default 5)");
  train_cmd->add_option("--val-knn-bank", train.val_knn_bank,
                        "Bank subsample for per-epoch validation (default 64)");
  train_cmd->add_option("--d-k", train.d_k, "Attention width (default 192)");
  train_cmd->add_option("--hidden", train.hidden, "Reduction-head width (default 96)");
  train_cmd->add_flag("--no-wavelet", train.no_wavelet, "Disable the wavelet split");
  train_cmd->add_flag("--no-implicit-target", train.no_implicit_target,
                      "Use constant targets");
  train_cmd->add_flag("--no-ideal-reference", train.no_ideal_reference,
                      "Drop the subtracted alignment floor");
  train_cmd->add_flag("--no-align", train.no_align, "Drop the agreement term");
  train_cmd->add_flag("--no-attention", train.no_attention,
                      "Disable the attention trunk (pooled path only)");
  train_cmd->add_flag("--no-ap", train.no_ap, "Disable attention pooling");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->add_option("--manifest", eval.manifest_path, "Dataset manifest")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint_path, "Model checkpoint")
      ->required();
  eval_cmd->add_option("--split", eval.split, "train|val|test (default test)");
  eval_cmd->add_option("--bank", eval.bank_path,
                       "KNN bank cache path (default <checkpoint>.bank)");
  eval_cmd->add_option("--jobs", eval.jobs, "Parallel per-case evaluation (default 1)");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Classify one feature sequence");
  infer_cmd->add_option("--checkpoint", infer.checkpoint_path, "Model checkpoint")
      ->required();
  infer_cmd->add_option("--input", infer.input_path, "A .fseq feature file")->required();
  infer_cmd->add_option("--bank", infer.bank_path,
                        "KNN bank cache path (default <checkpoint>.bank)");
  infer_cmd->add_option("--manifest", infer.manifest_path,
                        "Manifest to build the bank from when no cache exists");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_synth(gen);
    if (prep_cmd->parsed()) return cmd_preprocess(prep);
    if (train_cmd->parsed()) return cmd_train(train);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (infer_cmd->parsed()) return cmd_infer(infer);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
