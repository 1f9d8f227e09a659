#pragma once

#include "microseq/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace microseq::data_io {

// ".fseq" container: magic "FSEQ", u32 version = 1, u32 n, u32 d (all
// little-endian), then n*d IEEE-754 float32 little-endian, frame-major.
FeatureSequence read_feature_sequence(const std::filesystem::path& path);
void write_feature_sequence(const FeatureSequence& seq, const std::filesystem::path& path);

// Manifest: UTF-8 JSON {num_classes, feature_dim, cases:[{case_id, file_path,
// label, split}]}; file paths are resolved against the manifest directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Checks referenced files exist and their headers match the manifest dims.
void validate_manifest(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

std::vector<FeatureSequence> load_split(const DatasetManifest& manifest,
                                        const std::filesystem::path& base_dir, Split split);

// Seeded, per-class stratified reassignment of splits. The global test count
// is round(test_frac * N); val is drawn from the remaining train pool at
// round(val_frac * remaining). Largest-remainder apportionment keeps the
// global counts exact while staying stratified.
DatasetManifest split_dataset(const DatasetManifest& manifest, double test_frac,
                              double val_frac, std::uint64_t seed);

// One synthetic acquisition stream plus the generator's own bookkeeping.
struct SynthCase {
  Matrix features;
  std::vector<std::uint8_t> is_signal;
  std::vector<std::uint8_t> is_duplicate;
};

SynthCase synthesize_case(const SynthConfig& cfg, int label, Rng& rng);

struct SynthResult {
  DatasetManifest manifest;
  std::uint64_t total_frames = 0;
  std::uint64_t duplicate_frames = 0;
};

// Writes cases/<case_id>.fseq files plus manifest.json under out_dir. All
// cases start in the train split; apply split_dataset afterwards.
SynthResult generate_synthetic_dataset(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir);

}  // namespace microseq::data_io
