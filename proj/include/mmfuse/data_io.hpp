#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/record.hpp"

namespace mmfuse {

// MMEB container, all fields little-endian:
//   "MMEB" | version u16 = 1 | flags u16 = 0 | label i32 | d_t u32 | d_a u32 |
//   n_chunks u32 | d_t × f32 text values |
//   per chunk: L u32 | L·d_a × f32 frames, row-major
inline constexpr char kRecordMagic[4] = {'M', 'M', 'E', 'B'};
inline constexpr std::uint16_t kRecordVersion = 1;

struct RecordDims {
  std::size_t text_dim = 0;
  std::size_t audio_dim = 0;
};

std::vector<std::uint8_t> encode_record(const UtteranceRecord& record);
/// Throws DataError with bad_magic, version_mismatch, truncated,
/// invalid_record or dim_mismatch (when `expected` is given).
UtteranceRecord decode_record(std::span<const std::uint8_t> bytes,
                              std::optional<RecordDims> expected = std::nullopt);

void write_record(const UtteranceRecord& record, const std::filesystem::path& path);
UtteranceRecord read_record(const std::filesystem::path& path,
                            std::optional<RecordDims> expected = std::nullopt);

/// Throws DataError(invalid_record) for an empty chunk, ragged dims, or a
/// label outside {-1, 0, 1}.
void validate_record(const UtteranceRecord& record);

enum class Split { train, test };

struct ManifestEntry {
  std::string id;
  std::string file;  // relative to the manifest's directory
  int label = kUnlabeled;
  Split split = Split::train;
};

struct Manifest {
  int version = 1;
  std::size_t text_dim = 0;
  std::size_t audio_dim = 0;
  std::vector<ManifestEntry> utterances;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct Dataset {
  Manifest manifest;
  std::vector<UtteranceRecord> train;
  std::vector<UtteranceRecord> test;
  std::vector<std::string> warnings;
};

/// Reads the manifest and every record it lists, validating ids and dims.
Dataset load_dataset(const std::filesystem::path& manifest_path);

struct SyntheticSpec {
  std::size_t n_per_class = 50;
  std::size_t text_dim = 16;
  std::size_t audio_dim = 16;
  std::size_t min_chunks = 1;
  std::size_t max_chunks = 3;
  std::size_t min_frames = 4;
  std::size_t max_frames = 12;
  double separation = 4.0;
  double noise = 1.0;
  double test_fraction = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  Manifest manifest;
  std::vector<UtteranceRecord> records;  // same order as manifest entries
};

/// Two classes with antipodal latents ±separation·u (u the normalised
/// all-ones direction of each modality). Text embedding and every frame are
/// latent + N(0, noise²), so both modalities carry the class.
SyntheticDataset synthesize(const SyntheticSpec& spec);

/// synthesize() written to `out_dir`; returns the manifest path.
std::filesystem::path gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace mmfuse
