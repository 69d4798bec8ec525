#pragma once

// Single-file containers:
//
//   magic (5 ASCII bytes) | u32 LE header length | u32 LE header CRC-32 | JSON header | payload
//
// Datasets ("CSSD1") carry f32 LE images row-major followed by i32 LE labels.
// Checkpoints ("CSSC1") carry f32 LE parameters at the offsets listed in the
// header manifest. The header records a CRC-32 of the payload. Both checksums
// are verified on load, so any single corrupted byte is caught.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cssloc/dataset.hpp"
#include "cssloc/downstream.hpp"
#include "cssloc/encoder.hpp"

namespace cssloc::io {

inline constexpr std::string_view kDatasetMagic = "CSSD1";
inline constexpr std::string_view kCheckpointMagic = "CSSC1";

struct DatasetFile {
  RadioMap map;
  imaging::NormStats stats;
  nlohmann::json meta;  // free-form provenance (scenario, generator settings, seed)
};

std::string encode_dataset(const DatasetFile& ds);
DatasetFile decode_dataset(std::string_view bytes);

void write_dataset(const std::filesystem::path& path, const DatasetFile& ds);
DatasetFile read_dataset(const std::filesystem::path& path);

struct Checkpoint {
  std::string architecture;
  std::vector<std::pair<std::string, Tensor<float>>> params;
  nlohmann::json config;
  int epoch = 0;
  nlohmann::json extra;  // normalisation stats, RP table, etc.
};

std::string encode_checkpoint(const Checkpoint& ck);
// Rejects a tag other than `expected_architecture` when one is given.
Checkpoint decode_checkpoint(std::string_view bytes, std::optional<std::string> expected_architecture = {});

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path, std::optional<std::string> expected_architecture = {});

std::string encoder_architecture(bool projection);
std::string predictor_architecture(bool linear_probe);

Checkpoint encoder_checkpoint(const EncoderState<float>& enc, nlohmann::json config, int epoch);
EncoderState<float> encoder_from_checkpoint(const Checkpoint& ck);

// The predictor checkpoint also stores the RP coordinate table it was trained on.
Checkpoint predictor_checkpoint(const PredictorState& pred, const RadioMap& map, nlohmann::json config);
PredictorState predictor_from_checkpoint(const Checkpoint& ck);
RadioMap predictor_radio_map(const Checkpoint& ck);  // coordinates only, no entries

// Reads the 5-byte magic of a file, or "" if unreadable.
std::string sniff_magic(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::uint32_t crc32(std::string_view bytes);

}  // namespace cssloc::io
