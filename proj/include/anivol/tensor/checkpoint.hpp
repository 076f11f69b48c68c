#pragma once

#include <filesystem>
#include <string>

#include "anivol/tensor/parameter.hpp"

namespace anivol {

struct CheckpointManifest {
  std::string variant;
  std::size_t parameter_count = 0;
  std::size_t record_count = 0;
};

/// Writes `archive` (binary records: name, kind, shape, raw little-endian
/// f64 values) and `archive` + ".manifest" (JSON: variant, parameter count,
/// record count). Output depends only on the state, so identical models
/// produce identical bytes.
void save_checkpoint(const std::filesystem::path& archive, const StateList& state, const std::string& variant);

/// Restores every record into `state`; names, kinds and shapes must match
/// exactly and every entry of `state` must be present.
void load_checkpoint(const std::filesystem::path& archive, StateList& state);

CheckpointManifest read_manifest(const std::filesystem::path& archive);

std::filesystem::path manifest_path(const std::filesystem::path& archive);

}  // namespace anivol
