#pragma once

#include <filesystem>
#include <optional>

#include "sfseg/model.hpp"

namespace sfseg {

/// Thrown on malformed or truncated checkpoint files.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Writes a single-file checkpoint: magic + version, a JSON header carrying the
/// ArchSpec, step count and the parameter table (names and shapes), then raw
/// little-endian float32 payloads in table order.
void save_checkpoint(const Model& model, const std::filesystem::path& path);

/// Reads a checkpoint back into a freshly built model. When `expect` is given,
/// an arch mismatch raises ShapeError before any parameter is touched.
Model load_checkpoint(const std::filesystem::path& path,
                      const std::optional<ArchSpec>& expect = std::nullopt);

}  // namespace sfseg
