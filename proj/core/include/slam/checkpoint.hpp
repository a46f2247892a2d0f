// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout: one line of JSON (config, format version, parameter
// manifest with byte offsets relative to the end of that line) terminated by
// '\n', followed by the raw little-endian float32 arrays, row-major, in
// manifest order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "slam/model.hpp"

namespace slam {

inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
// Throws DataError on a malformed or truncated file.
Model load_checkpoint(const std::filesystem::path& path);

// Concatenated raw bytes of every tensor whose ref is (or, with
// `invert`, is not) in `refs`, in registry order.
std::string region_bytes(const Model& model, std::span<const ParamRef> refs, bool invert);

}  // namespace slam
