// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ub/tensor.hpp"

namespace ub {

// UBTN layout, all little-endian:
//   "UBTN" | dtype u8 (1 = float32) | rank u8 | 2 zero bytes | rank x u32 dims |
//   row-major float32 values
// Values are truncated to float32 on write and widened to float64 on read.
inline constexpr unsigned char kUbtnFloat32 = 1;

void write_ubtn(std::ostream& os, const Tensor& t);
Tensor read_ubtn(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

// Checkpoint directory: one UBTN file per parameter, manifest.txt with one
// `name<TAB>shape<TAB>file` line per parameter, and config.txt echoing the
// producing config as `key = value` lines.
void save_checkpoint(const std::filesystem::path& dir, const ParamList& params, const ConfigEcho& config);
// Copies stored values into `params` by name. Missing names or shape
// mismatches throw DataError.
void load_checkpoint(const std::filesystem::path& dir, ParamList& params);
ConfigEcho read_checkpoint_config(const std::filesystem::path& dir);

}  // namespace ub
