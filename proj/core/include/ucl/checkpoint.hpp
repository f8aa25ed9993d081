#pragma once

#include <filesystem>
#include <string>

#include "ucl/meanfield_net.hpp"
#include "ucl/ucl_loss.hpp"

namespace ucl {

// A checkpoint is a directory holding
//
//   manifest.txt  key = value lines: format, version, sigma parameterization
//                 ("softplus" stores rho, "direct" stores sigma), head mode,
//                 layer shapes, per-layer sigma_init, head count, blob name
//                 and its length in doubles.
//   params.bin    little-endian IEEE-754 doubles. For every shared layer then
//                 every head: mu row-major (n_out x (n_in + 1)), then the
//                 n_out node parameters (rho or sigma).
//
// Networks are written with the softplus parameterization, snapshots with the
// direct one, so both round-trip bitwise.

inline constexpr const char* kManifestName = "manifest.txt";
inline constexpr const char* kBlobName = "params.bin";

void write_checkpoint(const std::filesystem::path& dir, const Network& net);
Network read_checkpoint(const std::filesystem::path& dir);

/// head_mode and sigma_init are not part of a snapshot; they are written for
/// auditability and taken from the network the snapshot came from.
void write_snapshot(const std::filesystem::path& dir, const TaskSnapshot& snapshot,
                    HeadMode mode, const std::vector<double>& sigma_init);
TaskSnapshot read_snapshot(const std::filesystem::path& dir);

/// Writes to a sibling temporary file and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

} // namespace ucl
