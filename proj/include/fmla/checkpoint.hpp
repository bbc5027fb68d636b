#pragma once

#include <filesystem>

#include "fmla/error.hpp"
#include "fmla/model.hpp"

namespace fmla {

struct CheckpointError : Error {
  using Error::Error;
};
struct CheckpointBadMagic : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointBadVersion : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncated : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointBadCrc : CheckpointError {
  using CheckpointError::CheckpointError;
};

// Binary format: "FMLA", version byte 0x01, u32 tensor count, then per tensor
// u16 name length, UTF-8 name, u8 rank, u32 extents, little-endian f32
// payload; trailing u32 CRC32 of all preceding bytes. The model config rides
// along as the f32 vector tensor "meta/config". Parameters are stored f32.
void save_checkpoint(const FmlaModel& model, const std::filesystem::path& path);

FmlaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace fmla
