#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "tensor.hpp"

namespace derain {

// ---- tensor files -----------------------------------------------------
// "DRTN" magic, u16 version=1, u8 dtype=0 (float32), u8 ndim,
// ndim x u32 dims, then row-major float32 payload. All little-endian.

void write_tensor_stream(std::ostream& os, const Tensor& t);
Tensor read_tensor_stream(std::istream& is);
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// ---- frames ------------------------------------------------------------
// 3-channel frames as binary PPM (P6, maxval 255), 1-channel as PGM (P5).
// Write quantizes round-half-up to 8 bits and requires values in [0,1].
// Read decodes byte k to the nearest multiple of 1/65536 of k/255 (within
// 2^-17 of the exact ratio, far inside the half-quantum round-trip bound).
// On that dyadic grid float differences are exact, so X - C reconstructed
// from loaded frames satisfies X == C + S bit-exactly.

void write_frame(const std::string& path, const Tensor& frame);  // (3,H,W) or (1,H,W)
Tensor read_frame(const std::string& path);
float decode_byte(int byte);    // the dyadic decode, exposed for tests
int quantize_sample(float v);   // round-half-up to [0,255]

// ---- checkpoints --------------------------------------------------------
// Single file: a text header (metadata + per-tensor manifest with byte
// offsets into the blob section) followed by concatenated tensor records.
// Optimizer moments are stored as "<param>#m" / "<param>#v".

struct CheckpointMeta {
  std::int64_t step = 0;
  int phase = 1;
  std::uint64_t seed = 0;
  float theta = 0.5f;
  float alpha = 1.0f;
  float beta = 0.01f;
  int channels = 3;
  int segment_length = 9;
  std::string variant = "full";
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;  // manifest order
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the net a checkpoint was saved from and restores its weights.
// Optimizer moments, when present, are returned through the optional outputs.
TwoStreamNet net_from_checkpoint(const Checkpoint& ck,
                                 std::vector<Tensor>* adam_m = nullptr,
                                 std::vector<Tensor>* adam_v = nullptr);
Checkpoint checkpoint_of(const TwoStreamNet& net, const CheckpointMeta& meta,
                         const std::vector<Tensor>* adam_m = nullptr,
                         const std::vector<Tensor>* adam_v = nullptr);

// ---- small filesystem helpers -------------------------------------------

std::vector<std::string> list_frames(const std::string& dir);  // sorted .ppm/.pgm paths
Tensor read_video(const std::string& dir);                     // stacked (T,C,H,W)
void write_video(const std::string& dir, const Tensor& video, const char* stem = "frame");

}  // namespace derain
