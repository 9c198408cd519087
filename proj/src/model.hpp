#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "layers.hpp"

namespace derain {

enum class Variant { Full, NoDetection, PlainCnn };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct ModelConfig {
  int channels = 3;        // C_in == C_out
  int segment_length = 9;  // T
  float theta = 0.5f;      // fusion degree
  Variant variant = Variant::Full;
  int hidden = 48;         // ConvLSTM feature maps
};

// Two-stream network: shared spatial encoder, per-stream spatial encoder,
// per-stream bidirectional ConvLSTM, fusion, and two reconstruction heads.
struct TwoStreamNet {
  ModelConfig cfg;
  std::uint64_t seed = 0;
  ParamStore params;

  DenseUnitParams shared_dense, det_dense, rem_dense;
  PlainChainParams shared_plain, det_plain, rem_plain;
  BidirStackParams det_stack, rem_stack;
  ReconstructionParams det_recon, rem_recon;

  static TwoStreamNet create(const ModelConfig& cfg, std::uint64_t seed);

  // Closed-form parameter count for the configured architecture.
  static std::int64_t expected_param_count(const ModelConfig& cfg);
};

// Per-frame outputs of one forward pass; steak estimates, clean estimates and
// the inspection taps for the detection / aggregated features.
struct ForwardVars {
  std::vector<Var> s_hat, c_hat;
  std::vector<Var> d_feat, a_feat;
};

// A = R .* (D*(1-theta) + theta)
Var fuse(Tape& t, Var r, Var d, float theta);

ForwardVars model_forward(Tape& t, ParamBinding& bind, const TwoStreamNet& net, Var video);

// Convenience: run forward on plain tensors, returning stacked (T,C,H,W) outputs.
struct ModelOutput {
  Tensor s_hat, c_hat;
};
ModelOutput model_forward_eval(const TwoStreamNet& net, const Tensor& video);

// Table-4 style configuration switches.
TwoStreamNet ablate(const TwoStreamNet& net, const std::string& mode);

}  // namespace derain
