#pragma once

// Multi-hop reasoning registration network.
//
//   F_r  = LSR_0(encode_ref(R))          computed once, shared by all hops
//   F_s0 = LSR_0(encode_src(S))
//   for k = 1..K:
//     Q_k         = LSR_k(F_s^{k-1})
//     F_s^k, A^k  = CRA_k(Q_k, F_r)      source queries, reference keys/values
//     phi^k       = head_k(F_s^k)        upsampled to the input grid
//     warped^k    = warp(S, phi^k)
//
// Every hop warps the original source; fields are not composed.

#include <cstdint>
#include <string>
#include <vector>

#include "vcor/hoptrace.hpp"
#include "vcor/layers.hpp"
#include "vcor/objective.hpp"
#include "vcor/voxelgrid.hpp"

namespace vcor {

enum class PositionalEncoding { None, Sinusoidal };

struct ArchConfig {
  int depth = 3;           // encoder blocks, each halving the grid
  int channels = 32;       // output channels C of the encoder
  int base_channels = 8;   // first block width; doubles per block, capped at C
  int heads = 4;
  int hops = 3;            // number of per-hop heads (and attention blocks)
  bool share_hop_attention = false;
  bool share_encoder = false;      // one encoder for both volumes; source_encoder stays empty
  bool attention_residual = true;  // false: literal Softmax(QK^T/sqrt(d))V form
  PositionalEncoding positional = PositionalEncoding::None;

  void validate() const;
  int block_channels(int block) const;
};

inline constexpr int kMaxAttentionTokens = 4096;

struct EncoderBlockParams {
  ConvParams conv1;
  NormParams norm1;
  ConvParams conv2;
  NormParams norm2;
};

struct EncoderParams {
  std::vector<EncoderBlockParams> blocks;
};

struct DvfHeadParams {
  ConvParams hidden;  // C -> C, ReLU
  ConvParams flow;    // C -> 3, linear
};

struct ModelParams {
  ArchConfig arch;
  std::uint64_t seed = 0;
  EncoderParams reference_encoder;
  EncoderParams source_encoder;
  AttentionParams initial_lsr;
  std::vector<AttentionParams> hop_lsr;  // one per hop, or one when shared
  std::vector<AttentionParams> hop_cra;
  std::vector<DvfHeadParams> heads;      // always one per hop

  const AttentionParams& lsr_for_hop(int hop) const;
  const AttentionParams& cra_for_hop(int hop) const;
};

// Flat view of one parameter tensor. Order is stable and defines the
// checkpoint layout.
struct TensorRef {
  std::string name;
  std::string group;
  double* data;
  Index size;
};

struct ConstTensorRef {
  std::string name;
  std::string group;
  const double* data;
  Index size;
};

std::vector<TensorRef> tensors(ModelParams& params);
std::vector<ConstTensorRef> tensors(const ModelParams& params);
Index parameter_count(const ModelParams& params);

struct InitOptions {
  bool zero_flow = true;      // zero final DVF layer: training starts at the identity
  double flow_scale = 1e-2;   // init scale of the final layer when zero_flow is false
};

// Fan-in scaled uniform initialisation driven by `seed`.
ModelParams init_params(const ArchConfig& arch, std::uint64_t seed, const InitOptions& opts = {});
// Same structure, all tensors zero.
ModelParams zeros_like(const ModelParams& params);

FeatureMap encode(const Volume3& vol, const EncoderParams& params);
FeatureMap lsr(const FeatureMap& f, const AttentionParams& params, bool residual = true,
               Eigen::MatrixXd* attention = nullptr);
std::pair<FeatureMap, AttentionMap> cra(const FeatureMap& queries, const FeatureMap& reference,
                                        const AttentionParams& params, bool residual = true);
DisplacementField dvf_head(const FeatureMap& f, const DvfHeadParams& params, const Grid3& target);

// Fixed 3D sinusoidal token encoding, tokens x C.
Eigen::MatrixXd sinusoidal_encoding(const Dims3& dims, int channels);

HopTrace forward(const Volume3& reference, const Volume3& source, const ModelParams& params, int hops);

// Identifies the smooth piece of the forward pass the parameters sit on: the
// on/off state of every ReLU and the interpolation cell (with clamp state) of
// every warped sample. Central differences are only a valid gradient oracle
// when the signature is the same at both ends of the stencil.
std::vector<std::int32_t> branch_signature(const Volume3& reference, const Volume3& source, const ModelParams& params,
                                           int hops);

struct LossGradient {
  LossBreakdown loss;
  std::vector<LossBreakdown> per_hop;  // unweighted terms of every hop
  ModelParams grad;
};

// Exact gradient of total_loss(R, forward(R, S, params, K), weights).
LossGradient loss_gradient(const Volume3& reference, const Volume3& source, const ModelParams& params, int hops,
                           const LossWeights& weights);

}  // namespace vcor
