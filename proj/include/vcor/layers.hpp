#pragma once

// Dense building blocks of the reasoning network and their adjoints.
//
// Feature tensors are token-major matrices: one row per voxel (axis 0
// fastest), one column per channel. Every *_forward function optionally fills
// a cache that the matching *_backward consumes; backward functions
// accumulate (+=) into parameter gradients and return input gradients.

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "vcor/voxelgrid.hpp"

namespace vcor {

using Dims3 = std::array<int, 3>;

inline Index token_count(const Dims3& d) { return Index(d[0]) * d[1] * d[2]; }

// 3x3x3 convolution, stride 1, zero padding. weight is (27*Cin) x Cout with
// row index offset*Cin + c_in, offset = (dx+1) + 3*(dy+1) + 9*(dz+1).
struct ConvParams {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;  // empty: no bias
};

struct ConvCache {
  Eigen::MatrixXd input;
};

Eigen::MatrixXd conv3d_forward(const Dims3& dims, const Eigen::MatrixXd& x, const ConvParams& p, ConvCache* cache);
// Returns dL/dx unless need_input_grad is false (then an empty matrix).
Eigen::MatrixXd conv3d_backward(const Dims3& dims, const ConvParams& p, const ConvCache& cache,
                                const Eigen::MatrixXd& dy, ConvParams& grad, bool need_input_grad = true);

// Per-channel normalisation over the spatial extent of one instance, followed
// by a learned affine map.
struct NormParams {
  Eigen::VectorXd scale;
  Eigen::VectorXd shift;
};

struct NormCache {
  Eigen::MatrixXd normalized;
  Eigen::VectorXd inv_std;
};

inline constexpr double kNormEpsilon = 1e-5;

Eigen::MatrixXd instance_norm_forward(const Eigen::MatrixXd& x, const NormParams& p, NormCache* cache);
Eigen::MatrixXd instance_norm_backward(const NormParams& p, const NormCache& cache, const Eigen::MatrixXd& dy,
                                       NormParams& grad);

Eigen::MatrixXd relu(const Eigen::MatrixXd& x);
// `output` is the forward result of relu.
Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& output, const Eigen::MatrixXd& dy);

// 2x2x2 average pooling; dims must be even.
Eigen::MatrixXd avg_pool2(const Dims3& dims, const Eigen::MatrixXd& x);
Eigen::MatrixXd avg_pool2_backward(const Dims3& dims_in, const Eigen::MatrixXd& dy);

// Multi-head scaled dot-product attention, queries from xq and keys/values
// from xkv, with head outputs concatenated and mixed by `output`.
struct AttentionParams {
  Eigen::MatrixXd query;
  Eigen::MatrixXd key;
  Eigen::MatrixXd value;
  Eigen::MatrixXd output;
  int heads = 4;
};

struct AttentionCache {
  Eigen::MatrixXd xq, xkv;
  Eigen::MatrixXd q, k, v, o;
  std::vector<Eigen::MatrixXd> probs;  // per head, rows = query tokens
};

void check_attention(const AttentionParams& p, Index channels);

Eigen::MatrixXd attention_forward(const Eigen::MatrixXd& xq, const Eigen::MatrixXd& xkv, const AttentionParams& p,
                                  bool residual, AttentionCache* cache);
void attention_backward(const AttentionParams& p, bool residual, const AttentionCache& cache,
                        const Eigen::MatrixXd& dy, Eigen::MatrixXd& dxq, Eigen::MatrixXd& dxkv,
                        AttentionParams& grad);

Eigen::MatrixXd head_average(const std::vector<Eigen::MatrixXd>& probs);

// C channels on a downsampled grid; tokens are voxels, axis 0 fastest.
struct FeatureMap {
  Dims3 dims{1, 1, 1};
  Eigen::MatrixXd values;

  Index tokens() const { return token_count(dims); }
  Index channels() const { return values.cols(); }
};

}  // namespace vcor
