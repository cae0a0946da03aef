#include "vcor/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vcor {
namespace {

// Visits every voxel line along axis 0 for stencil offset `o`: f(dst, src,
// lo, hi) where voxels [dst+lo, dst+hi) read neighbours [src+lo, src+hi) and
// the rest of the line lies in the zero padding.
template <typename F>
void for_each_shifted_line(const Dims3& d, int o, F&& f) {
  const int dx = o % 3 - 1, dy = (o / 3) % 3 - 1, dz = o / 9 - 1;
  const int lo = std::max(0, -dx), hi = std::min(d[0], d[0] - dx);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j) {
      const Index dst = Index(d[0]) * (j + Index(d[1]) * k);
      const int y = j + dy, z = k + dz;
      const bool inside = y >= 0 && y < d[1] && z >= 0 && z < d[2];
      const Index src = inside ? Index(d[0]) * (y + Index(d[1]) * z) + dx : -1;
      f(dst, src, inside ? lo : 0, inside ? hi : 0);
    }
}

// Rows of x gathered at the neighbour of each voxel; zero in the padding.
void gather(const Dims3& d, int o, const Eigen::MatrixXd& x, Eigen::MatrixXd& out) {
  out.setZero(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double* src = x.col(c).data();
    double* dst = out.col(c).data();
    for_each_shifted_line(d, o, [&](Index di, Index si, int lo, int hi) {
      for (int i = lo; i < hi; ++i) dst[di + i] = src[si + i];
    });
  }
}

// Adjoint of gather: out += scatter of g.
void scatter_add(const Dims3& d, int o, const Eigen::MatrixXd& g, Eigen::MatrixXd& out) {
  for (Index c = 0; c < g.cols(); ++c) {
    const double* src = g.col(c).data();
    double* dst = out.col(c).data();
    for_each_shifted_line(d, o, [&](Index di, Index si, int lo, int hi) {
      for (int i = lo; i < hi; ++i) dst[si + i] += src[di + i];
    });
  }
}

}  // namespace

// The convolution is evaluated as 27 shifted GEMMs rather than one im2col
// product: same arithmetic, but the working set stays n x Cin instead of
// n x 27Cin.
Eigen::MatrixXd conv3d_forward(const Dims3& dims, const Eigen::MatrixXd& x, const ConvParams& p, ConvCache* cache) {
  const Index n = token_count(dims);
  const Index cin = x.cols();
  if (x.rows() != n) throw ShapeError("conv3d: token count does not match dims");
  if (p.weight.rows() != 27 * cin) throw ShapeError("conv3d: weight rows != 27 * input channels");

  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, p.weight.cols());
  Eigen::MatrixXd shifted;
  for (int o = 0; o < 27; ++o) {
    gather(dims, o, x, shifted);
    y.noalias() += shifted * p.weight.middleRows(o * cin, cin);
  }
  if (p.bias.size() > 0) y.rowwise() += p.bias.transpose();
  if (cache) cache->input = x;
  return y;
}

Eigen::MatrixXd conv3d_backward(const Dims3& dims, const ConvParams& p, const ConvCache& cache,
                                const Eigen::MatrixXd& dy, ConvParams& grad, bool need_input_grad) {
  const Index n = token_count(dims);
  const Index cin = p.weight.rows() / 27;
  if (p.bias.size() > 0) grad.bias += dy.colwise().sum().transpose();

  Eigen::MatrixXd dx;
  if (need_input_grad) dx = Eigen::MatrixXd::Zero(n, cin);
  Eigen::MatrixXd shifted, dshift(n, cin);
  for (int o = 0; o < 27; ++o) {
    gather(dims, o, cache.input, shifted);
    grad.weight.middleRows(o * cin, cin).noalias() += shifted.transpose() * dy;
    if (!need_input_grad) continue;
    dshift.noalias() = dy * p.weight.middleRows(o * cin, cin).transpose();
    scatter_add(dims, o, dshift, dx);
  }
  return dx;
}

Eigen::MatrixXd instance_norm_forward(const Eigen::MatrixXd& x, const NormParams& p, NormCache* cache) {
  const Index n = x.rows();
  Eigen::MatrixXd xhat(n, x.cols());
  Eigen::VectorXd inv_std(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double var = (x.col(c).array() - mean).square().mean();
    inv_std[c] = 1.0 / std::sqrt(var + kNormEpsilon);
    xhat.col(c) = (x.col(c).array() - mean) * inv_std[c];
  }
  Eigen::MatrixXd y = xhat * p.scale.asDiagonal();
  y.rowwise() += p.shift.transpose();
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Eigen::MatrixXd instance_norm_backward(const NormParams& p, const NormCache& cache, const Eigen::MatrixXd& dy,
                                       NormParams& grad) {
  const auto& xhat = cache.normalized;
  Eigen::MatrixXd dx(dy.rows(), dy.cols());
  for (Index c = 0; c < dy.cols(); ++c) {
    grad.scale[c] += dy.col(c).dot(xhat.col(c));
    grad.shift[c] += dy.col(c).sum();
    const double mean_dy = dy.col(c).mean();
    const double mean_dy_xhat = dy.col(c).dot(xhat.col(c)) / double(dy.rows());
    dx.col(c) = p.scale[c] * cache.inv_std[c] *
                (dy.col(c).array() - mean_dy - xhat.col(c).array() * mean_dy_xhat);
  }
  return dx;
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& output, const Eigen::MatrixXd& dy) {
  return (output.array() > 0.0).select(dy, 0.0);
}

Eigen::MatrixXd avg_pool2(const Dims3& d, const Eigen::MatrixXd& x) {
  for (int a = 0; a < 3; ++a)
    if (d[a] % 2 != 0) throw ShapeError("avg_pool2: dimensions must be even");
  const Dims3 out_d{d[0] / 2, d[1] / 2, d[2] / 2};
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(token_count(out_d), x.cols());
  Index v = 0;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i, ++v) {
        const Index o = Index(i / 2) + Index(out_d[0]) * (Index(j / 2) + Index(out_d[1]) * (k / 2));
        y.row(o) += x.row(v);
      }
  return y * 0.125;
}

Eigen::MatrixXd avg_pool2_backward(const Dims3& d, const Eigen::MatrixXd& dy) {
  const Dims3 out_d{d[0] / 2, d[1] / 2, d[2] / 2};
  Eigen::MatrixXd dx(token_count(d), dy.cols());
  Index v = 0;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i, ++v) {
        const Index o = Index(i / 2) + Index(out_d[0]) * (Index(j / 2) + Index(out_d[1]) * (k / 2));
        dx.row(v) = 0.125 * dy.row(o);
      }
  return dx;
}

void check_attention(const AttentionParams& p, Index channels) {
  if (p.heads < 1 || channels % p.heads != 0)
    throw ConfigError("attention head count " + std::to_string(p.heads) + " must divide channel count " +
                      std::to_string(channels));
  const auto square = [&](const Eigen::MatrixXd& m) { return m.rows() == channels && m.cols() == channels; };
  if (!square(p.query) || !square(p.key) || !square(p.value) || !square(p.output))
    throw ShapeError("attention projections must be C x C");
}

Eigen::MatrixXd attention_forward(const Eigen::MatrixXd& xq, const Eigen::MatrixXd& xkv, const AttentionParams& p,
                                  bool residual, AttentionCache* cache) {
  const Index channels = xq.cols();
  if (xkv.cols() != channels) throw ShapeError("attention: query and key/value channel counts differ");
  check_attention(p, channels);
  const Index dk = channels / p.heads;
  const double scale = 1.0 / std::sqrt(double(dk));

  Eigen::MatrixXd q = xq * p.query;
  Eigen::MatrixXd k = xkv * p.key;
  Eigen::MatrixXd v = xkv * p.value;
  Eigen::MatrixXd o(xq.rows(), channels);
  std::vector<Eigen::MatrixXd> probs(p.heads);
  for (int h = 0; h < p.heads; ++h) {
    Eigen::MatrixXd logits = scale * (q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose());
    // Row-wise softmax with max subtraction.
    Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    Eigen::MatrixXd e = (logits.colwise() - row_max).array().exp().matrix();
    Eigen::VectorXd row_sum = e.rowwise().sum();
    probs[h] = row_sum.cwiseInverse().asDiagonal() * e;
    o.middleCols(h * dk, dk).noalias() = probs[h] * v.middleCols(h * dk, dk);
  }
  Eigen::MatrixXd y = o * p.output;
  if (residual) y += xq;
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->probs = std::move(probs);
  }
  return y;
}

void attention_backward(const AttentionParams& p, bool residual, const AttentionCache& cache,
                        const Eigen::MatrixXd& dy, Eigen::MatrixXd& dxq, Eigen::MatrixXd& dxkv,
                        AttentionParams& grad) {
  const Index channels = dy.cols();
  const Index dk = channels / p.heads;
  const double scale = 1.0 / std::sqrt(double(dk));

  grad.output.noalias() += cache.o.transpose() * dy;
  const Eigen::MatrixXd d_o = dy * p.output.transpose();

  Eigen::MatrixXd dq(cache.q.rows(), channels), dk_m(cache.k.rows(), channels), dv(cache.v.rows(), channels);
  for (int h = 0; h < p.heads; ++h) {
    const auto& a = cache.probs[h];
    const Eigen::MatrixXd d_oh = d_o.middleCols(h * dk, dk);
    const Eigen::MatrixXd da = d_oh * cache.v.middleCols(h * dk, dk).transpose();
    dv.middleCols(h * dk, dk).noalias() = a.transpose() * d_oh;
    const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
    const Eigen::MatrixXd dlogits = scale * (a.array() * (da.colwise() - row_dot).array()).matrix();
    dq.middleCols(h * dk, dk).noalias() = dlogits * cache.k.middleCols(h * dk, dk);
    dk_m.middleCols(h * dk, dk).noalias() = dlogits.transpose() * cache.q.middleCols(h * dk, dk);
  }
  grad.query.noalias() += cache.xq.transpose() * dq;
  grad.key.noalias() += cache.xkv.transpose() * dk_m;
  grad.value.noalias() += cache.xkv.transpose() * dv;

  dxq = dq * p.query.transpose();
  if (residual) dxq += dy;
  dxkv = dk_m * p.key.transpose() + dv * p.value.transpose();
}

Eigen::MatrixXd head_average(const std::vector<Eigen::MatrixXd>& probs) {
  Eigen::MatrixXd avg = probs.front();
  for (std::size_t h = 1; h < probs.size(); ++h) avg += probs[h];
  return avg / double(probs.size());
}

}  // namespace vcor
