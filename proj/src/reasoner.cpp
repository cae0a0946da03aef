#include "vcor/reasoner.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace vcor {
namespace {

struct BlockTape {
  Dims3 dims;
  ConvCache conv1;
  NormCache norm1;
  Eigen::MatrixXd act1;
  ConvCache conv2;
  NormCache norm2;
  Eigen::MatrixXd act2;
};

struct HeadTape {
  ConvCache hidden;
  Eigen::MatrixXd hidden_act;
  ConvCache flow;
  Grid3 low_grid;
};

struct Tape {
  std::vector<BlockTape> reference_encoder;
  std::vector<BlockTape> source_encoder;
  AttentionCache lsr_reference;
  AttentionCache lsr_source;
  std::vector<AttentionCache> hop_lsr;
  std::vector<AttentionCache> hop_cra;
  std::vector<HeadTape> heads;
};

int attention_index(const ArchConfig& arch, int hop) { return arch.share_hop_attention ? 0 : hop; }

template <typename P, typename Push>
void collect(P& params, Push&& push) {
  auto encoder = [&](auto& enc, const std::string& prefix) {
    for (std::size_t b = 0; b < enc.blocks.size(); ++b) {
      auto& blk = enc.blocks[b];
      const std::string p = prefix + ".block" + std::to_string(b);
      push(p + ".conv1.weight", prefix, blk.conv1.weight);
      push(p + ".norm1.scale", prefix, blk.norm1.scale);
      push(p + ".norm1.shift", prefix, blk.norm1.shift);
      push(p + ".conv2.weight", prefix, blk.conv2.weight);
      push(p + ".norm2.scale", prefix, blk.norm2.scale);
      push(p + ".norm2.shift", prefix, blk.norm2.shift);
    }
  };
  auto attention = [&](auto& att, const std::string& prefix, const std::string& group) {
    push(prefix + ".query", group, att.query);
    push(prefix + ".key", group, att.key);
    push(prefix + ".value", group, att.value);
    push(prefix + ".output", group, att.output);
  };
  encoder(params.reference_encoder, "reference_encoder");
  encoder(params.source_encoder, "source_encoder");
  attention(params.initial_lsr, "initial_lsr", "initial_lsr");
  for (std::size_t k = 0; k < params.hop_lsr.size(); ++k)
    attention(params.hop_lsr[k], "hop_lsr." + std::to_string(k), "hop_lsr");
  for (std::size_t k = 0; k < params.hop_cra.size(); ++k)
    attention(params.hop_cra[k], "hop_cra." + std::to_string(k), "hop_cra");
  for (std::size_t k = 0; k < params.heads.size(); ++k) {
    const std::string p = "dvf_head." + std::to_string(k);
    push(p + ".hidden.weight", "dvf_head", params.heads[k].hidden.weight);
    push(p + ".hidden.bias", "dvf_head", params.heads[k].hidden.bias);
    push(p + ".flow.weight", "dvf_head", params.heads[k].flow.weight);
    push(p + ".flow.bias", "dvf_head", params.heads[k].flow.bias);
  }
}

FeatureMap encode_impl(const Volume3& vol, const EncoderParams& params, std::vector<BlockTape>* tape) {
  const int depth = int(params.blocks.size());
  if (depth < 1) throw ConfigError("encoder has no blocks");
  for (int a = 0; a < 3; ++a)
    if (vol.grid.dims[a] % (1 << depth) != 0)
      throw ShapeError("encode: dimension " + std::to_string(vol.grid.dims[a]) + " is not divisible by 2^" +
                       std::to_string(depth));
  Dims3 dims = vol.grid.dims;
  Eigen::MatrixXd x = vol.values;
  if (tape) tape->assign(depth, {});
  for (int b = 0; b < depth; ++b) {
    const auto& blk = params.blocks[b];
    BlockTape local;
    BlockTape& t = tape ? (*tape)[b] : local;
    t.dims = dims;
    const bool keep = tape != nullptr;
    Eigen::MatrixXd y = conv3d_forward(dims, x, blk.conv1, keep ? &t.conv1 : nullptr);
    y = relu(instance_norm_forward(y, blk.norm1, keep ? &t.norm1 : nullptr));
    if (keep) t.act1 = y;
    y = conv3d_forward(dims, y, blk.conv2, keep ? &t.conv2 : nullptr);
    y = relu(instance_norm_forward(y, blk.norm2, keep ? &t.norm2 : nullptr));
    if (keep) t.act2 = y;
    x = avg_pool2(dims, y);
    dims = {dims[0] / 2, dims[1] / 2, dims[2] / 2};
  }
  return FeatureMap{dims, std::move(x)};
}

Eigen::MatrixXd encoder_backward(const EncoderParams& params, const std::vector<BlockTape>& tape,
                                 Eigen::MatrixXd d, EncoderParams& grad) {
  for (int b = int(params.blocks.size()) - 1; b >= 0; --b) {
    const auto& blk = params.blocks[b];
    const auto& t = tape[b];
    auto& g = grad.blocks[b];
    d = avg_pool2_backward(t.dims, d);
    d = relu_backward(t.act2, d);
    d = instance_norm_backward(blk.norm2, t.norm2, d, g.norm2);
    d = conv3d_backward(t.dims, blk.conv2, t.conv2, d, g.conv2);
    d = relu_backward(t.act1, d);
    d = instance_norm_backward(blk.norm1, t.norm1, d, g.norm1);
    d = conv3d_backward(t.dims, blk.conv1, t.conv1, d, g.conv1, b > 0);
  }
  return d;
}

void add_into(EncoderParams& acc, const EncoderParams& x) {
  for (std::size_t b = 0; b < acc.blocks.size(); ++b) {
    auto& a = acc.blocks[b];
    const auto& y = x.blocks[b];
    for (auto [ca, cy] : {std::pair{&a.conv1, &y.conv1}, std::pair{&a.conv2, &y.conv2}}) {
      ca->weight += cy->weight;
      ca->bias += cy->bias;
    }
    for (auto [na, ny] : {std::pair{&a.norm1, &y.norm1}, std::pair{&a.norm2, &y.norm2}}) {
      na->scale += ny->scale;
      na->shift += ny->shift;
    }
  }
}

void check_tokens(const FeatureMap& f) {
  if (f.tokens() > kMaxAttentionTokens)
    throw ConfigError("attention over " + std::to_string(f.tokens()) + " tokens exceeds the budget of " +
                      std::to_string(kMaxAttentionTokens) + "; increase the encoder depth");
}

DisplacementField head_impl(const FeatureMap& f, const DvfHeadParams& p, const Grid3& target, HeadTape* tape) {
  Eigen::MatrixXd h = relu(conv3d_forward(f.dims, f.values, p.hidden, tape ? &tape->hidden : nullptr));
  Eigen::MatrixXd flow = conv3d_forward(f.dims, h, p.flow, tape ? &tape->flow : nullptr);
  if (flow.cols() != 3) throw ShapeError("dvf head must produce 3 channels");
  if (!flow.allFinite()) throw NumericalError("dvf head produced a non-finite displacement");
  DisplacementField low;
  low.grid = Grid3{f.dims, {1.0, 1.0, 1.0}};
  low.vectors = flow.transpose();
  if (tape) {
    tape->hidden_act = std::move(h);
    tape->low_grid = low.grid;
  }
  return upsample_displacement(low, target);
}

HopTrace run(const Volume3& reference, const Volume3& source, const ModelParams& params, int hops, Tape* tape) {
  const auto& arch = params.arch;
  if (!(reference.grid == source.grid)) throw ShapeError("forward: reference and source grids differ");
  if (hops < 1) throw ConfigError("hop count must be >= 1");
  if (hops > int(params.heads.size()))
    throw ConfigError("model has " + std::to_string(params.heads.size()) + " hop heads, " + std::to_string(hops) +
                      " requested");
  const bool residual = arch.attention_residual;

  FeatureMap fr = encode_impl(reference, params.reference_encoder, tape ? &tape->reference_encoder : nullptr);
  const auto& source_encoder = arch.share_encoder ? params.reference_encoder : params.source_encoder;
  FeatureMap fs = encode_impl(source, source_encoder, tape ? &tape->source_encoder : nullptr);
  check_tokens(fr);
  if (arch.positional == PositionalEncoding::Sinusoidal) {
    const Eigen::MatrixXd pe = sinusoidal_encoding(fr.dims, int(fr.channels()));
    fr.values += pe;
    fs.values += pe;
  }

  HopTrace trace;
  trace.reference_features = std::make_shared<const FeatureMap>(
      FeatureMap{fr.dims, attention_forward(fr.values, fr.values, params.initial_lsr, residual,
                                            tape ? &tape->lsr_reference : nullptr)});
  FeatureMap current{fs.dims, attention_forward(fs.values, fs.values, params.initial_lsr, residual,
                                                tape ? &tape->lsr_source : nullptr)};
  if (tape) {
    tape->hop_lsr.assign(hops, {});
    tape->hop_cra.assign(hops, {});
    tape->heads.assign(hops, {});
  }

  for (int k = 0; k < hops; ++k) {
    const Eigen::MatrixXd q = attention_forward(current.values, current.values, params.lsr_for_hop(k), residual,
                                                tape ? &tape->hop_lsr[k] : nullptr);
    AttentionCache local;
    AttentionCache& cra_cache = tape ? tape->hop_cra[k] : local;
    current.values =
        attention_forward(q, trace.reference_features->values, params.cra_for_hop(k), residual, &cra_cache);

    HopEntry entry;
    entry.hop = k + 1;
    entry.field = head_impl(current, params.heads[k], reference.grid, tape ? &tape->heads[k] : nullptr);
    entry.warped = warp(source, entry.field);
    entry.attention.hop = k + 1;
    entry.attention.heads = cra_cache.probs;
    entry.attention.weights = head_average(cra_cache.probs);
    entry.source_features = current;
    entry.reference_features = trace.reference_features;
    trace.hops.push_back(std::move(entry));
  }
  return trace;
}

template <typename Dist, typename Rng>
void fill(Eigen::MatrixXd& m, Index rows, Index cols, Dist& dist, Rng& rng) {
  m.resize(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
}

void uniform_init(Eigen::MatrixXd& m, Index rows, Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  fill(m, rows, cols, dist, rng);
}

AttentionParams init_attention(int channels, int heads, std::mt19937_64& rng) {
  AttentionParams a;
  a.heads = heads;
  const double bound = std::sqrt(3.0 / channels);
  uniform_init(a.query, channels, channels, bound, rng);
  uniform_init(a.key, channels, channels, bound, rng);
  uniform_init(a.value, channels, channels, bound, rng);
  uniform_init(a.output, channels, channels, bound, rng);
  return a;
}

EncoderParams init_encoder(const ArchConfig& arch, std::mt19937_64& rng) {
  EncoderParams enc;
  int cin = 1;
  for (int b = 0; b < arch.depth; ++b) {
    const int cout = arch.block_channels(b);
    EncoderBlockParams blk;
    uniform_init(blk.conv1.weight, 27 * cin, cout, std::sqrt(6.0 / (27 * cin)), rng);
    blk.norm1 = {Eigen::VectorXd::Ones(cout), Eigen::VectorXd::Zero(cout)};
    uniform_init(blk.conv2.weight, 27 * cout, cout, std::sqrt(6.0 / (27 * cout)), rng);
    blk.norm2 = {Eigen::VectorXd::Ones(cout), Eigen::VectorXd::Zero(cout)};
    enc.blocks.push_back(std::move(blk));
    cin = cout;
  }
  return enc;
}

}  // namespace

void ArchConfig::validate() const {
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (channels < 1 || base_channels < 1) throw ConfigError("channel counts must be >= 1");
  if (heads < 1 || channels % heads != 0) throw ConfigError("heads must divide channels");
  if (hops < 1) throw ConfigError("hops must be >= 1");
}

int ArchConfig::block_channels(int block) const {
  if (block == depth - 1) return channels;
  const long width = long(base_channels) << block;
  return int(std::min<long>(channels, width));
}

const AttentionParams& ModelParams::lsr_for_hop(int hop) const { return hop_lsr.at(attention_index(arch, hop)); }
const AttentionParams& ModelParams::cra_for_hop(int hop) const { return hop_cra.at(attention_index(arch, hop)); }

std::vector<TensorRef> tensors(ModelParams& params) {
  std::vector<TensorRef> out;
  collect(params, [&](const std::string& name, const std::string& group, auto& t) {
    out.push_back({name, group, t.data(), Index(t.size())});
  });
  return out;
}

std::vector<ConstTensorRef> tensors(const ModelParams& params) {
  std::vector<ConstTensorRef> out;
  collect(params, [&](const std::string& name, const std::string& group, const auto& t) {
    out.push_back({name, group, t.data(), Index(t.size())});
  });
  return out;
}

Index parameter_count(const ModelParams& params) {
  Index n = 0;
  for (const auto& t : tensors(params)) n += t.size;
  return n;
}

ModelParams init_params(const ArchConfig& arch, std::uint64_t seed, const InitOptions& opts) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.arch = arch;
  p.seed = seed;
  p.reference_encoder = init_encoder(arch, rng);
  if (!arch.share_encoder) p.source_encoder = init_encoder(arch, rng);
  const int c = arch.channels;
  p.initial_lsr = init_attention(c, arch.heads, rng);
  const int blocks = arch.share_hop_attention ? 1 : arch.hops;
  for (int k = 0; k < blocks; ++k) p.hop_lsr.push_back(init_attention(c, arch.heads, rng));
  for (int k = 0; k < blocks; ++k) p.hop_cra.push_back(init_attention(c, arch.heads, rng));
  for (int k = 0; k < arch.hops; ++k) {
    DvfHeadParams h;
    uniform_init(h.hidden.weight, 27 * c, c, std::sqrt(6.0 / (27 * c)), rng);
    h.hidden.bias = Eigen::VectorXd::Zero(c);
    if (opts.zero_flow) {
      h.flow.weight = Eigen::MatrixXd::Zero(27 * c, 3);
    } else {
      uniform_init(h.flow.weight, 27 * c, 3, opts.flow_scale * std::sqrt(3.0 / (27 * c)), rng);
    }
    h.flow.bias = Eigen::VectorXd::Zero(3);
    p.heads.push_back(std::move(h));
  }
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto& t : tensors(z)) std::fill(t.data, t.data + t.size, 0.0);
  return z;
}

FeatureMap encode(const Volume3& vol, const EncoderParams& params) { return encode_impl(vol, params, nullptr); }

FeatureMap lsr(const FeatureMap& f, const AttentionParams& params, bool residual, Eigen::MatrixXd* attention) {
  check_tokens(f);
  AttentionCache cache;
  FeatureMap out{f.dims, attention_forward(f.values, f.values, params, residual, &cache)};
  if (attention) *attention = head_average(cache.probs);
  return out;
}

std::pair<FeatureMap, AttentionMap> cra(const FeatureMap& queries, const FeatureMap& reference,
                                        const AttentionParams& params, bool residual) {
  if (queries.dims != reference.dims || queries.channels() != reference.channels())
    throw ShapeError("cra: query and reference feature maps differ in grid or channels");
  check_tokens(queries);
  AttentionCache cache;
  FeatureMap out{queries.dims, attention_forward(queries.values, reference.values, params, residual, &cache)};
  AttentionMap map;
  map.weights = head_average(cache.probs);
  map.heads = std::move(cache.probs);
  return {std::move(out), std::move(map)};
}

DisplacementField dvf_head(const FeatureMap& f, const DvfHeadParams& params, const Grid3& target) {
  return head_impl(f, params, target, nullptr);
}

Eigen::MatrixXd sinusoidal_encoding(const Dims3& dims, int channels) {
  const Index n = token_count(dims);
  Eigen::MatrixXd pe(n, channels);
  const int per_axis = std::max(1, (channels + 2) / 3);
  for (Index v = 0; v < n; ++v) {
    const std::array<int, 3> pos{int(v % dims[0]), int((v / dims[0]) % dims[1]), int(v / (Index(dims[0]) * dims[1]))};
    for (int c = 0; c < channels; ++c) {
      const int axis = c % 3;
      const int slot = c / 3;
      const double freq = std::pow(10000.0, -2.0 * (slot / 2) / per_axis);
      const double angle = pos[axis] * freq;
      pe(v, c) = (slot % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

HopTrace forward(const Volume3& reference, const Volume3& source, const ModelParams& params, int hops) {
  return run(reference, source, params, hops, nullptr);
}

std::vector<std::int32_t> branch_signature(const Volume3& reference, const Volume3& source, const ModelParams& params,
                                           int hops) {
  Tape tape;
  const HopTrace trace = run(reference, source, params, hops, &tape);
  std::vector<std::int32_t> sig;
  const auto append_mask = [&](const Eigen::MatrixXd& act) {
    for (Index i = 0; i < act.size(); ++i) sig.push_back(act.data()[i] > 0.0);
  };
  for (const auto* enc : {&tape.reference_encoder, &tape.source_encoder})
    for (const auto& b : *enc) {
      append_mask(b.act1);
      append_mask(b.act2);
    }
  for (const auto& h : tape.heads) append_mask(h.hidden_act);
  const Grid3& g = reference.grid;
  for (const auto& entry : trace.hops)
    for (Index v = 0; v < g.size(); ++v) {
      const Vec3 p = detail::voxel_position(g, v) + entry.field.vectors.col(v);
      for (int a = 0; a < 3; ++a) {
        const auto cell = detail::axis_cell(p[a], g.dims[a]);
        sig.push_back(cell.lo * 4 + (cell.inside ? 0 : 1) + (p[a] < 0.0 ? 2 : 0));
      }
    }
  return sig;
}

LossGradient loss_gradient(const Volume3& reference, const Volume3& source, const ModelParams& params, int hops,
                           const LossWeights& weights) {
  weights.validate();
  Tape tape;
  const HopTrace trace = run(reference, source, params, hops, &tape);
  const auto hop_w = weights.weights_for(hops);
  const auto& arch = params.arch;
  const bool residual = arch.attention_residual;

  LossGradient out;
  out.grad = zeros_like(params);
  auto& loss = out.loss;
  std::vector<Eigen::MatrixXd> d_features(hops);
  out.per_hop.resize(hops);
  for (int k = 0; k < hops; ++k) {
    const Index tokens = trace.hops[k].source_features.tokens();
    d_features[k] = Eigen::MatrixXd::Zero(tokens, arch.channels);
    const auto& entry = trace.hops[k];
    auto& term = out.per_hop[k];
    term.ncc = ncc_loss(reference, entry.warped, weights.ncc_window);
    term.mse = mse_loss(reference, entry.warped);
    term.reg = smoothness_loss(entry.field);
    term.similarity = term.ncc + weights.beta * term.mse;
    term.regularization = weights.lambda * term.reg;
    term.total = term.similarity + term.regularization;
    if (hop_w[k] == 0.0) continue;
    const std::string at = " at hop " + std::to_string(k + 1);
    if (!std::isfinite(term.ncc)) throw NumericalError("non-finite loss: ncc term" + at);
    if (!std::isfinite(term.mse)) throw NumericalError("non-finite loss: mse term" + at);
    if (!std::isfinite(term.reg)) throw NumericalError("non-finite loss: regularisation term" + at);
    loss.ncc += hop_w[k] * term.ncc;
    loss.mse += hop_w[k] * term.mse;
    loss.reg += hop_w[k] * term.reg;

    Volume3 d_warped = ncc_loss_gradient(reference, entry.warped, weights.ncc_window);
    d_warped.values += weights.beta * mse_loss_gradient(reference, entry.warped).values;
    d_warped.values *= hop_w[k];
    DisplacementField d_field = warp_displacement_adjoint(source, entry.field, d_warped);
    d_field.vectors += (hop_w[k] * weights.lambda) * smoothness_loss_gradient(entry.field).vectors;

    const auto& ht = tape.heads[k];
    const auto& head = params.heads[k];
    auto& head_grad = out.grad.heads[k];
    const DisplacementField d_low = upsample_displacement_adjoint(ht.low_grid, d_field);
    const Dims3& dims = ht.low_grid.dims;
    Eigen::MatrixXd d = conv3d_backward(dims, head.flow, ht.flow, d_low.vectors.transpose(), head_grad.flow);
    d = relu_backward(ht.hidden_act, d);
    d_features[k] = conv3d_backward(dims, head.hidden, ht.hidden, d, head_grad.hidden);
  }
  loss.similarity = loss.ncc + weights.beta * loss.mse;
  loss.regularization = weights.lambda * loss.reg;
  loss.total = loss.similarity + loss.regularization;

  const auto& fr = *trace.reference_features;
  Eigen::MatrixXd d_reference = Eigen::MatrixXd::Zero(fr.tokens(), fr.channels());
  Eigen::MatrixXd carry = Eigen::MatrixXd::Zero(fr.tokens(), fr.channels());
  Eigen::MatrixXd dxq, dxkv;
  for (int k = hops - 1; k >= 0; --k) {
    const int idx = attention_index(arch, k);
    const Eigen::MatrixXd dy = d_features[k] + carry;
    attention_backward(params.hop_cra[idx], residual, tape.hop_cra[k], dy, dxq, dxkv, out.grad.hop_cra[idx]);
    d_reference += dxkv;
    const Eigen::MatrixXd dq = dxq;
    attention_backward(params.hop_lsr[idx], residual, tape.hop_lsr[k], dq, dxq, dxkv, out.grad.hop_lsr[idx]);
    carry = dxq + dxkv;
  }
  attention_backward(params.initial_lsr, residual, tape.lsr_source, carry, dxq, dxkv, out.grad.initial_lsr);
  const Eigen::MatrixXd d_source_enc = dxq + dxkv;
  attention_backward(params.initial_lsr, residual, tape.lsr_reference, d_reference, dxq, dxkv,
                     out.grad.initial_lsr);
  const Eigen::MatrixXd d_reference_enc = dxq + dxkv;

  if (params.arch.share_encoder) {
    EncoderParams from_source = out.grad.reference_encoder;
    encoder_backward(params.reference_encoder, tape.source_encoder, d_source_enc, from_source);
    encoder_backward(params.reference_encoder, tape.reference_encoder, d_reference_enc, out.grad.reference_encoder);
    add_into(out.grad.reference_encoder, from_source);
  } else {
    encoder_backward(params.source_encoder, tape.source_encoder, d_source_enc, out.grad.source_encoder);
    encoder_backward(params.reference_encoder, tape.reference_encoder, d_reference_enc, out.grad.reference_encoder);
  }
  return out;
}

}  // namespace vcor
