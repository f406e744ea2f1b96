#pragma once

// Attention building blocks shared by the structure extractor and the
// feature transformer: multi-head attention, post-LN encoder and decoder
// blocks, squeeze-and-excitation and the two-layer MLP.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/params.hpp"
#include "dit/tensor.hpp"

namespace dit::nn {

using ad::Tensor;

/// Projections for h heads. Per-head matrices W^Q_i are stored side by side
/// as one d_model x (h * d_head) tensor, head i owning columns
/// [i * d_head, (i + 1) * d_head).
struct AttentionParams {
  Tensor wq, wk, wv;  // d_model x (h * d_head)
  Tensor wo;          // (h * d_head) x d_model
  std::size_t heads = 1;
  std::size_t d_head = 1;

  std::size_t d_model() const { return wq.dim(0); }
};

struct LayerNormParams {
  Tensor gamma, beta;  // 1 x d
};

struct Linear {
  Tensor w, b;  // in x out, 1 x out
  Tensor operator()(const Tensor& x) const { return ad::linear(x, w, b); }
};

/// d -> hidden -> d with ReLU between.
struct MlpParams {
  Linear fc1, fc2;
};

struct BlockParams {
  AttentionParams self_attn;
  std::optional<AttentionParams> cross_attn;  // decoder only
  MlpParams mlp;
  LayerNormParams ln1, ln2, ln3;  // ln3 used by the decoder only
};

struct SEParams {
  Linear squeeze;  // d -> d / r
  Linear excite;   // d / r -> d
  std::size_t ratio = 4;
};

/// Post-LN placement. kAroundSum is out = LN(f(x) + x); kLiteral keeps the
/// residual outside the normalisation, out = LN(f(x)) + x.
enum class ResidualMode { kAroundSum, kLiteral };

// ---------------------------------------------------------------------------
// Construction

inline Linear make_linear(ModelParams& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return {p.add_uniform(name + ".w", {in, out}, in, rng), p.add_uniform(name + ".b", {1, out}, in, rng)};
}

inline LayerNormParams make_layer_norm(ModelParams& p, const std::string& name, std::size_t d) {
  return {p.add_constant(name + ".gamma", {1, d}, 1.0), p.add_constant(name + ".beta", {1, d}, 0.0)};
}

inline AttentionParams make_attention(ModelParams& p, const std::string& name, std::size_t d_model, std::size_t heads,
                                      Rng& rng) {
  if (heads == 0 || d_model % heads != 0)
    throw std::invalid_argument(name + ": d_model " + std::to_string(d_model) + " not divisible by heads " +
                                std::to_string(heads));
  AttentionParams a;
  a.heads = heads;
  a.d_head = d_model / heads;
  a.wq = p.add_uniform(name + ".wq", {d_model, d_model}, d_model, rng);
  a.wk = p.add_uniform(name + ".wk", {d_model, d_model}, d_model, rng);
  a.wv = p.add_uniform(name + ".wv", {d_model, d_model}, d_model, rng);
  a.wo = p.add_uniform(name + ".wo", {d_model, d_model}, d_model, rng);
  return a;
}

inline MlpParams make_mlp(ModelParams& p, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng) {
  return {make_linear(p, name + ".fc1", d, hidden, rng), make_linear(p, name + ".fc2", hidden, d, rng)};
}

inline BlockParams make_encoder_params(ModelParams& p, const std::string& name, std::size_t d, std::size_t heads,
                                       Rng& rng) {
  BlockParams b;
  b.self_attn = make_attention(p, name + ".msa", d, heads, rng);
  b.mlp = make_mlp(p, name + ".mlp", d, 2 * d, rng);
  b.ln1 = make_layer_norm(p, name + ".ln1", d);
  b.ln2 = make_layer_norm(p, name + ".ln2", d);
  return b;
}

inline BlockParams make_decoder_params(ModelParams& p, const std::string& name, std::size_t d, std::size_t heads,
                                       Rng& rng) {
  BlockParams b;
  b.self_attn = make_attention(p, name + ".msa", d, heads, rng);
  b.cross_attn = make_attention(p, name + ".mca", d, heads, rng);
  b.mlp = make_mlp(p, name + ".mlp", d, 2 * d, rng);
  b.ln1 = make_layer_norm(p, name + ".ln1", d);
  b.ln2 = make_layer_norm(p, name + ".ln2", d);
  b.ln3 = make_layer_norm(p, name + ".ln3", d);
  return b;
}

inline SEParams make_se(ModelParams& p, const std::string& name, std::size_t d, std::size_t ratio, Rng& rng) {
  if (ratio == 0 || d % ratio != 0)
    throw std::invalid_argument(name + ": SE ratio " + std::to_string(ratio) + " must divide " + std::to_string(d));
  return {make_linear(p, name + ".squeeze", d, d / ratio, rng), make_linear(p, name + ".excite", d / ratio, d, rng), ratio};
}

// ---------------------------------------------------------------------------
// Forward

inline Tensor layer_norm(const Tensor& x, const LayerNormParams& ln) { return ad::layer_norm(x, ln.gamma, ln.beta); }

inline Tensor mlp(const Tensor& x, const MlpParams& m) { return m.fc2(ad::relu(m.fc1(x))); }

/// softmax(Q K^T / sqrt(d_k)) row-wise.
inline Tensor attention_weights(const Tensor& q, const Tensor& k) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return ad::softmax(ad::scale(ad::matmul_nt(q, k), inv), 1);
}

/// MA(F_Q, F_K, F_V) = Concat(A_1..A_h) W^O with A_i = Att(F_Q W^Q_i, F_K W^K_i, F_V W^V_i).
inline Tensor multi_head_attention(const Tensor& fq, const Tensor& fk, const Tensor& fv, const AttentionParams& p) {
  if (fq.rank() != 2 || fk.rank() != 2 || fv.rank() != 2) throw ad::ShapeError("multi_head_attention: rank-2 inputs required");
  if (fk.dim(0) != fv.dim(0)) throw ad::ShapeError("multi_head_attention: key/value row counts differ");
  const std::size_t d = p.wq.dim(0);
  if (fq.dim(1) != d || fk.dim(1) != d || fv.dim(1) != d)
    throw ad::ShapeError("multi_head_attention: input width must be " + std::to_string(d));
  if (p.wq.dim(1) != p.heads * p.d_head) throw ad::ShapeError("multi_head_attention: projection width mismatch");
  const Tensor q = ad::matmul(fq, p.wq);
  const Tensor k = ad::matmul(fk, p.wk);
  const Tensor v = ad::matmul(fv, p.wv);
  if (p.heads == 1) return ad::matmul(ad::matmul(attention_weights(q, k), v), p.wo);
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const std::size_t b = h * p.d_head, e = b + p.d_head;
    const Tensor w = attention_weights(ad::slice_last(q, b, e), ad::slice_last(k, b, e));
    heads.push_back(ad::matmul(w, ad::slice_last(v, b, e)));
  }
  return ad::matmul(ad::concat(heads), p.wo);
}

namespace detail {

inline Tensor residual_ln(const Tensor& fx, const Tensor& x, const LayerNormParams& ln, ResidualMode mode) {
  return mode == ResidualMode::kAroundSum ? layer_norm(ad::add(fx, x), ln) : ad::add(layer_norm(fx, ln), x);
}

}  // namespace detail

/// T^ = LN(MSA(x) + x); out = LN(MLP(T^) + T^).
inline Tensor encoder_block(const Tensor& x, const BlockParams& p, ResidualMode mode = ResidualMode::kAroundSum) {
  if (x.rank() != 2 || x.dim(1) != p.self_attn.d_model())
    throw ad::ShapeError("encoder_block: input width must be " + std::to_string(p.self_attn.d_model()));
  const Tensor h = detail::residual_ln(multi_head_attention(x, x, x, p.self_attn), x, p.ln1, mode);
  return detail::residual_ln(mlp(h, p.mlp), h, p.ln2, mode);
}

/// a = LN(MSA(x) + x); b = LN(MA(a, mem, mem) + a); out = LN(MLP(b) + b).
inline Tensor decoder_block(const Tensor& memory, const Tensor& x, const BlockParams& p,
                            ResidualMode mode = ResidualMode::kAroundSum) {
  if (!p.cross_attn) throw std::invalid_argument("decoder_block: parameters lack cross-attention");
  const std::size_t d = p.self_attn.d_model();
  if (x.rank() != 2 || x.dim(1) != d || memory.rank() != 2 || memory.dim(1) != d)
    throw ad::ShapeError("decoder_block: input widths must be " + std::to_string(d));
  const Tensor a = detail::residual_ln(multi_head_attention(x, x, x, p.self_attn), x, p.ln1, mode);
  const Tensor b = detail::residual_ln(multi_head_attention(a, memory, memory, *p.cross_attn), a, p.ln2, mode);
  return detail::residual_ln(mlp(b, p.mlp), b, p.ln3, mode);
}

/// Channel gates sigmoid(FC2(ReLU(FC1(mean over points)))), applied column-wise.
inline Tensor se_gates(const Tensor& f, const SEParams& p) {
  const Tensor sq = ad::mean(f, 0);
  return ad::sigmoid(p.excite(ad::relu(p.squeeze(sq))));
}

inline Tensor se_recalibrate(const Tensor& f, const SEParams& p) {
  if (f.rank() != 2 || f.dim(1) != p.squeeze.w.dim(0))
    throw ad::ShapeError("se_recalibrate: input width must be " + std::to_string(p.squeeze.w.dim(0)));
  return ad::mul(f, ad::tile_rows(se_gates(f, p), f.dim(0)));
}

}  // namespace dit::nn
