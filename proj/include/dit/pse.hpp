#pragma once

// Point cloud structure extractor: alternating local feature integrators
// (neighbourhood concatenation + projection) and Transformer encoders, with
// all encoder outputs merged by concatenation.

#include <stdexcept>
#include <string>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/knn.hpp"
#include "dit/nn.hpp"

namespace dit {

struct PseConfig {
  std::size_t layers = 3;     // LFI + encoder pairs
  std::size_t k = 20;         // geometric neighbours per point
  std::size_t width = 64;     // LFI output / encoder width
  std::size_t heads = 4;
  std::size_t out_width = 64; // width after the merge projection
  nn::ResidualMode residual = nn::ResidualMode::kAroundSum;
};

struct PseParams {
  std::vector<nn::Linear> lfi;           // (k + 1) * d_in -> width
  std::vector<nn::BlockParams> encoders; // width -> width
  nn::LayerNormParams merge_ln;          // over layers * width
  nn::Linear merge;                      // layers * width -> out_width
  std::size_t k = 0;
  nn::ResidualMode residual = nn::ResidualMode::kAroundSum;
};

inline PseParams make_pse(ModelParams& p, const PseConfig& cfg, Rng& rng, const std::string& name = "pse") {
  if (cfg.layers < 1) throw std::invalid_argument("pse: need at least one layer");
  if (cfg.k < 1) throw std::invalid_argument("pse: k must be >= 1");
  PseParams out;
  out.k = cfg.k;
  out.residual = cfg.residual;
  for (std::size_t n = 0; n < cfg.layers; ++n) {
    const std::size_t d_in = n == 0 ? 3 : cfg.width;
    const std::string layer = name + ".layer" + std::to_string(n);
    out.lfi.push_back(nn::make_linear(p, layer + ".lfi", (cfg.k + 1) * d_in, cfg.width, rng));
    out.encoders.push_back(nn::make_encoder_params(p, layer + ".enc", cfg.width, cfg.heads, rng));
  }
  out.merge_ln = nn::make_layer_norm(p, name + ".merge_ln", cfg.layers * cfg.width);
  out.merge = nn::make_linear(p, name + ".merge", cfg.layers * cfg.width, cfg.out_width, rng);
  return out;
}

inline ad::Tensor coordinates_tensor(const PointCloud& cloud) {
  const auto& m = cloud.points;
  return ad::Tensor::constant({cloud.size(), 3}, std::vector<double>(m.data(), m.data() + m.size()));
}

/// Each row becomes [own feature | neighbour 1 | ... | neighbour k].
inline ad::Tensor lfi_concat(const ad::Tensor& features, const NeighborIndex& nbrs) {
  if (features.rank() != 2 || features.dim(0) != nbrs.rows)
    throw ad::ShapeError("lfi: feature rows must match the neighbour index");
  std::vector<ad::Tensor> parts{features};
  std::vector<std::size_t> idx(nbrs.rows);
  for (std::size_t r = 0; r < nbrs.k; ++r) {
    for (std::size_t i = 0; i < nbrs.rows; ++i) idx[i] = nbrs(i, r);
    parts.push_back(ad::gather_rows(features, idx));
  }
  return ad::concat(parts);
}

inline ad::Tensor lfi(const ad::Tensor& features, const NeighborIndex& nbrs, const nn::Linear& proj) {
  return ad::relu(proj(lfi_concat(features, nbrs)));
}

/// N x out_width features. `nbrs` is the geometric KNN of `cloud`, shared by
/// every layer.
inline ad::Tensor pse_forward(const PointCloud& cloud, const NeighborIndex& nbrs, const PseParams& p) {
  if (nbrs.k != p.k || nbrs.rows != cloud.size())
    throw std::invalid_argument("pse_forward: neighbour index must be built with k = " + std::to_string(p.k));
  ad::Tensor t = coordinates_tensor(cloud);
  std::vector<ad::Tensor> outputs;
  for (std::size_t n = 0; n < p.lfi.size(); ++n) {
    const ad::Tensor integrated = lfi(t, nbrs, p.lfi[n]);
    t = nn::encoder_block(integrated, p.encoders[n], p.residual);
    outputs.push_back(t);
  }
  const ad::Tensor merged = outputs.size() == 1 ? outputs[0] : ad::concat(outputs);
  return p.merge(nn::layer_norm(ad::relu(merged), p.merge_ln));
}

inline ad::Tensor pse_forward(const PointCloud& cloud, const PseParams& p) {
  if (cloud.size() <= p.k) throw std::invalid_argument("pse_forward: cloud needs more than k points");
  return pse_forward(cloud, knn_indices(cloud, p.k), p);
}

/// Replacement extractor for the no-PSE ablation: per-point FC + ReLU.
inline ad::Tensor pointwise_embed(const PointCloud& cloud, const nn::Linear& fc) {
  return ad::relu(fc(coordinates_tensor(cloud)));
}

}  // namespace dit
