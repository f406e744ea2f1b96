#pragma once

// Point feature transformer: positional encoding, an encoder-decoder
// Transformer that lets each cloud attend to the other, and channel
// recalibration.

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dit/nn.hpp"
#include "dit/pse.hpp"

namespace dit {

struct PftConfig {
  std::size_t depth = 6;       // encoder/decoder blocks
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t pos_hidden = 64;
  std::size_t se_ratio = 4;
  bool positional = true;      // false: P_X = P_Y = 0
  bool tie_directions = true;  // one phi shared by both directions
  nn::ResidualMode residual = nn::ResidualMode::kAroundSum;
};

/// phi(A, B): A runs through the encoder stack once; B runs through the
/// decoder stack, every decoder cross-attending to the encoded A.
struct PhiParams {
  std::vector<nn::BlockParams> encoders;
  std::vector<nn::BlockParams> decoders;
};

struct PftParams {
  nn::Linear pos1, pos2;  // 3 -> pos_hidden -> width
  PhiParams phi;
  std::optional<PhiParams> phi_reverse;  // untied second direction
  nn::SEParams se;
  bool positional = true;
  nn::ResidualMode residual = nn::ResidualMode::kAroundSum;

  std::size_t width() const { return se.squeeze.w.dim(0); }
};

inline PhiParams make_phi(ModelParams& p, const PftConfig& cfg, Rng& rng, const std::string& name) {
  PhiParams phi;
  for (std::size_t i = 0; i < cfg.depth; ++i)
    phi.encoders.push_back(nn::make_encoder_params(p, name + ".enc" + std::to_string(i), cfg.width, cfg.heads, rng));
  for (std::size_t i = 0; i < cfg.depth; ++i)
    phi.decoders.push_back(nn::make_decoder_params(p, name + ".dec" + std::to_string(i), cfg.width, cfg.heads, rng));
  return phi;
}

inline PftParams make_pft(ModelParams& p, const PftConfig& cfg, Rng& rng, const std::string& name = "pft") {
  if (cfg.depth < 1) throw std::invalid_argument("pft: depth must be >= 1");
  PftParams out;
  out.positional = cfg.positional;
  out.residual = cfg.residual;
  out.pos1 = nn::make_linear(p, name + ".pos1", 3, cfg.pos_hidden, rng);
  out.pos2 = nn::make_linear(p, name + ".pos2", cfg.pos_hidden, cfg.width, rng);
  out.phi = make_phi(p, cfg, rng, name + ".phi");
  if (!cfg.tie_directions) out.phi_reverse = make_phi(p, cfg, rng, name + ".phi_rev");
  out.se = nn::make_se(p, name + ".se", cfg.width, cfg.se_ratio, rng);
  return out;
}

/// P = ReLU(FC(Sigmoid(FC(coordinates)))), row-wise.
inline ad::Tensor positional_encode(const PointCloud& cloud, const PftParams& p) {
  return ad::relu(p.pos2(ad::sigmoid(p.pos1(coordinates_tensor(cloud)))));
}

inline ad::Tensor phi(const ad::Tensor& a, const ad::Tensor& b, const PhiParams& p, nn::ResidualMode mode) {
  ad::Tensor memory = a;
  for (const auto& enc : p.encoders) memory = nn::encoder_block(memory, enc, mode);
  ad::Tensor x = b;
  for (const auto& dec : p.decoders) x = nn::decoder_block(memory, x, dec, mode);
  return x;
}

struct PftOutput {
  ad::Tensor phi_x;  // N x width
  ad::Tensor phi_y;  // M x width
};

/// Phi_X = SE(F_X + phi(F_Y + P_Y, F_X + P_X)) and the mirrored Phi_Y.
inline PftOutput pft_forward(const ad::Tensor& fx, const ad::Tensor& fy, const PointCloud& x, const PointCloud& y,
                             const PftParams& p) {
  const std::size_t w = p.width();
  if (fx.rank() != 2 || fy.rank() != 2 || fx.dim(1) != w || fy.dim(1) != w)
    throw ad::ShapeError("pft_forward: feature width must be " + std::to_string(w));
  if (fx.dim(0) != x.size() || fy.dim(0) != y.size()) throw ad::ShapeError("pft_forward: feature rows must match clouds");
  ad::Tensor fx2 = fx, fy2 = fy;
  if (p.positional) {
    fx2 = ad::add(fx, positional_encode(x, p));
    fy2 = ad::add(fy, positional_encode(y, p));
  }
  const PhiParams& rev = p.phi_reverse ? *p.phi_reverse : p.phi;
  const ad::Tensor psi_x = ad::add(fx, phi(fy2, fx2, p.phi, p.residual));
  const ad::Tensor psi_y = ad::add(fy, phi(fx2, fy2, rev, p.residual));
  return {nn::se_recalibrate(psi_x, p.se), nn::se_recalibrate(psi_y, p.se)};
}

}  // namespace dit
