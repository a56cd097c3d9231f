#pragma once

#include "prokcat/tensor.hpp"

#include <random>
#include <utility>
#include <vector>

namespace prokcat {

struct AttentionHeadParams {
  Tensor align_w;             // d x d bilinear alignment matrix
  Tensor fc_p_w, fc_p_b;      // d -> d cross-feature maps
  Tensor fc_c_w, fc_c_b;
  Tensor score_p_w, score_p_b;  // 2d -> 1 weight scoring
  Tensor score_c_w, score_c_b;
};

struct InteractionParams {
  std::vector<AttentionHeadParams> heads;
  Tensor out_p_w, out_p_b;  // L_h*d -> d output projections
  Tensor out_c_w, out_c_b;
  int d = 32;

  int head_count() const { return static_cast<int>(heads.size()); }
  static InteractionParams init(int d, int heads, std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

struct InteractionOutput {
  Tensor alignment;   // A: N_v x L_p, entries in (-1, 1)
  Tensor alpha_p;     // L_p x 1, sums to 1
  Tensor alpha_c;     // N_v x 1, sums to 1
  Tensor weighted_p;  // L_p x d
  Tensor weighted_c;  // N_v x d
};

/// A = tanh(H_c W H_p^T), the atom-by-residue interaction strengths.
Tensor soft_alignment(const Tensor& h_c, const Tensor& h_p, const Tensor& align_w);

/// (h_p2c, h_c2p) = (A FC(H_p), A^T FC(H_c)).
std::pair<Tensor, Tensor> cross_features(const Tensor& alignment, const Tensor& h_p,
                                         const Tensor& h_c, const AttentionHeadParams& params);

/// Position scores from [cross-feature || own-feature] through the 2d->1 maps,
/// softmaxed over positions. Returns (alpha_p, alpha_c).
std::pair<Tensor, Tensor> attention_weights(const Tensor& h_c2p, const Tensor& h_p,
                                            const Tensor& h_p2c, const Tensor& h_c,
                                            const AttentionHeadParams& params);

/// Row-wise scaling of features by their attention weights.
std::pair<Tensor, Tensor> apply_weights(const Tensor& alpha_p, const Tensor& h_p,
                                        const Tensor& alpha_c, const Tensor& h_c);

InteractionOutput single_head_interaction(const Tensor& h_p, const Tensor& h_c,
                                          const AttentionHeadParams& params);

/// Per-head alignment/weighting, head-concatenated weighted features, and the
/// output projections back to width d. Returns (h'_p, h'_c).
std::pair<Tensor, Tensor> multi_head_interaction(const Tensor& h_p, const Tensor& h_c,
                                                 const InteractionParams& params);

}  // namespace prokcat
