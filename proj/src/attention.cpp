#include "prokcat/attention.hpp"

namespace prokcat {

InteractionParams InteractionParams::init(int d, int heads, std::mt19937_64& rng) {
  if (heads < 1) throw std::invalid_argument("attention: head count must be >= 1");
  InteractionParams p;
  p.d = d;
  for (int h = 0; h < heads; ++h) {
    AttentionHeadParams head;
    head.align_w = Tensor::glorot({d, d}, d, d, rng);
    head.fc_p_w = Tensor::glorot({d, d}, d, d, rng);
    head.fc_p_b = Tensor::zeros({d}, true);
    head.fc_c_w = Tensor::glorot({d, d}, d, d, rng);
    head.fc_c_b = Tensor::zeros({d}, true);
    head.score_p_w = Tensor::glorot({2 * d, 1}, 2 * d, 1, rng);
    head.score_p_b = Tensor::zeros({1}, true);
    head.score_c_w = Tensor::glorot({2 * d, 1}, 2 * d, 1, rng);
    head.score_c_b = Tensor::zeros({1}, true);
    p.heads.push_back(std::move(head));
  }
  p.out_p_w = Tensor::glorot({heads * d, d}, heads * d, d, rng);
  p.out_p_b = Tensor::zeros({d}, true);
  p.out_c_w = Tensor::glorot({heads * d, d}, heads * d, d, rng);
  p.out_c_b = Tensor::zeros({d}, true);
  return p;
}

std::vector<Tensor> InteractionParams::parameters() const {
  std::vector<Tensor> out;
  for (const AttentionHeadParams& h : heads) {
    out.insert(out.end(), {h.align_w, h.fc_p_w, h.fc_p_b, h.fc_c_w, h.fc_c_b, h.score_p_w,
                           h.score_p_b, h.score_c_w, h.score_c_b});
  }
  out.insert(out.end(), {out_p_w, out_p_b, out_c_w, out_c_b});
  return out;
}

Tensor soft_alignment(const Tensor& h_c, const Tensor& h_p, const Tensor& align_w) {
  if (h_c.dim(1) != align_w.dim(0) || h_p.dim(1) != align_w.dim(1))
    throw std::invalid_argument("soft_alignment: latent widths disagree, " +
                                shape_to_string(h_c.shape()) + " W " +
                                shape_to_string(align_w.shape()) + " " +
                                shape_to_string(h_p.shape()));
  return tanh(matmul(matmul(h_c, align_w), transpose(h_p)));
}

std::pair<Tensor, Tensor> cross_features(const Tensor& alignment, const Tensor& h_p,
                                         const Tensor& h_c, const AttentionHeadParams& params) {
  Tensor p2c = matmul(alignment, matmul(h_p, params.fc_p_w) + params.fc_p_b);
  Tensor c2p = matmul(transpose(alignment), matmul(h_c, params.fc_c_w) + params.fc_c_b);
  return {p2c, c2p};
}

namespace {

Tensor position_weights(const Tensor& cross, const Tensor& own, const Tensor& w, const Tensor& b) {
  Tensor scores = matmul(concat({cross, own}, 1), w) + b;  // length x 1
  return softmax(scores, 0);
}

}  // namespace

std::pair<Tensor, Tensor> attention_weights(const Tensor& h_c2p, const Tensor& h_p,
                                            const Tensor& h_p2c, const Tensor& h_c,
                                            const AttentionHeadParams& params) {
  Tensor alpha_p = position_weights(h_c2p, h_p, params.score_p_w, params.score_p_b);
  Tensor alpha_c = position_weights(h_p2c, h_c, params.score_c_w, params.score_c_b);
  return {alpha_p, alpha_c};
}

std::pair<Tensor, Tensor> apply_weights(const Tensor& alpha_p, const Tensor& h_p,
                                        const Tensor& alpha_c, const Tensor& h_c) {
  if (alpha_p.dim(0) != h_p.dim(0) || alpha_c.dim(0) != h_c.dim(0))
    throw std::invalid_argument("apply_weights: weight lengths " +
                                shape_to_string(alpha_p.shape()) + "/" +
                                shape_to_string(alpha_c.shape()) + " mismatch features " +
                                shape_to_string(h_p.shape()) + "/" + shape_to_string(h_c.shape()));
  return {alpha_p * h_p, alpha_c * h_c};
}

InteractionOutput single_head_interaction(const Tensor& h_p, const Tensor& h_c,
                                          const AttentionHeadParams& params) {
  InteractionOutput out;
  out.alignment = soft_alignment(h_c, h_p, params.align_w);
  auto [p2c, c2p] = cross_features(out.alignment, h_p, h_c, params);
  auto [alpha_p, alpha_c] = attention_weights(c2p, h_p, p2c, h_c, params);
  out.alpha_p = alpha_p;
  out.alpha_c = alpha_c;
  auto [wp, wc] = apply_weights(alpha_p, h_p, alpha_c, h_c);
  out.weighted_p = wp;
  out.weighted_c = wc;
  return out;
}

std::pair<Tensor, Tensor> multi_head_interaction(const Tensor& h_p, const Tensor& h_c,
                                                 const InteractionParams& params) {
  std::vector<Tensor> heads_p, heads_c;
  for (const AttentionHeadParams& head : params.heads) {
    InteractionOutput head_out = single_head_interaction(h_p, h_c, head);
    heads_p.push_back(head_out.weighted_p);
    heads_c.push_back(head_out.weighted_c);
  }
  Tensor cat_p = heads_p.size() == 1 ? heads_p[0] : concat(heads_p, 1);
  Tensor cat_c = heads_c.size() == 1 ? heads_c[0] : concat(heads_c, 1);
  Tensor out_p = matmul(cat_p, params.out_p_w) + params.out_p_b;
  Tensor out_c = matmul(cat_c, params.out_c_w) + params.out_c_b;
  return {out_p, out_c};
}

}  // namespace prokcat
