#pragma once

#include "prokcat/smiles.hpp"
#include "prokcat/tensor.hpp"

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace prokcat {

/// 20 canonical amino acids plus X for unknown.
inline constexpr const char* kResidueAlphabet = "ACDEFGHIKLMNPQRSTVWYX";
inline constexpr int kResidueAlphabetSize = 21;
inline constexpr int kTokenEmbeddingWidth = 32;  // e_tok
inline constexpr int kProteinAlignHidden = 64;

struct ProteinSequence {
  std::string residues;
  int length() const { return static_cast<int>(residues.size()); }
};

/// Validates the 21-letter alphabet; throws std::invalid_argument naming the
/// offending character and position.
ProteinSequence make_protein_sequence(const std::string& residues);

std::vector<int> residue_tokens(const ProteinSequence& seq);

/// Precomputed per-residue embeddings, keyed by record id. Text format:
///   PEMB1 <width>
///   ><id> <rows>
///   <width floats per row, one row per line>
struct ResidueEmbeddingFile {
  int width = 0;
  std::map<std::string, MatrixRM> embeddings;

  /// Exact id first, then the base id with any "#dup..." suffix stripped
  /// (oversampled copies share their source's embedding).
  const MatrixRM* find(const std::string& id) const;
};

ResidueEmbeddingFile load_residue_embeddings(const std::string& path);

struct GatLayerParams {
  Tensor weight;     // d x d
  Tensor attention;  // 2d
};

struct EncoderParams {
  Tensor token_embedding;  // 21 x e_tok
  Tensor conv1;            // 3 x e_tok x e_tok
  Tensor conv2;
  Tensor align_w1, align_b1;  // (e_tok + ext_width) -> hidden
  Tensor align_w2, align_b2;  // hidden -> d

  Tensor atom_proj_w, atom_proj_b;  // kAtomFeatureWidth -> d
  std::vector<GatLayerParams> gat;  // 2 layers

  Tensor fp_w1, fp_b1;  // 1024 -> d
  Tensor fp_w2, fp_b2;  // d -> d

  int d = 32;
  int ext_width = 64;

  static EncoderParams init(int d, int ext_width, std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

struct EncoderAblation {
  bool no_cnn = false;  // pass token embeddings straight to the alignment net
  bool no_ext = false;  // zero external embedding matrix
};

/// Per-residue protein features [L_p x d]: token embedding, two same-padded
/// width-3 conv layers with relu between, concatenation with the external
/// embedding rows (zeros when absent), then the alignment network.
Tensor encode_protein(const ProteinSequence& seq, const std::optional<MatrixRM>& ext,
                      const EncoderParams& params, const EncoderAblation& ablation = {});

/// Single graph-attention layer with self-loops and tanh output nonlinearity.
Tensor gat_layer(const Tensor& node_feats, const std::vector<std::vector<int>>& adjacency,
                 const GatLayerParams& params);

/// Neighbor-attention rows (softmax over self + neighbors) for inspection.
Tensor gat_attention_matrix(const Tensor& node_feats,
                            const std::vector<std::vector<int>>& adjacency,
                            const GatLayerParams& params);

/// Per-atom substrate features [N_v x d]: featurize, project, two gat layers.
Tensor encode_substrate(const MolGraph& graph, const EncoderParams& params);

/// 1024-bit fingerprint tensor -> latent width d through one hidden layer.
Tensor align_fingerprint(const Tensor& fp_tensor, const EncoderParams& params);

}  // namespace prokcat
