#include "prokcat/encoders.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace prokcat {

namespace {

constexpr double kMaskPenalty = 1e9;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return matmul(x, w) + b;
}

}  // namespace

ProteinSequence make_protein_sequence(const std::string& residues) {
  if (residues.empty())
    throw std::invalid_argument("protein sequence must not be empty");
  for (std::size_t i = 0; i < residues.size(); ++i) {
    if (std::strchr(kResidueAlphabet, residues[i]) == nullptr || residues[i] == '\0')
      throw std::invalid_argument(std::string("invalid residue character '") + residues[i] +
                                  "' at position " + std::to_string(i));
  }
  return ProteinSequence{residues};
}

std::vector<int> residue_tokens(const ProteinSequence& seq) {
  std::vector<int> tokens;
  tokens.reserve(seq.residues.size());
  for (char c : seq.residues)
    tokens.push_back(static_cast<int>(std::strchr(kResidueAlphabet, c) - kResidueAlphabet));
  return tokens;
}

const MatrixRM* ResidueEmbeddingFile::find(const std::string& id) const {
  auto it = embeddings.find(id);
  if (it != embeddings.end()) return &it->second;
  const auto hash_pos = id.find("#dup");
  if (hash_pos != std::string::npos) {
    it = embeddings.find(id.substr(0, hash_pos));
    if (it != embeddings.end()) return &it->second;
  }
  return nullptr;
}

ResidueEmbeddingFile load_residue_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
  };

  ResidueEmbeddingFile file;
  if (!std::getline(in, line)) fail("missing PEMB1 header");
  ++line_no;
  {
    std::istringstream hs(line);
    std::string magic;
    if (!(hs >> magic >> file.width) || magic != "PEMB1" || file.width <= 0)
      fail("expected 'PEMB1 <width>' header, got: " + line);
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] != '>') fail("expected '><id> <rows>' entry line, got: " + line);
    std::istringstream es(line.substr(1));
    std::string id;
    int rows = 0;
    if (!(es >> id >> rows) || rows <= 0) fail("malformed entry line: " + line);
    if (file.embeddings.count(id)) fail("duplicate embedding id: " + id);
    MatrixRM m(rows, file.width);
    for (int r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) fail("unexpected end of file in entry " + id);
      ++line_no;
      std::istringstream rs(line);
      for (int c = 0; c < file.width; ++c) {
        if (!(rs >> m(r, c))) fail("entry " + id + " row " + std::to_string(r) + " has fewer than " +
                                   std::to_string(file.width) + " values");
      }
      double extra;
      if (rs >> extra) fail("entry " + id + " row " + std::to_string(r) + " has more than " +
                            std::to_string(file.width) + " values");
    }
    file.embeddings.emplace(id, std::move(m));
  }
  return file;
}

EncoderParams EncoderParams::init(int d, int ext_width, std::mt19937_64& rng) {
  const int e = kTokenEmbeddingWidth;
  const int hidden = kProteinAlignHidden;
  EncoderParams p;
  p.d = d;
  p.ext_width = ext_width;
  p.token_embedding = Tensor::glorot({kResidueAlphabetSize, e}, kResidueAlphabetSize, e, rng);
  p.conv1 = Tensor::glorot({3, e, e}, 3 * e, e, rng);
  p.conv2 = Tensor::glorot({3, e, e}, 3 * e, e, rng);
  p.align_w1 = Tensor::glorot({e + ext_width, hidden}, e + ext_width, hidden, rng);
  p.align_b1 = Tensor::zeros({hidden}, true);
  p.align_w2 = Tensor::glorot({hidden, d}, hidden, d, rng);
  p.align_b2 = Tensor::zeros({d}, true);
  p.atom_proj_w = Tensor::glorot({kAtomFeatureWidth, d}, kAtomFeatureWidth, d, rng);
  p.atom_proj_b = Tensor::zeros({d}, true);
  for (int layer = 0; layer < 2; ++layer) {
    GatLayerParams g;
    g.weight = Tensor::glorot({d, d}, d, d, rng);
    g.attention = Tensor::glorot({2 * d}, 2 * d, 1, rng);
    p.gat.push_back(std::move(g));
  }
  p.fp_w1 = Tensor::glorot({1024, d}, 1024, d, rng);
  p.fp_b1 = Tensor::zeros({d}, true);
  p.fp_w2 = Tensor::glorot({d, d}, d, d, rng);
  p.fp_b2 = Tensor::zeros({d}, true);
  return p;
}

std::vector<Tensor> EncoderParams::parameters() const {
  std::vector<Tensor> out = {token_embedding, conv1,      conv2,      align_w1,
                             align_b1,        align_w2,   align_b2,   atom_proj_w,
                             atom_proj_b};
  for (const GatLayerParams& g : gat) {
    out.push_back(g.weight);
    out.push_back(g.attention);
  }
  out.insert(out.end(), {fp_w1, fp_b1, fp_w2, fp_b2});
  return out;
}

Tensor encode_protein(const ProteinSequence& seq, const std::optional<MatrixRM>& ext,
                      const EncoderParams& params, const EncoderAblation& ablation) {
  const int L = seq.length();
  if (ext && ext->rows() != L)
    throw std::invalid_argument("external embedding has " + std::to_string(ext->rows()) +
                                " rows for a sequence of length " + std::to_string(L));
  if (ext && ext->cols() != params.ext_width)
    throw std::invalid_argument("external embedding width " + std::to_string(ext->cols()) +
                                " does not match configured width " +
                                std::to_string(params.ext_width));

  Tensor x = gather_rows(params.token_embedding, residue_tokens(seq));
  if (!ablation.no_cnn) {
    x = conv1d(x, params.conv1);
    x = relu(x);
    x = conv1d(x, params.conv2);
  }
  Tensor ext_t;
  if (ext && !ablation.no_ext) {
    ArrayX flat(static_cast<Eigen::Index>(L) * params.ext_width);
    MatMap(flat.data(), L, params.ext_width) = *ext;
    ext_t = Tensor::from_flat({L, params.ext_width}, std::move(flat));
  } else {
    ext_t = Tensor::zeros({L, params.ext_width});
  }
  Tensor h = concat({x, ext_t}, 1);
  h = relu(linear(h, params.align_w1, params.align_b1));
  return linear(h, params.align_w2, params.align_b2);
}

namespace {

ArrayX neighbor_mask(const std::vector<std::vector<int>>& adjacency, int n) {
  ArrayX mask = ArrayX::Zero(static_cast<Eigen::Index>(n) * n);
  for (int i = 0; i < n; ++i) {
    mask(static_cast<Eigen::Index>(i) * n + i) = 1.0;  // self-loop
    for (int j : adjacency[static_cast<size_t>(i)]) mask(static_cast<Eigen::Index>(i) * n + j) = 1.0;
  }
  return mask;
}

struct GatInternals {
  Tensor transformed;  // W h
  Tensor alpha;        // masked row softmax
};

GatInternals gat_forward(const Tensor& node_feats, const std::vector<std::vector<int>>& adjacency,
                         const GatLayerParams& params) {
  const int n = node_feats.dim(0);
  const int d = node_feats.dim(1);
  if (static_cast<int>(adjacency.size()) != n)
    throw std::invalid_argument("gat_layer: adjacency lists " + std::to_string(adjacency.size()) +
                                " entries for " + std::to_string(n) + " nodes");

  GatInternals out;
  out.transformed = matmul(node_feats, params.weight);
  Tensor a = reshape(params.attention, {2 * d, 1});
  std::vector<int> lo(static_cast<size_t>(d)), hi(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) {
    lo[static_cast<size_t>(i)] = i;
    hi[static_cast<size_t>(i)] = d + i;
  }
  Tensor s_src = matmul(out.transformed, gather_rows(a, lo));  // n x 1
  Tensor s_dst = matmul(out.transformed, gather_rows(a, hi));  // n x 1
  Tensor scores = leaky_relu(s_src + transpose(s_dst));        // n x n via broadcast
  Tensor mask = Tensor::from_flat({n, n}, neighbor_mask(adjacency, n));
  Tensor masked =
      scores * mask + (mask - Tensor::full({n, n}, 1.0)) * Tensor::scalar(kMaskPenalty);
  out.alpha = softmax(masked, 1);
  return out;
}

}  // namespace

Tensor gat_layer(const Tensor& node_feats, const std::vector<std::vector<int>>& adjacency,
                 const GatLayerParams& params) {
  GatInternals internals = gat_forward(node_feats, adjacency, params);
  return tanh(matmul(internals.alpha, internals.transformed));
}

Tensor gat_attention_matrix(const Tensor& node_feats,
                            const std::vector<std::vector<int>>& adjacency,
                            const GatLayerParams& params) {
  return gat_forward(node_feats, adjacency, params).alpha;
}

Tensor encode_substrate(const MolGraph& graph, const EncoderParams& params) {
  const int n = graph.atom_count();
  ArrayX feats(static_cast<Eigen::Index>(n) * kAtomFeatureWidth);
  for (int i = 0; i < n; ++i) {
    const std::vector<double> row = atom_feature_vector(graph.atoms[static_cast<size_t>(i)], graph);
    for (int c = 0; c < kAtomFeatureWidth; ++c)
      feats(static_cast<Eigen::Index>(i) * kAtomFeatureWidth + c) = row[static_cast<size_t>(c)];
  }
  Tensor x = linear(Tensor::from_flat({n, kAtomFeatureWidth}, std::move(feats)),
                    params.atom_proj_w, params.atom_proj_b);
  for (const GatLayerParams& layer : params.gat) x = gat_layer(x, graph.adjacency, layer);
  return x;
}

Tensor align_fingerprint(const Tensor& fp_tensor, const EncoderParams& params) {
  Tensor x = reshape(fp_tensor, {1, fp_tensor.dim(0)});
  x = relu(linear(x, params.fp_w1, params.fp_b1));
  x = linear(x, params.fp_w2, params.fp_b2);
  return reshape(x, {params.d});
}

}  // namespace prokcat
