#include "prokcat/encoders.hpp"

#include "prokcat/fingerprint.hpp"
#include "fd_check.hpp"
#include "smiles_writer.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>

using namespace prokcat;

namespace {

EncoderParams tiny_params(int d = 4, int ext = 3, unsigned seed = 12) {
  std::mt19937_64 rng(seed);
  return EncoderParams::init(d, ext, rng);
}

}  // namespace

TEST_CASE("protein sequence validation") {
  CHECK_NOTHROW(make_protein_sequence("ACDEFGHIKLMNPQRSTVWYX"));
  CHECK_THROWS_WITH_AS(make_protein_sequence("ACZ"), doctest::Contains("position 2"),
                       std::invalid_argument);
  CHECK_THROWS_AS(make_protein_sequence(""), std::invalid_argument);
  CHECK_THROWS_AS(make_protein_sequence("acd"), std::invalid_argument);

  auto tokens = residue_tokens(make_protein_sequence("AXC"));
  CHECK(tokens == std::vector<int>{0, 20, 1});
}

TEST_CASE("encode_protein shape and ext handling") {
  EncoderParams p = tiny_params();
  ProteinSequence m = make_protein_sequence("M");
  Tensor out = encode_protein(m, std::nullopt, p);
  CHECK(out.shape() == Shape{1, 4});

  // absent ext is the same as a zero ext matrix
  ProteinSequence seq = make_protein_sequence("MKV");
  MatrixRM zeros = MatrixRM::Zero(3, 3);
  Tensor a = encode_protein(seq, std::nullopt, p);
  Tensor b = encode_protein(seq, zeros, p);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a.value_at(i) == b.value_at(i));

  MatrixRM wrong_rows = MatrixRM::Zero(2, 3);
  CHECK_THROWS_AS(encode_protein(seq, wrong_rows, p), std::invalid_argument);
  MatrixRM wrong_width = MatrixRM::Zero(3, 5);
  CHECK_THROWS_AS(encode_protein(seq, wrong_width, p), std::invalid_argument);

  std::mt19937_64 rng(5);
  for (int len : {1, 7, 33, 64}) {
    std::string residues;
    for (int i = 0; i < len; ++i)
      residues += kResidueAlphabet[rng::uniform_int(rng, 21)];
    Tensor o = encode_protein(make_protein_sequence(residues), std::nullopt, p);
    CHECK(o.shape() == Shape{len, 4});
  }
}

TEST_CASE("encode_protein gradients match finite differences") {
  EncoderParams p = tiny_params();
  ProteinSequence seq = make_protein_sequence("MKVA");
  std::mt19937_64 rng(77);
  MatrixRM ext(4, 3);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) ext(r, c) = rng::uniform(rng, -1, 1);
  Tensor w = Tensor::glorot({4, 4}, 4, 4, rng, false);

  auto report = fdtest::check_gradients(
      p.parameters(), [&]() { return mean_all(encode_protein(seq, ext, p) * w); });
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("no_cnn ablation bypasses conv layers only") {
  EncoderParams p = tiny_params();
  ProteinSequence seq = make_protein_sequence("MKVA");
  Tensor out = encode_protein(seq, std::nullopt, p, {.no_cnn = true});
  CHECK(out.shape() == Shape{4, 4});

  // conv kernels receive no gradient when bypassed
  for (auto& t : p.parameters()) t.zero_grad();
  {
    Tape tape;
    Tensor loss = mean_all(encode_protein(seq, std::nullopt, p, {.no_cnn = true}));
    backward(loss);
  }
  CHECK(p.conv1.grad().abs().sum() == 0.0);
  CHECK(p.token_embedding.grad().abs().sum() > 0.0);
}

TEST_CASE("gat_layer: single node reduces to tanh(W h)") {
  EncoderParams p = tiny_params();
  std::mt19937_64 rng(9);
  Tensor h = Tensor::glorot({1, 4}, 1, 4, rng, false);
  std::vector<std::vector<int>> adjacency = {{}};
  Tensor out = gat_layer(h, adjacency, p.gat[0]);
  Tensor direct = tanh(matmul(h, p.gat[0].weight));
  for (Eigen::Index i = 0; i < out.size(); ++i)
    CHECK(out.value_at(i) == doctest::Approx(direct.value_at(i)).epsilon(1e-12));
}

TEST_CASE("gat_layer: identical nodes with symmetric edge give identical outputs") {
  EncoderParams p = tiny_params();
  Tensor h = Tensor::from({2, 4}, {0.3, -0.2, 0.5, 0.1, 0.3, -0.2, 0.5, 0.1});
  std::vector<std::vector<int>> adjacency = {{1}, {0}};
  Tensor out = gat_layer(h, adjacency, p.gat[0]);
  for (int c = 0; c < 4; ++c) CHECK(out.value_at(c) == doctest::Approx(out.value_at(4 + c)));
}

TEST_CASE("gat attention rows are probability vectors over neighbor sets") {
  EncoderParams p = tiny_params();
  MolGraph ring = parse_smiles("C1CC1");
  Tensor h = encode_substrate(ring, p);
  Tensor alpha = gat_attention_matrix(h, ring.adjacency, p.gat[0]);
  for (int i = 0; i < 3; ++i) {
    double row_sum = 0;
    for (int j = 0; j < 3; ++j) row_sum += alpha.value_at(i * 3 + j);
    CHECK(std::abs(row_sum - 1.0) < 1e-9);
  }

  // non-neighbors get zero weight: a 2-component graph
  MolGraph pair = parse_smiles("C.C");
  Tensor h2 = Tensor::from({2, 4}, {0.1, 0.2, 0.3, 0.4, -0.5, 0.1, 0.0, 0.2});
  Tensor alpha2 = gat_attention_matrix(h2, pair.adjacency, p.gat[0]);
  CHECK(alpha2.value_at(1) == 0.0);
  CHECK(alpha2.value_at(2) == 0.0);
  CHECK(alpha2.value_at(0) == doctest::Approx(1.0));
}

TEST_CASE("encode_substrate shapes and benzene symmetry") {
  EncoderParams p = tiny_params();
  Tensor methane = encode_substrate(parse_smiles("C"), p);
  CHECK(methane.shape() == Shape{1, 4});

  Tensor benzene = encode_substrate(parse_smiles("c1ccccc1"), p);
  CHECK(benzene.shape() == Shape{6, 4});
  for (int row = 1; row < 6; ++row)
    for (int c = 0; c < 4; ++c)
      CHECK(std::abs(benzene.value_at(row * 4 + c) - benzene.value_at(c)) < 1e-9);
}

TEST_CASE("encode_substrate is permutation equivariant") {
  EncoderParams p = tiny_params();
  std::mt19937_64 rng(2100);
  for (const std::string& s : {"CCO", "CC(C)=O", "c1ccncc1", "OCC1OC(O)C(O)C(O)C1O"}) {
    MolGraph g = parse_smiles(s);
    Tensor base = encode_substrate(g, p);
    for (int trial = 0; trial < 3; ++trial) {
      auto written = smilestest::write_random_smiles(g, rng);
      MolGraph permuted = parse_smiles(written.text);
      Tensor out = encode_substrate(permuted, p);
      for (int k = 0; k < g.atom_count(); ++k) {
        const int orig = written.emission_order[static_cast<size_t>(k)];
        for (int c = 0; c < 4; ++c)
          CHECK(std::abs(out.value_at(k * 4 + c) - base.value_at(orig * 4 + c)) < 1e-9);
      }
    }
  }
}

TEST_CASE("encode_substrate gradients match finite differences") {
  EncoderParams p = tiny_params();
  MolGraph g = parse_smiles("CCO");
  std::mt19937_64 rng(8);
  Tensor w = Tensor::glorot({3, 4}, 3, 4, rng, false);
  auto report = fdtest::check_gradients(
      p.parameters(), [&]() { return mean_all(encode_substrate(g, p) * w); });
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("align_fingerprint zero case, shape, gradients") {
  EncoderParams p = tiny_params();
  p.fp_b1.raw_values().setZero();
  p.fp_b2.raw_values().setZero();
  Tensor zero_fp = Tensor::zeros({1024});
  Tensor out = align_fingerprint(zero_fp, p);
  CHECK(out.shape() == Shape{4});
  for (int i = 0; i < 4; ++i) CHECK(out.value_at(i) == 0.0);

  Tensor fp = fingerprint_to_tensor(ecfp(parse_smiles("CCO")));
  std::mt19937_64 rng(10);
  Tensor w = Tensor::glorot({4}, 4, 1, rng, false);
  std::vector<Tensor> leaves = {p.fp_w1, p.fp_b1, p.fp_w2, p.fp_b2};
  auto report = fdtest::check_gradients(
      leaves, [&]() { return mean_all(align_fingerprint(fp, p) * w); });
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("residue embedding file round trip and validation") {
  const std::string path = "pemb_test.tmp";
  {
    std::ofstream out(path);
    out << "PEMB1 3\n";
    out << ">rec1 2\n";
    out << "0.5 -1.25 2\n";
    out << "1 0 -0.5\n";
    out << ">rec2 1\n";
    out << "7 8 9\n";
  }
  ResidueEmbeddingFile file = load_residue_embeddings(path);
  CHECK(file.width == 3);
  REQUIRE(file.find("rec1") != nullptr);
  CHECK((*file.find("rec1"))(0, 1) == doctest::Approx(-1.25));
  CHECK((*file.find("rec1"))(1, 2) == doctest::Approx(-0.5));
  CHECK(file.find("rec2#dup1") == file.find("rec2"));
  CHECK(file.find("missing") == nullptr);
  std::remove(path.c_str());

  {
    std::ofstream out(path);
    out << "NOPE 3\n";
  }
  CHECK_THROWS_AS(load_residue_embeddings(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "PEMB1 3\n>rec1 2\n1 2 3\n";
  }
  CHECK_THROWS_AS(load_residue_embeddings(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "PEMB1 3\n>rec1 1\n1 2\n";
  }
  CHECK_THROWS_AS(load_residue_embeddings(path), std::runtime_error);
  std::remove(path.c_str());
}
