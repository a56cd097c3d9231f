#pragma once

#include "prokcat/tensor.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace prokcat {

/// Uniform knot grid with clamped extension beyond the domain. `order` is the
/// polynomial degree of the basis; G intervals and degree k give G+k basis
/// functions over G+2k+1 knots.
struct BSplineGrid {
  double lower = -1.0;
  double upper = 1.0;
  int intervals = 5;  // G
  int order = 3;      // k
  std::vector<double> knots;

  static BSplineGrid make(double lower, double upper, int intervals = 5, int order = 3);
  int basis_count() const { return intervals + order; }
};

/// Cox-de Boor values of all basis functions at x. Evaluation clamps x into
/// the grid domain, so the partition of unity holds for every real x.
std::vector<double> bspline_basis(double x, const BSplineGrid& grid);

/// d/dx of every basis function; zero outside the domain (clamped extension).
std::vector<double> bspline_basis_derivative(double x, const BSplineGrid& grid);

/// One learnable univariate function: w_b*silu(x) + w_s*sum(c_m B_m(x)).
struct KanEdge {
  Tensor base_weight;    // w_b, shape [1]
  Tensor spline_weight;  // w_s, shape [1]
  Tensor coefficients;   // [G+k]
};

double edge_eval(const KanEdge& edge, double x, const BSplineGrid& grid);

struct KanLayer {
  int in_width = 0;
  int out_width = 0;
  std::vector<KanEdge> edges;  // edge (i -> j) at index i*out_width + j
  Tensor bias;                 // [out_width]

  KanEdge& edge(int in, int out) { return edges[static_cast<size_t>(in * out_width + out)]; }
  const KanEdge& edge(int in, int out) const {
    return edges[static_cast<size_t>(in * out_width + out)];
  }
};

/// Per-input min-max statistics mapping network inputs to [-1, 1]; degenerate
/// ranges map to 0. Hidden activations are not renormalized.
struct InputNormalizer {
  std::vector<double> min;
  std::vector<double> max;

  double apply(int input, double x) const;
  void scale_offset(int input, double& scale, double& offset) const;
};

struct KanNetwork {
  std::vector<int> widths;  // [n_0, ..., n_L]
  BSplineGrid grid;
  std::vector<KanLayer> layers;
  InputNormalizer normalizer;

  static KanNetwork init(std::vector<int> widths, const BSplineGrid& grid, std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

/// Plain forward pass on doubles (no tape).
std::vector<double> kan_eval(const KanNetwork& net, const std::vector<double>& input);

/// Tape forward pass; input shape [n_0], output [n_L].
Tensor kan_forward(const KanNetwork& net, const Tensor& input);

/// Trainable value count: sum over layers of n_in*n_out*(G+k+2) + n_out.
long param_count(const KanNetwork& net);

enum class PrimitiveKind { Affine, Abs, Square, Exp, Log, Reciprocal, Silu };
const char* primitive_name(PrimitiveKind kind);

/// Fitted c*g(a*x + b) + e for one primitive g. The abs fit is canonicalized
/// by folding |c| into the inner affine (c*|a*x+b| is scale-redundant), so
/// |3x - 1| comes back as a ~ 3, c ~ 1.
struct PrimitiveFit {
  PrimitiveKind kind = PrimitiveKind::Affine;
  double a = 1.0, b = 0.0;
  double c = 0.0, e = 0.0;
  double r2 = 0.0;
  double rmse = 0.0;
  double max_residual = 0.0;  // largest |fit - edge| over the sample grid

  double eval(double x) const;
  /// d/dx of the fitted term at the domain midpoint sign: for affine, c*a.
  double slope() const { return c * a; }
  /// Term text without the additive offset e (callers fold offsets into the
  /// enclosing sum constant), coefficients rounded to two decimals.
  std::string render(const std::string& argument) const;
};

/// Grid search over the inner affine plus a linear solve for (c, e),
/// refined locally; returns the best primitive by R^2 over 256 uniform
/// samples of the edge on the grid domain.
PrimitiveFit fit_edge_symbolic(const KanEdge& edge, const BSplineGrid& grid);

/// Same search restricted to one primitive; reports how well that shape
/// alone explains the edge.
PrimitiveFit fit_edge_primitive(const KanEdge& edge, const BSplineGrid& grid, PrimitiveKind kind);

struct FormulaNode {
  enum class Kind { Input, Constant, Sum, Primitive };
  Kind kind = Kind::Constant;

  int input = -1;          // Kind::Input
  std::string input_name;  // Kind::Input
  double constant = 0.0;   // Kind::Constant and the additive offset of a Sum
  std::vector<std::shared_ptr<FormulaNode>> terms;  // Kind::Sum
  PrimitiveFit fit;                                 // Kind::Primitive
  std::shared_ptr<FormulaNode> argument;            // Kind::Primitive
};

struct SymbolicFormula {
  std::shared_ptr<FormulaNode> root;
  std::vector<std::string> input_names;
  std::vector<PrimitiveFit> edge_fits;  // layer-major, edge (i -> j) order
  std::string text;

  double eval(const std::vector<double>& inputs) const;
  /// Sum of per-edge fit RMSEs, the average-case formula-vs-network error.
  double composed_fit_error() const;
  /// Sum of per-edge max residuals; a pointwise agreement bound, exact for
  /// single-layer networks.
  double composed_residual_bound() const;
};

/// Replaces every edge by its best-fit primitive. The input normalizer is an
/// affine map, so it folds into the first-layer inner affines and the formula
/// reads directly in the named raw inputs.
SymbolicFormula extract_formula(const KanNetwork& net, const std::vector<std::string>& input_names);

}  // namespace prokcat
