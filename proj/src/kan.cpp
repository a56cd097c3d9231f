#include "prokcat/kan.hpp"

#include "prokcat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace prokcat {

namespace {

double silu_value(double x) { return x / (1.0 + std::exp(-x)); }

int clamped_span(double x, const BSplineGrid& g) {
  const double h = (g.upper - g.lower) / g.intervals;
  int span = g.order + static_cast<int>(std::floor((x - g.lower) / h));
  return std::clamp(span, g.order, g.intervals + g.order - 1);
}

// Triangular Cox-de Boor table up to the requested degree, seeded from the
// clamped knot span so the closed domain keeps the partition of unity.
std::vector<double> basis_of_degree(double x, const BSplineGrid& g, int degree) {
  const double xc = std::clamp(x, g.lower, g.upper);
  const int spans = g.intervals + 2 * g.order;  // knot count - 1
  std::vector<double> b(static_cast<size_t>(spans), 0.0);
  b[static_cast<size_t>(clamped_span(xc, g))] = 1.0;
  const std::vector<double>& t = g.knots;
  for (int deg = 1; deg <= degree; ++deg) {
    for (int m = 0; m + deg < spans; ++m) {
      const auto mu = static_cast<size_t>(m);
      double acc = 0.0;
      if (b[mu] != 0.0) acc += (xc - t[mu]) / (t[mu + static_cast<size_t>(deg)] - t[mu]) * b[mu];
      if (b[mu + 1] != 0.0)
        acc += (t[mu + static_cast<size_t>(deg) + 1] - xc) /
               (t[mu + static_cast<size_t>(deg) + 1] - t[mu + 1]) * b[mu + 1];
      b[mu] = acc;
    }
  }
  return b;
}

}  // namespace

BSplineGrid BSplineGrid::make(double lower, double upper, int intervals, int order) {
  if (!(upper > lower)) throw std::invalid_argument("bspline grid: upper must exceed lower");
  if (intervals < 1 || order < 1)
    throw std::invalid_argument("bspline grid: intervals and order must be >= 1");
  BSplineGrid g;
  g.lower = lower;
  g.upper = upper;
  g.intervals = intervals;
  g.order = order;
  const double h = (upper - lower) / intervals;
  g.knots.resize(static_cast<size_t>(intervals + 2 * order + 1));
  for (int m = 0; m <= intervals + 2 * order; ++m)
    g.knots[static_cast<size_t>(m)] = lower + (m - order) * h;
  return g;
}

std::vector<double> bspline_basis(double x, const BSplineGrid& grid) {
  std::vector<double> full = basis_of_degree(x, grid, grid.order);
  full.resize(static_cast<size_t>(grid.basis_count()));
  return full;
}

std::vector<double> bspline_basis_derivative(double x, const BSplineGrid& grid) {
  std::vector<double> out(static_cast<size_t>(grid.basis_count()), 0.0);
  if (x < grid.lower || x > grid.upper) return out;  // clamped extension is flat
  const int k = grid.order;
  const std::vector<double> lower_deg = basis_of_degree(x, grid, k - 1);
  const std::vector<double>& t = grid.knots;
  for (int m = 0; m < grid.basis_count(); ++m) {
    const auto mu = static_cast<size_t>(m);
    const double left = lower_deg[mu] / (t[mu + static_cast<size_t>(k)] - t[mu]);
    const double right = lower_deg[mu + 1] / (t[mu + static_cast<size_t>(k) + 1] - t[mu + 1]);
    out[mu] = k * (left - right);
  }
  return out;
}

double edge_eval(const KanEdge& edge, double x, const BSplineGrid& grid) {
  const std::vector<double> basis = bspline_basis(x, grid);
  double spline = 0.0;
  for (int m = 0; m < grid.basis_count(); ++m)
    spline += edge.coefficients.value_at(m) * basis[static_cast<size_t>(m)];
  return edge.base_weight.item() * silu_value(x) + edge.spline_weight.item() * spline;
}

double InputNormalizer::apply(int input, double x) const {
  double scale = 0.0, offset = 0.0;
  scale_offset(input, scale, offset);
  return scale * x + offset;
}

void InputNormalizer::scale_offset(int input, double& scale, double& offset) const {
  const auto i = static_cast<size_t>(input);
  const double lo = min[i], hi = max[i];
  if (hi - lo < 1e-12) {
    scale = 0.0;
    offset = 0.0;
    return;
  }
  scale = 2.0 / (hi - lo);
  offset = -1.0 - 2.0 * lo / (hi - lo);
}

KanNetwork KanNetwork::init(std::vector<int> widths, const BSplineGrid& grid,
                            std::mt19937_64& rng) {
  if (widths.size() < 2) throw std::invalid_argument("kan: need at least input and output widths");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("kan: layer widths must be positive");

  KanNetwork net;
  net.widths = widths;
  net.grid = grid;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    KanLayer layer;
    layer.in_width = widths[l];
    layer.out_width = widths[l + 1];
    const double base_limit = std::sqrt(6.0 / (layer.in_width + layer.out_width));
    for (int i = 0; i < layer.in_width; ++i) {
      for (int j = 0; j < layer.out_width; ++j) {
        KanEdge edge;
        edge.base_weight = Tensor::scalar(rng::uniform(rng, -base_limit, base_limit), true);
        edge.spline_weight = Tensor::scalar(1.0, true);
        ArrayX coeffs(grid.basis_count());
        for (Eigen::Index m = 0; m < coeffs.size(); ++m) coeffs(m) = rng::uniform(rng, -0.1, 0.1);
        edge.coefficients = Tensor::from_flat({grid.basis_count()}, std::move(coeffs), true);
        layer.edges.push_back(std::move(edge));
      }
    }
    layer.bias = Tensor::zeros({layer.out_width}, true);
    net.layers.push_back(std::move(layer));
  }
  net.normalizer.min.assign(static_cast<size_t>(widths[0]), -1.0);
  net.normalizer.max.assign(static_cast<size_t>(widths[0]), 1.0);
  return net;
}

std::vector<Tensor> KanNetwork::parameters() const {
  std::vector<Tensor> out;
  for (const KanLayer& layer : layers) {
    for (const KanEdge& edge : layer.edges) {
      out.push_back(edge.base_weight);
      out.push_back(edge.spline_weight);
      out.push_back(edge.coefficients);
    }
    out.push_back(layer.bias);
  }
  return out;
}

std::vector<double> kan_eval(const KanNetwork& net, const std::vector<double>& input) {
  if (static_cast<int>(input.size()) != net.widths[0])
    throw std::invalid_argument("kan_eval: input width " + std::to_string(input.size()) +
                                " does not match n_0 = " + std::to_string(net.widths[0]));
  std::vector<double> x(input.size());
  for (std::size_t i = 0; i < input.size(); ++i)
    x[i] = net.normalizer.apply(static_cast<int>(i), input[i]);
  for (const KanLayer& layer : net.layers) {
    std::vector<double> y(static_cast<size_t>(layer.out_width));
    for (int j = 0; j < layer.out_width; ++j) {
      double acc = layer.bias.value_at(j);
      for (int i = 0; i < layer.in_width; ++i)
        acc += edge_eval(layer.edge(i, j), x[static_cast<size_t>(i)], net.grid);
      y[static_cast<size_t>(j)] = acc;
    }
    x = std::move(y);
  }
  return x;
}

namespace {

// Basis row [1 x B] for a scalar tape tensor, with the analytic derivative
// carried into backward.
Tensor basis_row_op(const Tensor& x_scalar, const BSplineGrid& grid) {
  const double xv = x_scalar.item();
  const std::vector<double> values = bspline_basis(xv, grid);
  const std::vector<double> derivs = bspline_basis_derivative(xv, grid);
  ArrayX out(grid.basis_count());
  for (int m = 0; m < grid.basis_count(); ++m) out(m) = values[static_cast<size_t>(m)];
  return custom_op({x_scalar}, {1, grid.basis_count()}, std::move(out),
                   [derivs](const ArrayX& grad_out, const std::vector<Tensor>& inputs) {
                     double dx = 0.0;
                     for (Eigen::Index m = 0; m < grad_out.size(); ++m)
                       dx += grad_out(m) * derivs[static_cast<size_t>(m)];
                     add_grad(inputs[0], ArrayX::Constant(1, dx));
                   });
}

}  // namespace

Tensor kan_forward(const KanNetwork& net, const Tensor& input) {
  if (input.rank() != 1 || input.dim(0) != net.widths[0])
    throw std::invalid_argument("kan_forward: input shape " + shape_to_string(input.shape()) +
                                " does not match n_0 = " + std::to_string(net.widths[0]));
  const int n0 = net.widths[0];
  ArrayX scale(n0), offset(n0);
  for (int i = 0; i < n0; ++i) net.normalizer.scale_offset(i, scale(i), offset(i));
  Tensor x = input * Tensor::from_flat({n0}, std::move(scale)) +
             Tensor::from_flat({n0}, std::move(offset));

  const int basis_count = net.grid.basis_count();
  for (const KanLayer& layer : net.layers) {
    std::vector<Tensor> silu_xi(static_cast<size_t>(layer.in_width));
    std::vector<Tensor> basis_i(static_cast<size_t>(layer.in_width));
    for (int i = 0; i < layer.in_width; ++i) {
      Tensor xi = gather_rows(x, {i});
      silu_xi[static_cast<size_t>(i)] = silu(xi);
      basis_i[static_cast<size_t>(i)] = basis_row_op(xi, net.grid);
    }
    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<size_t>(layer.out_width));
    for (int j = 0; j < layer.out_width; ++j) {
      Tensor acc;
      for (int i = 0; i < layer.in_width; ++i) {
        const KanEdge& edge = layer.edge(i, j);
        Tensor spline = reshape(
            matmul(basis_i[static_cast<size_t>(i)], reshape(edge.coefficients, {basis_count, 1})),
            {1});
        Tensor term =
            edge.base_weight * silu_xi[static_cast<size_t>(i)] + edge.spline_weight * spline;
        acc = acc.defined() ? acc + term : term;
      }
      outputs.push_back(acc);
    }
    x = concat(outputs, 0) + layer.bias;
  }
  return x;
}

long param_count(const KanNetwork& net) {
  long total = 0;
  const long per_edge = net.grid.basis_count() + 2;
  for (const KanLayer& layer : net.layers)
    total += static_cast<long>(layer.in_width) * layer.out_width * per_edge + layer.out_width;
  return total;
}

// --- symbolic fitting ------------------------------------------------------

const char* primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Affine: return "affine";
    case PrimitiveKind::Abs: return "abs";
    case PrimitiveKind::Square: return "square";
    case PrimitiveKind::Exp: return "exp";
    case PrimitiveKind::Log: return "log";
    case PrimitiveKind::Reciprocal: return "reciprocal";
    case PrimitiveKind::Silu: return "silu";
  }
  return "?";
}

namespace {

ArrayX apply_primitive(PrimitiveKind kind, const ArrayX& t) {
  switch (kind) {
    case PrimitiveKind::Affine: return t;
    case PrimitiveKind::Abs: return t.abs();
    case PrimitiveKind::Square: return t.square();
    case PrimitiveKind::Exp: return t.exp();
    case PrimitiveKind::Log: return t.log();
    case PrimitiveKind::Reciprocal: return t.inverse();
    case PrimitiveKind::Silu: return t / (1.0 + (-t).exp());
  }
  return t;
}

double apply_primitive(PrimitiveKind kind, double t) {
  switch (kind) {
    case PrimitiveKind::Affine: return t;
    case PrimitiveKind::Abs: return std::abs(t);
    case PrimitiveKind::Square: return t * t;
    case PrimitiveKind::Exp: return std::exp(t);
    case PrimitiveKind::Log: return std::log(t);
    case PrimitiveKind::Reciprocal: return 1.0 / t;
    case PrimitiveKind::Silu: return silu_value(t);
  }
  return t;
}

struct CandidateFit {
  double a = 1.0, b = 0.0, c = 0.0, e = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

// Linear solve for (c, e) given the inner affine; skipped when the primitive
// blows up on these samples.
void score_candidate(PrimitiveKind kind, double a, double b, const ArrayX& xs, const ArrayX& ys,
                     double ybar, CandidateFit& best) {
  const ArrayX v = apply_primitive(kind, a * xs + b);
  if (!v.allFinite() || v.abs().maxCoeff() > 1e10) return;
  const double vbar = v.mean();
  const ArrayX vc = v - vbar;
  const double var = vc.square().sum();
  const double cov = (vc * (ys - ybar)).sum();
  const double c = var > 1e-14 ? cov / var : 0.0;
  const double e = ybar - c * vbar;
  const double sse = (c * v + e - ys).square().sum();
  if (sse < best.sse) best = CandidateFit{a, b, c, e, sse};
}

std::string num2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  if (std::string(buf) == "-0.00") return "0.00";
  return buf;
}

std::string inner_affine_text(double a, double b, const std::string& arg) {
  std::string out = num2(a) + "*" + arg;
  if (std::abs(b) >= 0.005) out += (b > 0 ? " + " : " - ") + num2(std::abs(b));
  return out;
}

}  // namespace

double PrimitiveFit::eval(double x) const { return c * apply_primitive(kind, a * x + b) + e; }

std::string PrimitiveFit::render(const std::string& argument) const {
  const std::string inner = inner_affine_text(a, b, argument);
  switch (kind) {
    case PrimitiveKind::Affine:
      return num2(c * a) + "*" + argument;  // c*b folds into the sum constant
    case PrimitiveKind::Abs:
      return num2(c) + "*|" + inner + "|";
    case PrimitiveKind::Square:
      return num2(c) + "*(" + inner + ")^2";
    case PrimitiveKind::Exp:
      return num2(c * std::exp(b)) + "*exp(" + num2(a) + "*" + argument + ")";
    case PrimitiveKind::Log:
      return num2(c) + "*log(" + inner + ")";
    case PrimitiveKind::Reciprocal:
      return num2(c) + "/(" + inner + ")";
    case PrimitiveKind::Silu:
      return num2(c) + "*silu(" + inner + ")";
  }
  return "?";
}

namespace {

constexpr int kFitSamples = 256;

void sample_edge(const KanEdge& edge, const BSplineGrid& grid, ArrayX& xs, ArrayX& ys) {
  xs.resize(kFitSamples);
  ys.resize(kFitSamples);
  for (int s = 0; s < kFitSamples; ++s) {
    xs(s) = grid.lower + (grid.upper - grid.lower) * s / (kFitSamples - 1);
    ys(s) = edge_eval(edge, xs(s), grid);
  }
}

// 64 log-spaced slope magnitudes with both signs, 33 uniform offsets,
// followed by four rounds of local refinement.
CandidateFit search_kind(PrimitiveKind kind, const ArrayX& xs, const ArrayX& ys, double ybar) {
  static const std::vector<double>& slopes = []() -> const std::vector<double>& {
    static std::vector<double> s;
    for (int i = 0; i < 64; ++i) {
      const double mag = 0.05 * std::pow(20.0 / 0.05, i / 63.0);
      s.push_back(mag);
      s.push_back(-mag);
    }
    return s;
  }();
  CandidateFit cand;
  for (double a : slopes)
    for (int i = 0; i < 33; ++i) score_candidate(kind, a, -4.0 + 8.0 * i / 32.0, xs, ys, ybar, cand);
  if (!std::isfinite(cand.sse)) return cand;
  double da = std::max(0.3 * std::abs(cand.a), 0.02), db = 0.3;
  for (int round = 0; round < 4; ++round) {
    const CandidateFit center = cand;
    for (int ia = -4; ia <= 4; ++ia)
      for (int ib = -4; ib <= 4; ++ib)
        score_candidate(kind, center.a + da * ia / 4.0, center.b + db * ib / 4.0, xs, ys, ybar,
                        cand);
    da /= 4.0;
    db /= 4.0;
  }
  return cand;
}

PrimitiveFit finish_fit(PrimitiveKind kind, const CandidateFit& cand, const ArrayX& xs,
                        const ArrayX& ys, double ybar, double sst) {
  PrimitiveFit fit;
  fit.kind = kind;
  double sse = cand.sse;
  if (std::isfinite(sse)) {
    fit.a = cand.a;
    fit.b = cand.b;
    fit.c = cand.c;
    fit.e = cand.e;
  } else {  // primitive degenerate on these samples; constant fallback
    fit.kind = PrimitiveKind::Affine;
    fit.c = 0.0;
    fit.e = ybar;
    sse = sst;
  }
  if (fit.kind == PrimitiveKind::Abs && fit.c != 0.0) {
    // c*|a*x+b| is invariant under (a,b,c) -> (la, lb, c/l); canonical |c|=1
    fit.a *= std::abs(fit.c);
    fit.b *= std::abs(fit.c);
    fit.c = fit.c > 0 ? 1.0 : -1.0;
  }
  fit.rmse = std::sqrt(sse / kFitSamples);
  fit.r2 = sst > 1e-12 ? 1.0 - sse / sst : (sse < 1e-9 ? 1.0 : 0.0);
  double max_res = 0.0;
  for (int s = 0; s < kFitSamples; ++s)
    max_res = std::max(max_res, std::abs(fit.eval(xs(s)) - ys(s)));
  fit.max_residual = max_res;
  return fit;
}

}  // namespace

PrimitiveFit fit_edge_symbolic(const KanEdge& edge, const BSplineGrid& grid) {
  ArrayX xs, ys;
  sample_edge(edge, grid, xs, ys);
  const double ybar = ys.mean();
  const double sst = (ys - ybar).square().sum();

  static constexpr PrimitiveKind kLibrary[] = {
      PrimitiveKind::Affine, PrimitiveKind::Abs,  PrimitiveKind::Square,     PrimitiveKind::Exp,
      PrimitiveKind::Log,    PrimitiveKind::Silu, PrimitiveKind::Reciprocal};

  PrimitiveKind best_kind = PrimitiveKind::Affine;
  CandidateFit best;
  for (PrimitiveKind kind : kLibrary) {
    const CandidateFit cand = search_kind(kind, xs, ys, ybar);
    if (cand.sse < best.sse - 1e-12) {
      best = cand;
      best_kind = kind;
    }
  }
  return finish_fit(best_kind, best, xs, ys, ybar, sst);
}

PrimitiveFit fit_edge_primitive(const KanEdge& edge, const BSplineGrid& grid, PrimitiveKind kind) {
  ArrayX xs, ys;
  sample_edge(edge, grid, xs, ys);
  const double ybar = ys.mean();
  const double sst = (ys - ybar).square().sum();
  return finish_fit(kind, search_kind(kind, xs, ys, ybar), xs, ys, ybar, sst);
}

// --- formula extraction ------------------------------------------------------

namespace {

double eval_node(const FormulaNode& node, const std::vector<double>& inputs) {
  switch (node.kind) {
    case FormulaNode::Kind::Input:
      return inputs[static_cast<size_t>(node.input)];
    case FormulaNode::Kind::Constant:
      return node.constant;
    case FormulaNode::Kind::Sum: {
      double acc = node.constant;
      for (const auto& term : node.terms) acc += eval_node(*term, inputs);
      return acc;
    }
    case FormulaNode::Kind::Primitive:
      return node.fit.eval(eval_node(*node.argument, inputs));
  }
  return 0.0;
}

std::string render_node(const FormulaNode& node);

std::string render_argument(const FormulaNode& node) {
  if (node.kind == FormulaNode::Kind::Input) return node.input_name;
  return "(" + render_node(node) + ")";
}

std::string render_node(const FormulaNode& node) {
  switch (node.kind) {
    case FormulaNode::Kind::Input:
      return node.input_name;
    case FormulaNode::Kind::Constant:
      return num2(node.constant);
    case FormulaNode::Kind::Primitive:
      return node.fit.render(render_argument(*node.argument));
    case FormulaNode::Kind::Sum:
      break;
  }
  // Sum: significant terms joined by sign; affine c*b offsets and the node
  // constant merge into one trailing constant.
  double folded = node.constant;
  std::vector<std::string> parts;
  for (const auto& term : node.terms) {
    if (term->kind == FormulaNode::Kind::Primitive) {
      const PrimitiveFit& f = term->fit;
      if (f.kind == PrimitiveKind::Affine) folded += f.c * f.b;
      const double lead = f.kind == PrimitiveKind::Affine ? f.c * f.a
                          : f.kind == PrimitiveKind::Exp  ? f.c * std::exp(f.b)
                                                          : f.c;
      if (std::abs(lead) < 0.005) continue;  // rounds to 0.00
      parts.push_back(f.render(render_argument(*term->argument)));
    } else {
      parts.push_back(render_node(*term));
    }
  }
  std::string out;
  for (const std::string& part : parts) {
    if (out.empty()) {
      out = part;
    } else if (!part.empty() && part[0] == '-') {
      out += " - " + part.substr(1);
    } else {
      out += " + " + part;
    }
  }
  if (out.empty()) return num2(folded);
  if (std::abs(folded) >= 0.005) out += (folded > 0 ? " + " : " - ") + num2(std::abs(folded));
  return out;
}

}  // namespace

double SymbolicFormula::eval(const std::vector<double>& inputs) const {
  return eval_node(*root, inputs);
}

double SymbolicFormula::composed_fit_error() const {
  double total = 0.0;
  for (const PrimitiveFit& fit : edge_fits) total += fit.rmse;
  return total;
}

double SymbolicFormula::composed_residual_bound() const {
  double total = 0.0;
  for (const PrimitiveFit& fit : edge_fits) total += fit.max_residual;
  return total;
}

SymbolicFormula extract_formula(const KanNetwork& net,
                                const std::vector<std::string>& input_names) {
  if (static_cast<int>(input_names.size()) != net.widths[0])
    throw std::invalid_argument("extract_formula: " + std::to_string(input_names.size()) +
                                " names for " + std::to_string(net.widths[0]) + " inputs");
  if (net.widths.back() != 1)
    throw std::invalid_argument("extract_formula: network must have a scalar output");

  SymbolicFormula formula;
  formula.input_names = input_names;

  std::vector<std::shared_ptr<FormulaNode>> nodes;
  for (int i = 0; i < net.widths[0]; ++i) {
    auto node = std::make_shared<FormulaNode>();
    node->kind = FormulaNode::Kind::Input;
    node->input = i;
    node->input_name = input_names[static_cast<size_t>(i)];
    nodes.push_back(std::move(node));
  }

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const KanLayer& layer = net.layers[l];
    std::vector<std::shared_ptr<FormulaNode>> next;
    for (int j = 0; j < layer.out_width; ++j) {
      auto sum = std::make_shared<FormulaNode>();
      sum->kind = FormulaNode::Kind::Sum;
      sum->constant = layer.bias.value_at(j);
      for (int i = 0; i < layer.in_width; ++i) {
        PrimitiveFit fit = fit_edge_symbolic(layer.edge(i, j), net.grid);
        formula.edge_fits.push_back(fit);
        PrimitiveFit tree_fit = fit;
        if (l == 0) {
          // the input normalizer is affine, so it folds into the inner affine
          double scale = 0.0, offset = 0.0;
          net.normalizer.scale_offset(i, scale, offset);
          tree_fit.b = tree_fit.a * offset + tree_fit.b;
          tree_fit.a = tree_fit.a * scale;
        }
        sum->constant += tree_fit.e;
        tree_fit.e = 0.0;
        auto term = std::make_shared<FormulaNode>();
        term->kind = FormulaNode::Kind::Primitive;
        term->fit = tree_fit;
        term->argument = nodes[static_cast<size_t>(i)];
        sum->terms.push_back(std::move(term));
      }
      next.push_back(std::move(sum));
    }
    nodes = std::move(next);
  }

  formula.root = nodes[0];
  formula.text = render_node(*formula.root);
  return formula;
}

}  // namespace prokcat
