#include "prokcat/smiles.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>

namespace prokcat {

namespace {

const std::set<std::string>& periodic_table() {
  static const std::set<std::string> table = {
      "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si",
      "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni",
      "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo",
      "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba",
      "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
      "Lu", "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po",
      "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf",
      "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
      "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};
  return table;
}

struct RingOpening {
  int atom = 0;
  std::optional<BondOrder> order;
  std::size_t offset = 0;
};

struct Parser {
  const std::string& s;
  std::size_t i = 0;
  MolGraph graph;
  int prev_atom = -1;
  std::optional<BondOrder> pending_bond;
  std::size_t pending_bond_offset = 0;
  std::vector<std::pair<int, std::size_t>> branch_stack;  // (prev atom, '(' offset)
  std::map<int, RingOpening> ring_openings;

  explicit Parser(const std::string& text) : s(text) {}

  [[noreturn]] void fail(SmilesErrorKind kind, std::size_t offset, const std::string& msg) {
    throw SmilesError(kind, offset, msg);
  }

  bool at_end() const { return i >= s.size(); }
  char peek() const { return s[i]; }

  int add_atom(Atom atom) {
    atom.index = graph.atom_count();
    graph.atoms.push_back(std::move(atom));
    return graph.atom_count() - 1;
  }

  void add_bond(int a, int b, BondOrder order, std::size_t offset) {
    if (a == b) fail(SmilesErrorKind::DuplicateBond, offset, "ring closure bonds an atom to itself");
    for (const Bond& bond : graph.bonds) {
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a))
        fail(SmilesErrorKind::DuplicateBond, offset,
             "duplicate bond between atoms " + std::to_string(a) + " and " + std::to_string(b));
    }
    if (order == BondOrder::Aromatic &&
        !(graph.atoms[static_cast<size_t>(a)].aromatic && graph.atoms[static_cast<size_t>(b)].aromatic))
      fail(SmilesErrorKind::InvalidBond, offset, "aromatic bond between non-aromatic atoms");
    graph.bonds.push_back(Bond{a, b, order});
  }

  BondOrder default_order(int a, int b) const {
    const bool both_aromatic = graph.atoms[static_cast<size_t>(a)].aromatic &&
                               graph.atoms[static_cast<size_t>(b)].aromatic;
    return both_aromatic ? BondOrder::Aromatic : BondOrder::Single;
  }

  void connect(int next_atom, std::size_t offset) {
    if (prev_atom >= 0) {
      const BondOrder order = pending_bond ? *pending_bond : default_order(prev_atom, next_atom);
      add_bond(prev_atom, next_atom, order, pending_bond ? pending_bond_offset : offset);
    } else if (pending_bond) {
      fail(SmilesErrorKind::InvalidBond, pending_bond_offset, "bond with no preceding atom");
    }
    pending_bond.reset();
    prev_atom = next_atom;
  }

  void handle_ring_digit(int digit, std::size_t offset) {
    if (prev_atom < 0)
      fail(SmilesErrorKind::UnmatchedRingClosure, offset, "ring closure with no preceding atom");
    auto it = ring_openings.find(digit);
    if (it == ring_openings.end()) {
      ring_openings[digit] = RingOpening{prev_atom, pending_bond, offset};
      pending_bond.reset();
      return;
    }
    RingOpening open = it->second;
    ring_openings.erase(it);
    std::optional<BondOrder> order;
    if (open.order && pending_bond && *open.order != *pending_bond)
      fail(SmilesErrorKind::InvalidBond, offset, "conflicting bond orders on ring closure");
    if (open.order) order = open.order;
    if (pending_bond) order = pending_bond;
    add_bond(open.atom, prev_atom, order ? *order : default_order(open.atom, prev_atom), offset);
    pending_bond.reset();
  }

  void set_pending(BondOrder order, std::size_t offset) {
    if (pending_bond) fail(SmilesErrorKind::InvalidBond, offset, "two consecutive bond symbols");
    if (prev_atom < 0) fail(SmilesErrorKind::InvalidBond, offset, "bond with no preceding atom");
    pending_bond = order;
    pending_bond_offset = offset;
  }

  // Organic-subset atom outside brackets.
  void parse_plain_atom() {
    const std::size_t start = i;
    const char c = s[i];
    Atom atom;
    if (std::isupper(static_cast<unsigned char>(c))) {
      if (i + 1 < s.size() && ((c == 'C' && s[i + 1] == 'l') || (c == 'B' && s[i + 1] == 'r'))) {
        atom.element = s.substr(i, 2);
        i += 2;
      } else if (c == 'B' || c == 'C' || c == 'N' || c == 'O' || c == 'P' || c == 'S' ||
                 c == 'F' || c == 'I') {
        atom.element = std::string(1, c);
        ++i;
      } else {
        fail(SmilesErrorKind::UnknownElement, start,
             std::string("element '") + c + "' requires brackets or is unknown");
      }
    } else {
      if (c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's') {
        atom.element = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        atom.aromatic = true;
        ++i;
      } else {
        fail(SmilesErrorKind::UnknownElement, start,
             std::string("unknown aromatic symbol '") + c + "'");
      }
    }
    connect(add_atom(atom), start);
  }

  void parse_bracket_atom() {
    const std::size_t start = i;
    ++i;  // '['
    Atom atom;
    atom.bracket = true;

    // isotope (discarded)
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++i;
    if (at_end()) fail(SmilesErrorKind::InvalidBracketAtom, start, "unterminated bracket atom");

    const std::size_t sym_at = i;
    const char c = peek();
    if (std::isupper(static_cast<unsigned char>(c))) {
      std::string sym(1, c);
      ++i;
      if (!at_end() && std::islower(static_cast<unsigned char>(peek()))) {
        const std::string two = sym + peek();
        if (periodic_table().count(two)) {
          sym = two;
          ++i;
        }
      }
      if (!periodic_table().count(sym))
        fail(SmilesErrorKind::UnknownElement, sym_at, "unknown element '" + sym + "'");
      atom.element = sym;
    } else if (std::islower(static_cast<unsigned char>(c))) {
      std::string sym(1, c);
      ++i;
      if ((c == 's' || c == 'a') && !at_end() && (peek() == 'e' || peek() == 's')) {
        const std::string two = sym + peek();
        if (two == "se" || two == "as") {
          sym = two;
          ++i;
        }
      }
      static const std::set<std::string> aromatic_ok = {"b", "c", "n", "o", "p", "s", "se", "as"};
      if (!aromatic_ok.count(sym))
        fail(SmilesErrorKind::UnknownElement, sym_at, "unknown aromatic symbol '" + sym + "'");
      sym[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sym[0])));
      atom.element = sym;
      atom.aromatic = true;
    } else {
      fail(SmilesErrorKind::InvalidBracketAtom, sym_at, "expected element symbol in brackets");
    }

    bool saw_h = false, saw_charge = false;
    while (!at_end() && peek() != ']') {
      const char m = peek();
      const std::size_t mark = i;
      if (m == '@') {  // chirality (discarded)
        ++i;
        if (!at_end() && peek() == '@') ++i;
      } else if (m == 'H') {
        if (saw_h) fail(SmilesErrorKind::InvalidBracketAtom, mark, "repeated H count");
        saw_h = true;
        ++i;
        int count = 1;
        if (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) {
          count = 0;
          while (!at_end() && std::isdigit(static_cast<unsigned char>(peek())))
            count = count * 10 + (s[i++] - '0');
        }
        atom.explicit_h = count;
      } else if (m == '+' || m == '-') {
        if (saw_charge) fail(SmilesErrorKind::InvalidCharge, mark, "repeated charge");
        saw_charge = true;
        const int sign = m == '+' ? 1 : -1;
        ++i;
        int magnitude = 1;
        if (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) {
          magnitude = 0;
          while (!at_end() && std::isdigit(static_cast<unsigned char>(peek())))
            magnitude = magnitude * 10 + (s[i++] - '0');
        } else {
          while (!at_end() && peek() == m) {
            ++magnitude;
            ++i;
          }
        }
        if (magnitude > 4)
          fail(SmilesErrorKind::InvalidCharge, mark,
               "formal charge magnitude " + std::to_string(magnitude) + " exceeds 4");
        atom.formal_charge = sign * magnitude;
      } else if (m == ':') {  // atom class (discarded)
        ++i;
        if (at_end() || !std::isdigit(static_cast<unsigned char>(peek())))
          fail(SmilesErrorKind::InvalidBracketAtom, mark, "atom class expects digits");
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++i;
      } else {
        fail(SmilesErrorKind::InvalidBracketAtom, mark,
             std::string("unexpected '") + m + "' in bracket atom");
      }
    }
    if (at_end()) fail(SmilesErrorKind::InvalidBracketAtom, start, "unterminated bracket atom");
    ++i;  // ']'
    connect(add_atom(atom), start);
  }

  void run() {
    if (s.empty()) fail(SmilesErrorKind::EmptyInput, 0, "empty SMILES string");
    while (!at_end()) {
      const char c = peek();
      const std::size_t at = i;
      if (c == '(') {
        if (prev_atom < 0)
          fail(SmilesErrorKind::UnbalancedParenthesis, at, "branch with no preceding atom");
        if (pending_bond)
          fail(SmilesErrorKind::InvalidBond, pending_bond_offset, "bond before branch opening");
        branch_stack.emplace_back(prev_atom, at);
        ++i;
      } else if (c == ')') {
        if (branch_stack.empty())
          fail(SmilesErrorKind::UnbalancedParenthesis, at, "unmatched ')'");
        if (pending_bond)
          fail(SmilesErrorKind::InvalidBond, pending_bond_offset, "dangling bond before ')'");
        prev_atom = branch_stack.back().first;
        branch_stack.pop_back();
        ++i;
      } else if (c == '-') {
        set_pending(BondOrder::Single, at);
        ++i;
      } else if (c == '=') {
        set_pending(BondOrder::Double, at);
        ++i;
      } else if (c == '#') {
        set_pending(BondOrder::Triple, at);
        ++i;
      } else if (c == ':') {
        set_pending(BondOrder::Aromatic, at);
        ++i;
      } else if (c == '/' || c == '\\') {
        // stereo bond markers parse as single bonds; geometry is discarded
        set_pending(BondOrder::Single, at);
        ++i;
      } else if (c == '.') {
        if (pending_bond)
          fail(SmilesErrorKind::InvalidBond, pending_bond_offset, "bond before '.'");
        prev_atom = -1;
        ++i;
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        handle_ring_digit(c - '0', at);
        ++i;
      } else if (c == '%') {
        if (i + 2 >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i + 1])) ||
            !std::isdigit(static_cast<unsigned char>(s[i + 2])))
          fail(SmilesErrorKind::UnmatchedRingClosure, at, "'%' expects two digits");
        handle_ring_digit((s[i + 1] - '0') * 10 + (s[i + 2] - '0'), at);
        i += 3;
      } else if (c == '[') {
        parse_bracket_atom();
      } else if (std::isalpha(static_cast<unsigned char>(c))) {
        parse_plain_atom();
      } else {
        fail(SmilesErrorKind::UnexpectedCharacter, at,
             std::string("unexpected character '") + c + "'");
      }
    }
    if (pending_bond)
      fail(SmilesErrorKind::InvalidBond, pending_bond_offset, "dangling bond at end of input");
    if (!branch_stack.empty())
      fail(SmilesErrorKind::UnbalancedParenthesis, branch_stack.back().second,
           "unbalanced parenthesis");
    if (!ring_openings.empty())
      fail(SmilesErrorKind::UnmatchedRingClosure, ring_openings.begin()->second.offset,
           "unmatched ring-closure digit " + std::to_string(ring_openings.begin()->first));
    if (graph.atoms.empty()) fail(SmilesErrorKind::EmptyInput, 0, "SMILES contains no atoms");
  }
};

void build_adjacency(MolGraph& g) {
  g.adjacency.assign(g.atoms.size(), {});
  g.incident_bonds.assign(g.atoms.size(), {});
  for (int bi = 0; bi < g.bond_count(); ++bi) {
    const Bond& b = g.bonds[static_cast<size_t>(bi)];
    g.adjacency[static_cast<size_t>(b.a)].push_back(b.b);
    g.adjacency[static_cast<size_t>(b.b)].push_back(b.a);
    g.incident_bonds[static_cast<size_t>(b.a)].push_back(bi);
    g.incident_bonds[static_cast<size_t>(b.b)].push_back(bi);
  }
}

// Bridge detection; every atom incident to a non-bridge (cycle) edge is a
// ring member.
void mark_ring_members(MolGraph& g) {
  const int n = g.atom_count();
  std::vector<int> disc(static_cast<size_t>(n), -1), low(static_cast<size_t>(n), 0);
  std::vector<bool> bridge(static_cast<size_t>(g.bond_count()), false);
  int timer = 0;

  struct Frame {
    int atom;
    int in_bond;
    std::size_t next_edge = 0;
  };
  for (int root = 0; root < n; ++root) {
    if (disc[static_cast<size_t>(root)] != -1) continue;
    std::vector<Frame> stack;
    stack.push_back({root, -1});
    disc[static_cast<size_t>(root)] = low[static_cast<size_t>(root)] = timer++;
    while (!stack.empty()) {
      Frame& f = stack.back();
      const auto u = static_cast<size_t>(f.atom);
      if (f.next_edge < g.incident_bonds[u].size()) {
        const int bi = g.incident_bonds[u][f.next_edge++];
        if (bi == f.in_bond) continue;
        const Bond& b = g.bonds[static_cast<size_t>(bi)];
        const int v = b.a == f.atom ? b.b : b.a;
        const auto vu = static_cast<size_t>(v);
        if (disc[vu] == -1) {
          disc[vu] = low[vu] = timer++;
          stack.push_back({v, bi});
        } else {
          low[u] = std::min(low[u], disc[vu]);
        }
      } else {
        const int in_bond = f.in_bond;
        const int atom = f.atom;
        stack.pop_back();
        if (!stack.empty()) {
          const auto pu = static_cast<size_t>(stack.back().atom);
          low[pu] = std::min(low[pu], low[static_cast<size_t>(atom)]);
          if (low[static_cast<size_t>(atom)] > disc[pu]) bridge[static_cast<size_t>(in_bond)] = true;
        }
      }
    }
  }
  for (int bi = 0; bi < g.bond_count(); ++bi) {
    if (bridge[static_cast<size_t>(bi)]) continue;
    g.atoms[static_cast<size_t>(g.bonds[static_cast<size_t>(bi)].a)].ring_member = true;
    g.atoms[static_cast<size_t>(g.bonds[static_cast<size_t>(bi)].b)].ring_member = true;
  }
}

// Allowed valences for the organic subset; the smallest valence >= the
// rounded bond-order sum wins.
const std::vector<int>* allowed_valences(const std::string& element) {
  static const std::map<std::string, std::vector<int>> table = {
      {"B", {3}},       {"C", {4}}, {"N", {3}},  {"O", {2}},  {"P", {3, 5}},
      {"S", {2, 4, 6}}, {"F", {1}}, {"Cl", {1}}, {"Br", {1}}, {"I", {1}}};
  auto it = table.find(element);
  return it == table.end() ? nullptr : &it->second;
}

void assign_implicit_hydrogens(MolGraph& g) {
  for (Atom& atom : g.atoms) {
    if (atom.bracket) continue;  // bracket atoms take explicit counts verbatim
    const std::vector<int>* valences = allowed_valences(atom.element);
    if (valences == nullptr) continue;
    double order_sum = 0;
    for (int bi : g.incident_bonds[static_cast<size_t>(atom.index)])
      order_sum += bond_order_value(g.bonds[static_cast<size_t>(bi)].order);
    const int rounded = static_cast<int>(std::ceil(order_sum - 1e-9));
    for (int v : *valences) {
      if (v >= rounded) {
        atom.implicit_h = v - rounded;
        break;
      }
    }
  }
}

}  // namespace

double bond_order_value(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 1.0;
    case BondOrder::Double: return 2.0;
    case BondOrder::Triple: return 3.0;
    case BondOrder::Aromatic: return 1.5;
  }
  return 1.0;
}

MolGraph parse_smiles(const std::string& smiles) {
  Parser parser(smiles);
  parser.run();
  MolGraph g = std::move(parser.graph);
  build_adjacency(g);
  mark_ring_members(g);
  assign_implicit_hydrogens(g);
  return g;
}

std::vector<double> atom_feature_vector(const Atom& atom, const MolGraph& graph) {
  static const std::array<const char*, 10> organic = {"B", "C",  "N",  "O", "P",
                                                      "S", "F", "Cl", "Br", "I"};
  std::vector<double> f(kAtomFeatureWidth, 0.0);
  std::size_t slot = organic.size();  // "other"
  for (std::size_t e = 0; e < organic.size(); ++e) {
    if (atom.element == organic[e]) {
      slot = e;
      break;
    }
  }
  f[slot] = 1.0;
  const int degree = std::min(graph.degree(atom.index), 5);
  f[11 + static_cast<size_t>(degree)] = 1.0;
  f[17] = atom.aromatic ? 1.0 : 0.0;
  f[18] = static_cast<double>(atom.formal_charge) / 4.0;
  f[19] = atom.ring_member ? 1.0 : 0.0;
  f[20] = static_cast<double>(atom.explicit_h) / 4.0;
  return f;
}

}  // namespace prokcat
