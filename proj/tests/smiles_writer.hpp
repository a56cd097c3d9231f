#pragma once

// Test-only utility: re-emits a parsed MolGraph as a SMILES string using a
// randomized traversal (random root, random neighbor order). Parsing the
// emitted string visits atoms in a permuted order, which is exactly what the
// atom-order invariance tests need. Returns the emission order so tests know
// the permutation that was applied.

#include "prokcat/smiles.hpp"
#include "prokcat/rng.hpp"

#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace smilestest {

struct WrittenSmiles {
  std::string text;
  std::vector<int> emission_order;  // emission_order[k] = original atom index of k-th written atom
};

class RandomWriter {
 public:
  RandomWriter(const prokcat::MolGraph& g, std::mt19937_64& rng) : g_(g), rng_(rng) {}

  WrittenSmiles write() {
    visited_.assign(g_.atoms.size(), false);
    out_.clear();
    order_.clear();
    ring_digit_by_bond_.assign(g_.bonds.size(), 0);
    bond_used_.assign(g_.bonds.size(), false);
    used_digits_.clear();

    std::vector<int> roots(g_.atoms.size());
    for (std::size_t i = 0; i < roots.size(); ++i) roots[i] = static_cast<int>(i);
    prokcat::rng::shuffle(roots, rng_);

    bool first_component = true;
    for (int root : roots) {
      if (visited_[static_cast<size_t>(root)]) continue;
      if (!first_component) out_ += '.';
      first_component = false;
      plan_component(root);
      emit_atom(root, -1);
    }
    return WrittenSmiles{out_, order_};
  }

 private:
  // First pass: mark which bonds become ring closures for this traversal and
  // reserve their digits, so digits can be emitted at both endpoints.
  void plan_component(int root) {
    std::vector<bool> seen(g_.atoms.size(), false);
    std::vector<int> stack = {root};
    seen[static_cast<size_t>(root)] = true;
    std::vector<bool> edge_done(g_.bonds.size(), false);
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int bi : g_.incident_bonds[static_cast<size_t>(u)]) {
        if (edge_done[static_cast<size_t>(bi)]) continue;
        edge_done[static_cast<size_t>(bi)] = true;
        const auto& b = g_.bonds[static_cast<size_t>(bi)];
        const int v = b.a == u ? b.b : b.a;
        if (seen[static_cast<size_t>(v)]) {
          ring_digit_by_bond_[static_cast<size_t>(bi)] = allocate_digit();
        } else {
          seen[static_cast<size_t>(v)] = true;
          stack.push_back(v);
        }
      }
    }
  }

  int allocate_digit() {
    for (int d = 1; d < 100; ++d) {
      if (!used_digits_.count(d)) {
        used_digits_.insert(d);
        return d;
      }
    }
    throw std::runtime_error("random writer: ran out of ring digits");
  }

  void emit_bond_symbol(const prokcat::Bond& b) {
    const auto& aa = g_.atoms[static_cast<size_t>(b.a)];
    const auto& ab = g_.atoms[static_cast<size_t>(b.b)];
    switch (b.order) {
      case prokcat::BondOrder::Single:
        if (aa.aromatic && ab.aromatic) out_ += '-';  // default would be aromatic
        break;
      case prokcat::BondOrder::Double: out_ += '='; break;
      case prokcat::BondOrder::Triple: out_ += '#'; break;
      case prokcat::BondOrder::Aromatic: break;  // default between aromatic atoms
    }
  }

  void emit_digit(int d) {
    if (d < 10) {
      out_ += static_cast<char>('0' + d);
    } else {
      out_ += '%';
      out_ += static_cast<char>('0' + d / 10);
      out_ += static_cast<char>('0' + d % 10);
    }
  }

  void emit_atom_symbol(const prokcat::Atom& a) {
    if (a.bracket) {
      out_ += '[';
      std::string sym = a.element;
      if (a.aromatic) sym[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(sym[0])));
      out_ += sym;
      if (a.explicit_h == 1) {
        out_ += 'H';
      } else if (a.explicit_h > 1) {
        out_ += 'H';
        out_ += std::to_string(a.explicit_h);
      }
      if (a.formal_charge > 0) {
        out_ += '+';
        if (a.formal_charge > 1) out_ += std::to_string(a.formal_charge);
      } else if (a.formal_charge < 0) {
        out_ += '-';
        if (a.formal_charge < -1) out_ += std::to_string(-a.formal_charge);
      }
      out_ += ']';
    } else if (a.aromatic) {
      for (char c : a.element)
        out_ += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      out_ += a.element;
    }
  }

  void emit_atom(int u, int parent_bond) {
    visited_[static_cast<size_t>(u)] = true;
    order_.push_back(u);
    emit_atom_symbol(g_.atoms[static_cast<size_t>(u)]);

    // ring-closure digits at this atom
    std::vector<int> closures;
    std::vector<int> tree_children;
    std::vector<int> nb = g_.incident_bonds[static_cast<size_t>(u)];
    prokcat::rng::shuffle(nb, rng_);
    for (int bi : nb) {
      if (bi == parent_bond) continue;
      if (ring_digit_by_bond_[static_cast<size_t>(bi)] > 0) {
        closures.push_back(bi);
      } else {
        tree_children.push_back(bi);
      }
    }
    for (int bi : closures) {
      emit_bond_symbol(g_.bonds[static_cast<size_t>(bi)]);
      emit_digit(ring_digit_by_bond_[static_cast<size_t>(bi)]);
      bond_used_[static_cast<size_t>(bi)] = true;
    }
    for (std::size_t k = 0; k < tree_children.size(); ++k) {
      const int bi = tree_children[k];
      const auto& b = g_.bonds[static_cast<size_t>(bi)];
      const int v = b.a == u ? b.b : b.a;
      const bool last = k + 1 == tree_children.size();
      if (!last) out_ += '(';
      emit_bond_symbol(b);
      emit_atom(v, bi);
      if (!last) out_ += ')';
    }
  }

  const prokcat::MolGraph& g_;
  std::mt19937_64& rng_;
  std::vector<bool> visited_;
  std::vector<int> order_;
  std::vector<int> ring_digit_by_bond_;
  std::vector<bool> bond_used_;
  std::set<int> used_digits_;
  std::string out_;
};

inline WrittenSmiles write_random_smiles(const prokcat::MolGraph& g, std::mt19937_64& rng) {
  return RandomWriter(g, rng).write();
}

}  // namespace smilestest
