#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace prokcat {

enum class BondOrder { Single, Double, Triple, Aromatic };

/// Numeric code used in fingerprint hashing and valence sums.
double bond_order_value(BondOrder order);

struct Atom {
  std::string element;     // symbol as in the periodic table, e.g. "C", "Cl"
  bool aromatic = false;
  int formal_charge = 0;
  int explicit_h = 0;      // bracket H count; always 0 for organic-subset atoms
  bool ring_member = false;
  int index = 0;
  bool bracket = false;
  int implicit_h = 0;      // standard-valence fill for non-bracket atoms
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<std::vector<int>> adjacency;       // neighbor atom indices
  std::vector<std::vector<int>> incident_bonds;  // bond indices, parallel to adjacency

  int atom_count() const { return static_cast<int>(atoms.size()); }
  int bond_count() const { return static_cast<int>(bonds.size()); }
  int degree(int atom) const { return static_cast<int>(adjacency[static_cast<size_t>(atom)].size()); }
};

enum class SmilesErrorKind {
  EmptyInput,
  UnbalancedParenthesis,
  UnmatchedRingClosure,
  UnknownElement,
  InvalidBracketAtom,
  InvalidBond,
  DuplicateBond,
  InvalidCharge,
  UnexpectedCharacter,
};

class SmilesError : public std::runtime_error {
 public:
  SmilesError(SmilesErrorKind kind, std::size_t offset, const std::string& message)
      : std::runtime_error(message + " (at offset " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  SmilesErrorKind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  SmilesErrorKind kind_;
  std::size_t offset_;
};

/// Parses a SMILES string into a molecular graph. Atoms appear in
/// first-encounter order; ring-closure digits are matched into bonds;
/// stereo markers and isotope labels are accepted and discarded.
/// Throws SmilesError with a character offset on malformed input.
MolGraph parse_smiles(const std::string& smiles);

/// Width of atom_feature_vector: 11 element one-hots (organic subset +
/// other), 6 degree one-hots (0-5, clamped), aromatic flag, formal charge
/// scaled by 1/4, ring flag, explicit-H count scaled by 1/4.
inline constexpr int kAtomFeatureWidth = 21;

std::vector<double> atom_feature_vector(const Atom& atom, const MolGraph& graph);

}  // namespace prokcat
