#pragma once

#include "prokcat/smiles.hpp"
#include "prokcat/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prokcat {

struct FingerprintBits {
  std::vector<bool> bits;  // length n_bits, default 1024
  int set_count = 0;

  int size() const { return static_cast<int>(bits.size()); }
};

/// Stable 64-bit hash of (element, heavy degree, total H count, formal
/// charge, aromatic flag, ring flag). Identical tuples hash identically
/// across runs and platforms (FNV-1a, unseeded).
std::uint64_t initial_invariant(const MolGraph& graph, int atom_index);

/// Morgan-style circular fingerprint. Each round rehashes every atom from
/// (round, own identifier, sorted (bond code, neighbor identifier) list);
/// identifiers from rounds 0..radius fold modulo n_bits. A round-r feature is
/// dropped when its environment atom-set duplicates one already emitted
/// (keeping the smallest identifier), so saturated neighborhoods do not set
/// spurious bits.
FingerprintBits ecfp(const MolGraph& graph, int radius = 2, int n_bits = 1024);

/// 0.0/1.0 vector of length n_bits.
Tensor fingerprint_to_tensor(const FingerprintBits& fp);

/// Hex string, 4 bits per char; bit 0 is the most significant bit of the
/// first character. 1024 bits -> 256 chars.
std::string fingerprint_to_hex(const FingerprintBits& fp);

}  // namespace prokcat
