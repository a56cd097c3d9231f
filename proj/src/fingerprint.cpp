#include "prokcat/fingerprint.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <set>
#include <stdexcept>

namespace prokcat {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

struct Fnv1a {
  std::uint64_t h = kFnvOffset;

  void byte(std::uint8_t b) {
    h ^= b;
    h *= kFnvPrime;
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    for (char c : s) byte(static_cast<std::uint8_t>(c));
    byte(0);
  }
};

std::uint8_t bond_code(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 1;
    case BondOrder::Double: return 2;
    case BondOrder::Triple: return 3;
    case BondOrder::Aromatic: return 4;
  }
  return 1;
}

// Atoms within graph distance <= radius of the center, as a sorted list.
std::vector<int> environment(const MolGraph& g, int center, int radius) {
  std::vector<int> dist(g.atoms.size(), -1);
  std::deque<int> queue = {center};
  dist[static_cast<size_t>(center)] = 0;
  std::vector<int> env = {center};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (dist[static_cast<size_t>(u)] == radius) continue;
    for (int v : g.adjacency[static_cast<size_t>(u)]) {
      if (dist[static_cast<size_t>(v)] != -1) continue;
      dist[static_cast<size_t>(v)] = dist[static_cast<size_t>(u)] + 1;
      env.push_back(v);
      queue.push_back(v);
    }
  }
  std::sort(env.begin(), env.end());
  return env;
}

}  // namespace

std::uint64_t initial_invariant(const MolGraph& graph, int atom_index) {
  if (atom_index < 0 || atom_index >= graph.atom_count())
    throw std::invalid_argument("initial_invariant: atom index " + std::to_string(atom_index) +
                                " out of range");
  const Atom& a = graph.atoms[static_cast<size_t>(atom_index)];
  Fnv1a hash;
  hash.str(a.element);
  hash.byte(static_cast<std::uint8_t>(graph.degree(atom_index)));
  hash.byte(static_cast<std::uint8_t>(a.explicit_h + a.implicit_h));
  hash.byte(static_cast<std::uint8_t>(a.formal_charge + 8));
  hash.byte(a.aromatic ? 1 : 0);
  hash.byte(a.ring_member ? 1 : 0);
  return hash.h;
}

FingerprintBits ecfp(const MolGraph& graph, int radius, int n_bits) {
  if (radius < 0) throw std::invalid_argument("ecfp: radius must be >= 0");
  if (n_bits <= 0 || (n_bits & (n_bits - 1)) != 0)
    throw std::invalid_argument("ecfp: n_bits must be a power of two, got " + std::to_string(n_bits));

  const int n = graph.atom_count();
  std::vector<std::uint64_t> ids(static_cast<size_t>(n));
  std::vector<std::uint64_t> features;
  for (int i = 0; i < n; ++i) {
    ids[static_cast<size_t>(i)] = initial_invariant(graph, i);
    features.push_back(ids[static_cast<size_t>(i)]);
  }

  // Round-0 environments are the singleton atom sets.
  std::set<std::vector<int>> seen_envs;
  for (int i = 0; i < n; ++i) seen_envs.insert({i});

  for (int round = 1; round <= radius; ++round) {
    std::vector<std::uint64_t> next(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<std::uint8_t, std::uint64_t>> neighbors;
      for (int bi : graph.incident_bonds[static_cast<size_t>(i)]) {
        const Bond& b = graph.bonds[static_cast<size_t>(bi)];
        const int other = b.a == i ? b.b : b.a;
        neighbors.emplace_back(bond_code(b.order), ids[static_cast<size_t>(other)]);
      }
      std::sort(neighbors.begin(), neighbors.end());
      Fnv1a hash;
      hash.u32(static_cast<std::uint32_t>(round));
      hash.u64(ids[static_cast<size_t>(i)]);
      for (const auto& [code, id] : neighbors) {
        hash.byte(code);
        hash.u64(id);
      }
      next[static_cast<size_t>(i)] = hash.h;
    }
    // One feature per new environment; the smallest identifier represents it
    // so the choice is independent of atom ordering.
    std::map<std::vector<int>, std::uint64_t> round_envs;
    for (int i = 0; i < n; ++i) {
      std::vector<int> env = environment(graph, i, round);
      auto [it, inserted] = round_envs.try_emplace(std::move(env), next[static_cast<size_t>(i)]);
      if (!inserted) it->second = std::min(it->second, next[static_cast<size_t>(i)]);
    }
    for (auto& [env, id] : round_envs) {
      if (seen_envs.insert(env).second) features.push_back(id);
    }
    ids = std::move(next);
  }

  FingerprintBits fp;
  fp.bits.assign(static_cast<size_t>(n_bits), false);
  for (std::uint64_t f : features)
    fp.bits[static_cast<size_t>(f % static_cast<std::uint64_t>(n_bits))] = true;
  fp.set_count = static_cast<int>(std::count(fp.bits.begin(), fp.bits.end(), true));
  return fp;
}

Tensor fingerprint_to_tensor(const FingerprintBits& fp) {
  ArrayX values(fp.size());
  for (int i = 0; i < fp.size(); ++i) values(i) = fp.bits[static_cast<size_t>(i)] ? 1.0 : 0.0;
  return Tensor::from_flat({fp.size()}, std::move(values));
}

std::string fingerprint_to_hex(const FingerprintBits& fp) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(static_cast<size_t>(fp.size()) / 4);
  for (int j = 0; j + 3 < fp.size(); j += 4) {
    int nibble = 0;
    for (int k = 0; k < 4; ++k) nibble = (nibble << 1) | (fp.bits[static_cast<size_t>(j + k)] ? 1 : 0);
    out += digits[nibble];
  }
  return out;
}

}  // namespace prokcat
