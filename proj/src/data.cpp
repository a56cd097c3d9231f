#include "prokcat/data.hpp"

#include "prokcat/encoders.hpp"
#include "prokcat/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace prokcat {

namespace {

constexpr const char* kHeader = "id\tsequence\tsmiles\ttemperature_c\tkcat_s\tec_number\torganism\tph";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::string KineticRecord::base_id() const {
  const auto pos = id.find("#dup");
  return pos == std::string::npos ? id : id.substr(0, pos);
}

std::optional<int> ec_top_class(const KineticRecord& record) {
  if (!record.ec_number) return std::nullopt;
  int cls = 0;
  const std::string& ec = *record.ec_number;
  const auto dot = ec.find('.');
  const std::string head = dot == std::string::npos ? ec : ec.substr(0, dot);
  if (!head.empty()) {
    auto [ptr, err] = std::from_chars(head.data(), head.data() + head.size(), cls);
    if (err == std::errc() && ptr == head.data() + head.size()) return cls;
  }
  return std::nullopt;
}

LoadResult load_dataset(const std::string& path) { return load_dataset(path, false); }

LoadResult load_dataset(const std::string& path, bool allow_missing_kcat) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader)
    throw std::runtime_error(path + ": header mismatch, expected: " + std::string(kHeader));

  LoadResult result;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_tabs(line);
    auto reject = [&](const std::string& msg) { result.errors.push_back({line_no, msg}); };
    if (f.size() < 5 || f.size() > 8) {
      reject("expected 5 to 8 tab-separated fields, got " + std::to_string(f.size()));
      continue;
    }
    KineticRecord r;
    r.id = f[0];
    r.sequence = f[1];
    r.smiles = f[2];
    if (r.id.empty()) {
      reject("empty id");
      continue;
    }
    try {
      make_protein_sequence(r.sequence);
    } catch (const std::invalid_argument& e) {
      reject(std::string("sequence: ") + e.what());
      continue;
    }
    if (r.smiles.empty()) {
      reject("empty smiles");
      continue;
    }
    if (!parse_double(f[3], r.temperature_celsius)) {
      reject("unparseable temperature_c: " + f[3]);
      continue;
    }
    if (r.temperature_celsius < -20.0 || r.temperature_celsius > 150.0) {
      reject("temperature_c " + f[3] + " outside sanity bounds [-20, 150]");
      continue;
    }
    if (f[4].empty() && allow_missing_kcat) {
      r.kcat_per_second = 1.0;
    } else if (!parse_double(f[4], r.kcat_per_second)) {
      reject("unparseable kcat_s: " + f[4]);
      continue;
    } else if (!(r.kcat_per_second > 0.0)) {
      reject("kcat_s must be positive, got " + f[4]);
      continue;
    }
    if (f.size() > 5 && !f[5].empty()) {
      r.ec_number = f[5];
      const auto cls = ec_top_class(r);
      if (!cls || *cls < 1 || *cls > 7) {
        reject("ec_number top-level class must be 1..7: " + f[5]);
        continue;
      }
    }
    if (f.size() > 6 && !f[6].empty()) r.organism = f[6];
    if (f.size() > 7 && !f[7].empty()) {
      double ph = 0;
      if (!parse_double(f[7], ph)) {
        reject("unparseable ph: " + f[7]);
        continue;
      }
      r.ph = ph;
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

void write_dataset(const std::string& path, const std::vector<KineticRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << kHeader << '\n';
  for (const KineticRecord& r : records) {
    out << r.id << '\t' << r.sequence << '\t' << r.smiles << '\t'
        << format_double(r.temperature_celsius) << '\t' << format_double(r.kcat_per_second) << '\t'
        << (r.ec_number ? *r.ec_number : "") << '\t' << (r.organism ? *r.organism : "") << '\t'
        << (r.ph ? format_double(*r.ph) : "") << '\n';
  }
}

std::vector<KineticRecord> deduplicate(const std::vector<KineticRecord>& records) {
  std::vector<KineticRecord> out;
  std::map<std::string, std::size_t> first_slot;
  for (const KineticRecord& r : records) {
    const std::string key =
        r.sequence + '\x1f' + r.smiles + '\x1f' + format_double(r.temperature_celsius);
    auto [it, inserted] = first_slot.try_emplace(key, out.size());
    if (inserted) {
      out.push_back(r);
    } else if (r.kcat_per_second > out[it->second].kcat_per_second) {
      out[it->second] = r;
    }
  }
  return out;
}

std::vector<KineticRecord> oversample_temperature(const std::vector<KineticRecord>& records,
                                                  const OversampleOptions& options,
                                                  unsigned long long seed) {
  std::vector<KineticRecord> out = records;
  std::mt19937_64 rng(seed);

  struct Tail {
    std::vector<std::size_t> members;  // indices of base records
    std::vector<int> copies;
    std::size_t total = 0;  // records currently in this tail
    std::size_t cursor = 0;

    bool capped(int max_copies) const {
      for (int c : copies)
        if (c < max_copies) return false;
      return true;
    }
  };
  Tail low, high;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double t = records[i].temperature_celsius;
    if (t < options.low_cutoff_celsius) low.members.push_back(i);
    if (t > options.high_cutoff_celsius) high.members.push_back(i);
  }
  rng::shuffle(low.members, rng);
  rng::shuffle(high.members, rng);
  low.copies.assign(low.members.size(), 1);
  high.copies.assign(high.members.size(), 1);
  low.total = low.members.size();
  high.total = high.members.size();

  auto fraction = [&](const Tail& tail) {
    return static_cast<double>(tail.total) / static_cast<double>(out.size());
  };
  auto needs_more = [&](const Tail& tail) {
    return !tail.members.empty() && fraction(tail) < options.target_fraction &&
           !tail.capped(options.max_copies);
  };
  auto add_copy = [&](Tail& tail) {
    while (tail.copies[tail.cursor % tail.members.size()] >= options.max_copies) ++tail.cursor;
    const std::size_t slot = tail.cursor % tail.members.size();
    ++tail.cursor;
    const KineticRecord& base = records[tail.members[slot]];
    KineticRecord copy = base;
    copy.id = base.base_id() + "#dup" + std::to_string(tail.copies[slot]);
    ++tail.copies[slot];
    out.push_back(std::move(copy));
    ++tail.total;
  };

  // Alternate between unsatisfied tails (neediest first) so both hold the
  // target fraction of the final total, unless the copy cap cuts one short.
  while (needs_more(low) || needs_more(high)) {
    if (!needs_more(high)) {
      add_copy(low);
    } else if (!needs_more(low)) {
      add_copy(high);
    } else {
      add_copy(fraction(low) <= fraction(high) ? low : high);
    }
  }
  return out;
}

DatasetSplits split(const std::vector<KineticRecord>& records, unsigned long long seed) {
  if (records.size() < 10)
    throw std::invalid_argument("split: need at least 10 records, got " +
                                std::to_string(records.size()));
  // groups keyed by base id so oversampled copies never straddle splits
  std::vector<std::string> group_order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string base = records[i].base_id();
    auto [it, inserted] = groups.try_emplace(base);
    if (inserted) group_order.push_back(base);
    it->second.push_back(i);
  }
  std::mt19937_64 rng(seed);
  rng::shuffle(group_order, rng);

  const auto total = static_cast<double>(records.size());
  const auto test_target = static_cast<std::size_t>(std::llround(total * 0.10));

  DatasetSplits out;
  out.seed = seed;
  std::size_t assigned = 0, cursor = 0;
  while (assigned < test_target && cursor < group_order.size()) {
    for (std::size_t idx : groups[group_order[cursor]]) {
      out.test.push_back(records[idx]);
      ++assigned;
    }
    ++cursor;
  }
  const std::size_t remaining = records.size() - assigned;
  const auto val_target =
      static_cast<std::size_t>(std::llround(static_cast<double>(remaining) * 0.10));
  assigned = 0;
  while (assigned < val_target && cursor < group_order.size()) {
    for (std::size_t idx : groups[group_order[cursor]]) {
      out.validation.push_back(records[idx]);
      ++assigned;
    }
    ++cursor;
  }
  for (; cursor < group_order.size(); ++cursor)
    for (std::size_t idx : groups[group_order[cursor]]) out.train.push_back(records[idx]);
  return out;
}

// --- correlation -------------------------------------------------------------

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("pearson: need two equal-length vectors of size >= 2");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

// Continued fraction for the regularized incomplete beta (Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

}  // namespace

double correlation_p_value(double r, int n) {
  if (n < 3) return 1.0;
  const double nu = n - 2;
  const double r2 = r * r;
  if (r2 >= 1.0 - 1e-15) return 0.0;
  const double t2 = r2 * nu / (1.0 - r2);
  // two-sided p for Student t: I_{nu/(nu+t^2)}(nu/2, 1/2)
  return regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t2));
}

std::vector<EcClassCorrelation> ec_class_correlation(const std::vector<KineticRecord>& records) {
  std::vector<EcClassCorrelation> out;
  for (int cls = 1; cls <= 6; ++cls) {
    std::vector<double> temps, logk;
    for (const KineticRecord& r : records) {
      const auto top = ec_top_class(r);
      if (top && *top == cls) {
        temps.push_back(r.temperature_celsius);
        logk.push_back(std::log10(r.kcat_per_second));
      }
    }
    EcClassCorrelation row;
    row.ec_class = cls;
    row.n = static_cast<int>(temps.size());
    if (row.n >= 3) {
      row.sufficient = true;
      row.pearson_r = pearson(temps, logk);
      row.p_value = correlation_p_value(row.pearson_r, row.n);
      row.significant = row.p_value < 0.05;
    }
    out.push_back(row);
  }
  return out;
}

// --- synthetic generator -------------------------------------------------------

const std::vector<std::string>& synthetic_substrate_pool() {
  static const std::vector<std::string> pool = {
      "CCO",
      "CC(=O)O",
      "OCC(O)CO",
      "CC(O)C(=O)O",
      "CC(=O)C(=O)O",
      "OCC1OC(O)C(O)C(O)C1O",
      "NCC(=O)O",
      "CC(N)C(=O)O",
      "NC(N)=O",
      "OP(=O)(O)O",
      "OS(=O)(=O)O",
      "CSC",
      "c1ccccc1",
      "Cc1ccccc1",
      "c1ccncc1",
      "c1cc[nH]c1",
      "Oc1ccccc1",
      "CC(C)=O",
      "CC#N",
      "OC(=O)CC(O)(CC(=O)O)C(=O)O",
      "OCC(=O)O",
      "CCCC(=O)O",
      "CC(C)C(=O)O",
      "OC(=O)C=CC(=O)O",
      "NC(=O)CC(N)C(=O)O",
  };
  return pool;
}

std::vector<ArrheniusParams> default_families(int families, unsigned long long seed) {
  if (families < 1) throw std::invalid_argument("default_families: need at least one family");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<ArrheniusParams> out;
  out.reserve(static_cast<size_t>(families));
  for (int f = 0; f < families; ++f) {
    ArrheniusParams p;
    p.e_over_kb = rng::uniform(rng, 3000.0, 9000.0);
    const double log10_k_mid = rng::uniform(rng, -1.0, 2.0);
    p.pre_exponential = std::exp(std::log(10.0) * log10_k_mid + p.e_over_kb / 310.0);
    p.family_factor = rng::uniform(rng, 0.0, 1.0);
    out.push_back(p);
  }
  return out;
}

std::vector<KineticRecord> generate_synthetic(int n, unsigned long long seed,
                                              const std::vector<ArrheniusParams>& families,
                                              const SyntheticOptions& options) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (families.empty()) throw std::invalid_argument("generate_synthetic: no families given");
  static const char* kCanonical = "ACDEFGHIKLMNPQRSTVWY";
  const std::vector<std::string>& pool = synthetic_substrate_pool();

  std::mt19937_64 rng(seed);
  // substrate factors first, then family sequences, then records; one rng
  // keeps the whole dataset a function of the seed
  std::vector<double> substrate_factor(pool.size());
  for (double& f : substrate_factor) f = rng::uniform(rng, 0.0, 1.0);

  // A family is one (sequence, substrate) pair with fixed kinetics, but an
  // enzyme may catalyze several substrates: families share sequences from a
  // smaller pool (about two thirds the family count), the way one sequence
  // recurs with different substrates in curated kcat data. Sequence and
  // substrate cycles are coprime-ish, so every family keeps a distinct pair.
  const std::size_t sequence_count = std::max<std::size_t>(1, (2 * families.size() + 2) / 3);
  std::vector<std::string> sequence_pool;
  sequence_pool.reserve(sequence_count);
  for (std::size_t s = 0; s < sequence_count; ++s) {
    const int len = 20 + static_cast<int>(rng::uniform_int(rng, 41));
    std::string seq;
    seq.reserve(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) seq += kCanonical[rng::uniform_int(rng, 20)];
    sequence_pool.push_back(std::move(seq));
  }
  std::vector<std::string> sequences;
  sequences.reserve(families.size());
  for (std::size_t f = 0; f < families.size(); ++f)
    sequences.push_back(sequence_pool[f % sequence_count]);

  std::vector<KineticRecord> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto f = static_cast<std::size_t>(rng::uniform_int(rng, families.size()));
    const std::size_t s = f % pool.size();
    const ArrheniusParams& fam = families[f];
    const double t_kelvin = rng::uniform(rng, options.temp_min_kelvin, options.temp_max_kelvin);
    const double noise =
        options.noise_sigma > 0.0 ? rng::normal(rng, 0.0, options.noise_sigma) : 0.0;
    const double kcat = fam.pre_exponential * (1.0 + fam.family_factor) *
                        (1.0 + substrate_factor[s]) * std::exp(-fam.e_over_kb / t_kelvin) *
                        std::exp(noise);
    KineticRecord r;
    r.id = "syn-" + std::to_string(i);
    r.sequence = sequences[f];
    r.smiles = pool[s];
    r.temperature_celsius = t_kelvin - 273.15;
    r.kcat_per_second = kcat;
    r.ec_number = std::to_string(static_cast<int>(f % 6) + 1) + ".1.1.1";
    r.organism = "synthetic";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace prokcat
