#pragma once

#include <optional>
#include <string>
#include <vector>

namespace prokcat {

/// One measurement row. Temperatures are stored in Celsius at the file level
/// and converted to Kelvin before any model use. ph is carried but ignored.
struct KineticRecord {
  std::string id;
  std::string sequence;
  std::string smiles;
  double temperature_celsius = 25.0;
  double kcat_per_second = 1.0;
  std::optional<std::string> ec_number;
  std::optional<std::string> organism;
  std::optional<double> ph;

  double temperature_kelvin() const { return temperature_celsius + 273.15; }
  /// Base id with any "#dup<n>" oversampling suffix stripped.
  std::string base_id() const;
};

struct RowError {
  int line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<KineticRecord> records;
  std::vector<RowError> errors;
};

/// Tab-separated dataset with the exact header
/// id  sequence  smiles  temperature_c  kcat_s  ec_number  organism  ph
/// (last three may be empty). Invalid rows land in errors with line numbers.
LoadResult load_dataset(const std::string& path);

/// With allow_missing_kcat, an empty kcat_s column parses as 1.0 s^-1; used
/// for prediction inputs where the target is unknown.
LoadResult load_dataset(const std::string& path, bool allow_missing_kcat);

void write_dataset(const std::string& path, const std::vector<KineticRecord>& records);

/// Top-level EC class (1..7) or nullopt.
std::optional<int> ec_top_class(const KineticRecord& record);

/// Groups identical (sequence, smiles, temperature) keys and keeps the
/// highest-kcat member of each group, in first-appearance order.
std::vector<KineticRecord> deduplicate(const std::vector<KineticRecord>& records);

struct OversampleOptions {
  double low_cutoff_celsius = 20.0;
  double high_cutoff_celsius = 50.0;
  double target_fraction = 0.15;
  int max_copies = 5;  // each base record appears at most this many times
};

/// Duplicates whole records from the temperature tails (ids suffixed #dup<n>)
/// until each tail holds >= target_fraction of the total or every tail record
/// hits the copy cap. Deterministic for a given seed.
std::vector<KineticRecord> oversample_temperature(const std::vector<KineticRecord>& records,
                                                  const OversampleOptions& options,
                                                  unsigned long long seed);

struct DatasetSplits {
  std::vector<KineticRecord> train;
  std::vector<KineticRecord> validation;
  std::vector<KineticRecord> test;
  unsigned long long seed = 0;
  std::size_t raw_count = 0;
  std::size_t dedup_count = 0;
  std::size_t oversampled_count = 0;
};

/// Seeded shuffle into ~10% test, then ~10% of the rest into validation.
/// Records sharing a base id (oversampled copies) stay in one split.
DatasetSplits split(const std::vector<KineticRecord>& records, unsigned long long seed);

struct EcClassCorrelation {
  int ec_class = 0;
  int n = 0;
  bool sufficient = false;  // needs n >= 3
  double pearson_r = 0.0;
  double p_value = 1.0;
  bool significant = false;  // p < 0.05
};

/// Per top-level EC class 1..6: Pearson r between temperature and log10 kcat,
/// with a two-sided p-value from the t statistic via the regularized
/// incomplete beta function.
std::vector<EcClassCorrelation> ec_class_correlation(const std::vector<KineticRecord>& records);

/// Sample Pearson correlation of two equal-length vectors.
double pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Two-sided p-value for a sample correlation r at sample size n.
double correlation_p_value(double r, int n);

/// Arrhenius law k = A exp(-E_over_kB / T); ln k is affine in 1/T.
struct ArrheniusParams {
  double pre_exponential = 1.0;   // A, per second
  double e_over_kb = 5000.0;      // activation energy over k_B, Kelvin
  double family_factor = 0.0;     // multiplies k by (1 + family_factor)
};

/// Random Arrhenius parameters for `families` enzyme families: E/kB uniform
/// in [3000, 9000] K, A set so log10 k at 310 K is uniform in [-1, 2].
std::vector<ArrheniusParams> default_families(int families, unsigned long long seed);

struct SyntheticOptions {
  double noise_sigma = 0.1;        // gaussian, in natural log of kcat
  double temp_min_kelvin = 280.0;
  double temp_max_kelvin = 340.0;
};

/// n records over the given enzyme families. Each family is one (sequence,
/// substrate) pair with fixed kinetics: sequences are random 20-60-mers drawn
/// from a pool of about two thirds the family count (an enzyme may catalyze
/// several substrates), substrates come from a fixed 25-molecule pool, and
/// kcat follows the Arrhenius law with family- and substrate-specific
/// multiplicative factors and log-normal noise. EC classes cycle 1..6.
std::vector<KineticRecord> generate_synthetic(int n, unsigned long long seed,
                                              const std::vector<ArrheniusParams>& families,
                                              const SyntheticOptions& options = {});

/// The fixed substrate pool used by the generator.
const std::vector<std::string>& synthetic_substrate_pool();

}  // namespace prokcat
