#pragma once

#include "prokcat/attention.hpp"
#include "prokcat/data.hpp"
#include "prokcat/encoders.hpp"
#include "prokcat/fingerprint.hpp"
#include "prokcat/kan.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace prokcat {

enum class HeadKind { Mlp, Kan };
enum class KanTrainMode { Frozen, Joint };

struct AblationFlags {
  bool no_attention = false;
  bool no_cnn = false;
  bool no_ext_embedding = false;
  bool no_enzyme = false;
  bool no_substrate = false;
  bool no_fingerprint = false;
};

struct ModelConfig {
  int d = 32;
  int heads = 2;  // L_h
  HeadKind head = HeadKind::Mlp;
  std::vector<int> mlp_hidden = {64, 32};
  bool kan_projected = true;       // 5-input head behind scalar projections
  std::vector<int> kan_hidden = {};  // optional hidden widths; depth capped at 3
  int kan_grid_intervals = 5;
  int kan_order = 3;
  // Carried from the source KAN recipe ("steps"); inert here because grids
  // are fixed to the normalized domain rather than refined during training.
  int kan_refine_steps = 5;
  KanTrainMode kan_mode = KanTrainMode::Frozen;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 300;
  int patience = 10;
  unsigned long long seed = 1;
  int ext_width = 64;
  AblationFlags ablation;

  int fused_width() const { return 3 * d + 2; }
  std::vector<int> kan_widths() const;
};

struct TemperatureStats {
  double t_min = 0, t_max = 1;
  double t_inv_min = 0, t_inv_max = 1;
};

TemperatureStats fit_temperature_stats(const std::vector<KineticRecord>& records);

/// Min-max normalization of T and 1/T to [-1, 1] using training statistics;
/// out-of-range temperatures clamp and set the flag.
std::pair<double, double> temperature_features(double t_kelvin, const TemperatureStats& stats,
                                               bool* clamped = nullptr);

struct MlpHeadParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static MlpHeadParams init(int input_width, const std::vector<int>& hidden, std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
  long parameter_count() const;
};

struct ScalarProjections {
  Tensor w_p, b_p, w_c, b_c, w_f, b_f;  // three independent d -> 1 maps

  static ScalarProjections init(int d, std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

struct EpochStats {
  int epoch = 0;
  double train_rmse = 0;
  double val_rmse = 0;
};

struct TrainedModel {
  ModelConfig config;
  EncoderParams encoder;
  InteractionParams attention;
  MlpHeadParams mlp;             // Mlp head
  ScalarProjections projections; // Kan head, projected mode
  KanNetwork kan;                // Kan head
  TemperatureStats temp_stats;
  std::vector<EpochStats> history;
  // For a Frozen-mode Kan head: the internal Mlp phase that trained the
  // encoders, kept separately from the head-training history.
  std::vector<EpochStats> encoder_history;
  double best_val_rmse = 0;
  int best_epoch = -1;
  std::vector<std::string> preparation_warnings;
};

/// Cached featurization of one record: everything the forward pass needs
/// that does not depend on trainable parameters.
struct PreparedRecord {
  std::string id;
  ProteinSequence sequence;
  MolGraph graph;
  Tensor fingerprint;
  std::optional<MatrixRM> ext;
  double t_norm = 0, t_inv_norm = 0;
  bool t_clamped = false;
  double target_log10 = 0;
};

PreparedRecord prepare_record(const KineticRecord& record, const TemperatureStats& stats,
                              const ResidueEmbeddingFile* embeddings);

/// Pooled feature triple (h''_p, h''_c, h'_f), each [d]; ablated streams are
/// zero tensors of the same width.
struct PooledFeatures {
  Tensor protein;
  Tensor compound;
  Tensor fingerprint;
};

PooledFeatures pooled_features(const PreparedRecord& record, const EncoderParams& encoder,
                               const InteractionParams& attention, const AblationFlags& ablation);

/// [h''_p || h''_c || h'_f || T_norm || 1/T_norm], width 3d+2.
Tensor fuse(const PooledFeatures& pooled, double t_norm, double t_inv_norm);

/// Feed-forward scalar regression head (relu hidden layers, linear output).
Tensor predict_mlp(const Tensor& fused, const MlpHeadParams& params);

/// Three independent d -> 1 linear maps.
std::vector<Tensor> scalar_project(const PooledFeatures& pooled, const ScalarProjections& params);

/// Scalar KAN output for the 5 projected inputs (or 3d+2 in full mode).
Tensor predict_kan(const Tensor& inputs, const KanNetwork& net);

/// Mean squared error of two equal-length rank-1 tensors.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
double mse_loss(const std::vector<double>& pred, const std::vector<double>& target);

struct Metrics {
  double rmse = 0;
  double mae = 0;
  std::optional<double> pcc;  // undefined when target variance is zero
  std::optional<double> r2;
};

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& target);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Seeded training with mini-batch adam on mse of log10 kcat and early
/// stopping on validation RMSE. For a Kan head in Frozen mode, encoders and
/// attention come from an internal Mlp-head phase and stay fixed while the
/// projections and KAN train.
TrainedModel train(const std::vector<KineticRecord>& train_records,
                   const std::vector<KineticRecord>& val_records, const ModelConfig& config,
                   const ResidueEmbeddingFile* embeddings = nullptr,
                   const EpochCallback& on_epoch = nullptr);

struct Prediction {
  double log10_kcat = 0;
  double kcat = 0;
  bool out_of_range = false;
};

/// Full forward pass with stored normalization; SMILES/sequence failures
/// surface as exceptions naming the record id.
Prediction predict(const TrainedModel& model, const KineticRecord& record,
                   const ResidueEmbeddingFile* embeddings = nullptr);

std::vector<Prediction> predict_batch(const TrainedModel& model,
                                      const std::vector<KineticRecord>& records,
                                      const ResidueEmbeddingFile* embeddings = nullptr);

/// Names for the projected KAN inputs, in input order.
const std::vector<std::string>& kan_input_names();

// --- checkpoint ------------------------------------------------------------

/// Self-describing JSON container: version tag, config, normalization
/// statistics, and named parameter arrays as base64 little-endian doubles.
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace prokcat
