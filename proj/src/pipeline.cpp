#include "prokcat/pipeline.hpp"

#include "prokcat/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace prokcat {

using nlohmann::json;

std::vector<int> ModelConfig::kan_widths() const {
  std::vector<int> widths;
  widths.push_back(kan_projected ? 5 : fused_width());
  widths.insert(widths.end(), kan_hidden.begin(), kan_hidden.end());
  widths.push_back(1);
  return widths;
}

// --- temperature features ----------------------------------------------------

TemperatureStats fit_temperature_stats(const std::vector<KineticRecord>& records) {
  if (records.empty()) throw std::invalid_argument("fit_temperature_stats: no records");
  TemperatureStats s;
  s.t_min = s.t_inv_min = std::numeric_limits<double>::infinity();
  s.t_max = s.t_inv_max = -std::numeric_limits<double>::infinity();
  for (const KineticRecord& r : records) {
    const double t = r.temperature_kelvin();
    s.t_min = std::min(s.t_min, t);
    s.t_max = std::max(s.t_max, t);
    s.t_inv_min = std::min(s.t_inv_min, 1.0 / t);
    s.t_inv_max = std::max(s.t_inv_max, 1.0 / t);
  }
  return s;
}

namespace {

double minmax_to_unit(double x, double lo, double hi, bool* clamped) {
  if (hi - lo < 1e-12) return 0.0;
  double u = 2.0 * (x - lo) / (hi - lo) - 1.0;
  if (u < -1.0 || u > 1.0) {
    if (clamped != nullptr) *clamped = true;
    u = std::clamp(u, -1.0, 1.0);
  }
  return u;
}

}  // namespace

std::pair<double, double> temperature_features(double t_kelvin, const TemperatureStats& stats,
                                               bool* clamped) {
  if (!(t_kelvin > 0))
    throw std::invalid_argument("temperature_features: absolute temperature must be positive");
  const double t_norm = minmax_to_unit(t_kelvin, stats.t_min, stats.t_max, clamped);
  const double t_inv_norm =
      minmax_to_unit(1.0 / t_kelvin, stats.t_inv_min, stats.t_inv_max, clamped);
  return {t_norm, t_inv_norm};
}

// --- heads ---------------------------------------------------------------------

MlpHeadParams MlpHeadParams::init(int input_width, const std::vector<int>& hidden,
                                  std::mt19937_64& rng) {
  MlpHeadParams p;
  std::vector<int> widths = {input_width};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    p.weights.push_back(Tensor::glorot({widths[i], widths[i + 1]}, widths[i], widths[i + 1], rng));
    p.biases.push_back(Tensor::zeros({widths[i + 1]}, true));
  }
  return p;
}

std::vector<Tensor> MlpHeadParams::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

long MlpHeadParams::parameter_count() const {
  long total = 0;
  for (const Tensor& t : parameters()) total += t.size();
  return total;
}

ScalarProjections ScalarProjections::init(int d, std::mt19937_64& rng) {
  ScalarProjections p;
  p.w_p = Tensor::glorot({d, 1}, d, 1, rng);
  p.b_p = Tensor::zeros({1}, true);
  p.w_c = Tensor::glorot({d, 1}, d, 1, rng);
  p.b_c = Tensor::zeros({1}, true);
  p.w_f = Tensor::glorot({d, 1}, d, 1, rng);
  p.b_f = Tensor::zeros({1}, true);
  return p;
}

std::vector<Tensor> ScalarProjections::parameters() const {
  return {w_p, b_p, w_c, b_c, w_f, b_f};
}

// --- forward pass ----------------------------------------------------------------

PreparedRecord prepare_record(const KineticRecord& record, const TemperatureStats& stats,
                              const ResidueEmbeddingFile* embeddings) {
  PreparedRecord out;
  out.id = record.id;
  out.sequence = make_protein_sequence(record.sequence);
  out.graph = parse_smiles(record.smiles);
  out.fingerprint = fingerprint_to_tensor(ecfp(out.graph));
  if (embeddings != nullptr) {
    const MatrixRM* m = embeddings->find(record.id);
    if (m == nullptr) throw std::runtime_error("no embedding entry for record id " + record.id);
    out.ext = *m;
  }
  auto [t_norm, t_inv_norm] =
      temperature_features(record.temperature_kelvin(), stats, &out.t_clamped);
  out.t_norm = t_norm;
  out.t_inv_norm = t_inv_norm;
  if (!(record.kcat_per_second > 0))
    throw std::invalid_argument("record " + record.id + ": kcat must be positive");
  out.target_log10 = std::log10(record.kcat_per_second);
  return out;
}

PooledFeatures pooled_features(const PreparedRecord& record, const EncoderParams& encoder,
                               const InteractionParams& attention, const AblationFlags& ablation) {
  const int d = encoder.d;
  Tensor h_p, h_c;
  if (!ablation.no_enzyme) {
    h_p = encode_protein(record.sequence, record.ext, encoder,
                         {ablation.no_cnn, ablation.no_ext_embedding});
  }
  if (!ablation.no_substrate) h_c = encode_substrate(record.graph, encoder);

  Tensor weighted_p = h_p, weighted_c = h_c;
  if (h_p.defined() && h_c.defined() && !ablation.no_attention) {
    auto [wp, wc] = multi_head_interaction(h_p, h_c, attention);
    weighted_p = wp;
    weighted_c = wc;
  }

  PooledFeatures out;
  out.protein = weighted_p.defined() ? mean_pool(weighted_p) : Tensor::zeros({d});
  out.compound = weighted_c.defined() ? mean_pool(weighted_c) : Tensor::zeros({d});
  out.fingerprint =
      ablation.no_fingerprint ? Tensor::zeros({d}) : align_fingerprint(record.fingerprint, encoder);
  return out;
}

Tensor fuse(const PooledFeatures& pooled, double t_norm, double t_inv_norm) {
  return concat({pooled.protein, pooled.compound, pooled.fingerprint, Tensor::scalar(t_norm),
                 Tensor::scalar(t_inv_norm)},
                0);
}

Tensor predict_mlp(const Tensor& fused, const MlpHeadParams& params) {
  Tensor x = reshape(fused, {1, fused.dim(0)});
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    x = matmul(x, params.weights[i]) + params.biases[i];
    if (i + 1 < params.weights.size()) x = relu(x);
  }
  return reshape(x, {1});
}

std::vector<Tensor> scalar_project(const PooledFeatures& pooled, const ScalarProjections& params) {
  const int d = pooled.protein.dim(0);
  auto project = [d](const Tensor& v, const Tensor& w, const Tensor& b) {
    return reshape(matmul(reshape(v, {1, d}), w) + b, {1});
  };
  return {project(pooled.protein, params.w_p, params.b_p),
          project(pooled.compound, params.w_c, params.b_c),
          project(pooled.fingerprint, params.w_f, params.b_f)};
}

Tensor predict_kan(const Tensor& inputs, const KanNetwork& net) {
  return kan_forward(net, inputs);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 1 || target.rank() != 1 || pred.dim(0) != target.dim(0))
    throw std::invalid_argument("mse_loss: shapes " + shape_to_string(pred.shape()) + " and " +
                                shape_to_string(target.shape()) + " must be equal rank-1");
  Tensor diff = pred - target;
  return mean_all(diff * diff);
}

double mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("mse_loss: need equal nonempty vectors");
  double sse = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    sse += (pred[i] - target[i]) * (pred[i] - target[i]);
  return sse / static_cast<double>(pred.size());
}

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.size() < 2)
    throw std::invalid_argument("compute_metrics: need equal vectors of size >= 2");
  const auto n = static_cast<double>(pred.size());
  double sse = 0, sae = 0, mean_t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sse += (pred[i] - target[i]) * (pred[i] - target[i]);
    sae += std::abs(pred[i] - target[i]);
    mean_t += target[i];
  }
  mean_t /= n;
  double ss_tot = 0;
  for (double t : target) ss_tot += (t - mean_t) * (t - mean_t);

  Metrics m;
  m.rmse = std::sqrt(sse / n);
  m.mae = sae / n;
  if (ss_tot > 0) {
    m.pcc = pearson(pred, target);
    m.r2 = 1.0 - sse / ss_tot;
  }
  return m;
}

const std::vector<std::string>& kan_input_names() {
  static const std::vector<std::string> names = {"h_p", "h_c", "h_f", "T", "T_inv"};
  return names;
}

// --- training ----------------------------------------------------------------------

namespace {

struct ParamSnapshot {
  std::vector<ArrayX> values;

  static ParamSnapshot capture(const std::vector<Tensor>& params) {
    ParamSnapshot s;
    for (const Tensor& p : params) s.values.push_back(p.values());
    return s;
  }
  void restore(std::vector<Tensor>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].raw_values() = values[i];
  }
};

struct Phase {
  std::vector<Tensor> params;
  std::function<Tensor(std::size_t)> forward_train;  // tape forward, [1]
  std::function<double(std::size_t)> forward_val;    // tape-free scalar
  std::function<void()> epoch_start;
  std::vector<double> train_targets;
  std::vector<double> val_targets;
};

void run_phase(Phase& phase, const ModelConfig& config, std::vector<EpochStats>& history,
               double& best_val, int& best_epoch, const EpochCallback& on_epoch) {
  AdamState adam;
  ParamSnapshot best = ParamSnapshot::capture(phase.params);
  best_val = std::numeric_limits<double>::infinity();
  best_epoch = -1;
  int stale_epochs = 0;

  std::vector<std::size_t> order(phase.train_targets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5bf03635f0a5b1c9ULL);

  const auto n_train = phase.train_targets.size();
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (phase.epoch_start) phase.epoch_start();
    rng::shuffle(order, shuffle_rng);

    double epoch_sse = 0;
    for (std::size_t start = 0; start < n_train;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(n_train, start + static_cast<std::size_t>(config.batch_size));
      try {
        Tape tape;
        std::vector<Tensor> preds;
        std::vector<Scalar> targets;
        for (std::size_t k = start; k < stop; ++k) {
          preds.push_back(phase.forward_train(order[k]));
          targets.push_back(phase.train_targets[order[k]]);
        }
        Tensor pred = preds.size() == 1 ? preds[0] : concat(preds, 0);
        Tensor loss = mse_loss(pred, Tensor::from({static_cast<int>(targets.size())}, targets));
        epoch_sse += loss.item() * static_cast<double>(targets.size());
        backward(loss);
        adam_step(phase.params, adam, config.learning_rate);
        for (Tensor& p : phase.params) p.zero_grad();
      } catch (const std::domain_error& e) {
        throw std::runtime_error("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(start / static_cast<std::size_t>(config.batch_size)) +
                                 ": " + e.what());
      }
    }

    double val_sse = 0;
    for (std::size_t i = 0; i < phase.val_targets.size(); ++i) {
      const double diff = phase.forward_val(i) - phase.val_targets[i];
      val_sse += diff * diff;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_rmse = std::sqrt(epoch_sse / static_cast<double>(n_train));
    stats.val_rmse = std::sqrt(val_sse / static_cast<double>(phase.val_targets.size()));
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.val_rmse < best_val) {
      best_val = stats.val_rmse;
      best_epoch = epoch;
      best = ParamSnapshot::capture(phase.params);
      stale_epochs = 0;
    } else if (++stale_epochs >= config.patience) {
      break;
    }
  }
  best.restore(phase.params);
}

struct HeadInputCache {
  // pooled features as reusable constant tensors (frozen-encoder mode)
  std::vector<PooledFeatures> pooled;
  std::vector<double> t_norm, t_inv_norm;
};

HeadInputCache cache_head_inputs(const std::vector<PreparedRecord>& records,
                                 const EncoderParams& encoder, const InteractionParams& attention,
                                 const AblationFlags& ablation) {
  HeadInputCache cache;
  for (const PreparedRecord& r : records) {
    PooledFeatures p = pooled_features(r, encoder, attention, ablation);
    PooledFeatures frozen;  // constants for the head phase, no grad tracking
    frozen.protein = Tensor::from_flat(p.protein.shape(), p.protein.values());
    frozen.compound = Tensor::from_flat(p.compound.shape(), p.compound.values());
    frozen.fingerprint = Tensor::from_flat(p.fingerprint.shape(), p.fingerprint.values());
    cache.pooled.push_back(std::move(frozen));
    cache.t_norm.push_back(r.t_norm);
    cache.t_inv_norm.push_back(r.t_inv_norm);
  }
  return cache;
}

std::vector<double> kan_raw_inputs(const PooledFeatures& pooled, double t_norm, double t_inv_norm,
                                   const ScalarProjections& proj, bool projected) {
  std::vector<double> inputs;
  if (projected) {
    auto dot = [](const Tensor& v, const Tensor& w, const Tensor& b) {
      double acc = b.value_at(0);
      for (Eigen::Index i = 0; i < v.size(); ++i) acc += v.value_at(i) * w.value_at(i);
      return acc;
    };
    inputs = {dot(pooled.protein, proj.w_p, proj.b_p), dot(pooled.compound, proj.w_c, proj.b_c),
              dot(pooled.fingerprint, proj.w_f, proj.b_f), t_norm, t_inv_norm};
  } else {
    inputs.reserve(static_cast<std::size_t>(pooled.protein.size()) * 3 + 2);
    for (Eigen::Index i = 0; i < pooled.protein.size(); ++i)
      inputs.push_back(pooled.protein.value_at(i));
    for (Eigen::Index i = 0; i < pooled.compound.size(); ++i)
      inputs.push_back(pooled.compound.value_at(i));
    for (Eigen::Index i = 0; i < pooled.fingerprint.size(); ++i)
      inputs.push_back(pooled.fingerprint.value_at(i));
    inputs.push_back(t_norm);
    inputs.push_back(t_inv_norm);
  }
  return inputs;
}

Tensor kan_head_forward(const PooledFeatures& pooled, double t_norm, double t_inv_norm,
                        const ScalarProjections& proj, const KanNetwork& net, bool projected) {
  if (projected) {
    std::vector<Tensor> parts = scalar_project(pooled, proj);
    parts.push_back(Tensor::scalar(t_norm));
    parts.push_back(Tensor::scalar(t_inv_norm));
    return predict_kan(concat(parts, 0), net);
  }
  return predict_kan(fuse(pooled, t_norm, t_inv_norm), net);
}

// Min-max statistics of the KAN inputs, refreshed at epoch start so the
// spline grids track the projection drift during head training.
void refresh_kan_normalizer(KanNetwork& net, const HeadInputCache& cache,
                            const ScalarProjections& proj, bool projected) {
  const auto n0 = static_cast<std::size_t>(net.widths[0]);
  std::vector<double> lo(n0, std::numeric_limits<double>::infinity());
  std::vector<double> hi(n0, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < cache.pooled.size(); ++r) {
    const std::vector<double> inputs =
        kan_raw_inputs(cache.pooled[r], cache.t_norm[r], cache.t_inv_norm[r], proj, projected);
    for (std::size_t i = 0; i < n0; ++i) {
      lo[i] = std::min(lo[i], inputs[i]);
      hi[i] = std::max(hi[i], inputs[i]);
    }
  }
  net.normalizer.min = std::move(lo);
  net.normalizer.max = std::move(hi);
}

std::vector<PreparedRecord> prepare_all(const std::vector<KineticRecord>& records,
                                        const TemperatureStats& stats,
                                        const ResidueEmbeddingFile* embeddings,
                                        std::vector<std::string>& warnings) {
  std::vector<PreparedRecord> out;
  for (const KineticRecord& r : records) {
    try {
      out.push_back(prepare_record(r, stats, embeddings));
    } catch (const std::exception& e) {
      warnings.push_back("dropped record " + r.id + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

TrainedModel train(const std::vector<KineticRecord>& train_records,
                   const std::vector<KineticRecord>& val_records, const ModelConfig& config,
                   const ResidueEmbeddingFile* embeddings, const EpochCallback& on_epoch) {
  if (train_records.empty() || val_records.empty())
    throw std::invalid_argument("train: train and validation splits must be nonempty");
  if (config.head == HeadKind::Kan && config.kan_widths().size() > 4)
    throw std::invalid_argument("train: KAN depth is capped at 3 edge layers");

  TrainedModel model;
  model.config = config;
  model.temp_stats = fit_temperature_stats(train_records);

  std::mt19937_64 rng(config.seed);
  model.encoder = EncoderParams::init(config.d, config.ext_width, rng);
  model.attention = InteractionParams::init(config.d, config.heads, rng);
  model.mlp = MlpHeadParams::init(config.fused_width(), config.mlp_hidden, rng);

  std::vector<PreparedRecord> train_prepared =
      prepare_all(train_records, model.temp_stats, embeddings, model.preparation_warnings);
  std::vector<PreparedRecord> val_prepared =
      prepare_all(val_records, model.temp_stats, embeddings, model.preparation_warnings);
  if (train_prepared.empty() || val_prepared.empty())
    throw std::runtime_error("train: no usable records after preparation");

  auto targets_of = [](const std::vector<PreparedRecord>& records) {
    std::vector<double> t;
    t.reserve(records.size());
    for (const PreparedRecord& r : records) t.push_back(r.target_log10);
    return t;
  };

  auto encoder_params = [&]() {
    std::vector<Tensor> params = model.encoder.parameters();
    const std::vector<Tensor> att = model.attention.parameters();
    params.insert(params.end(), att.begin(), att.end());
    return params;
  };

  const bool needs_mlp_phase =
      config.head == HeadKind::Mlp ||
      (config.head == HeadKind::Kan && config.kan_mode == KanTrainMode::Frozen);

  if (needs_mlp_phase) {
    Phase phase;
    phase.params = encoder_params();
    const std::vector<Tensor> head = model.mlp.parameters();
    phase.params.insert(phase.params.end(), head.begin(), head.end());
    phase.train_targets = targets_of(train_prepared);
    phase.val_targets = targets_of(val_prepared);
    phase.forward_train = [&](std::size_t i) {
      const PreparedRecord& r = train_prepared[i];
      PooledFeatures pooled = pooled_features(r, model.encoder, model.attention, config.ablation);
      return predict_mlp(fuse(pooled, r.t_norm, r.t_inv_norm), model.mlp);
    };
    phase.forward_val = [&](std::size_t i) {
      const PreparedRecord& r = val_prepared[i];
      PooledFeatures pooled = pooled_features(r, model.encoder, model.attention, config.ablation);
      return predict_mlp(fuse(pooled, r.t_norm, r.t_inv_norm), model.mlp).item();
    };
    std::vector<EpochStats>& sink =
        config.head == HeadKind::Mlp ? model.history : model.encoder_history;
    double best_val = 0;
    int best_epoch = -1;
    run_phase(phase, config, sink, best_val, best_epoch,
              config.head == HeadKind::Mlp ? on_epoch : nullptr);
    if (config.head == HeadKind::Mlp) {
      model.best_val_rmse = best_val;
      model.best_epoch = best_epoch;
      return model;
    }
  }

  // KAN head
  model.kan = KanNetwork::init(
      config.kan_widths(), BSplineGrid::make(-1, 1, config.kan_grid_intervals, config.kan_order),
      rng);
  if (config.kan_projected) model.projections = ScalarProjections::init(config.d, rng);

  const bool frozen = config.kan_mode == KanTrainMode::Frozen;

  Phase phase;
  if (config.kan_projected) {
    const std::vector<Tensor> proj = model.projections.parameters();
    phase.params.insert(phase.params.end(), proj.begin(), proj.end());
  }
  if (!frozen) {
    std::vector<Tensor> enc = encoder_params();
    phase.params.insert(phase.params.end(), enc.begin(), enc.end());
  }
  const std::vector<Tensor> kan_params = model.kan.parameters();
  phase.params.insert(phase.params.end(), kan_params.begin(), kan_params.end());
  phase.train_targets = targets_of(train_prepared);
  phase.val_targets = targets_of(val_prepared);

  if (frozen) {
    auto train_cache = std::make_shared<HeadInputCache>(
        cache_head_inputs(train_prepared, model.encoder, model.attention, config.ablation));
    auto val_cache = std::make_shared<HeadInputCache>(
        cache_head_inputs(val_prepared, model.encoder, model.attention, config.ablation));
    phase.forward_train = [&model, &config, train_cache](std::size_t i) {
      return kan_head_forward(train_cache->pooled[i], train_cache->t_norm[i],
                              train_cache->t_inv_norm[i], model.projections, model.kan,
                              config.kan_projected);
    };
    phase.forward_val = [&model, &config, val_cache](std::size_t i) {
      return kan_head_forward(val_cache->pooled[i], val_cache->t_norm[i],
                              val_cache->t_inv_norm[i], model.projections, model.kan,
                              config.kan_projected)
          .item();
    };
    phase.epoch_start = [&model, &config, train_cache]() {
      refresh_kan_normalizer(model.kan, *train_cache, model.projections, config.kan_projected);
    };
  } else {
    phase.forward_train = [&model, &config, &train_prepared](std::size_t i) {
      const PreparedRecord& r = train_prepared[i];
      PooledFeatures pooled = pooled_features(r, model.encoder, model.attention, config.ablation);
      return kan_head_forward(pooled, r.t_norm, r.t_inv_norm, model.projections, model.kan,
                              config.kan_projected);
    };
    phase.forward_val = [&model, &config, &val_prepared](std::size_t i) {
      const PreparedRecord& r = val_prepared[i];
      PooledFeatures pooled = pooled_features(r, model.encoder, model.attention, config.ablation);
      return kan_head_forward(pooled, r.t_norm, r.t_inv_norm, model.projections, model.kan,
                              config.kan_projected)
          .item();
    };
    const std::size_t stats_limit = std::min<std::size_t>(train_prepared.size(), 512);
    phase.epoch_start = [&model, &config, &train_prepared, stats_limit]() {
      const std::vector<PreparedRecord> subset(
          train_prepared.begin(), train_prepared.begin() + static_cast<long>(stats_limit));
      HeadInputCache cache =
          cache_head_inputs(subset, model.encoder, model.attention, config.ablation);
      refresh_kan_normalizer(model.kan, cache, model.projections, config.kan_projected);
    };
  }

  double best_val = 0;
  int best_epoch = -1;
  run_phase(phase, config, model.history, best_val, best_epoch, on_epoch);
  model.best_val_rmse = best_val;
  model.best_epoch = best_epoch;
  return model;
}

Prediction predict(const TrainedModel& model, const KineticRecord& record,
                   const ResidueEmbeddingFile* embeddings) {
  PreparedRecord prepared;
  try {
    prepared = prepare_record(record, model.temp_stats, embeddings);
  } catch (const std::exception& e) {
    throw std::runtime_error("record " + record.id + ": " + e.what());
  }
  PooledFeatures pooled =
      pooled_features(prepared, model.encoder, model.attention, model.config.ablation);
  Tensor out;
  if (model.config.head == HeadKind::Mlp) {
    out = predict_mlp(fuse(pooled, prepared.t_norm, prepared.t_inv_norm), model.mlp);
  } else {
    out = kan_head_forward(pooled, prepared.t_norm, prepared.t_inv_norm, model.projections,
                           model.kan, model.config.kan_projected);
  }
  Prediction p;
  p.log10_kcat = out.item();
  p.kcat = std::pow(10.0, p.log10_kcat);
  p.out_of_range = prepared.t_clamped;
  return p;
}

std::vector<Prediction> predict_batch(const TrainedModel& model,
                                      const std::vector<KineticRecord>& records,
                                      const ResidueEmbeddingFile* embeddings) {
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (const KineticRecord& r : records) out.push_back(predict(model, r, embeddings));
  return out;
}

// --- checkpoint --------------------------------------------------------------------

namespace {

const char kBase64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const ArrayX& values) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  const std::size_t n = static_cast<std::size_t>(values.size()) * sizeof(double);
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    unsigned int word = static_cast<unsigned int>(bytes[i]) << 16;
    if (i + 1 < n) word |= static_cast<unsigned int>(bytes[i + 1]) << 8;
    if (i + 2 < n) word |= bytes[i + 2];
    out += kBase64Alphabet[(word >> 18) & 63];
    out += kBase64Alphabet[(word >> 12) & 63];
    out += i + 1 < n ? kBase64Alphabet[(word >> 6) & 63] : '=';
    out += i + 2 < n ? kBase64Alphabet[word & 63] : '=';
  }
  return out;
}

ArrayX base64_decode(const std::string& text, Eigen::Index expected_doubles) {
  std::vector<unsigned char> bytes;
  bytes.reserve(text.size() / 4 * 3);
  int table[256];
  std::fill(std::begin(table), std::end(table), -1);
  for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kBase64Alphabet[i])] = i;
  unsigned int word = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = table[static_cast<unsigned char>(c)];
    if (v < 0) throw std::runtime_error("checkpoint: invalid base64 payload");
    word = (word << 6) | static_cast<unsigned int>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      bytes.push_back(static_cast<unsigned char>((word >> bits) & 0xff));
    }
  }
  if (bytes.size() != static_cast<std::size_t>(expected_doubles) * sizeof(double))
    throw std::runtime_error("checkpoint: payload holds " + std::to_string(bytes.size()) +
                             " bytes, expected " + std::to_string(expected_doubles * 8));
  ArrayX out(expected_doubles);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const TrainedModel& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  const EncoderParams& e = model.encoder;
  out.emplace_back("encoder.token_embedding", e.token_embedding);
  out.emplace_back("encoder.conv1", e.conv1);
  out.emplace_back("encoder.conv2", e.conv2);
  out.emplace_back("encoder.align_w1", e.align_w1);
  out.emplace_back("encoder.align_b1", e.align_b1);
  out.emplace_back("encoder.align_w2", e.align_w2);
  out.emplace_back("encoder.align_b2", e.align_b2);
  out.emplace_back("encoder.atom_proj_w", e.atom_proj_w);
  out.emplace_back("encoder.atom_proj_b", e.atom_proj_b);
  for (std::size_t g = 0; g < e.gat.size(); ++g) {
    out.emplace_back("encoder.gat" + std::to_string(g) + ".weight", e.gat[g].weight);
    out.emplace_back("encoder.gat" + std::to_string(g) + ".attention", e.gat[g].attention);
  }
  out.emplace_back("encoder.fp_w1", e.fp_w1);
  out.emplace_back("encoder.fp_b1", e.fp_b1);
  out.emplace_back("encoder.fp_w2", e.fp_w2);
  out.emplace_back("encoder.fp_b2", e.fp_b2);

  const InteractionParams& a = model.attention;
  for (std::size_t h = 0; h < a.heads.size(); ++h) {
    const std::string p = "attention.head" + std::to_string(h) + ".";
    out.emplace_back(p + "align_w", a.heads[h].align_w);
    out.emplace_back(p + "fc_p_w", a.heads[h].fc_p_w);
    out.emplace_back(p + "fc_p_b", a.heads[h].fc_p_b);
    out.emplace_back(p + "fc_c_w", a.heads[h].fc_c_w);
    out.emplace_back(p + "fc_c_b", a.heads[h].fc_c_b);
    out.emplace_back(p + "score_p_w", a.heads[h].score_p_w);
    out.emplace_back(p + "score_p_b", a.heads[h].score_p_b);
    out.emplace_back(p + "score_c_w", a.heads[h].score_c_w);
    out.emplace_back(p + "score_c_b", a.heads[h].score_c_b);
  }
  out.emplace_back("attention.out_p_w", a.out_p_w);
  out.emplace_back("attention.out_p_b", a.out_p_b);
  out.emplace_back("attention.out_c_w", a.out_c_w);
  out.emplace_back("attention.out_c_b", a.out_c_b);

  if (model.config.head == HeadKind::Mlp) {
    for (std::size_t i = 0; i < model.mlp.weights.size(); ++i) {
      out.emplace_back("mlp.w" + std::to_string(i), model.mlp.weights[i]);
      out.emplace_back("mlp.b" + std::to_string(i), model.mlp.biases[i]);
    }
  } else {
    if (model.config.kan_projected) {
      out.emplace_back("proj.w_p", model.projections.w_p);
      out.emplace_back("proj.b_p", model.projections.b_p);
      out.emplace_back("proj.w_c", model.projections.w_c);
      out.emplace_back("proj.b_c", model.projections.b_c);
      out.emplace_back("proj.w_f", model.projections.w_f);
      out.emplace_back("proj.b_f", model.projections.b_f);
    }
    for (std::size_t l = 0; l < model.kan.layers.size(); ++l) {
      const KanLayer& layer = model.kan.layers[l];
      for (int i = 0; i < layer.in_width; ++i) {
        for (int j = 0; j < layer.out_width; ++j) {
          const std::string p =
              "kan.l" + std::to_string(l) + ".e" + std::to_string(i) + "_" + std::to_string(j);
          out.emplace_back(p + ".base", layer.edge(i, j).base_weight);
          out.emplace_back(p + ".spline", layer.edge(i, j).spline_weight);
          out.emplace_back(p + ".coeffs", layer.edge(i, j).coefficients);
        }
      }
      out.emplace_back("kan.l" + std::to_string(l) + ".bias", layer.bias);
    }
  }
  return out;
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["d"] = c.d;
  j["heads"] = c.heads;
  j["head"] = c.head == HeadKind::Mlp ? "mlp" : "kan";
  j["mlp_hidden"] = c.mlp_hidden;
  j["kan_projected"] = c.kan_projected;
  j["kan_hidden"] = c.kan_hidden;
  j["kan_grid_intervals"] = c.kan_grid_intervals;
  j["kan_order"] = c.kan_order;
  j["kan_refine_steps"] = c.kan_refine_steps;
  j["kan_mode"] = c.kan_mode == KanTrainMode::Frozen ? "frozen" : "joint";
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["ext_width"] = c.ext_width;
  j["ablation"] = {{"no_attention", c.ablation.no_attention},
                   {"no_cnn", c.ablation.no_cnn},
                   {"no_ext_embedding", c.ablation.no_ext_embedding},
                   {"no_enzyme", c.ablation.no_enzyme},
                   {"no_substrate", c.ablation.no_substrate},
                   {"no_fingerprint", c.ablation.no_fingerprint}};
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.heads = j.at("heads").get<int>();
  c.head = j.at("head").get<std::string>() == "kan" ? HeadKind::Kan : HeadKind::Mlp;
  c.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  c.kan_projected = j.at("kan_projected").get<bool>();
  c.kan_hidden = j.at("kan_hidden").get<std::vector<int>>();
  c.kan_grid_intervals = j.at("kan_grid_intervals").get<int>();
  c.kan_order = j.at("kan_order").get<int>();
  c.kan_refine_steps = j.at("kan_refine_steps").get<int>();
  c.kan_mode =
      j.at("kan_mode").get<std::string>() == "joint" ? KanTrainMode::Joint : KanTrainMode::Frozen;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<unsigned long long>();
  c.ext_width = j.at("ext_width").get<int>();
  const json& ab = j.at("ablation");
  c.ablation.no_attention = ab.at("no_attention").get<bool>();
  c.ablation.no_cnn = ab.at("no_cnn").get<bool>();
  c.ablation.no_ext_embedding = ab.at("no_ext_embedding").get<bool>();
  c.ablation.no_enzyme = ab.at("no_enzyme").get<bool>();
  c.ablation.no_substrate = ab.at("no_substrate").get<bool>();
  c.ablation.no_fingerprint = ab.at("no_fingerprint").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::string& path) {
  json j;
  j["format"] = "PROKCAT-CKPT";
  j["version"] = 1;
  j["config"] = config_to_json(model.config);
  j["temperature_stats"] = {{"t_min", model.temp_stats.t_min},
                            {"t_max", model.temp_stats.t_max},
                            {"t_inv_min", model.temp_stats.t_inv_min},
                            {"t_inv_max", model.temp_stats.t_inv_max}};
  json history = json::array();
  for (const EpochStats& e : model.history)
    history.push_back({{"epoch", e.epoch}, {"train_rmse", e.train_rmse}, {"val_rmse", e.val_rmse}});
  j["history"] = history;
  json encoder_history = json::array();
  for (const EpochStats& e : model.encoder_history)
    encoder_history.push_back(
        {{"epoch", e.epoch}, {"train_rmse", e.train_rmse}, {"val_rmse", e.val_rmse}});
  j["encoder_history"] = encoder_history;
  j["best_val_rmse"] = model.best_val_rmse;
  j["best_epoch"] = model.best_epoch;

  if (model.config.head == HeadKind::Kan) {
    j["kan"] = {{"widths", model.kan.widths},
                {"grid",
                 {{"lower", model.kan.grid.lower},
                  {"upper", model.kan.grid.upper},
                  {"intervals", model.kan.grid.intervals},
                  {"order", model.kan.grid.order}}},
                {"normalizer",
                 {{"min", model.kan.normalizer.min}, {"max", model.kan.normalizer.max}}}};
  }

  json params = json::object();
  for (const auto& [name, tensor] : named_parameters(model)) {
    params[name] = {{"shape", tensor.shape()}, {"data", base64_encode(tensor.values())}};
  }
  j["params"] = params;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump(1) << '\n';
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "PROKCAT-CKPT" || j.value("version", 0) != 1)
    throw std::runtime_error("checkpoint " + path + " has an unsupported format tag");

  TrainedModel model;
  model.config = config_from_json(j.at("config"));
  const json& ts = j.at("temperature_stats");
  model.temp_stats.t_min = ts.at("t_min").get<double>();
  model.temp_stats.t_max = ts.at("t_max").get<double>();
  model.temp_stats.t_inv_min = ts.at("t_inv_min").get<double>();
  model.temp_stats.t_inv_max = ts.at("t_inv_max").get<double>();
  for (const json& e : j.at("history"))
    model.history.push_back({e.at("epoch").get<int>(), e.at("train_rmse").get<double>(),
                             e.at("val_rmse").get<double>()});
  for (const json& e : j.value("encoder_history", json::array()))
    model.encoder_history.push_back({e.at("epoch").get<int>(), e.at("train_rmse").get<double>(),
                                     e.at("val_rmse").get<double>()});
  model.best_val_rmse = j.value("best_val_rmse", 0.0);
  model.best_epoch = j.value("best_epoch", -1);

  std::mt19937_64 scratch_rng(0);
  model.encoder = EncoderParams::init(model.config.d, model.config.ext_width, scratch_rng);
  model.attention = InteractionParams::init(model.config.d, model.config.heads, scratch_rng);
  if (model.config.head == HeadKind::Mlp) {
    model.mlp =
        MlpHeadParams::init(model.config.fused_width(), model.config.mlp_hidden, scratch_rng);
  } else {
    const json& k = j.at("kan");
    const json& grid = k.at("grid");
    model.kan = KanNetwork::init(
        k.at("widths").get<std::vector<int>>(),
        BSplineGrid::make(grid.at("lower").get<double>(), grid.at("upper").get<double>(),
                          grid.at("intervals").get<int>(), grid.at("order").get<int>()),
        scratch_rng);
    model.kan.normalizer.min = k.at("normalizer").at("min").get<std::vector<double>>();
    model.kan.normalizer.max = k.at("normalizer").at("max").get<std::vector<double>>();
    if (model.config.kan_projected)
      model.projections = ScalarProjections::init(model.config.d, scratch_rng);
  }

  const json& params = j.at("params");
  for (auto& [name, tensor] : named_parameters(model)) {
    if (!params.contains(name))
      throw std::runtime_error("checkpoint " + path + " is missing parameter " + name);
    const json& entry = params.at(name);
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != tensor.shape())
      throw std::runtime_error("checkpoint " + path + ": parameter " + name + " has shape " +
                               shape_to_string(shape) + ", expected " +
                               shape_to_string(tensor.shape()));
    tensor.raw_values() = base64_decode(entry.at("data").get<std::string>(), tensor.size());
  }
  return model;
}

}  // namespace prokcat
