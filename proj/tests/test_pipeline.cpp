#include "prokcat/pipeline.hpp"

#include "prokcat/rng.hpp"
#include "fd_check.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace prokcat;

namespace {

std::vector<KineticRecord> tiny_dataset(int n, unsigned long long seed, double noise = 0.1) {
  SyntheticOptions options;
  options.noise_sigma = noise;
  return generate_synthetic(n, seed, default_families(3, seed), options);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 4;
  c.heads = 1;
  c.mlp_hidden = {8};
  c.max_epochs = 6;
  c.patience = 3;
  c.batch_size = 8;
  c.seed = 7;
  return c;
}

struct TempPath {
  std::string path;
  explicit TempPath(std::string p) : path(std::move(p)) {}
  ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("temperature features normalize and clamp") {
  std::vector<KineticRecord> records;
  for (double celsius : {280.0 - 273.15, 300.0 - 273.15, 320.0 - 273.15}) {
    KineticRecord r;
    r.temperature_celsius = celsius;
    records.push_back(r);
  }
  TemperatureStats stats = fit_temperature_stats(records);
  CHECK(temperature_features(280.0, stats).first == doctest::Approx(-1.0));
  CHECK(temperature_features(320.0, stats).first == doctest::Approx(1.0));
  CHECK(temperature_features(300.0, stats).first == doctest::Approx(0.0));
  // 1/T normalization is independent: 1/300 is not the midpoint of [1/320, 1/280]
  CHECK(temperature_features(300.0, stats).second != doctest::Approx(0.0));

  bool clamped = false;
  auto [t, tinv] = temperature_features(400.0, stats, &clamped);
  CHECK(clamped);
  CHECK(t == 1.0);
  CHECK(tinv == -1.0);

  CHECK_THROWS_AS(temperature_features(-5.0, stats), std::invalid_argument);
}

TEST_CASE("fuse concatenates pooled features with temperature variables") {
  PooledFeatures pooled;
  pooled.protein = Tensor::from({2}, {1, 2});
  pooled.compound = Tensor::from({2}, {3, 4});
  pooled.fingerprint = Tensor::from({2}, {5, 6});
  Tensor fused = fuse(pooled, 0.25, -0.5);
  CHECK(fused.shape() == Shape{8});  // 3d+2 with d=2
  CHECK(fused.value_at(0) == 1.0);
  CHECK(fused.value_at(5) == 6.0);
  CHECK(fused.value_at(6) == 0.25);
  CHECK(fused.value_at(7) == -0.5);
}

TEST_CASE("ablations zero exactly the named streams") {
  std::mt19937_64 rng(3);
  EncoderParams enc = EncoderParams::init(4, 3, rng);
  InteractionParams att = InteractionParams::init(4, 1, rng);
  KineticRecord rec;
  rec.id = "r";
  rec.sequence = "MKVA";
  rec.smiles = "CCO";
  rec.temperature_celsius = 25;
  rec.kcat_per_second = 2.0;
  TemperatureStats stats;
  stats.t_min = 270;
  stats.t_max = 330;
  stats.t_inv_min = 1.0 / 330;
  stats.t_inv_max = 1.0 / 270;
  PreparedRecord prepared = prepare_record(rec, stats, nullptr);

  AblationFlags none;
  PooledFeatures full = pooled_features(prepared, enc, att, none);
  CHECK(full.protein.values().abs().sum() > 0);
  CHECK(full.compound.values().abs().sum() > 0);
  CHECK(full.fingerprint.values().abs().sum() > 0);

  AblationFlags no_enzyme;
  no_enzyme.no_enzyme = true;
  PooledFeatures pe = pooled_features(prepared, enc, att, no_enzyme);
  CHECK(pe.protein.values().abs().sum() == 0.0);
  CHECK(pe.compound.values().abs().sum() > 0);

  AblationFlags no_substrate;
  no_substrate.no_substrate = true;
  PooledFeatures ps = pooled_features(prepared, enc, att, no_substrate);
  CHECK(ps.compound.values().abs().sum() == 0.0);
  CHECK(ps.protein.values().abs().sum() > 0);

  AblationFlags no_fp;
  no_fp.no_fingerprint = true;
  PooledFeatures pf = pooled_features(prepared, enc, att, no_fp);
  CHECK(pf.fingerprint.values().abs().sum() == 0.0);

  // no_attention falls back to pooling the raw encoder outputs
  AblationFlags no_att;
  no_att.no_attention = true;
  PooledFeatures pa = pooled_features(prepared, enc, att, no_att);
  Tensor raw_protein = mean_pool(encode_protein(prepared.sequence, prepared.ext, enc, {}));
  for (int i = 0; i < 4; ++i)
    CHECK(pa.protein.value_at(i) == doctest::Approx(raw_protein.value_at(i)).epsilon(1e-12));
}

TEST_CASE("predict_mlp zero weights yield the output bias") {
  std::mt19937_64 rng(5);
  MlpHeadParams head = MlpHeadParams::init(6, {4}, rng);
  for (Tensor& t : head.parameters()) t.raw_values().setZero();
  head.biases[1].raw_values()(0) = 0.75;
  Tensor fused = Tensor::from({6}, {1, -1, 2, -2, 3, -3});
  CHECK(predict_mlp(fused, head).item() == doctest::Approx(0.75));

  MlpHeadParams linear_head = MlpHeadParams::init(6, {}, rng);
  CHECK(linear_head.parameter_count() == 7);
  CHECK(std::isfinite(predict_mlp(fused, linear_head).item()));
}

TEST_CASE("predict_mlp gradients match finite differences") {
  std::mt19937_64 rng(6);
  MlpHeadParams head = MlpHeadParams::init(5, {6, 3}, rng);
  Tensor fused = Tensor::from({5}, {0.3, -0.2, 0.8, 0.1, -0.6}, true);
  std::vector<Tensor> leaves = head.parameters();
  leaves.push_back(fused);
  auto report = fdtest::check_gradients(leaves, [&]() { return predict_mlp(fused, head); });
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("scalar projections: zero weights give biases, maps are linear") {
  std::mt19937_64 rng(8);
  ScalarProjections proj = ScalarProjections::init(3, rng);
  PooledFeatures pooled;
  pooled.protein = Tensor::from({3}, {1, 2, 3});
  pooled.compound = Tensor::from({3}, {-1, 0.5, 2});
  pooled.fingerprint = Tensor::from({3}, {0.25, 0.25, 0.5});

  ScalarProjections zeroed = ScalarProjections::init(3, rng);
  for (Tensor& t : zeroed.parameters()) t.raw_values().setZero();
  zeroed.b_p.raw_values()(0) = 0.1;
  zeroed.b_c.raw_values()(0) = 0.2;
  zeroed.b_f.raw_values()(0) = 0.3;
  std::vector<Tensor> outs = scalar_project(pooled, zeroed);
  CHECK(outs[0].item() == doctest::Approx(0.1));
  CHECK(outs[1].item() == doctest::Approx(0.2));
  CHECK(outs[2].item() == doctest::Approx(0.3));

  // linearity: f(2x) - f(0) = 2 (f(x) - f(0))
  PooledFeatures doubled;
  doubled.protein = pooled.protein + pooled.protein;
  doubled.compound = pooled.compound + pooled.compound;
  doubled.fingerprint = pooled.fingerprint + pooled.fingerprint;
  PooledFeatures zero;
  zero.protein = Tensor::zeros({3});
  zero.compound = Tensor::zeros({3});
  zero.fingerprint = Tensor::zeros({3});
  std::vector<Tensor> fx = scalar_project(pooled, proj);
  std::vector<Tensor> f2x = scalar_project(doubled, proj);
  std::vector<Tensor> f0 = scalar_project(zero, proj);
  for (int k = 0; k < 3; ++k) {
    CHECK(f2x[static_cast<size_t>(k)].item() - f0[static_cast<size_t>(k)].item() ==
          doctest::Approx(2.0 * (fx[static_cast<size_t>(k)].item() -
                                 f0[static_cast<size_t>(k)].item()))
              .epsilon(1e-12));
  }

  std::vector<Tensor> leaves = proj.parameters();
  auto report = fdtest::check_gradients(leaves, [&]() {
    std::vector<Tensor> p = scalar_project(pooled, proj);
    return p[0] + p[1] * p[2];
  });
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("predict_kan zero network and width mismatch") {
  std::mt19937_64 rng(9);
  KanNetwork net = KanNetwork::init({5, 1}, BSplineGrid::make(-1, 1, 5, 3), rng);
  for (Tensor& p : net.parameters()) p.raw_values().setZero();
  Tensor inputs = Tensor::from({5}, {0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK(predict_kan(inputs, net).item() == 0.0);
  CHECK_THROWS_AS(predict_kan(Tensor::zeros({4}), net), std::invalid_argument);
}

TEST_CASE("mse loss examples and oracle") {
  CHECK(mse_loss({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(mse_loss({0.0}, {2.0}) == 4.0);

  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng::uniform_int(rng, 30));
    std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
    double expected = 0;
    for (int i = 0; i < n; ++i) {
      a[static_cast<size_t>(i)] = rng::uniform(rng, -5, 5);
      b[static_cast<size_t>(i)] = rng::uniform(rng, -5, 5);
      const double diff = a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)];
      expected += diff * diff;
    }
    expected /= n;
    CHECK(mse_loss(a, b) == doctest::Approx(expected).epsilon(1e-12));
    // tensor path agrees
    Tensor ta = Tensor::from({n}, a);
    Tensor tb = Tensor::from({n}, b);
    CHECK(mse_loss(ta, tb).item() == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK_THROWS_AS(mse_loss({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("metrics examples") {
  Metrics perfect = compute_metrics({1, 2, 3}, {1, 2, 3});
  CHECK(perfect.rmse == 0.0);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.pcc.value() == doctest::Approx(1.0));
  CHECK(perfect.r2.value() == doctest::Approx(1.0));

  // constant prediction at the target mean has r2 = 0
  Metrics constant = compute_metrics({2, 2, 2}, {1, 2, 3});
  CHECK(constant.r2.value() == doctest::Approx(0.0));

  Metrics anti = compute_metrics({1, 2, 3}, {3, 2, 1});
  CHECK(anti.pcc.value() == doctest::Approx(-1.0));

  Metrics undefined = compute_metrics({1, 2, 3}, {2, 2, 2});
  CHECK(undefined.rmse > 0);
  CHECK_FALSE(undefined.pcc.has_value());
  CHECK_FALSE(undefined.r2.has_value());
}

TEST_CASE("metrics match brute-force textbook formulas") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng::uniform_int(rng, 40));
    std::vector<double> pred(static_cast<size_t>(n)), target(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      pred[static_cast<size_t>(i)] = rng::uniform(rng, -4, 4);
      target[static_cast<size_t>(i)] = rng::uniform(rng, -4, 4);
    }
    Metrics m = compute_metrics(pred, target);

    // independent brute-force implementations
    double sse = 0, sae = 0;
    for (int i = 0; i < n; ++i) {
      sse += std::pow(pred[static_cast<size_t>(i)] - target[static_cast<size_t>(i)], 2);
      sae += std::abs(pred[static_cast<size_t>(i)] - target[static_cast<size_t>(i)]);
    }
    CHECK(std::abs(m.rmse - std::sqrt(sse / n)) < 1e-10);
    CHECK(std::abs(m.mae - sae / n) < 1e-10);

    double mp = 0, mt = 0;
    for (int i = 0; i < n; ++i) {
      mp += pred[static_cast<size_t>(i)];
      mt += target[static_cast<size_t>(i)];
    }
    mp /= n;
    mt /= n;
    double cov = 0, vp = 0, vt = 0;
    for (int i = 0; i < n; ++i) {
      cov += (pred[static_cast<size_t>(i)] - mp) * (target[static_cast<size_t>(i)] - mt);
      vp += std::pow(pred[static_cast<size_t>(i)] - mp, 2);
      vt += std::pow(target[static_cast<size_t>(i)] - mt, 2);
    }
    CHECK(std::abs(m.pcc.value() - cov / std::sqrt(vp * vt)) < 1e-10);
    CHECK(std::abs(m.r2.value() - (1.0 - sse / vt)) < 1e-10);
  }
}

TEST_CASE("r2 equals pcc^2 for positive-slope affine predictions") {
  std::mt19937_64 rng(12);
  std::vector<double> target(25);
  for (double& t : target) t = rng::uniform(rng, -3, 3);
  // pred affine in target with positive slope: r2 == pcc^2 exactly when the
  // affine map is the least-squares fit; test the regression construction
  double mt = 0;
  for (double t : target) mt += t;
  mt /= static_cast<double>(target.size());
  std::vector<double> noise_free(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) noise_free[i] = 2.0 * target[i] - 1.0;
  Metrics exact = compute_metrics(noise_free, target);
  CHECK(exact.pcc.value() == doctest::Approx(1.0).epsilon(1e-12));

  // r2 == pcc^2 exactly when pred is the least-squares affine fit of the
  // target on a (positively correlated) raw predictor
  std::vector<double> raw(target.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    raw[i] = 1.5 * target[i] + rng::normal(rng, 0, 0.8);
  double mq = 0;
  for (double v : raw) mq += v;
  mq /= static_cast<double>(raw.size());
  double cov = 0, vq = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    cov += (target[i] - mt) * (raw[i] - mq);
    vq += (raw[i] - mq) * (raw[i] - mq);
  }
  const double slope = cov / vq;  // OLS of target on raw
  CHECK(slope > 0);
  std::vector<double> fitted(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) fitted[i] = mt + slope * (raw[i] - mq);
  Metrics m = compute_metrics(fitted, target);
  CHECK(m.r2.value() == doctest::Approx(m.pcc.value() * m.pcc.value()).epsilon(1e-9));
}

TEST_CASE("end-to-end gradients on a tiny model (sampled coordinates)") {
  std::mt19937_64 rng(13);
  EncoderParams enc = EncoderParams::init(4, 3, rng);
  InteractionParams att = InteractionParams::init(4, 1, rng);
  MlpHeadParams head = MlpHeadParams::init(14, {6}, rng);

  KineticRecord rec;
  rec.id = "fd";
  rec.sequence = "MKVAД";  // placeholder replaced below
  rec.sequence = "MKVAC";
  rec.smiles = "CCO";
  rec.temperature_celsius = 30;
  rec.kcat_per_second = 4.0;
  TemperatureStats stats;
  stats.t_min = 280;
  stats.t_max = 340;
  stats.t_inv_min = 1.0 / 340;
  stats.t_inv_max = 1.0 / 280;
  PreparedRecord prepared = prepare_record(rec, stats, nullptr);

  std::vector<Tensor> leaves = enc.parameters();
  std::vector<Tensor> att_params = att.parameters();
  leaves.insert(leaves.end(), att_params.begin(), att_params.end());
  std::vector<Tensor> head_params = head.parameters();
  leaves.insert(leaves.end(), head_params.begin(), head_params.end());

  fdtest::FdOptions options;
  options.max_coords_per_leaf = 24;
  auto report = fdtest::check_gradients(
      leaves,
      [&]() {
        PooledFeatures pooled = pooled_features(prepared, enc, att, {});
        Tensor pred = predict_mlp(fuse(pooled, prepared.t_norm, prepared.t_inv_norm), head);
        return mse_loss(pred, Tensor::from({1}, {prepared.target_log10}));
      },
      options);
  CHECK_MESSAGE(report.ok, report.detail);
}

TEST_CASE("training on constant targets converges to a constant predictor") {
  std::vector<KineticRecord> records = tiny_dataset(24, 21, 0.0);
  for (auto& r : records) r.kcat_per_second = 100.0;  // log10 = 2 everywhere
  std::vector<KineticRecord> train_split(records.begin(), records.begin() + 18);
  std::vector<KineticRecord> val_split(records.begin() + 18, records.end());
  ModelConfig config = tiny_config();
  config.max_epochs = 60;
  config.patience = 60;
  config.learning_rate = 5e-3;
  TrainedModel model = train(train_split, val_split, config);
  CHECK(model.history.back().train_rmse < 0.05);
}

TEST_CASE("training is deterministic for a fixed seed") {
  std::vector<KineticRecord> records = tiny_dataset(30, 22);
  std::vector<KineticRecord> train_split(records.begin(), records.begin() + 24);
  std::vector<KineticRecord> val_split(records.begin() + 24, records.end());
  ModelConfig config = tiny_config();
  TrainedModel a = train(train_split, val_split, config);
  TrainedModel b = train(train_split, val_split, config);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_rmse == b.history[i].train_rmse);
    CHECK(a.history[i].val_rmse == b.history[i].val_rmse);
  }
  Prediction pa = predict(a, records[0]);
  Prediction pb = predict(b, records[0]);
  CHECK(pa.log10_kcat == pb.log10_kcat);
}

TEST_CASE("early stopping returns the best validation snapshot") {
  std::vector<KineticRecord> records = tiny_dataset(40, 23);
  std::vector<KineticRecord> train_split(records.begin(), records.begin() + 32);
  std::vector<KineticRecord> val_split(records.begin() + 32, records.end());
  ModelConfig config = tiny_config();
  config.max_epochs = 15;
  config.patience = 4;
  TrainedModel model = train(train_split, val_split, config);

  double best = std::numeric_limits<double>::infinity();
  for (const EpochStats& e : model.history) best = std::min(best, e.val_rmse);
  CHECK(model.best_val_rmse == best);

  // the returned parameters reproduce the best epoch's validation RMSE
  double sse = 0;
  for (const KineticRecord& r : val_split) {
    const double diff = predict(model, r).log10_kcat - std::log10(r.kcat_per_second);
    sse += diff * diff;
  }
  CHECK(std::sqrt(sse / static_cast<double>(val_split.size())) ==
        doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("non-finite loss aborts with a diagnostic naming epoch and batch") {
  std::vector<KineticRecord> records = tiny_dataset(16, 24);
  std::vector<KineticRecord> train_split(records.begin(), records.begin() + 12);
  std::vector<KineticRecord> val_split(records.begin() + 12, records.end());
  ModelConfig config = tiny_config();
  config.learning_rate = 1e160;  // guaranteed overflow on the second step
  config.max_epochs = 3;
  CHECK_THROWS_WITH_AS(train(train_split, val_split, config), doctest::Contains("non-finite"),
                       std::runtime_error);
}

TEST_CASE("prediction flags out-of-range temperatures and is repeatable") {
  std::vector<KineticRecord> records = tiny_dataset(30, 25);
  std::vector<KineticRecord> train_split(records.begin(), records.begin() + 24);
  std::vector<KineticRecord> val_split(records.begin() + 24, records.end());
  TrainedModel model = train(train_split, val_split, tiny_config());

  Prediction first = predict(model, train_split[0]);
  Prediction second = predict(model, train_split[0]);
  CHECK(first.log10_kcat == second.log10_kcat);
  CHECK(first.kcat == doctest::Approx(std::pow(10.0, first.log10_kcat)));
  CHECK_FALSE(first.out_of_range);

  KineticRecord hot = train_split[0];
  hot.temperature_celsius = 120;
  CHECK(predict(model, hot).out_of_range);

  std::vector<Prediction> batch = predict_batch(model, val_split);
  REQUIRE(batch.size() == val_split.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    CHECK(batch[i].log10_kcat == predict(model, val_split[i]).log10_kcat);

  KineticRecord broken = train_split[0];
  broken.smiles = "C(";
  CHECK_THROWS_WITH_AS(predict(model, broken), doctest::Contains(broken.id.c_str()), std::runtime_error);
}

TEST_CASE("checkpoint round trip reproduces predictions bit-exactly") {
  std::vector<KineticRecord> records = tiny_dataset(30, 26);
  std::vector<KineticRecord> train_split(records.begin(), records.begin() + 24);
  std::vector<KineticRecord> val_split(records.begin() + 24, records.end());

  // MLP head
  TrainedModel mlp_model = train(train_split, val_split, tiny_config());
  TempPath mlp_path("ckpt_mlp_test.json");
  save_checkpoint(mlp_model, mlp_path.path);
  TrainedModel mlp_loaded = load_checkpoint(mlp_path.path);
  CHECK(mlp_loaded.config.d == mlp_model.config.d);
  CHECK(mlp_loaded.history.size() == mlp_model.history.size());
  for (const KineticRecord& r : val_split)
    CHECK(predict(mlp_loaded, r).log10_kcat == predict(mlp_model, r).log10_kcat);

  // KAN head (frozen mode trains an internal encoder phase first)
  ModelConfig kan_config = tiny_config();
  kan_config.head = HeadKind::Kan;
  kan_config.max_epochs = 4;
  TrainedModel kan_model = train(train_split, val_split, kan_config);
  CHECK_FALSE(kan_model.encoder_history.empty());
  TempPath kan_path("ckpt_kan_test.json");
  save_checkpoint(kan_model, kan_path.path);
  TrainedModel kan_loaded = load_checkpoint(kan_path.path);
  for (const KineticRecord& r : val_split)
    CHECK(predict(kan_loaded, r).log10_kcat == predict(kan_model, r).log10_kcat);

  // corrupted and wrong-format files are rejected
  TempPath bad("ckpt_bad_test.json");
  {
    std::ofstream out(bad.path);
    out << "{\"format\": \"SOMETHING-ELSE\"}";
  }
  CHECK_THROWS_AS(load_checkpoint(bad.path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint("missing_ckpt.json"), std::runtime_error);
}

TEST_CASE("joint-mode KAN training runs end to end") {
  std::vector<KineticRecord> records = tiny_dataset(20, 27);
  std::vector<KineticRecord> train_split(records.begin(), records.begin() + 16);
  std::vector<KineticRecord> val_split(records.begin() + 16, records.end());
  ModelConfig config = tiny_config();
  config.head = HeadKind::Kan;
  config.kan_mode = KanTrainMode::Joint;
  config.max_epochs = 3;
  TrainedModel model = train(train_split, val_split, config);
  CHECK(model.encoder_history.empty());
  CHECK(model.history.size() <= 3);
  CHECK(std::isfinite(predict(model, val_split[0]).log10_kcat));
}

TEST_CASE("empty splits and oversized KAN depth are rejected") {
  std::vector<KineticRecord> records = tiny_dataset(12, 28);
  std::vector<KineticRecord> empty;
  CHECK_THROWS_AS(train(empty, records, tiny_config()), std::invalid_argument);
  CHECK_THROWS_AS(train(records, empty, tiny_config()), std::invalid_argument);

  ModelConfig deep = tiny_config();
  deep.head = HeadKind::Kan;
  deep.kan_hidden = {4, 4, 4};
  CHECK_THROWS_AS(train(records, records, deep), std::invalid_argument);
}
