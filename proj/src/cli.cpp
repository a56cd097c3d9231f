#include "prokcat/cli.hpp"

#include "prokcat/data.hpp"
#include "prokcat/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace prokcat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitBadCheckpoint = 3;

struct CliError : std::runtime_error {
  int code;
  CliError(int code_, const std::string& message) : std::runtime_error(message), code(code_) {}
};

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Everything a command can need; loaded from the JSON config file, then
// overridden by command-line flags.
struct RunConfig {
  ModelConfig model;
  int seeds = 1;
  std::string dataset;
  std::string embeddings;
  std::string checkpoint;
  std::string input;
  std::string out_dir = "out";
  bool quiet = false;
  OversampleOptions oversample;
  std::vector<int> sweep_dims = {16, 32, 64, 128, 256};
  std::string attention_out;
};

const std::map<std::string, int>& config_keys() {
  static const std::map<std::string, int> keys = {
      {"dataset", 0},        {"embeddings", 0},       {"checkpoint", 0},
      {"input", 0},          {"out", 0},              {"d", 0},
      {"heads", 0},          {"head", 0},             {"mlp_hidden", 0},
      {"kan_projected", 0},  {"kan_hidden", 0},       {"kan_grid_intervals", 0},
      {"kan_order", 0},      {"kan_refine_steps", 0}, {"kan_mode", 0},
      {"learning_rate", 0},  {"batch_size", 0},       {"max_epochs", 0},
      {"patience", 0},       {"seed", 0},             {"seeds", 0},
      {"ext_width", 0},      {"no_attention", 0},     {"no_cnn", 0},
      {"no_ext_embedding", 0}, {"no_enzyme", 0},      {"no_substrate", 0},
      {"no_fingerprint", 0}, {"oversample_low", 0},   {"oversample_high", 0},
      {"oversample_fraction", 0}, {"oversample_cap", 0}, {"sweep_dims", 0},
  };
  return keys;
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError(kExitBadInput, "cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CliError(kExitBadInput, "config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw CliError(kExitBadInput, "config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!config_keys().count(key))
      throw CliError(kExitBadInput, "unknown config key: " + key);
    try {
      if (key == "dataset") cfg.dataset = value.get<std::string>();
      else if (key == "embeddings") cfg.embeddings = value.get<std::string>();
      else if (key == "checkpoint") cfg.checkpoint = value.get<std::string>();
      else if (key == "input") cfg.input = value.get<std::string>();
      else if (key == "out") cfg.out_dir = value.get<std::string>();
      else if (key == "d") cfg.model.d = value.get<int>();
      else if (key == "heads") cfg.model.heads = value.get<int>();
      else if (key == "head") {
        const std::string head = value.get<std::string>();
        if (head != "mlp" && head != "kan")
          throw CliError(kExitBadInput, "config head must be 'mlp' or 'kan'");
        cfg.model.head = head == "kan" ? HeadKind::Kan : HeadKind::Mlp;
      } else if (key == "mlp_hidden") cfg.model.mlp_hidden = value.get<std::vector<int>>();
      else if (key == "kan_projected") cfg.model.kan_projected = value.get<bool>();
      else if (key == "kan_hidden") cfg.model.kan_hidden = value.get<std::vector<int>>();
      else if (key == "kan_grid_intervals") cfg.model.kan_grid_intervals = value.get<int>();
      else if (key == "kan_order") cfg.model.kan_order = value.get<int>();
      else if (key == "kan_refine_steps") cfg.model.kan_refine_steps = value.get<int>();
      else if (key == "kan_mode") {
        const std::string mode = value.get<std::string>();
        if (mode != "frozen" && mode != "joint")
          throw CliError(kExitBadInput, "config kan_mode must be 'frozen' or 'joint'");
        cfg.model.kan_mode = mode == "joint" ? KanTrainMode::Joint : KanTrainMode::Frozen;
      } else if (key == "learning_rate") cfg.model.learning_rate = value.get<double>();
      else if (key == "batch_size") cfg.model.batch_size = value.get<int>();
      else if (key == "max_epochs") cfg.model.max_epochs = value.get<int>();
      else if (key == "patience") cfg.model.patience = value.get<int>();
      else if (key == "seed") cfg.model.seed = value.get<unsigned long long>();
      else if (key == "seeds") cfg.seeds = value.get<int>();
      else if (key == "ext_width") cfg.model.ext_width = value.get<int>();
      else if (key == "no_attention") cfg.model.ablation.no_attention = value.get<bool>();
      else if (key == "no_cnn") cfg.model.ablation.no_cnn = value.get<bool>();
      else if (key == "no_ext_embedding") cfg.model.ablation.no_ext_embedding = value.get<bool>();
      else if (key == "no_enzyme") cfg.model.ablation.no_enzyme = value.get<bool>();
      else if (key == "no_substrate") cfg.model.ablation.no_substrate = value.get<bool>();
      else if (key == "no_fingerprint") cfg.model.ablation.no_fingerprint = value.get<bool>();
      else if (key == "oversample_low") cfg.oversample.low_cutoff_celsius = value.get<double>();
      else if (key == "oversample_high") cfg.oversample.high_cutoff_celsius = value.get<double>();
      else if (key == "oversample_fraction") cfg.oversample.target_fraction = value.get<double>();
      else if (key == "oversample_cap") cfg.oversample.max_copies = value.get<int>();
      else if (key == "sweep_dims") cfg.sweep_dims = value.get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw CliError(kExitBadInput, "config key " + key + ": " + e.what());
    }
  }
}

json effective_config_json(const RunConfig& cfg) {
  json j;
  j["dataset"] = cfg.dataset;
  j["embeddings"] = cfg.embeddings;
  j["checkpoint"] = cfg.checkpoint;
  j["input"] = cfg.input;
  j["out"] = cfg.out_dir;
  j["d"] = cfg.model.d;
  j["heads"] = cfg.model.heads;
  j["head"] = cfg.model.head == HeadKind::Kan ? "kan" : "mlp";
  j["mlp_hidden"] = cfg.model.mlp_hidden;
  j["kan_projected"] = cfg.model.kan_projected;
  j["kan_hidden"] = cfg.model.kan_hidden;
  j["kan_grid_intervals"] = cfg.model.kan_grid_intervals;
  j["kan_order"] = cfg.model.kan_order;
  j["kan_refine_steps"] = cfg.model.kan_refine_steps;
  j["kan_mode"] = cfg.model.kan_mode == KanTrainMode::Joint ? "joint" : "frozen";
  j["learning_rate"] = cfg.model.learning_rate;
  j["batch_size"] = cfg.model.batch_size;
  j["max_epochs"] = cfg.model.max_epochs;
  j["patience"] = cfg.model.patience;
  j["seed"] = cfg.model.seed;
  j["seeds"] = cfg.seeds;
  j["ext_width"] = cfg.model.ext_width;
  j["no_attention"] = cfg.model.ablation.no_attention;
  j["no_cnn"] = cfg.model.ablation.no_cnn;
  j["no_ext_embedding"] = cfg.model.ablation.no_ext_embedding;
  j["no_enzyme"] = cfg.model.ablation.no_enzyme;
  j["no_substrate"] = cfg.model.ablation.no_substrate;
  j["no_fingerprint"] = cfg.model.ablation.no_fingerprint;
  j["oversample_low"] = cfg.oversample.low_cutoff_celsius;
  j["oversample_high"] = cfg.oversample.high_cutoff_celsius;
  j["oversample_fraction"] = cfg.oversample.target_fraction;
  j["oversample_cap"] = cfg.oversample.max_copies;
  j["sweep_dims"] = cfg.sweep_dims;
  return j;
}

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw CliError(kExitBadInput, "cannot create output directory " + cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "config.json");
  out << effective_config_json(cfg).dump(1) << '\n';
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw CliError(kExitBadInput, what + " path not set");
  if (!fs::exists(path)) throw CliError(kExitBadInput, what + " not found: " + path);
}

int thread_budget(int jobs) {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("PROKCAT_THREADS")) {
    const int requested = std::atoi(env);
    if (requested >= 1) cap = requested;
  }
  return std::min(cap, jobs);
}

// Runs jobs in parallel with a bounded pool; results land by index, so the
// output order is independent of scheduling.
void run_parallel(int jobs, int threads, const std::function<void(int)>& work) {
  if (threads <= 1) {
    for (int i = 0; i < jobs; ++i) work(i);
    return;
  }
  std::vector<std::thread> pool;
  std::mutex error_mutex;
  std::string first_error;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      for (int i = t; i < jobs; i += threads) {
        try {
          work(i);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (first_error.empty()) first_error = e.what();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (!first_error.empty()) throw std::runtime_error(first_error);
}

struct SplitMetrics {
  Metrics train, validation, test;
};

SplitMetrics evaluate_model(const TrainedModel& model, const DatasetSplits& splits,
                            const ResidueEmbeddingFile* embeddings) {
  auto eval_split = [&](const std::vector<KineticRecord>& records) {
    std::vector<double> pred, target;
    for (const KineticRecord& r : records) {
      pred.push_back(predict(model, r, embeddings).log10_kcat);
      target.push_back(std::log10(r.kcat_per_second));
    }
    return compute_metrics(pred, target);
  };
  return {eval_split(splits.train), eval_split(splits.validation), eval_split(splits.test)};
}

std::string metric_or_undef(const std::optional<double>& v) {
  return v ? format_double(*v) : "undef";
}

void write_metrics_files(const RunConfig& cfg,
                         const std::vector<std::pair<unsigned long long, SplitMetrics>>& rows) {
  std::ofstream tsv(fs::path(cfg.out_dir) / "metrics.tsv");
  tsv << "seed\tsplit\trmse\tpcc\tmae\tr2\n";
  auto emit = [&tsv](const std::string& seed, const std::string& split, const Metrics& m) {
    tsv << seed << '\t' << split << '\t' << format_double(m.rmse) << '\t'
        << metric_or_undef(m.pcc) << '\t' << format_double(m.mae) << '\t'
        << metric_or_undef(m.r2) << '\n';
  };
  for (const auto& [seed, sm] : rows) {
    emit(std::to_string(seed), "train", sm.train);
    emit(std::to_string(seed), "validation", sm.validation);
    emit(std::to_string(seed), "test", sm.test);
  }
  if (rows.size() > 1) {
    // mean and sample std across seeds, per split and metric
    auto stats = [&](auto getter) {
      std::map<std::string, std::pair<Metrics, Metrics>> agg;  // split -> (mean, std)
      for (const std::string& split : {"train", "validation", "test"}) {
        std::vector<Metrics> ms;
        for (const auto& [seed, sm] : rows)
          ms.push_back(split == std::string("train")        ? sm.train
                       : split == std::string("validation") ? sm.validation
                                                            : sm.test);
        (void)getter;
        Metrics mean, stdev;
        auto reduce = [&](auto field_mean, auto field_set) {
          const auto n = static_cast<double>(ms.size());
          double mu = 0;
          for (const Metrics& m : ms) mu += field_mean(m);
          mu /= n;
          double var = 0;
          for (const Metrics& m : ms) var += (field_mean(m) - mu) * (field_mean(m) - mu);
          var /= (n - 1);
          field_set(mean, mu);
          field_set(stdev, std::sqrt(var));
        };
        reduce([](const Metrics& m) { return m.rmse; },
               [](Metrics& m, double v) { m.rmse = v; });
        reduce([](const Metrics& m) { return m.mae; },
               [](Metrics& m, double v) { m.mae = v; });
        const bool defined =
            std::all_of(ms.begin(), ms.end(), [](const Metrics& m) { return m.pcc && m.r2; });
        if (defined) {
          double mu_p = 0, mu_r = 0;
          for (const Metrics& m : ms) {
            mu_p += *m.pcc;
            mu_r += *m.r2;
          }
          mu_p /= static_cast<double>(ms.size());
          mu_r /= static_cast<double>(ms.size());
          double var_p = 0, var_r = 0;
          for (const Metrics& m : ms) {
            var_p += (*m.pcc - mu_p) * (*m.pcc - mu_p);
            var_r += (*m.r2 - mu_r) * (*m.r2 - mu_r);
          }
          var_p /= static_cast<double>(ms.size() - 1);
          var_r /= static_cast<double>(ms.size() - 1);
          mean.pcc = mu_p;
          mean.r2 = mu_r;
          stdev.pcc = std::sqrt(var_p);
          stdev.r2 = std::sqrt(var_r);
        }
        agg[split] = {mean, stdev};
      }
      return agg;
    };
    auto agg = stats(0);
    for (const std::string& split : {"train", "validation", "test"})
      emit("mean", split, agg[split].first);
    for (const std::string& split : {"train", "validation", "test"})
      emit("std", split, agg[split].second);
  }
  tsv.close();

  std::ofstream txt(fs::path(cfg.out_dir) / "metrics.txt");
  txt << "seed        split        rmse      pcc       mae       r2\n";
  auto emit_txt = [&txt](const std::string& seed, const std::string& split, const Metrics& m) {
    char line[160];
    std::snprintf(line, sizeof line, "%-11s %-12s %-9s %-9s %-9s %-9s\n", seed.c_str(),
                  split.c_str(), fixed4(m.rmse).c_str(),
                  (m.pcc ? fixed4(*m.pcc) : std::string("undef")).c_str(), fixed4(m.mae).c_str(),
                  (m.r2 ? fixed4(*m.r2) : std::string("undef")).c_str());
    txt << line;
  };
  for (const auto& [seed, sm] : rows) {
    emit_txt(std::to_string(seed), "train", sm.train);
    emit_txt(std::to_string(seed), "validation", sm.validation);
    emit_txt(std::to_string(seed), "test", sm.test);
  }
}

// --- commands ------------------------------------------------------------

int cmd_train(RunConfig cfg) {
  require_file(cfg.dataset, "dataset");
  if (!cfg.embeddings.empty()) require_file(cfg.embeddings, "embedding file");
  if (cfg.seeds < 1) throw CliError(kExitBadInput, "seeds must be >= 1");
  ensure_out_dir(cfg);

  LoadResult loaded = load_dataset(cfg.dataset);
  if (!cfg.quiet) {
    for (const RowError& e : loaded.errors)
      std::cerr << cfg.dataset << ":" << e.line << ": " << e.message << '\n';
  }
  if (loaded.records.empty()) throw CliError(kExitBadInput, "dataset has no valid records");

  std::unique_ptr<ResidueEmbeddingFile> embeddings;
  if (!cfg.embeddings.empty())
    embeddings = std::make_unique<ResidueEmbeddingFile>(load_residue_embeddings(cfg.embeddings));

  const std::vector<KineticRecord> deduped = deduplicate(loaded.records);
  const std::vector<KineticRecord> grown =
      oversample_temperature(deduped, cfg.oversample, cfg.model.seed);
  DatasetSplits splits = split(grown, cfg.model.seed);
  splits.raw_count = loaded.records.size();
  splits.dedup_count = deduped.size();
  splits.oversampled_count = grown.size();
  if (!cfg.quiet) {
    std::cerr << "records: raw " << splits.raw_count << ", dedup " << splits.dedup_count
              << ", oversampled " << splits.oversampled_count << "; split " << splits.train.size()
              << "/" << splits.validation.size() << "/" << splits.test.size() << '\n';
  }

  std::vector<TrainedModel> models(static_cast<size_t>(cfg.seeds));
  std::vector<std::pair<unsigned long long, SplitMetrics>> rows(static_cast<size_t>(cfg.seeds));
  run_parallel(cfg.seeds, thread_budget(cfg.seeds), [&](int k) {
    ModelConfig mc = cfg.model;
    mc.seed = cfg.model.seed + static_cast<unsigned long long>(k);
    EpochCallback cb;
    if (!cfg.quiet && cfg.seeds == 1) {
      cb = [](const EpochStats& e) {
        std::cerr << "epoch " << e.epoch << " train_rmse " << fixed4(e.train_rmse) << " val_rmse "
                  << fixed4(e.val_rmse) << '\n';
      };
    }
    TrainedModel model = train(splits.train, splits.validation, mc, embeddings.get(), cb);
    rows[static_cast<size_t>(k)] = {mc.seed, evaluate_model(model, splits, embeddings.get())};
    models[static_cast<size_t>(k)] = std::move(model);
  });

  save_checkpoint(models[0], (fs::path(cfg.out_dir) / "checkpoint.json").string());
  for (std::size_t k = 1; k < models.size(); ++k) {
    save_checkpoint(models[k], (fs::path(cfg.out_dir) /
                                ("checkpoint_seed" + std::to_string(rows[k].first) + ".json"))
                                   .string());
  }

  std::ofstream history(fs::path(cfg.out_dir) / "history.tsv");
  history << "seed\tphase\tepoch\ttrain_rmse\tval_rmse\n";
  for (std::size_t k = 0; k < models.size(); ++k) {
    for (const EpochStats& e : models[k].encoder_history)
      history << rows[k].first << "\tencoder\t" << e.epoch << '\t' << format_double(e.train_rmse)
              << '\t' << format_double(e.val_rmse) << '\n';
    for (const EpochStats& e : models[k].history)
      history << rows[k].first << "\thead\t" << e.epoch << '\t' << format_double(e.train_rmse)
              << '\t' << format_double(e.val_rmse) << '\n';
  }
  history.close();

  write_metrics_files(cfg, rows);
  return kExitOk;
}

int cmd_predict(RunConfig cfg) {
  require_file(cfg.checkpoint, "checkpoint");
  require_file(cfg.input, "input");
  ensure_out_dir(cfg);
  TrainedModel model = load_checkpoint(cfg.checkpoint);
  std::unique_ptr<ResidueEmbeddingFile> embeddings;
  if (!cfg.embeddings.empty())
    embeddings = std::make_unique<ResidueEmbeddingFile>(load_residue_embeddings(cfg.embeddings));

  LoadResult loaded = load_dataset(cfg.input, /*allow_missing_kcat=*/true);
  for (const RowError& e : loaded.errors)
    std::cerr << cfg.input << ":" << e.line << ": " << e.message << '\n';

  std::ofstream out(fs::path(cfg.out_dir) / "predictions.tsv");
  out << "id\tlog10_kcat_pred\tkcat_pred\tout_of_range\n";
  std::ofstream attention_out;
  if (!cfg.attention_out.empty()) {
    attention_out.open(cfg.attention_out);
    attention_out << "id\thead\tstream\tposition\tweight\n";
  }

  std::size_t successes = 0, failures = loaded.errors.size();
  for (const KineticRecord& r : loaded.records) {
    try {
      const Prediction p = predict(model, r, embeddings.get());
      out << r.id << '\t' << format_double(p.log10_kcat) << '\t' << format_double(p.kcat) << '\t'
          << (p.out_of_range ? 1 : 0) << '\n';
      if (attention_out.is_open()) {
        PreparedRecord prepared = prepare_record(r, model.temp_stats, embeddings.get());
        Tensor h_p = encode_protein(prepared.sequence, prepared.ext, model.encoder, {});
        Tensor h_c = encode_substrate(prepared.graph, model.encoder);
        for (std::size_t h = 0; h < model.attention.heads.size(); ++h) {
          InteractionOutput io = single_head_interaction(h_p, h_c, model.attention.heads[h]);
          for (Eigen::Index i = 0; i < io.alpha_p.size(); ++i)
            attention_out << r.id << '\t' << h << "\tprotein\t" << i << '\t'
                          << format_double(io.alpha_p.value_at(i)) << '\n';
          for (Eigen::Index i = 0; i < io.alpha_c.size(); ++i)
            attention_out << r.id << '\t' << h << "\tcompound\t" << i << '\t'
                          << format_double(io.alpha_c.value_at(i)) << '\n';
        }
      }
      ++successes;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      ++failures;
    }
  }
  if (successes == 0 && failures > 0)
    throw CliError(kExitBadInput, "no input record could be predicted");
  return kExitOk;
}

json formula_node_json(const FormulaNode& node) {
  json j;
  switch (node.kind) {
    case FormulaNode::Kind::Input:
      j["kind"] = "input";
      j["index"] = node.input;
      j["name"] = node.input_name;
      break;
    case FormulaNode::Kind::Constant:
      j["kind"] = "constant";
      j["value"] = node.constant;
      break;
    case FormulaNode::Kind::Sum: {
      j["kind"] = "sum";
      j["constant"] = node.constant;
      json terms = json::array();
      for (const auto& t : node.terms) terms.push_back(formula_node_json(*t));
      j["terms"] = terms;
      break;
    }
    case FormulaNode::Kind::Primitive:
      j["kind"] = "primitive";
      j["primitive"] = primitive_name(node.fit.kind);
      j["a"] = node.fit.a;
      j["b"] = node.fit.b;
      j["c"] = node.fit.c;
      j["e"] = node.fit.e;
      j["argument"] = formula_node_json(*node.argument);
      break;
  }
  return j;
}

int cmd_extract_formula(RunConfig cfg) {
  require_file(cfg.checkpoint, "checkpoint");
  TrainedModel model = load_checkpoint(cfg.checkpoint);
  if (model.config.head != HeadKind::Kan)
    throw CliError(kExitBadCheckpoint,
                   "checkpoint holds an MLP head; formula extraction needs a KAN head");
  ensure_out_dir(cfg);

  std::vector<std::string> names;
  if (model.config.kan_projected) {
    names = kan_input_names();
  } else {
    for (const std::string& stem : {"h_p", "h_c", "h_f"})
      for (int i = 0; i < model.config.d; ++i) names.push_back(stem + std::to_string(i));
    names.push_back("T");
    names.push_back("T_inv");
  }
  SymbolicFormula formula = extract_formula(model.kan, names);

  std::cout << formula.text << '\n';
  {
    std::ofstream txt(fs::path(cfg.out_dir) / "formula.txt");
    txt << formula.text << '\n';
  }
  {
    json j;
    j["text"] = formula.text;
    j["inputs"] = formula.input_names;
    j["tree"] = formula_node_json(*formula.root);
    std::ofstream jf(fs::path(cfg.out_dir) / "formula.json");
    jf << j.dump(1) << '\n';
  }
  {
    std::ofstream fits(fs::path(cfg.out_dir) / "edge_fits.tsv");
    fits << "layer\tin\tout\tprimitive\ta\tb\tc\te\tr2\trmse\n";
    std::size_t idx = 0;
    for (std::size_t l = 0; l < model.kan.layers.size(); ++l) {
      const KanLayer& layer = model.kan.layers[l];
      for (int j = 0; j < layer.out_width; ++j) {
        for (int i = 0; i < layer.in_width; ++i) {
          const PrimitiveFit& f = formula.edge_fits[idx++];
          fits << l << '\t' << i << '\t' << j << '\t' << primitive_name(f.kind) << '\t'
               << format_double(f.a) << '\t' << format_double(f.b) << '\t' << format_double(f.c)
               << '\t' << format_double(f.e) << '\t' << format_double(f.r2) << '\t'
               << format_double(f.rmse) << '\n';
        }
      }
    }
  }
  return kExitOk;
}

int cmd_analyze(RunConfig cfg) {
  require_file(cfg.dataset, "dataset");
  ensure_out_dir(cfg);
  LoadResult loaded = load_dataset(cfg.dataset);
  bool any_ec = false;
  for (const KineticRecord& r : loaded.records)
    if (r.ec_number) any_ec = true;
  if (!any_ec) std::cerr << "warning: dataset has no EC annotations\n";

  const std::vector<EcClassCorrelation> table = ec_class_correlation(loaded.records);
  std::ofstream out(fs::path(cfg.out_dir) / "ec_correlation.tsv");
  out << "ec_class\tn\tpearson_r\tp_value\tsignificant\n";
  for (const EcClassCorrelation& row : table) {
    out << row.ec_class << '\t' << row.n << '\t';
    if (!row.sufficient) {
      out << "insufficient\tinsufficient\tinsufficient\n";
    } else {
      out << format_double(row.pearson_r) << '\t' << format_double(row.p_value) << '\t'
          << (row.significant ? 1 : 0) << '\n';
    }
  }
  if (!cfg.quiet) {
    for (const EcClassCorrelation& row : table) {
      if (row.sufficient) {
        std::cout << "EC " << row.ec_class << ": n=" << row.n << " r=" << fixed4(row.pearson_r)
                  << " p=" << format_double(row.p_value)
                  << (row.significant ? " significant" : "") << '\n';
      } else {
        std::cout << "EC " << row.ec_class << ": n=" << row.n << " insufficient\n";
      }
    }
  }
  return kExitOk;
}

int cmd_sweep(RunConfig cfg) {
  require_file(cfg.dataset, "dataset");
  if (cfg.sweep_dims.empty()) throw CliError(kExitBadInput, "sweep_dims must not be empty");
  ensure_out_dir(cfg);

  LoadResult loaded = load_dataset(cfg.dataset);
  if (loaded.records.empty()) throw CliError(kExitBadInput, "dataset has no valid records");
  std::unique_ptr<ResidueEmbeddingFile> embeddings;
  if (!cfg.embeddings.empty())
    embeddings = std::make_unique<ResidueEmbeddingFile>(load_residue_embeddings(cfg.embeddings));
  const std::vector<KineticRecord> deduped = deduplicate(loaded.records);
  const std::vector<KineticRecord> grown =
      oversample_temperature(deduped, cfg.oversample, cfg.model.seed);
  const DatasetSplits splits = split(grown, cfg.model.seed);

  const auto jobs = static_cast<int>(cfg.sweep_dims.size());
  std::vector<SplitMetrics> results(static_cast<size_t>(jobs));
  run_parallel(jobs, thread_budget(jobs), [&](int k) {
    ModelConfig mc = cfg.model;
    mc.d = cfg.sweep_dims[static_cast<size_t>(k)];
    TrainedModel model = train(splits.train, splits.validation, mc, embeddings.get());
    results[static_cast<size_t>(k)] = evaluate_model(model, splits, embeddings.get());
  });

  std::ofstream out(fs::path(cfg.out_dir) / "sweep.tsv");
  out << "d\ttest_rmse\ttest_pcc\ttest_mae\ttest_r2\n";
  for (std::size_t k = 0; k < results.size(); ++k) {
    const Metrics& m = results[k].test;
    out << cfg.sweep_dims[k] << '\t' << format_double(m.rmse) << '\t' << metric_or_undef(m.pcc)
        << '\t' << format_double(m.mae) << '\t' << metric_or_undef(m.r2) << '\n';
  }
  return kExitOk;
}

std::vector<std::string> gather_inputs(const RunConfig& cfg,
                                       const std::vector<std::string>& positional) {
  std::vector<std::string> inputs = positional;
  if (!cfg.input.empty()) {
    require_file(cfg.input, "input");
    std::ifstream in(cfg.input);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) inputs.push_back(line);
    }
  }
  return inputs;
}

int cmd_fingerprint(const RunConfig& cfg, const std::vector<std::string>& positional) {
  const std::vector<std::string> inputs = gather_inputs(cfg, positional);
  std::size_t successes = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    try {
      const FingerprintBits fp = ecfp(parse_smiles(inputs[i]));
      std::cout << inputs[i] << '\t' << fingerprint_to_hex(fp) << '\n';
      ++successes;
    } catch (const std::exception& e) {
      std::cerr << "error: line " << (i + 1) << ": " << e.what() << '\n';
    }
  }
  if (!inputs.empty() && successes == 0)
    throw CliError(kExitBadInput, "no input line parsed");
  return kExitOk;
}

int cmd_parse(const RunConfig& cfg, const std::vector<std::string>& positional) {
  const std::vector<std::string> inputs = gather_inputs(cfg, positional);
  std::size_t successes = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    try {
      const MolGraph g = parse_smiles(inputs[i]);
      int aromatic = 0, rings = 0;
      for (const Atom& a : g.atoms) {
        if (a.aromatic) ++aromatic;
        if (a.ring_member) ++rings;
      }
      std::cout << inputs[i] << "\tatoms=" << g.atom_count() << " bonds=" << g.bond_count()
                << " aromatic=" << aromatic << " rings=" << rings << '\n';
      ++successes;
    } catch (const std::exception& e) {
      std::cerr << "error: line " << (i + 1) << ": " << e.what() << '\n';
    }
  }
  if (!inputs.empty() && successes == 0)
    throw CliError(kExitBadInput, "no input line parsed");
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"enzyme turnover rate prediction pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig cfg;
  std::string config_path;
  unsigned long long seed_override = 0;
  bool seed_set = false;
  std::string out_override;
  std::string dataset_override, checkpoint_override, input_override, embeddings_override;
  std::string head_override;
  int seeds_override = 0;
  std::vector<int> dims_override;
  std::vector<std::string> positional;

  app.add_option("--config", config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed_override, "seed override");
  app.add_option("--out", out_override, "output directory");
  app.add_flag("--quiet", cfg.quiet, "suppress progress output");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write reports");
  train_cmd->add_option("--dataset", dataset_override, "dataset TSV");
  train_cmd->add_option("--embeddings", embeddings_override, "residue embedding file");
  train_cmd->add_option("--head", head_override, "regression head: mlp or kan");
  train_cmd->add_option("--seeds", seeds_override, "number of seeded runs");

  CLI::App* predict_cmd = app.add_subcommand("predict", "predict kcat for input records");
  predict_cmd->add_option("--checkpoint", checkpoint_override, "trained checkpoint");
  predict_cmd->add_option("--input", input_override, "input TSV (kcat_s may be empty)");
  predict_cmd->add_option("--embeddings", embeddings_override, "residue embedding file");
  predict_cmd->add_option("--attention-out", cfg.attention_out,
                          "write per-record attention weights to this TSV");

  CLI::App* extract_cmd =
      app.add_subcommand("extract-formula", "print the symbolic formula of a KAN head");
  extract_cmd->add_option("--checkpoint", checkpoint_override, "trained checkpoint");

  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "per-EC-class temperature/kcat correlation");
  analyze_cmd->add_option("--dataset", dataset_override, "dataset TSV");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train across latent dimensions");
  sweep_cmd->add_option("--dataset", dataset_override, "dataset TSV");
  sweep_cmd->add_option("--dims", dims_override, "latent dimensions to sweep");
  sweep_cmd->add_option("--embeddings", embeddings_override, "residue embedding file");

  CLI::App* fingerprint_cmd =
      app.add_subcommand("fingerprint", "hex-encoded 1024-bit fingerprints");
  fingerprint_cmd->add_option("smiles", positional, "SMILES strings");
  fingerprint_cmd->add_option("--input", input_override, "file with one SMILES per line");

  CLI::App* parse_cmd = app.add_subcommand("parse", "molecular graph summaries");
  parse_cmd->add_option("smiles", positional, "SMILES strings");
  parse_cmd->add_option("--input", input_override, "file with one SMILES per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return kExitOk;
    }
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  seed_set = seed_opt->count() > 0;

  try {
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    if (seed_set) cfg.model.seed = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (!dataset_override.empty()) cfg.dataset = dataset_override;
    if (!checkpoint_override.empty()) cfg.checkpoint = checkpoint_override;
    if (!input_override.empty()) cfg.input = input_override;
    if (!embeddings_override.empty()) cfg.embeddings = embeddings_override;
    if (seeds_override > 0) cfg.seeds = seeds_override;
    if (!dims_override.empty()) cfg.sweep_dims = dims_override;
    if (!head_override.empty()) {
      if (head_override != "mlp" && head_override != "kan")
        throw CliError(kExitBadInput, "--head must be mlp or kan");
      cfg.model.head = head_override == "kan" ? HeadKind::Kan : HeadKind::Mlp;
    }

    if (train_cmd->parsed()) return cmd_train(cfg);
    if (predict_cmd->parsed()) return cmd_predict(cfg);
    if (extract_cmd->parsed()) return cmd_extract_formula(cfg);
    if (analyze_cmd->parsed()) return cmd_analyze(cfg);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg);
    if (fingerprint_cmd->parsed()) return cmd_fingerprint(cfg, positional);
    if (parse_cmd->parsed()) return cmd_parse(cfg, positional);
    std::cerr << "error: no command\n";
    return kExitBadInput;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInternal;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("prokcat");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace prokcat
