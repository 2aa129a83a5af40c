#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mixuplr/checkpoint.hpp"
#include "mixuplr/config.hpp"
#include "mixuplr/datasets.hpp"
#include "mixuplr/format.hpp"
#include "mixuplr/lipschitz.hpp"
#include "mixuplr/robustness.hpp"
#include "mixuplr/trainer.hpp"

namespace mixuplr {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---- shared plumbing ------------------------------------------------------

inline Dataset build_dataset(const DatasetConfig& d) {
  RngState rng(d.data_seed);
  switch (d.kind) {
    case DatasetKind::two_moons: return make_two_moons(d.n, d.noise, rng);
    case DatasetKind::circles: return make_circles(d.n, d.noise, d.circle_factor, rng);
    case DatasetKind::blobs: {
      RngState center_rng = rng.split(1);
      const Tensor centers = make_blob_centers(d.blob_centers, 2, 4.0, center_rng);
      return make_blobs(d.n, centers, d.noise, rng);
    }
  }
  throw ConfigError("unknown dataset kind");
}

/// The labeled/unlabeled/holdout split used by run seed `seed`.
inline SslSplit build_split(const Dataset& data, const DatasetConfig& d, std::uint64_t seed) {
  RngState rng = RngState(seed).split(100);
  try {
    return split_ssl(data, d.labels, d.balanced, rng, d.holdout_fraction);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("cannot split dataset: ") + e.what());
  }
}

inline LabeledSet evaluation_set(const Dataset& data, const SslSplit& split, EvalTarget target) {
  const auto& idx = target == EvalTarget::holdout ? split.holdout_idx : split.unlabeled_idx;
  if (idx.empty()) throw ConfigError("evaluation target '" + std::string(eval_target_name(target)) + "' is empty");
  return labeled_subset(data, idx);
}

/// Parallel job cap from MIXUPLR_THREADS (default 1).
inline std::size_t thread_cap() {
  if (const char* env = std::getenv("MIXUPLR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

/// Runs job(i) for i in [0, n) on up to `threads` workers. Results must be
/// written by index so aggregation order never depends on scheduling.
inline void run_jobs(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
};

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

inline Json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  Json j;
  j["mode"] = train_mode_name(t.mode);
  j["dataset"] = dataset_kind_name(c.data.kind);
  j["n"] = c.data.n;
  j["noise"] = round6(c.data.noise);
  if (c.data.kind == DatasetKind::circles) j["circle_factor"] = round6(c.data.circle_factor);
  if (c.data.kind == DatasetKind::blobs) j["blob_centers"] = c.data.blob_centers;
  j["data_seed"] = c.data.data_seed;
  j["labels"] = c.data.labels;
  j["balanced"] = c.data.balanced;
  j["holdout_fraction"] = round6(c.data.holdout_fraction);
  j["eval_target"] = eval_target_name(t.eval_target);
  j["widths"] = t.net.widths;
  j["activation"] = activation_name(t.net.activation);
  j["alpha"] = round6(t.alpha);
  j["tau"] = round6(t.tau);
  j["augment_copies"] = t.copies;
  j["jitter_sigma"] = round6(t.augment.jitter_sigma);
  j["rotate_max_radians"] = round6(t.augment.rotate_max_radians);
  j["lambda_u_max"] = round6(t.lambda_u_max);
  j["ramp_steps"] = t.ramp_steps;
  j["zeta"] = round6(t.zeta);
  j["eps_r"] = round6(t.alp.eps_r);
  j["xi"] = round6(t.alp.xi);
  j["power_iters"] = t.alp.k_iters;
  j["gamma"] = round6(t.alp.gamma);
  j["output_distance"] = output_distance_name(t.alp.d_y);
  j["alp_squared"] = t.alp.form == AlpForm::squared;
  j["alp_on_mixed"] = t.alp_on_mixed;
  j["gp_target"] = round6(t.gp_target);
  j["optimizer"] = t.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd";
  j["lr"] = round6(t.optimizer.lr);
  j["beta1"] = round6(t.optimizer.beta1);
  j["beta2"] = round6(t.optimizer.beta2);
  j["adam_eps"] = round6(t.optimizer.eps);
  j["batch_size"] = t.batch_size;
  j["total_steps"] = t.total_steps;
  j["eval_every"] = t.eval_every;
  j["seeds"] = c.seeds;
  return j;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline fs::path checkpoint_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("model_seed" + std::to_string(seed) + ".bin");
}

// ---- train ----------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> metrics;
  double median_error = 0.0;
  double final_error = 0.0;
};

/// Trains one model per seed, writing metrics_seed<k>.csv and model_seed<k>.bin
/// into `dir`.
inline std::vector<SeedRun> train_seeds(const ExperimentConfig& cfg, const Dataset& data, const fs::path& dir,
                                        std::ostream& log) {
  fs::create_directories(dir);
  std::vector<SeedRun> runs(cfg.seeds.size());
  std::mutex log_mutex;
  run_jobs(cfg.seeds.size(), thread_cap(), [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const SslSplit split = build_split(data, cfg.data, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    TrainResult res = train(tc, training_view(data, split), evaluation_set(data, split, tc.eval_target));
    std::ostringstream csv;
    write_metrics_csv(csv, res.metrics);
    write_text(dir / ("metrics_seed" + std::to_string(seed) + ".csv"), csv.str());
    save_checkpoint(checkpoint_path(dir, seed), res.model);
    const auto errs = error_series(res.metrics);
    runs[i] = {seed, std::move(res.metrics), median_of_last_k(errs, 20), errs.back()};
    std::lock_guard lock(log_mutex);
    log << "[" << train_mode_name(tc.mode) << "] seed " << seed << ": median error (last 20) "
        << format_float(runs[i].median_error) << "\n";
  });
  std::stable_sort(runs.begin(), runs.end(), [](const SeedRun& a, const SeedRun& b) { return a.seed < b.seed; });
  return runs;
}

inline Json seed_summary(const std::vector<SeedRun>& runs) {
  Json per = Json::array();
  std::vector<double> medians;
  for (const auto& r : runs) {
    per.push_back({{"seed", r.seed}, {"median_error", round6(r.median_error)}, {"final_error", round6(r.final_error)}});
    medians.push_back(r.median_error);
  }
  const auto agg = aggregate(medians);
  return {{"mean", round6(agg.mean)}, {"std", round6(agg.std)}, {"per_seed", per}};
}

inline Json cmd_train(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  const Dataset data = build_dataset(cfg.data);
  {
    std::ostringstream csv;
    write_dataset_csv(csv, data);
    write_text(dir / "dataset.csv", csv.str());
  }
  for (std::uint64_t seed : cfg.seeds) {
    const auto split = build_split(data, cfg.data, seed);
    const std::string stem = "split_seed" + std::to_string(seed) + "_";
    for (const auto& [name, idx] : {std::pair{"labeled", &split.labeled_idx}, std::pair{"unlabeled", &split.unlabeled_idx},
                                    std::pair{"holdout", &split.holdout_idx}}) {
      std::ostringstream os;
      write_indices(os, *idx);
      write_text(dir / (stem + name + ".txt"), os.str());
    }
  }
  const auto runs = train_seeds(cfg, data, dir, log);
  Json summary = {{"command", "train"}, {"config", config_to_json(cfg)}};
  summary["error"] = seed_summary(runs);
  write_json(dir / "summary.json", summary);
  return summary;
}

// ---- ablate-zeta ----------------------------------------------------------

inline Json cmd_ablate_zeta(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  const Dataset data = build_dataset(cfg.data);
  std::ostringstream table;
  table << "zeta,mean_err,std_err\n";
  Json rows = Json::array();
  for (double zeta : cfg.zeta_list) {
    ExperimentConfig c = cfg;
    c.train.mode = TrainMode::mixup_lr;
    c.train.zeta = zeta;
    const auto runs = train_seeds(c, data, dir / ("zeta_" + format_float(zeta)), log);
    Json s = seed_summary(runs);
    table << format_float(zeta) << ',' << format_float(s["mean"].get<double>()) << ','
          << format_float(s["std"].get<double>()) << '\n';
    s["zeta"] = round6(zeta);
    rows.push_back(s);
  }
  write_text(dir / "ablation_zeta.csv", table.str());
  Json out = {{"command", "ablate-zeta"}, {"config", config_to_json(cfg)}, {"rows", rows}};
  write_json(dir / "ablation_zeta.json", out);
  return out;
}

// ---- attack ---------------------------------------------------------------

inline Json attack_report_json(const AttackReport& r, TrainMode mode) {
  return {{"epsilon", round6(r.epsilon)},
          {"clean_accuracy", round6(r.clean_accuracy)},
          {"adversarial_accuracy", round6(r.adversarial_accuracy)},
          {"percent_drop", round6(r.percent_drop)},
          {"n_examples", r.n_examples},
          {"seed", r.seed},
          {"mode", train_mode_name(mode)}};
}

/// FGSM sweep over eps_list for every seed's checkpoint in out_dir.
inline Json cmd_attack(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  const fs::path dir = cfg.out_dir;
  const Dataset data = build_dataset(cfg.data);
  std::ostringstream csv;
  csv << kAttackCsvHeader << '\n';
  Json reports = Json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const Mlp model = load_checkpoint(checkpoint_path(dir, seed), cfg.train.net);
    const auto split = build_split(data, cfg.data, seed);
    const LabeledSet eval = evaluation_set(data, split, cfg.train.eval_target);
    for (double eps : cfg.eps_list) {
      const AttackReport r = attack_eval(model, eval.features, eval.labels, eps, RngState(seed));
      write_attack_row(csv, r, train_mode_name(cfg.train.mode));
      reports.push_back(attack_report_json(r, cfg.train.mode));
      log << "[attack] seed " << seed << " eps " << format_float(eps) << ": drop " << format_float(r.percent_drop)
          << "%\n";
    }
  }
  write_text(dir / "attack_sweep.csv", csv.str());
  Json out = {{"command", "attack"}, {"reports", reports}};
  write_json(dir / "attack_reports.json", out);
  return out;
}

// ---- audit ----------------------------------------------------------------

struct AuditResult {
  LipschitzReport lipschitz;
  ConvexityAuditReport convexity;
  std::uint64_t seed = 0;
};

/// k_hat, l_hat and the interpolation-bound audit against 1.05 * l_hat.
template <DifferentiableModel Model>
AuditResult audit_model(const Model& model, const Tensor& domain_points, std::size_t n_pairs, std::size_t n_triples,
                        std::uint64_t seed, OutputDistance kind = OutputDistance::l2_logits) {
  const DomainSampler sampler(domain_points);
  RngState rng = RngState(seed).split(200);
  AuditResult res;
  res.seed = seed;
  res.lipschitz = lipschitz_report(model, sampler, n_pairs, rng, kind);
  RngState triple_rng = rng.split(3);
  res.convexity = prop1_audit(model, sampler, kAuditSafetyFactor * res.lipschitz.l_hat, n_triples, triple_rng);
  return res;
}

inline Json audit_json(const AuditResult& a) {
  return {{"k_hat", round6(a.lipschitz.k_hat)},
          {"l_hat", round6(a.lipschitz.l_hat)},
          {"n_pairs", a.lipschitz.n_pairs},
          {"n_triples", a.convexity.n_triples},
          {"violation_rate", round6(a.convexity.violation_rate)},
          {"worst_margin", round6(a.convexity.worst_margin)},
          {"seed", a.seed}};
}

inline Json cmd_audit(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  const fs::path dir = cfg.out_dir;
  const Dataset data = build_dataset(cfg.data);
  Json reports = Json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const Mlp model = load_checkpoint(checkpoint_path(dir, seed), cfg.train.net);
    const Json j = audit_json(audit_model(model, data.features, cfg.audit_pairs, cfg.audit_triples, seed, cfg.audit_distance));
    write_json(dir / ("audit_seed" + std::to_string(seed) + ".json"), j);
    log << "[audit] seed " << seed << ": k_hat " << format_float(j["k_hat"].get<double>()) << ", violation rate "
        << format_float(j["violation_rate"].get<double>()) << "\n";
    reports.push_back(j);
  }
  return {{"command", "audit"}, {"reports", reports}};
}

// ---- plot -----------------------------------------------------------------

struct GridCell {
  double x, y;
  std::size_t label;
  double max_prob;
};

/// size x size decision grid over the data bounding box inflated by 20%.
inline std::vector<GridCell> decision_grid(const Mlp& model, const Tensor& points, std::size_t size) {
  if (model.input_dim() != 2 || points.cols() != 2) throw ShapeError("plot: decision grids need 2-D inputs");
  const DomainSampler box(points);
  const auto& lo = box.lower();
  const auto& hi = box.upper();
  Tensor g({size * size, 2});
  for (std::size_t iy = 0; iy < size; ++iy) {
    for (std::size_t ix = 0; ix < size; ++ix) {
      const std::size_t r = iy * size + ix;
      g(r, 0) = lo[0] + (hi[0] - lo[0]) * static_cast<double>(ix) / static_cast<double>(size - 1);
      g(r, 1) = lo[1] + (hi[1] - lo[1]) * static_cast<double>(iy) / static_cast<double>(size - 1);
    }
  }
  const Tensor p = softmax(model.forward(g));
  std::vector<GridCell> cells(g.rows());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t k = argmax(p.row(r));
    cells[r] = {g(r, 0), g(r, 1), k, p(r, k)};
  }
  return cells;
}

inline std::string svg_scatter(const Dataset& data, const std::vector<std::size_t>& labeled,
                               const std::vector<GridCell>& grid, std::size_t grid_size) {
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const DomainSampler box(data.features);
  const auto& lo = box.lower();
  const auto& hi = box.upper();
  constexpr double kSize = 600.0;
  const auto px = [&](double x) { return format_float((x - lo[0]) / (hi[0] - lo[0]) * kSize); };
  const auto py = [&](double y) { return format_float(kSize - (y - lo[1]) / (hi[1] - lo[1]) * kSize); };
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n"
     << "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n<g opacity=\"0.15\">\n";
  // Decision regions from every 4th grid cell.
  const std::size_t stride = 4;
  const double cell = kSize * static_cast<double>(stride) / static_cast<double>(grid_size - 1);
  for (std::size_t iy = 0; iy < grid_size; iy += stride) {
    for (std::size_t ix = 0; ix < grid_size; ix += stride) {
      const auto& c = grid[iy * grid_size + ix];
      os << "<rect x=\"" << px(c.x) << "\" y=\"" << format_float(std::stod(py(c.y)) - cell) << "\" width=\""
         << format_float(cell) << "\" height=\"" << format_float(cell) << "\" fill=\"" << kColors[c.label % 6]
         << "\"/>\n";
    }
  }
  os << "</g>\n<g>\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    os << "<circle cx=\"" << px(data.features(i, 0)) << "\" cy=\"" << py(data.features(i, 1))
       << "\" r=\"2\" fill=\"" << kColors[data.label_of(i) % 6] << "\"/>\n";
  }
  os << "</g>\n<g stroke=\"black\" stroke-width=\"2\">\n";
  for (std::size_t i : labeled) {
    os << "<circle cx=\"" << px(data.features(i, 0)) << "\" cy=\"" << py(data.features(i, 1)) << "\" r=\"7\" fill=\""
       << kColors[data.label_of(i) % 6] << "\"/>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

inline Json cmd_plot(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  const fs::path dir = cfg.out_dir;
  const Dataset data = build_dataset(cfg.data);
  if (data.dim() != 2) throw ConfigError("plot: dataset must be 2-D");
  Json files = Json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const Mlp model = load_checkpoint(checkpoint_path(dir, seed), cfg.train.net);
    const auto grid = decision_grid(model, data.features, cfg.grid_size);
    std::ostringstream csv;
    csv << "x,y,argmax,max_prob\n";
    for (const auto& c : grid) {
      csv << format_float(c.x) << ',' << format_float(c.y) << ',' << c.label << ',' << format_float(c.max_prob) << '\n';
    }
    const std::string stem = "seed" + std::to_string(seed);
    write_text(dir / ("grid_" + stem + ".csv"), csv.str());
    const auto split = build_split(data, cfg.data, seed);
    write_text(dir / ("plot_" + stem + ".svg"), svg_scatter(data, split.labeled_idx, grid, cfg.grid_size));
    files.push_back({{"seed", seed}, {"grid", "grid_" + stem + ".csv"}, {"svg", "plot_" + stem + ".svg"}});
    log << "[plot] seed " << seed << ": wrote grid_" << stem << ".csv and plot_" << stem << ".svg\n";
  }
  return {{"command", "plot"}, {"files", files}};
}

}  // namespace mixuplr
