#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "substadj/adjust.hpp"
#include "substadj/baselines.hpp"
#include "substadj/core_model.hpp"
#include "substadj/diagnostics.hpp"
#include "substadj/error.hpp"
#include "substadj/io.hpp"
#include "substadj/json_io.hpp"
#include "substadj/recover.hpp"
#include "substadj/rng.hpp"
#include "substadj/simulate.hpp"
#include "substadj/spectral.hpp"

namespace substadj {

struct ExperimentConfig {
  int K = 10;
  int p_max = 1000;
  int n_max = 1000;
  std::vector<double> mu_scales{0.75, 1.0, 1.5};
  std::vector<double> gamma_scales{0.0, 20.0, 40.0, 100.0, 200.0};
  std::vector<int> p_grid{50, 100, 200, 1000};
  std::vector<int> n_grid{50, 100, 200, 500, 1000};
  std::vector<int> mse_p_grid{125, 175};
  double mse_mu_scale = 1.0;
  int replications = 10;
  std::uint64_t base_seed = 2024;
  Family family = Family::Gaussian;
  AssignmentSpace assignment_space = AssignmentSpace::Whitened;
  bool split_mode = false;
  double noise_sd = 1.0;

  // estimator
  int restarts = 30;
  int iters = 100;
  double tol = 1e-8;
  double tie_threshold = 0.0;
  double completion_tol = 1e-8;
  int completion_max_iter = 100;

  // ridge
  double ridge_grid_lo = 1e-4;
  double ridge_grid_hi = 1e4;
  int ridge_grid_points = 50;
  int ridge_folds = 5;

  // bounds
  int bounds_coordinates = 10;
  double bounds_gamma_scale = 20.0;
  long mc_draws = 100000;
  double relative_error_threshold = 0.1;

  // kakutani; empty means every pair z < v
  std::vector<std::pair<int, int>> kakutani_pairs;
  double kakutani_divergence_threshold = 10.0;

  SpectralOptions spectral(SimSeed power_seed) const {
    SpectralOptions o;
    o.completion.tol = completion_tol;
    o.completion.max_iter = completion_max_iter;
    o.power.restarts = restarts;
    o.power.iters = iters;
    o.power.tol = tol;
    o.power.seed = power_seed;
    return o;
  }
};

inline std::vector<Violation> validate_config(const ExperimentConfig& c) {
  std::vector<Violation> v;
  auto check = [&](bool ok, const char* field, const char* cond) {
    if (!ok) v.push_back({field, cond});
  };
  check(c.K >= 1, "K", "K >= 1");
  check(c.p_max >= 1, "p_max", "p_max >= 1");
  check(c.n_max >= 1, "n_max", "n_max >= 1");
  check(c.replications >= 1, "replications", "replications >= 1");
  for (int p : c.p_grid) check(p >= 1 && p <= c.p_max, "p_grid", "entries within [1, p_max]");
  for (int p : c.mse_p_grid) check(p >= 1 && p <= c.p_max, "mse_p_grid", "entries within [1, p_max]");
  for (int n : c.n_grid) check(n >= 1 && n <= c.n_max, "n_grid", "entries within [1, n_max]");
  for (double m : c.mu_scales) check(m > 0.0, "mu_scales", "entries positive");
  check(c.mse_mu_scale > 0.0, "mse_mu_scale", "positive");
  for (double g : c.gamma_scales) check(std::isfinite(g), "gamma_scales", "entries finite");
  check(c.noise_sd >= 0.0, "noise_sd", "nonnegative");
  check(c.restarts >= 1 && c.iters >= 1 && c.tol > 0.0, "estimator", "restarts, iters >= 1 and tol > 0");
  check(c.tie_threshold >= 0.0, "tie_threshold", "nonnegative");
  check(c.completion_tol > 0.0 && c.completion_max_iter >= 1, "completion", "tol > 0 and max_iter >= 1");
  check(c.ridge_grid_lo > 0.0 && c.ridge_grid_hi >= c.ridge_grid_lo, "ridge_grid", "0 < lo <= hi");
  check(c.ridge_grid_points >= 1, "ridge_grid_points", ">= 1");
  check(c.ridge_folds >= 2, "ridge_folds", ">= 2");
  check(c.bounds_coordinates >= 1, "bounds_coordinates", ">= 1");
  check(c.mc_draws >= 1, "mc_draws", ">= 1");
  check(c.relative_error_threshold > 0.0 && c.relative_error_threshold < 0.25, "relative_error_threshold",
        "within (0, 1/4)");
  for (const auto& [z, w] : c.kakutani_pairs)
    check(z >= 1 && z <= c.K && w >= 1 && w <= c.K && z != w, "kakutani_pairs", "distinct labels in {1..K}");
  return v;
}

inline void require_valid(const ExperimentConfig& c) {
  const auto v = validate_config(c);
  if (!v.empty()) throw Error(ErrorCode::InvalidArgument, "config " + v.front().field + ": " + v.front().condition);
}

inline Json to_json(const ExperimentConfig& c) {
  Json pairs = Json::array();
  for (const auto& [z, v] : c.kakutani_pairs) pairs.push_back(Json::array({z, v}));
  return Json{{"K", c.K},
              {"p_max", c.p_max},
              {"n_max", c.n_max},
              {"mu_scales", c.mu_scales},
              {"gamma_scales", c.gamma_scales},
              {"p_grid", c.p_grid},
              {"n_grid", c.n_grid},
              {"mse_p_grid", c.mse_p_grid},
              {"mse_mu_scale", c.mse_mu_scale},
              {"replications", c.replications},
              {"base_seed", c.base_seed},
              {"family", std::string(to_string(c.family))},
              {"assignment_space", std::string(to_string(c.assignment_space))},
              {"split_mode", c.split_mode},
              {"noise_sd", c.noise_sd},
              {"restarts", c.restarts},
              {"iters", c.iters},
              {"tol", c.tol},
              {"tie_threshold", c.tie_threshold},
              {"completion_tol", c.completion_tol},
              {"completion_max_iter", c.completion_max_iter},
              {"ridge_grid_lo", c.ridge_grid_lo},
              {"ridge_grid_hi", c.ridge_grid_hi},
              {"ridge_grid_points", c.ridge_grid_points},
              {"ridge_folds", c.ridge_folds},
              {"bounds_coordinates", c.bounds_coordinates},
              {"bounds_gamma_scale", c.bounds_gamma_scale},
              {"mc_draws", c.mc_draws},
              {"relative_error_threshold", c.relative_error_threshold},
              {"kakutani_pairs", pairs},
              {"kakutani_divergence_threshold", c.kakutani_divergence_threshold}};
}

/// Overlays the keys present in j onto c. Unknown keys are rejected.
inline void apply_json(ExperimentConfig& c, const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "config must be a JSON object");
  const Json known = to_json(ExperimentConfig{});
  for (const auto& item : j.items())
    if (!known.contains(item.key())) throw Error(ErrorCode::ParseError, "unknown config key '" + item.key() + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("K", c.K);
    get("p_max", c.p_max);
    get("n_max", c.n_max);
    get("mu_scales", c.mu_scales);
    get("gamma_scales", c.gamma_scales);
    get("p_grid", c.p_grid);
    get("n_grid", c.n_grid);
    get("mse_p_grid", c.mse_p_grid);
    get("mse_mu_scale", c.mse_mu_scale);
    get("replications", c.replications);
    get("base_seed", c.base_seed);
    if (j.contains("family")) c.family = parse_family(j.at("family").get<std::string>());
    if (j.contains("assignment_space")) c.assignment_space = parse_space(j.at("assignment_space").get<std::string>());
    get("split_mode", c.split_mode);
    get("noise_sd", c.noise_sd);
    get("restarts", c.restarts);
    get("iters", c.iters);
    get("tol", c.tol);
    get("tie_threshold", c.tie_threshold);
    get("completion_tol", c.completion_tol);
    get("completion_max_iter", c.completion_max_iter);
    get("ridge_grid_lo", c.ridge_grid_lo);
    get("ridge_grid_hi", c.ridge_grid_hi);
    get("ridge_grid_points", c.ridge_grid_points);
    get("ridge_folds", c.ridge_folds);
    get("bounds_coordinates", c.bounds_coordinates);
    get("bounds_gamma_scale", c.bounds_gamma_scale);
    get("mc_draws", c.mc_draws);
    get("relative_error_threshold", c.relative_error_threshold);
    if (j.contains("kakutani_pairs")) {
      c.kakutani_pairs.clear();
      for (const auto& pr : j.at("kakutani_pairs")) {
        if (!pr.is_array() || pr.size() != 2) throw Error(ErrorCode::ParseError, "kakutani_pairs entries are [z, v]");
        c.kakutani_pairs.emplace_back(pr[0].get<int>(), pr[1].get<int>());
      }
    }
    get("kakutani_divergence_threshold", c.kakutani_divergence_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
}

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  apply_json(c, j);
  require_valid(c);
  return c;
}

inline std::string config_digest(const ExperimentConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Seeds and worker pool
// ---------------------------------------------------------------------------

/// Sub-stream tags of a replication seed.
enum SeedTag : std::uint64_t {
  kTagMixture = 1,
  kTagCovariates = 2,
  kTagTemplate = 3,  // independent S0 in split mode
  kTagOutcome = 4,
  kTagNoise = 5,
  kTagPower = 6,
  kTagFolds = 7,
  kTagMonteCarlo = 8,
};

inline SimSeed replication_seed(const ExperimentConfig& c, int b) { return {c.base_seed, static_cast<std::uint64_t>(b)}; }

/// SUBSTADJ_THREADS caps the pool; default is the hardware concurrency.
inline unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SUBSTADJ_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(v));
  }
  return hw;
}

/// Runs task(i) for i in [0, n). The first exception is rethrown after all
/// workers finish.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task, unsigned workers = 0) {
  if (workers == 0) workers = worker_count();
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::string error_status(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return std::string(to_string(err->code()));
  return "Exception";
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

struct Replication {
  MixtureSpec spec;
  LabeledDataset data;                    // n_max x p_max
  std::optional<LabeledDataset> template_data;  // independent S0 in split mode
};

inline Replication draw_replication(const ExperimentConfig& c, double mu_scale, int b) {
  const SimSeed s = replication_seed(c, b);
  Replication r;
  r.spec = draw_mixture_spec(c.K, c.p_max, mu_scale, s.child(kTagMixture), c.family);
  r.data = simulate_covariates(r.spec, c.n_max, c.p_max, s.child(kTagCovariates));
  if (c.split_mode) r.template_data = simulate_covariates(r.spec, c.n_max, c.p_max, s.child(kTagTemplate));
  return r;
}

struct Recovery {
  ComponentEstimate estimate;  // columns aligned to the true classes
  Labels z_sub;
  double delta = 0.0;
};

/// Spectral estimate on the template rows, Hungarian alignment to the true
/// means, and substitutes for the first n rows of S over the first p columns.
inline Recovery recover_substitutes(const ExperimentConfig& c, const Replication& r, int n, int p, int b) {
  const LabeledDataset& fit = r.template_data ? *r.template_data : r.data;
  const Eigen::MatrixXd X_fit = fit.X.topLeftCorner(n, p);
  const Eigen::MatrixXd X = r.data.X.topLeftCorner(n, p);
  const auto est = estimate_means(X_fit, c.K, c.spectral(replication_seed(c, b).child(kTagPower)));
  Recovery out;
  out.estimate = apply_alignment(est, align_labels(r.spec.means.topRows(p), est.raw_means));
  out.z_sub = assign_substitutes(X, out.estimate, c.assignment_space, c.tie_threshold).z_sub;
  const Labels z_true(r.data.z_true->begin(), r.data.z_true->begin() + n);
  out.delta = mislabel_rate(z_true, out.z_sub);
  return out;
}

inline Labels head_labels(const Labels& z, int n) { return Labels(z.begin(), z.begin() + n); }

struct ExperimentOutput {
  std::string name;      // file name, e.g. fig2.csv
  std::string contents;  // full CSV text
  int failed_rows = 0;
  int violation_rows = 0;
};

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

// ---------------------------------------------------------------------------
// Mislabeling rates over (mu_scale, p, n)
// ---------------------------------------------------------------------------

inline ExperimentOutput run_mislabeling(const ExperimentConfig& c) {
  require_valid(c);
  const std::size_t M = c.mu_scales.size(), B = c.replications;
  const std::size_t P = c.p_grid.size(), N = c.n_grid.size();
  // cell (m, p, n) -> per-replication delta or failure
  std::vector<double> delta(M * P * N * B, 0.0);
  std::vector<std::string> status(M * P * N * B, "ok");
  auto idx = [&](std::size_t m, std::size_t pi, std::size_t ni, std::size_t b) { return ((m * P + pi) * N + ni) * B + b; };

  parallel_for(M * B, [&](std::size_t t) {
    const std::size_t m = t / B, b = t % B;
    std::optional<Replication> rep;
    std::string draw_error;
    try {
      rep = draw_replication(c, c.mu_scales[m], static_cast<int>(b));
    } catch (const std::exception& e) {
      draw_error = error_status(e);
    }
    for (std::size_t pi = 0; pi < P; ++pi)
      for (std::size_t ni = 0; ni < N; ++ni) {
        const auto k = idx(m, pi, ni, b);
        if (!rep) {
          status[k] = draw_error;
          continue;
        }
        try {
          delta[k] = recover_substitutes(c, *rep, c.n_grid[ni], c.p_grid[pi], static_cast<int>(b)).delta;
        } catch (const std::exception& e) {
          status[k] = error_status(e);
        }
      }
  });

  ExperimentOutput out{"fig2.csv", csv_comment_header(config_digest(c)), 0, 0};
  out.contents += "kind,mu_scale,p,n,replication,delta,status\n";
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t pi = 0; pi < P; ++pi)
      for (std::size_t ni = 0; ni < N; ++ni) {
        double sum = 0.0;
        int ok = 0;
        const std::string cell = format_double(c.mu_scales[m]) + "," + std::to_string(c.p_grid[pi]) + "," +
                                 std::to_string(c.n_grid[ni]) + ",";
        for (std::size_t b = 0; b < B; ++b) {
          const auto k = idx(m, pi, ni, b);
          const bool good = status[k] == "ok";
          out.contents += "replication," + cell + std::to_string(b + 1) + "," +
                          (good ? format_double(delta[k]) : std::string("nan")) + "," + status[k] + "\n";
          if (good) {
            sum += delta[k];
            ++ok;
          } else {
            ++out.failed_rows;
          }
        }
        const int failed = static_cast<int>(B) - ok;
        out.contents += "aggregate," + cell + std::to_string(ok) + "," +
                        (ok ? format_double(sum / ok) : std::string("nan")) + "," +
                        (failed ? "failed=" + std::to_string(failed) : std::string("ok")) + "\n";
      }
  return out;
}

// ---------------------------------------------------------------------------
// Coefficient MSE over (p, n, gamma_scale)
// ---------------------------------------------------------------------------

inline constexpr const char* kMethods[] = {"sub_adjust", "ridge", "aug_ridge", "oracle"};

inline ExperimentOutput run_mse(const ExperimentConfig& c) {
  require_valid(c);
  const std::size_t B = c.replications, P = c.mse_p_grid.size(), N = c.n_grid.size(), G = c.gamma_scales.size();
  constexpr std::size_t Q = 4;
  std::vector<double> mse(B * P * N * G * Q, 0.0);
  std::vector<std::string> status(B * P * N * G * Q, "ok");
  auto idx = [&](std::size_t b, std::size_t pi, std::size_t ni, std::size_t g, std::size_t q) {
    return (((b * P + pi) * N + ni) * G + g) * Q + q;
  };

  parallel_for(B, [&](std::size_t b) {
    const int bi = static_cast<int>(b);
    const SimSeed s = replication_seed(c, bi);
    std::optional<Replication> rep;
    std::vector<LabeledDataset> with_y;
    std::vector<Eigen::VectorXd> betas;
    std::string draw_error;
    try {
      rep = draw_replication(c, c.mse_mu_scale, bi);
      for (double g : c.gamma_scales) {
        const auto outcome = draw_outcome_spec(c.K, c.p_max, g, s.child(kTagOutcome), c.noise_sd);
        with_y.push_back(simulate_outcomes(rep->data, rep->spec, outcome, s.child(kTagNoise)));
        betas.push_back(population_beta(rep->spec, outcome));
      }
    } catch (const std::exception& e) {
      draw_error = error_status(e);
      rep.reset();
    }
    for (std::size_t pi = 0; pi < P; ++pi)
      for (std::size_t ni = 0; ni < N; ++ni) {
        const int p = c.mse_p_grid[pi], n = c.n_grid[ni];
        std::optional<Recovery> rec;
        std::string rec_error = draw_error;
        if (rep) {
          try {
            rec = recover_substitutes(c, *rep, n, p, bi);
          } catch (const std::exception& e) {
            rec_error = error_status(e);
          }
        }
        for (std::size_t g = 0; g < G; ++g) {
          if (!rep) {
            for (std::size_t q = 0; q < Q; ++q) status[idx(b, pi, ni, g, q)] = draw_error;
            continue;
          }
          const Eigen::MatrixXd X = rep->data.X.topLeftCorner(n, p);
          const Eigen::VectorXd y = with_y[g].y->head(n);
          const Eigen::VectorXd target = betas[g].head(p);
          const Labels z_true = head_labels(*rep->data.z_true, n);
          auto record = [&](std::size_t q, auto&& fit) {
            const auto k = idx(b, pi, ni, g, q);
            try {
              const Eigen::VectorXd est = fit();
              if (!est.allFinite()) throw Error(ErrorCode::ZeroResidualVariance, "undefined coordinate");
              mse[k] = (est - target).squaredNorm() / p;
            } catch (const std::exception& e) {
              status[k] = error_status(e);
            }
          };
          RidgeOptions ro;
          ro.grid_lo = c.ridge_grid_lo;
          ro.grid_hi = c.ridge_grid_hi;
          ro.grid_points = c.ridge_grid_points;
          const auto grid = default_lambda_grid(X, ro);
          const SimSeed folds = s.child(kTagFolds);
          if (rec) {
            record(0, [&] { return substitute_beta(X, y, rec->z_sub, c.K).beta_sub; });
            record(2, [&] { return augmented_ridge(X, y, rec->z_sub, c.K, grid, c.ridge_folds, folds).beta; });
          } else {
            status[idx(b, pi, ni, g, 0)] = status[idx(b, pi, ni, g, 2)] = rec_error;
          }
          record(1, [&] { return ridge(X, y, grid, c.ridge_folds, folds).beta; });
          record(3, [&] { return oracle_beta(X, y, z_true, c.K); });
        }
      }
  });

  ExperimentOutput out{"fig34.csv", csv_comment_header(config_digest(c)), 0, 0};
  out.contents += "p,n,gamma_scale,replication,method,mse,status\n";
  for (std::size_t pi = 0; pi < P; ++pi)
    for (std::size_t ni = 0; ni < N; ++ni)
      for (std::size_t g = 0; g < G; ++g)
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t q = 0; q < Q; ++q) {
            const auto k = idx(b, pi, ni, g, q);
            const bool good = status[k] == "ok";
            if (!good) ++out.failed_rows;
            out.contents += csv_row({std::to_string(c.mse_p_grid[pi]), std::to_string(c.n_grid[ni]),
                                     format_double(c.gamma_scales[g]), std::to_string(b + 1), kMethods[q],
                                     good ? format_double(mse[k]) : "nan", status[k]});
          }
  return out;
}

// ---------------------------------------------------------------------------
// Bounds: substitution error, projection norm, mislabeling rate
// ---------------------------------------------------------------------------

/// bounds.csv: one row per (mu_scale, p, n, replication, coordinate).
/// bounds_mc.csv: Monte Carlo mislabeling rate against both bounds per
/// (mu_scale, p, replication), with oracle means and, in split mode, with
/// means estimated from the independent template sample at n_max.
inline std::pair<ExperimentOutput, ExperimentOutput> run_bounds(const ExperimentConfig& c) {
  require_valid(c);
  const std::size_t M = c.mu_scales.size(), B = c.replications, P = c.p_grid.size(), N = c.n_grid.size();
  std::vector<std::string> rows(M * B), mc_rows(M * B);
  std::vector<int> violations(M * B, 0), failures(M * B, 0), mc_violations(M * B, 0), mc_failures(M * B, 0);
  const std::string mode = c.split_mode ? "split" : "shared";

  parallel_for(M * B, [&](std::size_t t) {
    const std::size_t m = t / B, b = t % B;
    const int bi = static_cast<int>(b);
    const SimSeed s = replication_seed(c, bi);
    const std::string lead = format_double(c.mu_scales[m]) + ",";
    std::optional<Replication> rep;
    Eigen::VectorXd y_full;
    try {
      rep = draw_replication(c, c.mu_scales[m], bi);
      const auto outcome = draw_outcome_spec(c.K, c.p_max, c.bounds_gamma_scale, s.child(kTagOutcome), c.noise_sd);
      y_full = *simulate_outcomes(rep->data, rep->spec, outcome, s.child(kTagNoise)).y;
    } catch (const std::exception& e) {
      for (int p : c.p_grid)
        for (int n : c.n_grid) {
          rows[t] += lead + std::to_string(p) + "," + std::to_string(n) + "," + std::to_string(b + 1) + "," + mode +
                     ",nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,false,false," + error_status(e) + "\n";
          ++failures[t];
        }
      return;
    }

    for (std::size_t pi = 0; pi < P; ++pi)
      for (std::size_t ni = 0; ni < N; ++ni) {
        const int p = c.p_grid[pi], n = c.n_grid[ni];
        const std::string cell = lead + std::to_string(p) + "," + std::to_string(n) + "," + std::to_string(b + 1) +
                                 "," + mode + ",";
        std::optional<Recovery> rec;
        try {
          rec = recover_substitutes(c, *rep, n, p, bi);
        } catch (const std::exception& e) {
          rows[t] += cell + "nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,false,false," + error_status(e) + "\n";
          ++failures[t];
          continue;
        }
        const Eigen::MatrixXd X = rep->data.X.topLeftCorner(n, p);
        const Eigen::VectorXd y = y_full.head(n);
        const Labels z_true = head_labels(*rep->data.z_true, n);
        for (int i = 0; i < std::min(p, c.bounds_coordinates); ++i) {
          try {
            const auto r = theorem1_bound(X, y, i, z_true, rec->z_sub, c.K);
            const bool bad = !r.holds_thm1 || !r.holds_lemmaA1;
            if (bad) ++violations[t];
            rows[t] += cell + csv_row({std::to_string(i + 1), format_double(r.alpha), format_double(r.delta),
                                       format_double(r.rho), format_double(r.beta_sub), format_double(r.beta_oracle),
                                       format_double(r.observed_gap), format_double(r.bound_thm1),
                                       format_double(r.proj_norm), format_double(r.proj_bound),
                                       bool_str(r.holds_thm1), bool_str(r.holds_lemmaA1), bad ? "violation" : "ok"});
          } catch (const std::exception& e) {
            const auto* err = dynamic_cast<const Error*>(&e);
            const bool degenerate = err && err->code() == ErrorCode::DegenerateInputs;
            rows[t] += cell + std::to_string(i + 1) + ",nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,false,false," +
                       (degenerate ? std::string("degenerate") : error_status(e)) + "\n";
            if (!degenerate) ++failures[t];
          }
        }
      }

    // Monte Carlo mislabeling against the bounds.
    for (std::size_t pi = 0; pi < P; ++pi) {
      const int p = c.p_grid[pi];
      const std::string cell = lead + std::to_string(p) + "," + std::to_string(b + 1) + ",";
      auto mc_row = [&](const std::string& means_kind, const Eigen::MatrixXd& centres) {
        try {
          const auto sep = separation(rep->spec.means.topRows(p));
          const double s2 = rep->spec.variances.topRows(p).maxCoeff();
          const auto vmax = subgaussian_variance_factor(rep->spec, p);
          const auto bounds = mislabel_bounds(c.K, s2, sep, vmax, c.relative_error_threshold);
          const auto rel = relative_errors(rep->spec.means.topRows(p), centres, c.relative_error_threshold);
          const auto mc = monte_carlo_mislabel(rep->spec, p, centres, c.mc_draws,
                                               s.child(kTagMonteCarlo).child(static_cast<std::uint64_t>(p)));
          const double slack = 3.0 * mc.std_error;
          const bool applicable = rel.within_tenth;
          const bool holds = mc.rate <= bounds.chebyshev + slack &&
                             (!bounds.subgaussian || mc.rate <= *bounds.subgaussian + slack);
          if (applicable && !holds) ++mc_violations[t];
          mc_rows[t] += cell + csv_row({means_kind, format_double(rel.max_offdiag), format_double(mc.rate),
                                        format_double(mc.std_error), format_double(bounds.chebyshev),
                                        bounds.subgaussian ? format_double(*bounds.subgaussian) : "nan",
                                        bool_str(applicable), bool_str(holds),
                                        applicable ? (holds ? "ok" : "violation") : "advisory"});
        } catch (const std::exception& e) {
          ++mc_failures[t];
          mc_rows[t] += cell + means_kind + ",nan,nan,nan,nan,nan,false,false," + error_status(e) + "\n";
        }
      };
      mc_row("oracle", rep->spec.means.topRows(p));
      if (c.split_mode) {
        try {
          const auto rec = recover_substitutes(c, *rep, c.n_max, p, bi);
          mc_row("estimated", rec.estimate.raw_means);
        } catch (const std::exception& e) {
          ++mc_failures[t];
          mc_rows[t] += cell + "estimated,nan,nan,nan,nan,nan,false,false," + error_status(e) + "\n";
        }
      }
    }
  });

  const std::string head = csv_comment_header(config_digest(c));
  ExperimentOutput out{"bounds.csv", head, 0, 0};
  out.contents +=
      "mu_scale,p,n,replication,mode,i,alpha,delta,rho,beta_sub,beta_oracle,gap,thm1_bound,proj_norm,proj_bound,"
      "holds_thm1,holds_lemmaA1,status\n";
  ExperimentOutput mc{"bounds_mc.csv", head, 0, 0};
  mc.contents += "mu_scale,p,replication,means,max_R,mc_rate,mc_se,chebyshev,subgaussian,applicable,holds,status\n";
  for (std::size_t t = 0; t < M * B; ++t) {
    out.contents += rows[t];
    out.failed_rows += failures[t];
    out.violation_rows += violations[t];
    mc.contents += mc_rows[t];
    mc.failed_rows += mc_failures[t];
    mc.violation_rows += mc_violations[t];
  }
  return {std::move(out), std::move(mc)};
}

// ---------------------------------------------------------------------------
// Kakutani series
// ---------------------------------------------------------------------------

/// kakutani.csv holds one verdict row per (mu_scale, replication, pair);
/// kakutani_curves.csv holds the partial sums for every coordinate. A given
/// mixture replaces the drawn ones (mu_scale and replication are then 0).
inline std::pair<ExperimentOutput, ExperimentOutput> run_kakutani(const ExperimentConfig& c,
                                                                  const std::optional<MixtureSpec>& given = {}) {
  require_valid(c);
  const Family family = given ? given->family : c.family;
  require(family == Family::Gaussian, ErrorCode::NonGaussianFamily, "Kakutani closed forms are Gaussian-only");
  struct Job {
    double mu_scale;
    int b;
  };
  std::vector<Job> jobs;
  if (given)
    jobs.push_back({0.0, -1});
  else
    for (double m : c.mu_scales)
      for (int b = 0; b < c.replications; ++b) jobs.push_back({m, b});

  KakutaniOptions ko;
  ko.divergence_threshold = c.kakutani_divergence_threshold;
  std::vector<std::string> rows(jobs.size()), curves(jobs.size());
  std::vector<int> violations(jobs.size(), 0);
  parallel_for(jobs.size(), [&](std::size_t t) {
    const auto& job = jobs[t];
    const MixtureSpec spec =
        given ? *given : draw_mixture_spec(c.K, c.p_max, job.mu_scale, replication_seed(c, job.b).child(kTagMixture));
    auto pairs = c.kakutani_pairs;
    if (pairs.empty())
      for (int z = 1; z <= spec.K; ++z)
        for (int v = z + 1; v <= spec.K; ++v) pairs.emplace_back(z, v);
    const std::string lead = format_double(job.mu_scale) + "," + std::to_string(job.b + 1) + ",";
    for (const auto& [z, v] : pairs) {
      const auto r = kakutani_partial_sums(spec, z, v, spec.p_max(), ko);
      const std::string pair = std::to_string(z) + "," + std::to_string(v) + ",";
      bool monotone = true;
      for (std::size_t i = 0; i < r.mean_series_partial.size(); ++i) {
        if (i > 0)
          monotone = monotone && r.mean_series_partial[i] >= r.mean_series_partial[i - 1] &&
                     r.var_series_partial[i] >= r.var_series_partial[i - 1] && r.bc_products[i] <= r.bc_products[i - 1];
        curves[t] += lead + pair +
                     csv_row({std::to_string(i + 1), format_double(r.mean_series_partial[i]),
                              format_double(r.var_series_partial[i]), format_double(r.bc_products[i])});
      }
      if (!monotone) ++violations[t];
      rows[t] += lead + pair +
                 csv_row({std::to_string(spec.p_max()), format_double(r.mean_series_partial.back()),
                          format_double(r.var_series_partial.back()), format_double(r.bc_products.back()),
                          format_double(r.mean_evidence.tail_exponent), format_double(r.var_evidence.tail_exponent),
                          std::string(to_string(r.verdict)), monotone ? "ok" : "violation"});
    }
  });

  const std::string head = csv_comment_header(config_digest(c));
  ExperimentOutput out{"kakutani.csv", head, 0, 0};
  out.contents += "mu_scale,replication,z,v,p,mean_partial,var_partial,bc_product,mean_tail_exponent,"
                  "var_tail_exponent,verdict,status\n";
  ExperimentOutput cur{"kakutani_curves.csv", head, 0, 0};
  cur.contents += "mu_scale,replication,z,v,i,mean_partial,var_partial,bc_product\n";
  for (std::size_t t = 0; t < jobs.size(); ++t) {
    out.contents += rows[t];
    out.violation_rows += violations[t];
    cur.contents += curves[t];
  }
  return {std::move(out), std::move(cur)};
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
  Json config;
  std::string tool_version{kToolVersion};
  std::string config_digest;
  std::vector<std::pair<std::string, std::string>> outputs;  // (file, FNV-1a digest)
  double wall_clock_seconds = 0.0;
  int replications = 0;
  std::uint64_t base_seed = 0;

  Json to_json() const {
    Json seeds = Json::array();
    for (int b = 0; b < replications; ++b) {
      const SimSeed s{base_seed, static_cast<std::uint64_t>(b)};
      seeds.push_back(Json{{"replication", b + 1},
                           {"base_seed", s.base_seed},
                           {"stream_id", s.stream_id},
                           {"mixture_stream", s.child(kTagMixture).stream_id},
                           {"covariate_stream", s.child(kTagCovariates).stream_id},
                           {"template_stream", s.child(kTagTemplate).stream_id},
                           {"outcome_stream", s.child(kTagOutcome).stream_id},
                           {"noise_stream", s.child(kTagNoise).stream_id},
                           {"power_stream", s.child(kTagPower).stream_id},
                           {"fold_stream", s.child(kTagFolds).stream_id},
                           {"monte_carlo_stream", s.child(kTagMonteCarlo).stream_id}});
    }
    Json outs = Json::object();
    for (const auto& [f, d] : outputs) outs[f] = d;
    return Json{{"tool_version", tool_version},
                {"config", config},
                {"config_digest", config_digest},
                {"seeds", seeds},
                {"outputs", outs},
                {"wall_clock_seconds", wall_clock_seconds}};
  }
};

inline RunManifest make_manifest(const ExperimentConfig& c) {
  RunManifest m;
  m.config = to_json(c);
  m.config_digest = config_digest(c);
  m.replications = c.replications;
  m.base_seed = c.base_seed;
  return m;
}

/// Writes the output into dir and records its digest in the manifest.
inline void write_output(const std::filesystem::path& dir, const ExperimentOutput& out, RunManifest& manifest) {
  std::filesystem::create_directories(dir);
  auto os = open_output((dir / out.name).string(), true);
  os << out.contents;
  manifest.outputs.emplace_back(out.name, hex64(fnv1a64(out.contents)));
}

}  // namespace substadj
