#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "substadj/experiments.hpp"

namespace fs = std::filesystem;
using namespace substadj;

namespace {

struct Overrides {
  int K = 0, p_max = 0, n_max = 0, replications = 0, restarts = 0, iters = 0, ridge_folds = 0, ridge_points = 0,
      bounds_coordinates = 0;
  double mse_mu_scale = 0, tol = 0, tie_threshold = 0, ridge_lo = 0, ridge_hi = 0, noise_sd = 0, threshold = 0,
         bounds_gamma = 0, kakutani_threshold = 0;
  long mc_draws = 0;
  std::uint64_t base_seed = 0;
  std::vector<double> mu_scales, gamma_scales;
  std::vector<int> p_grid, n_grid, mse_p_grid;
  std::string family, space;
  bool split = false;
};

struct Registered {
  std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> opts;
};

template <class T>
void bind_option(CLI::App& app, Registered& reg, const std::string& name, T& slot, const std::string& help,
          std::function<void(ExperimentConfig&, const T&)> apply) {
  auto* o = app.add_option(name, slot, help);
  reg.opts.emplace_back(o, [&slot, apply](ExperimentConfig& c) { apply(c, slot); });
}

ExperimentConfig build_config(const std::string& path, const Registered& reg, const Overrides& ov, CLI::Option* split,
                              bool grids_used) {
  ExperimentConfig c;
  if (!path.empty()) {
    try {
      apply_json(c, Json::parse(read_file(path)));
    } catch (const Json::parse_error& e) {
      throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
    }
  }
  for (const auto& [opt, apply] : reg.opts)
    if (opt->count() > 0) apply(c);
  if (split->count() > 0) c.split_mode = ov.split;
  if (!grids_used) {
    // simulate and estimate ignore the grids; keep them consistent with p_max and n_max.
    auto fit = [](std::vector<int>& g, int hi) {
      std::erase_if(g, [hi](int v) { return v > hi; });
      if (g.empty()) g.push_back(hi);
    };
    fit(c.p_grid, c.p_max);
    fit(c.mse_p_grid, c.p_max);
    fit(c.n_grid, c.n_max);
  }
  require_valid(c);
  return c;
}

void write_json(const fs::path& file, const Json& j) {
  fs::create_directories(file.parent_path().empty() ? fs::path(".") : file.parent_path());
  auto os = open_output(file.string());
  os << j.dump(2) << "\n";
}

LabeledDataset load_dataset(const std::string& path) {
  if (fs::path(path).extension() == ".bin") {
    auto is = open_input(path, true);
    return read_dataset_binary(is);
  }
  auto is = open_input(path);
  return read_dataset_csv(is);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Substitute adjustment for finite mixture models"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = "results";
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory");

  Overrides ov;
  Registered reg;
  bind_option<int>(app, reg, "--K", ov.K, "Number of classes", [](auto& c, auto& v) { c.K = v; });
  bind_option<int>(app, reg, "--p-max", ov.p_max, "Largest dimension", [](auto& c, auto& v) { c.p_max = v; });
  bind_option<int>(app, reg, "--n-max", ov.n_max, "Largest sample size", [](auto& c, auto& v) { c.n_max = v; });
  bind_option<std::vector<double>>(app, reg, "--mu-scales", ov.mu_scales, "Mean scales", [](auto& c, auto& v) { c.mu_scales = v; });
  bind_option<std::vector<double>>(app, reg, "--gamma-scales", ov.gamma_scales, "Confounding scales",
                            [](auto& c, auto& v) { c.gamma_scales = v; });
  bind_option<std::vector<int>>(app, reg, "--p-grid", ov.p_grid, "Dimensions for fig2 and bounds",
                         [](auto& c, auto& v) { c.p_grid = v; });
  bind_option<std::vector<int>>(app, reg, "--n-grid", ov.n_grid, "Sample sizes", [](auto& c, auto& v) { c.n_grid = v; });
  bind_option<std::vector<int>>(app, reg, "--mse-p-grid", ov.mse_p_grid, "Dimensions for fig34",
                         [](auto& c, auto& v) { c.mse_p_grid = v; });
  bind_option<double>(app, reg, "--mse-mu-scale", ov.mse_mu_scale, "Mean scale for fig34",
               [](auto& c, auto& v) { c.mse_mu_scale = v; });
  bind_option<int>(app, reg, "--replications", ov.replications, "Replications per cell",
            [](auto& c, auto& v) { c.replications = v; });
  bind_option<std::uint64_t>(app, reg, "--seed", ov.base_seed, "Base seed", [](auto& c, auto& v) { c.base_seed = v; });
  bind_option<std::string>(app, reg, "--family", ov.family, "gaussian | laplace | uniform",
                    [](auto& c, auto& v) { c.family = parse_family(v); });
  bind_option<std::string>(app, reg, "--space", ov.space, "Assignment space: raw | whitened",
                    [](auto& c, auto& v) { c.assignment_space = parse_space(v); });
  bind_option<double>(app, reg, "--noise-sd", ov.noise_sd, "Outcome noise sd", [](auto& c, auto& v) { c.noise_sd = v; });
  bind_option<int>(app, reg, "--restarts", ov.restarts, "Power-method restarts", [](auto& c, auto& v) { c.restarts = v; });
  bind_option<int>(app, reg, "--iters", ov.iters, "Power-method iterations", [](auto& c, auto& v) { c.iters = v; });
  bind_option<double>(app, reg, "--tol", ov.tol, "Power-method tolerance", [](auto& c, auto& v) { c.tol = v; });
  bind_option<double>(app, reg, "--tie-threshold", ov.tie_threshold, "Relative distance tie tolerance",
               [](auto& c, auto& v) { c.tie_threshold = v; });
  bind_option<double>(app, reg, "--ridge-grid-lo", ov.ridge_lo, "Lower lambda grid factor",
               [](auto& c, auto& v) { c.ridge_grid_lo = v; });
  bind_option<double>(app, reg, "--ridge-grid-hi", ov.ridge_hi, "Upper lambda grid factor",
               [](auto& c, auto& v) { c.ridge_grid_hi = v; });
  bind_option<int>(app, reg, "--ridge-grid-points", ov.ridge_points, "Lambda grid size",
            [](auto& c, auto& v) { c.ridge_grid_points = v; });
  bind_option<int>(app, reg, "--ridge-folds", ov.ridge_folds, "Cross-validation folds",
            [](auto& c, auto& v) { c.ridge_folds = v; });
  bind_option<int>(app, reg, "--bounds-coordinates", ov.bounds_coordinates, "Coordinates checked per bounds instance",
            [](auto& c, auto& v) { c.bounds_coordinates = v; });
  bind_option<double>(app, reg, "--bounds-gamma-scale", ov.bounds_gamma, "Confounding scale for bounds",
               [](auto& c, auto& v) { c.bounds_gamma_scale = v; });
  bind_option<long>(app, reg, "--mc-draws", ov.mc_draws, "Monte Carlo draws", [](auto& c, auto& v) { c.mc_draws = v; });
  bind_option<double>(app, reg, "--threshold", ov.threshold, "Relative-error threshold (< 1/4)",
               [](auto& c, auto& v) { c.relative_error_threshold = v; });
  bind_option<double>(app, reg, "--divergence-threshold", ov.kakutani_threshold, "Kakutani divergence threshold",
               [](auto& c, auto& v) { c.kakutani_divergence_threshold = v; });
  auto* split_opt = app.add_flag("--split", ov.split, "Estimate means on an independent template sample");

  auto* sim = app.add_subcommand("simulate", "Draw a mixture, outcome model and dataset");
  int sim_n = 1000, sim_p = 0, sim_rep = 1;
  double sim_mu = 1.0, sim_gamma = 0.0;
  bool sim_binary = false;
  sim->add_option("--n", sim_n, "Samples");
  sim->add_option("--p", sim_p, "Observed coordinates (default p_max)");
  sim->add_option("--mu-scale", sim_mu, "Mean scale");
  sim->add_option("--gamma-scale", sim_gamma, "Confounding scale");
  sim->add_option("--replication", sim_rep, "Replication index (1-based)");
  sim->add_flag("--binary", sim_binary, "Also write the binary cache");

  auto* est = app.add_subcommand("estimate", "Spectral means and substitutes for a dataset");
  std::string est_data, est_model, est_reuse;
  est->add_option("--data", est_data, "Dataset CSV or .bin cache")->required()->check(CLI::ExistingFile);
  est->add_option("--model", est_model, "Model JSON for aligning labels to the true means")->check(CLI::ExistingFile);
  est->add_option("--estimate", est_reuse, "Reuse a saved estimate JSON")->check(CLI::ExistingFile);

  auto* fig2 = app.add_subcommand("fig2", "Mislabeling rates over (mu_scale, p, n)");
  auto* fig34 = app.add_subcommand("fig34", "Coefficient MSE of four methods over (p, n, gamma_scale)");
  auto* bounds = app.add_subcommand("bounds", "Check the substitution, projection and mislabeling bounds");
  auto* kak = app.add_subcommand("kakutani", "Kakutani partial sums and verdicts per class pair");
  std::string kak_model;
  kak->add_option("--model", kak_model, "Model JSON to analyse instead of drawn mixtures")->check(CLI::ExistingFile);
  auto* all = app.add_subcommand("all", "fig2, fig34, bounds and kakutani");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = build_config(config_path, reg, ov, split_opt, !sim->parsed() && !est->parsed());
    const fs::path dir(out_dir);
    RunManifest manifest = make_manifest(cfg);
    int violations = 0, failures = 0;
    auto emit = [&](const ExperimentOutput& o) {
      write_output(dir, o, manifest);
      violations += o.violation_rows;
      failures += o.failed_rows;
      std::cout << (dir / o.name).string() << ": " << o.failed_rows << " failed rows, " << o.violation_rows
                << " violation rows\n";
    };

    if (sim->parsed()) {
      const int b = sim_rep - 1;
      require(b >= 0, ErrorCode::InvalidArgument, "--replication is 1-based");
      const int p = sim_p > 0 ? sim_p : cfg.p_max;
      require(sim_n >= 1 && sim_n <= cfg.n_max, ErrorCode::InvalidArgument, "--n must lie in [1, n_max]");
      const SimSeed s = replication_seed(cfg, b);
      const auto spec = draw_mixture_spec(cfg.K, cfg.p_max, sim_mu, s.child(kTagMixture), cfg.family);
      const auto outcome = draw_outcome_spec(cfg.K, cfg.p_max, sim_gamma, s.child(kTagOutcome), cfg.noise_sd);
      auto data = simulate_outcomes(simulate_covariates(spec, sim_n, cfg.p_max, s.child(kTagCovariates)), spec,
                                    outcome, s.child(kTagNoise));
      data.X = Eigen::MatrixXd(data.X.leftCols(p));
      write_json(dir / "model.json", to_json(spec, outcome));
      std::ostringstream csv;
      write_dataset_csv(csv, data, manifest.config_digest);
      emit({"dataset.csv", csv.str(), 0, 0});
      if (sim_binary) {
        std::ostringstream bin(std::ios::binary);
        write_dataset_binary(bin, data);
        emit({"dataset.bin", bin.str(), 0, 0});
      }
    } else if (est->parsed()) {
      const auto data = load_dataset(est_data);
      ComponentEstimate e;
      if (!est_reuse.empty())
        e = estimate_from_json(Json::parse(read_file(est_reuse)));
      else
        e = estimate_means(data.X, cfg.K, cfg.spectral(replication_seed(cfg, 0).child(kTagPower)));
      if (!est_model.empty()) {
        const auto model = model_from_json(Json::parse(read_file(est_model)));
        require(model.mixture.p_max() >= data.p(), ErrorCode::DimensionMismatch, "model has fewer coordinates than data");
        e = apply_alignment(e, align_labels(model.mixture.means.topRows(data.p()), e.raw_means));
      }
      write_json(dir / "estimate.json", to_json(e));
      const auto a = assign_substitutes(data.X, e, cfg.assignment_space, cfg.tie_threshold);
      std::ostringstream csv;
      write_assignment_csv(csv, a, data.z_true ? &*data.z_true : nullptr, manifest.config_digest);
      emit({"assignment.csv", csv.str(), 0, 0});
      if (data.z_true && !est_model.empty())
        std::cout << "mislabeling rate " << format_double(mislabel_rate(*data.z_true, a.z_sub)) << "\n";
    } else {
      const bool run_all = all->parsed();
      if (fig2->parsed() || run_all) emit(run_mislabeling(cfg));
      if (fig34->parsed() || run_all) emit(run_mse(cfg));
      if (bounds->parsed() || run_all) {
        auto [b, mc] = run_bounds(cfg);
        emit(b);
        emit(mc);
      }
      if (kak->parsed() || run_all) {
        std::optional<MixtureSpec> given;
        if (!kak_model.empty()) given = model_from_json(Json::parse(read_file(kak_model))).mixture;
        auto [k, curves] = run_kakutani(cfg, given);
        emit(k);
        emit(curves);
      }
    }
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(dir / "manifest.json", manifest.to_json());
    if (failures > 0) std::cerr << failures << " rows failed; see the status column\n";
    return violations > 0 ? 2 : 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
