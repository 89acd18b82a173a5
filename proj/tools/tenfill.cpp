// tenfill: synthetic data, tensor completion and the experiment protocols.
//
// Exit codes: 0 success, 1 solver failure, 2 usage or I/O error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tenfill/bayes_cp.hpp"
#include "tenfill/error.hpp"
#include "tenfill/experiments.hpp"
#include "tenfill/parallel.hpp"
#include "tenfill/synth.hpp"
#include "tenfill/tns.hpp"
#include "tenfill/virtual_probe.hpp"

using json = nlohmann::ordered_json;
using namespace tenfill;

namespace {

constexpr int kOk = 0;
constexpr int kSolverFailure = 1;
constexpr int kUsageError = 2;

struct SolverFlags {
  double tol = 1e-6;
  std::size_t max_iters = 500;
  double prune_threshold = 1e-4;
  bool no_prune = false;
  std::string init = "random";

  SolverConfig config(std::uint64_t seed) const {
    SolverConfig c;
    c.tol = tol;
    c.max_iters = max_iters;
    c.prune_threshold = prune_threshold;
    c.prune_enabled = !no_prune;
    c.init_mode = init == "spectral" ? InitMode::spectral : InitMode::random;
    c.seed = seed;
    c.threads = threads_from_env();
    return c;
  }

  json echo() const {
    return {{"tol", tol},
            {"max_iters", max_iters},
            {"prune_threshold", prune_threshold},
            {"prune", !no_prune},
            {"init", init}};
  }
};

void add_solver_flags(CLI::App* cmd, SolverFlags& f) {
  cmd->add_option("--tol", f.tol, "Relative ELBO change for convergence")->capture_default_str();
  cmd->add_option("--max-iters", f.max_iters, "Maximum coordinate-ascent sweeps")
      ->capture_default_str();
  cmd->add_option("--prune-threshold", f.prune_threshold,
                  "Relative component power below which a component is dropped")
      ->capture_default_str();
  cmd->add_flag("--no-prune", f.no_prune, "Disable component pruning");
  cmd->add_option("--init", f.init, "Factor initialization")
      ->check(CLI::IsMember({"random", "spectral"}))
      ->capture_default_str();
}

struct VpFlags {
  std::optional<double> lambda;
  std::size_t cv_folds = 0;

  LassoConfig config(std::uint64_t seed) const {
    LassoConfig c;
    c.lambda = lambda;
    c.cv_folds = cv_folds;
    c.seed = seed;
    return c;
  }

  json echo() const {
    return {{"lambda", lambda ? json(*lambda) : json(nullptr)}, {"cv_folds", cv_folds}};
  }
};

void add_vp_flags(CLI::App* cmd, VpFlags& f) {
  cmd->add_option("--lambda", f.lambda, "l1 weight of the virtual-probe solver");
  cmd->add_option("--cv-folds", f.cv_folds, "Cross-validation folds for lambda (0: off)")
      ->capture_default_str();
}

std::optional<NoiseSpec> noise_from(const std::optional<double>& snr_db) {
  if (!snr_db) return std::nullopt;
  return NoiseSpec::from_snr_db(*snr_db);
}

json dims_json(const Dims& d) { return json(std::vector<std::size_t>(d.begin(), d.end())); }

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << body;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::vector<std::size_t> dims;
  std::size_t rank = 0;
  bool wafer = false;
  std::optional<double> snr_db;
  std::uint64_t seed = 0;
  std::string out;
  std::string obs;
  std::optional<double> ratio;
  std::string report;
};

int cmd_synth(const SynthArgs& a) {
  const Dims dims(a.dims.begin(), a.dims.end());
  if (!a.wafer && a.rank < 1) throw ArgumentError("--rank is required unless --wafer is given");
  if (!a.obs.empty() && !a.ratio) throw ArgumentError("--obs needs --ratio");
  if (a.obs.empty() && a.ratio) throw ArgumentError("--ratio needs --obs");
  if (a.ratio) check_ratio(*a.ratio);

  json manifest;
  manifest["command"] = "synth";
  manifest["kind"] = a.wafer ? "wafer" : "cp";
  manifest["dims"] = dims_json(dims);
  if (!a.wafer) manifest["rank"] = a.rank;
  manifest["seed"] = a.seed;
  manifest["snr_db"] = a.snr_db ? json(*a.snr_db) : json(nullptr);

  json seeds;
  DenseTensor truth = DenseTensor::zeros(dims);
  if (a.wafer) {
    truth = wafer_pattern(dims, WaferParams{}, a.seed);
    seeds[streams::wafer] = sub_seed(a.seed, streams::wafer);
  } else {
    truth = random_cp_tensor(dims, a.rank, a.seed).tensor;
    seeds[streams::factors] = sub_seed(a.seed, streams::factors);
  }
  write_tns(a.out, truth);
  manifest["truth"] = {{"path", a.out}, {"entries", truth.size()}};

  if (!a.obs.empty()) {
    const auto noise = noise_from(a.snr_db);
    const DenseTensor source = noise ? add_gaussian_noise(truth, *noise, a.seed) : truth;
    if (noise) seeds[streams::noise] = sub_seed(a.seed, streams::noise);
    const ObservationSet obs = observe(source, sample_mask(dims, *a.ratio, a.seed));
    seeds[streams::mask] = sub_seed(a.seed, streams::mask);
    write_tns(a.obs, obs);
    manifest["observations"] = {{"path", a.obs}, {"ratio", *a.ratio}, {"entries", obs.size()}};
  }
  manifest["sub_seeds"] = seeds;
  if (!a.report.empty()) write_json(a.report, manifest);
  std::cout << manifest.dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct CompleteArgs {
  std::string obs;
  std::string truth;
  std::vector<std::size_t> dims;
  std::string method = "bayes-cp";
  std::size_t max_rank = 15;
  std::uint64_t seed = 0;
  SolverFlags solver;
  VpFlags vp;
  std::string out;
  std::string report;
};

int cmd_complete(const CompleteArgs& a, bool max_iters_set, bool tol_set) {
  const ObservationSet obs = load_tns(a.obs);
  if (!a.dims.empty() && Dims(a.dims.begin(), a.dims.end()) != obs.dims())
    throw ArgumentError("--dims " + detail::format_dims(Dims(a.dims.begin(), a.dims.end())) +
                        " does not match " + detail::format_dims(obs.dims()) + " in '" +
                        a.obs + "'");
  if (obs.empty()) throw ArgumentError("'" + a.obs + "' holds no observations");
  std::optional<DenseTensor> truth;
  if (!a.truth.empty()) {
    truth = load_tns_dense(a.truth);
    if (truth->dims() != obs.dims())
      throw ShapeError("truth " + detail::format_dims(truth->dims()) +
                       " and observations " + detail::format_dims(obs.dims()) + " differ");
  }

  json report;
  report["method"] = a.method;
  report["dims"] = dims_json(obs.dims());
  report["sampling_ratio"] = obs.sampling_ratio();
  report["seed"] = a.seed;

  json config = {{"obs", a.obs}, {"truth", a.truth.empty() ? json(nullptr) : json(a.truth)}};
  DenseTensor prediction = DenseTensor::zeros(obs.dims());
  if (a.method == "bayes-cp") {
    const auto t = timed_complete(obs, HyperParams::defaults(a.max_rank), a.solver.config(a.seed));
    prediction = t.result.prediction;
    report["relative_error"] =
        truth ? json(relative_error(prediction, *truth)) : json(nullptr);
    report["predicted_rank"] = t.result.predicted_rank;
    report["iterations"] = t.result.iterations;
    report["converged"] = t.result.converged;
    report["final_elbo"] = t.result.final_elbo;
    report["expected_noise_precision"] = t.result.expected_tau;
    report["wall_time_seconds"] = t.wall_time;
    config["max_rank"] = a.max_rank;
    config.update(a.solver.echo());
  } else {
    LassoConfig lc = a.vp.config(a.seed);
    if (max_iters_set) lc.max_iters = a.solver.max_iters;
    if (tol_set) lc.tol = a.solver.tol;
    const auto t = timed_vp(obs, lc, threads_from_env());
    prediction = t.result.tensor;
    report["relative_error"] =
        truth ? json(relative_error(prediction, *truth)) : json(nullptr);
    report["iterations"] = t.result.iterations;
    report["converged"] = t.result.converged_slices + t.result.empty_slices == obs.dims()[2];
    report["wall_time_seconds"] = t.wall_time;
    config["max_iters"] = lc.max_iters;
    config["tol"] = lc.tol;
    config.update(a.vp.echo());
  }
  report["config"] = config;

  if (!a.out.empty()) write_tns(a.out, prediction);
  if (!a.report.empty()) write_json(a.report, report);
  std::cout << report.dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ProtocolArgs {
  std::string truth;
  std::optional<double> snr_db;
  std::uint64_t seed = 0;
  SolverFlags solver;
  std::string out;
  std::string report;
};

ProtocolConfig protocol_config(const ProtocolArgs& a, std::size_t max_rank) {
  ProtocolConfig c;
  c.seed = a.seed;
  if (a.snr_db) c.noise = NoiseSpec::from_snr_db(*a.snr_db);
  c.max_rank = max_rank;
  c.solver = a.solver.config(a.seed);
  return c;
}

json protocol_echo(const ProtocolArgs& a) {
  json j = {{"truth", a.truth},
            {"snr_db", a.snr_db ? json(*a.snr_db) : json(nullptr)},
            {"seed", a.seed}};
  j.update(a.solver.echo());
  return j;
}

std::string csv_string(auto&& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

int cmd_sweep(const ProtocolArgs& a, std::vector<double> ratios, std::size_t reps,
              std::size_t max_rank) {
  if (ratios.empty()) ratios = default_sweep_ratios();
  for (double r : ratios) check_ratio(r);
  const DenseTensor truth = load_tns_dense(a.truth);
  const auto rows = run_sweep(truth, ratios, reps, protocol_config(a, max_rank));
  const std::string csv = csv_string([&](std::ostream& os) { write_sweep_csv(os, rows); });
  if (a.out.empty()) std::cout << csv;
  else write_text(a.out, csv);
  if (!a.report.empty()) {
    json j = {{"command", "sweep"}, {"dims", dims_json(truth.dims())}};
    json config = protocol_echo(a);
    config["ratios"] = ratios;
    config["reps"] = reps;
    config["max_rank"] = max_rank;
    j["config"] = config;
    j["rows"] = rows.size();
    write_json(a.report, j);
  }
  return kOk;
}

int cmd_rank_study(const ProtocolArgs& a, double ratio, std::vector<std::size_t> max_ranks) {
  if (max_ranks.empty()) max_ranks = {5, 10, 15, 20, 25};
  const DenseTensor truth = load_tns_dense(a.truth);
  const auto rows = run_rank_study(truth, ratio, max_ranks, protocol_config(a, max_ranks.front()));
  const std::string csv = csv_string([&](std::ostream& os) { write_rank_study_csv(os, rows); });
  if (a.out.empty()) std::cout << csv;
  else write_text(a.out, csv);
  if (!a.report.empty()) {
    json config = protocol_echo(a);
    config["ratio"] = ratio;
    config["max_ranks"] = max_ranks;
    write_json(a.report, {{"command", "rank-study"},
                          {"dims", dims_json(truth.dims())},
                          {"config", config}});
  }
  return kOk;
}

int cmd_compare(const ProtocolArgs& a, double ratio, std::size_t max_rank, const VpFlags& vp) {
  const DenseTensor truth = load_tns_dense(a.truth);
  const auto rows = run_compare(truth, ratio, protocol_config(a, max_rank), vp.config(a.seed));
  const std::string csv =
      csv_string([&](std::ostream& os) { write_compare_csv(os, rows, ratio, a.seed); });
  if (a.out.empty()) std::cout << csv;
  else write_text(a.out, csv);
  if (!a.report.empty()) {
    json reports = json::array();
    for (const auto& r : rows) {
      json j;
      j["method"] = r.method;
      j["dims"] = dims_json(truth.dims());
      j["sampling_ratio"] = ratio;
      j["seed"] = a.seed;
      j["relative_error"] = r.ok() ? json(r.relative_error) : json(nullptr);
      if (r.predicted_rank) j["predicted_rank"] = *r.predicted_rank;
      j["iterations"] = r.iterations;
      j["wall_time_seconds"] = r.ok() ? json(r.wall_time) : json(nullptr);
      j["status"] = r.status;
      json config = protocol_echo(a);
      if (r.method == "bayes-cp") {
        config["max_rank"] = max_rank;
      } else {
        for (const char* key : {"tol", "max_iters", "prune_threshold", "prune", "init"})
          config.erase(key);
        config.update(vp.echo());
      }
      j["config"] = config;
      reports.push_back(j);
    }
    write_json(a.report, reports);
  }
  for (const auto& r : rows)
    if (!r.ok()) {
      std::cerr << "tenfill: " << r.method << " failed: " << r.status << "\n";
      return kSolverFailure;
    }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor completion by variational Bayesian CP decomposition"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic truth tensor (and observations)");
  s->add_option("--dims", synth.dims, "Extents, e.g. 30,30,15")->delimiter(',')->required();
  s->add_option("--rank", synth.rank, "CP rank of a random standard-normal tensor");
  s->add_flag("--wafer", synth.wafer, "Wafer-like smooth die pattern (order 3)");
  s->add_option("--snr-db", synth.snr_db, "Noise added to the observations, in dB");
  s->add_option("--seed", synth.seed, "Master seed")->capture_default_str();
  s->add_option("--out", synth.out, "Truth tensor file (.tns)")->required();
  s->add_option("--obs", synth.obs, "Observation file to write (.tns)");
  s->add_option("--ratio", synth.ratio, "Sampling ratio for --obs");
  s->add_option("--report", synth.report, "Also write the manifest to this file");

  CompleteArgs comp;
  auto* c = app.add_subcommand("complete", "Complete an observation file");
  c->add_option("--obs", comp.obs, "Observation file (.tns)")->required();
  c->add_option("--truth", comp.truth, "Truth file for the relative error");
  c->add_option("--dims", comp.dims, "Expected extents (checked against the file)")
      ->delimiter(',');
  c->add_option("--method", comp.method, "Solver")
      ->check(CLI::IsMember({"bayes-cp", "vp"}))
      ->capture_default_str();
  c->add_option("--max-rank", comp.max_rank, "Initial (maximum) CP rank")->capture_default_str();
  c->add_option("--seed", comp.seed, "Solver seed")->capture_default_str();
  add_solver_flags(c, comp.solver);
  add_vp_flags(c, comp.vp);
  c->add_option("--out", comp.out, "Prediction file (.tns, dense)");
  c->add_option("--report", comp.report, "JSON report file");

  ProtocolArgs sweep_args;
  std::vector<double> ratios;
  std::size_t reps = 1;
  std::size_t sweep_max_rank = 15;
  auto* sw = app.add_subcommand("sweep", "Relative error over a grid of sampling ratios");
  sw->add_option("--truth", sweep_args.truth, "Truth file (.tns, dense)")->required();
  sw->add_option("--ratios", ratios, "Sampling ratios (default: 10 log-spaced in [0.03, 0.5])")
      ->delimiter(',');
  sw->add_option("--reps", reps, "Mask seeds per ratio (seed, seed+1, ...)")
      ->capture_default_str();
  sw->add_option("--max-rank", sweep_max_rank, "Initial (maximum) CP rank")
      ->capture_default_str();
  sw->add_option("--snr-db", sweep_args.snr_db, "Noise added before sampling, in dB");
  sw->add_option("--seed", sweep_args.seed, "Master seed")->capture_default_str();
  add_solver_flags(sw, sweep_args.solver);
  sw->add_option("--out", sweep_args.out, "CSV file (default: stdout)");
  sw->add_option("--report", sweep_args.report, "JSON file echoing the configuration");

  ProtocolArgs rank_args;
  double rank_ratio = 0.15;
  std::vector<std::size_t> max_ranks;
  auto* rs = app.add_subcommand("rank-study", "Predicted rank under different maximum ranks");
  rs->add_option("--truth", rank_args.truth, "Truth file (.tns, dense)")->required();
  rs->add_option("--ratio", rank_ratio, "Sampling ratio")->capture_default_str();
  rs->add_option("--max-rank", max_ranks, "Maximum ranks (default: 5,10,15,20,25)")
      ->delimiter(',');
  rs->add_option("--snr-db", rank_args.snr_db, "Noise added before sampling, in dB");
  rs->add_option("--seed", rank_args.seed, "Master seed")->capture_default_str();
  add_solver_flags(rs, rank_args.solver);
  rs->add_option("--out", rank_args.out, "CSV file (default: stdout)");
  rs->add_option("--report", rank_args.report, "JSON file echoing the configuration");

  ProtocolArgs cmp_args;
  double cmp_ratio = 0.15;
  std::size_t cmp_max_rank = 15;
  VpFlags cmp_vp;
  auto* cp = app.add_subcommand("compare", "Completion vs. slice-by-slice virtual probe");
  cp->add_option("--truth", cmp_args.truth, "Truth file (.tns, dense, order 3)")->required();
  cp->add_option("--ratio", cmp_ratio, "Sampling ratio")->capture_default_str();
  cp->add_option("--max-rank", cmp_max_rank, "Initial (maximum) CP rank")->capture_default_str();
  cp->add_option("--snr-db", cmp_args.snr_db, "Noise added before sampling, in dB");
  cp->add_option("--seed", cmp_args.seed, "Master seed")->capture_default_str();
  add_solver_flags(cp, cmp_args.solver);
  add_vp_flags(cp, cmp_vp);
  cp->add_option("--out", cmp_args.out, "CSV file (default: stdout)");
  cp->add_option("--report", cmp_args.report, "JSON file with one report per method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (c->parsed())
      return cmd_complete(comp, c->count("--max-iters") > 0, c->count("--tol") > 0);
    if (sw->parsed()) return cmd_sweep(sweep_args, ratios, reps, sweep_max_rank);
    if (rs->parsed()) return cmd_rank_study(rank_args, rank_ratio, max_ranks);
    if (cp->parsed()) return cmd_compare(cmp_args, cmp_ratio, cmp_max_rank, cmp_vp);
  } catch (const IoError& e) {
    std::cerr << "tenfill: " << e.what() << "\n";
    return kUsageError;
  } catch (const ParseError& e) {
    std::cerr << "tenfill: " << e.what() << "\n";
    return kUsageError;
  } catch (const DataError& e) {
    std::cerr << "tenfill: " << e.what() << "\n";
    return kUsageError;
  } catch (const IndexError& e) {
    std::cerr << "tenfill: " << e.what() << "\n";
    return kUsageError;
  } catch (const ArgumentError& e) {
    std::cerr << "tenfill: " << e.what() << "\n";
    return kUsageError;
  } catch (const ShapeError& e) {
    std::cerr << "tenfill: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "tenfill: " << e.what() << "\n";
    return kSolverFailure;
  }
  return kUsageError;
}
