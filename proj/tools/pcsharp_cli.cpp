// pcsharp: train probabilistic circuits with and without the Hessian-trace
// regularizer, and export curvature diagnostics.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "pcsharp/curvature.hpp"
#include "pcsharp/data.hpp"
#include "pcsharp/diagnostics.hpp"
#include "pcsharp/error.hpp"
#include "pcsharp/fd_oracle.hpp"
#include "pcsharp/learning.hpp"
#include "pcsharp/parallel.hpp"
#include "pcsharp/structure.hpp"

using namespace pcsharp;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kInputError = 2, kDiverged = 3 };

struct RunConfig {
  std::string dataset;  // DEBD name
  std::string data_root;
  std::string manifold;
  double noise = 0.05;
  std::size_t manifold_rows = 1000;
  double fraction = 1.0;
  std::uint64_t seed = 1;
  std::string structure = "auto";  // auto | rat[:k=v,...] | hclt[:latents]
  std::string learner = "em";      // em | sgd
  std::string mu_mode = "fixed";   // fixed | adaptive | layer | grid
  double mu = 0.0;
  double lambda = 1.0;
  double alpha = -1.0;  // < 0: learner default
  int epochs = -1;      // < 0: learner default
  std::size_t batch_size = 200;
  double learning_rate = 0.1;
  bool learn_leaves = true;
  std::string out = "run";
};

json to_json(const RunConfig& c) {
  return json{{"dataset", c.dataset},       {"data_root", c.data_root},
              {"manifold", c.manifold},     {"noise", c.noise},
              {"manifold_rows", c.manifold_rows},
              {"fraction", c.fraction},     {"seed", c.seed},
              {"structure", c.structure},   {"learner", c.learner},
              {"mu_mode", c.mu_mode},       {"mu", c.mu},
              {"lambda", c.lambda},         {"alpha", c.alpha},
              {"epochs", c.epochs},         {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"learn_leaves", c.learn_leaves},
              {"out", c.out}};
}

void from_json(const json& j, RunConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("dataset", c.dataset);
  get("data_root", c.data_root);
  get("manifold", c.manifold);
  get("noise", c.noise);
  get("manifold_rows", c.manifold_rows);
  get("fraction", c.fraction);
  get("seed", c.seed);
  get("structure", c.structure);
  get("learner", c.learner);
  get("mu_mode", c.mu_mode);
  get("mu", c.mu);
  get("lambda", c.lambda);
  get("alpha", c.alpha);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("learn_leaves", c.learn_leaves);
  get("out", c.out);
}

int exit_code(ErrorKind k) { return k == ErrorKind::DivergedNaN ? kDiverged : kInputError; }

Dataset load_data(RunConfig& cfg) {
  if (cfg.dataset.empty() == cfg.manifold.empty())
    throw Error(ErrorKind::InvalidArgument, "give exactly one of --dataset or --manifold");
  Dataset ds;
  if (!cfg.manifold.empty()) {
    ds = gen_manifold(cfg.manifold, cfg.manifold_rows, cfg.noise, cfg.seed);
    minmax_scale(ds);
  } else {
    if (cfg.data_root.empty()) {
      const char* env = std::getenv("CIRCUIT_SHARP_DATA");
      cfg.data_root = env ? env : ".";
    }
    ds = load_debd(cfg.dataset, cfg.data_root);
  }
  return subsample(ds, {cfg.fraction, cfg.seed});
}

std::map<std::string, std::string> structure_options(const std::string& spec, std::string& kind) {
  std::map<std::string, std::string> opts;
  const auto colon = spec.find(':');
  kind = spec.substr(0, colon);
  if (colon == std::string::npos) return opts;
  std::stringstream ss(spec.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) opts["latents"] = item;  // hclt:100 shorthand
    else opts[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return opts;
}

Model build_structure(const RunConfig& cfg, const Dataset& ds) {
  std::string kind;
  auto opts = structure_options(cfg.structure, kind);
  auto num = [&](const char* key, int fallback) {
    if (!opts.count(key)) return fallback;
    try {
      return std::stoi(opts.at(key));
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "bad structure option " + std::string(key) + "=" + opts.at(key));
    }
  };
  if (kind == "auto") kind = ds.binary ? "hclt" : "rat";
  if (kind == "hclt") {
    if (!ds.binary) throw Error(ErrorKind::InvalidArgument, "hclt needs binary data");
    HcltConfig h;
    h.num_latents = num("latents", 100);
    h.seed = cfg.seed;
    return build_hclt(chow_liu_tree(ds.train, h.pseudo_count), h, &ds.train);
  }
  if (kind == "rat") {
    RatConfig r;
    r.num_vars = static_cast<int>(ds.num_vars);
    r.depth = num("depth", ds.num_vars >= 2 ? 1 : 0);
    r.num_sums = num("sums", 10);
    r.num_input_distributions = num("inputs", 10);
    r.num_repetitions = num("reps", 10);
    r.leaf_family = ds.binary ? LeafFamily::Bernoulli : LeafFamily::Gaussian;
    r.seed = cfg.seed;
    return build_rat(r);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown structure '" + cfg.structure + "'");
}

RegularizerConfig regularizer(const RunConfig& cfg, double mu) {
  RegularizerConfig r;
  r.mu = mu;
  r.lambda = cfg.lambda;
  r.smoothing_alpha = cfg.alpha >= 0.0 ? cfg.alpha : (cfg.learner == "em" ? 0.1 : 1.0);
  if (cfg.mu_mode == "adaptive") {
    r.schedule = MuSchedule::AdaptiveDoF;
    if (r.mu == 0.0) r.mu = 1.0;
  } else if (cfg.mu_mode == "layer") {
    r.schedule = MuSchedule::LayerMeanFlow;
  } else if (cfg.mu_mode != "fixed" && cfg.mu_mode != "grid") {
    throw Error(ErrorKind::InvalidArgument, "unknown mu mode '" + cfg.mu_mode + "'");
  }
  return r;
}

TrainReport fit(const RunConfig& cfg, const Model& model, ParamSet& params, const Dataset& ds, double mu) {
  if (cfg.learner == "em") {
    EmSettings s;
    s.epochs = cfg.epochs >= 0 ? cfg.epochs : 100;
    s.batch_size = cfg.batch_size;
    s.learn_leaves = cfg.learn_leaves;
    s.seed = cfg.seed;
    return em_train(model.circuit, params, ds.train, ds.valid, regularizer(cfg, mu), s);
  }
  if (cfg.learner == "sgd") {
    SgdSettings s;
    s.epochs = cfg.epochs >= 0 ? cfg.epochs : 200;
    s.batch_size = cfg.batch_size;
    s.learning_rate = cfg.learning_rate;
    s.learn_leaves = cfg.learn_leaves;
    s.seed = cfg.seed;
    return sgd_train(model.circuit, params, ds.train, ds.valid, regularizer(cfg, mu), s);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown learner '" + cfg.learner + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << text;
}

int cmd_train(RunConfig cfg) {
  const Dataset ds = load_data(cfg);
  const Model model = build_structure(cfg, ds);
  fs::create_directories(cfg.out);
  write_text(fs::path(cfg.out) / "manifest.json", to_json(cfg).dump(2) + "\n");

  std::vector<double> candidates{cfg.mu};
  if (cfg.mu_mode == "grid") candidates.assign(std::begin(kMuGrid), std::end(kMuGrid));
  ParamSet best_params;
  TrainReport best_report;
  double best_mu = cfg.mu, best_valid = INFINITY;
  json grid = json::array();
  for (double mu : candidates) {
    ParamSet params = model.params;
    TrainReport rep = fit(cfg, model, params, ds, mu);
    const double valid = mean_nll(model.circuit, params, ds.valid);
    grid.push_back({{"mu", mu}, {"valid_nll", valid}});
    if (best_report.epochs.empty() || valid < best_valid) {
      best_valid = valid;
      best_mu = mu;
      best_params = std::move(params);
      best_report = std::move(rep);
    }
  }

  save_model((fs::path(cfg.out) / "model.pc").string(), model.circuit, best_params);
  {
    std::ofstream log(fs::path(cfg.out) / "train_log.csv");
    write_train_log(log, best_report);
  }
  {
    std::ofstream train_csv(fs::path(cfg.out) / "train.csv");
    write_csv(train_csv, ds.train);
  }
  const double tr = mean_nll(model.circuit, best_params, ds.train);
  const double va = mean_nll(model.circuit, best_params, ds.valid);
  const double te = mean_nll(model.circuit, best_params, ds.test);
  json metrics{{"train_nll", tr},
               {"valid_nll", va},
               {"test_nll", te},
               {"sharpness", hessian_trace(model.circuit, best_params, ds.train)},
               {"dof", tr != 0.0 ? dof(tr, te) : 0.0},
               {"dof_valid_abs", tr != 0.0 ? dof_abs(tr, va) : 0.0},
               {"mu", best_mu},
               {"epochs", best_report.epochs.size()},
               {"num_edges", model.circuit.num_edges()},
               {"train_rows", ds.train.rows()},
               {"diverged", best_report.diverged}};
  if (cfg.mu_mode == "grid") metrics["mu_grid"] = grid;
  write_text(fs::path(cfg.out) / "metrics.json", metrics.dump(2) + "\n");
  std::cout << metrics.dump(2) << "\n";
  if (best_report.diverged) {
    std::cerr << "training diverged; last finite parameters were saved\n";
    return kDiverged;
  }
  return kOk;
}

Matrix load_matrix(const std::string& path) {
  if (path.ends_with(".data")) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path);
    return parse_rows(in, path, true);
  }
  return read_csv(path);
}

int cmd_trace(const std::string& model_path, const std::string& data_path, const std::string& per_edge,
              bool fd_check) {
  const Model m = load_model(model_path);
  const Matrix data = load_matrix(data_path);
  const double trace = hessian_trace(m.circuit, m.params, data);
  std::cout.precision(17);
  std::cout << "abs_trace " << trace << "\n";
  if (!per_edge.empty()) {
    std::ofstream out(per_edge);
    if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + per_edge);
    write_diag_csv(out, hessian_diag(m.circuit, m.params, data));
  }
  if (fd_check) {
    const auto fd = fd_hessian(m.circuit, m.params, data);
    const auto diag = hessian_diag(m.circuit, m.params, data);
    double dev = 0.0;
    for (std::size_t e = 0; e < diag.size(); ++e)
      dev = std::max(dev, std::abs(diag[e] - fd(e, e)) / std::max(1.0, std::abs(diag[e])));
    std::cout << "fd_max_deviation " << dev << "\n";
    if (dev > 1e-4) return kCheckFailed;
  }
  return kOk;
}

int cmd_landscape(const std::string& model_path, const std::string& data_path, const std::string& mode,
                  std::size_t points, double radius, std::uint64_t seed, std::size_t eig_k, const std::string& out) {
  const Model m = load_model(model_path);
  const Matrix data = load_matrix(data_path);
  LandscapeOptions opt;
  if (mode == "1d") opt.mode = LandscapeMode::OneD;
  else if (mode == "2d") opt.mode = LandscapeMode::TwoD;
  else throw Error(ErrorKind::InvalidArgument, "mode must be 1d or 2d");
  opt.points = points ? points : (opt.mode == LandscapeMode::OneD ? 51 : 25);
  opt.radius = radius;
  opt.seed = seed;
  fs::create_directories(out);
  const auto grid = landscape(m.circuit, m.params, data, opt);
  {
    std::ofstream f(fs::path(out) / ("landscape_" + mode + ".csv"));
    write_landscape_csv(f, grid);
  }
  if (eig_k > 0) {
    const auto ev = hessian_top_eigenvalues(m.circuit, m.params, data, eig_k);
    std::ofstream f(fs::path(out) / "eigenvalues.csv");
    write_eigen_csv(f, ev);
  }
  std::cout << "wrote " << grid.values.size() << " landscape points to " << out << "\n";
  return kOk;
}

/// Chain-structured HCLT over `vars` variables with as many latent states as
/// it takes to come closest to `target_edges`.
Model bench_circuit(std::size_t target_edges, int vars, std::uint64_t seed) {
  const double per = static_cast<double>(vars - 1);
  const int h = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(target_edges) / per))));
  SpanningTree chain{vars, {}};
  for (int v = 0; v + 1 < vars; ++v) chain.edges.emplace_back(v, v + 1);
  HcltConfig cfg;
  cfg.num_latents = h;
  cfg.seed = seed;
  return build_hclt(chain, cfg);
}

int cmd_bench(const std::vector<std::size_t>& sizes, std::size_t samples, int repeats, const std::string& out) {
  std::vector<double> xs, ys;
  std::ofstream csv;
  if (!out.empty()) {
    csv.open(out);
    if (!csv) throw Error(ErrorKind::MissingFile, "cannot write " + out);
    csv << "edges,seconds\n";
    csv.precision(17);
  }
  if (samples == 0) std::cerr << "zero samples: every timing measures an empty pass\n";
  std::mt19937_64 rng(7);
  for (std::size_t target : sizes) {
    const Model m = bench_circuit(target, 100, 1);
    Matrix x(samples, m.circuit.num_vars());
    for (auto& v : x.data()) v = static_cast<double>(rng() % 2);
    double best = INFINITY;
    volatile double sink = 0.0;
    for (int r = 0; r < std::max(1, repeats); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      sink = sink + hessian_trace(m.circuit, m.params, x);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    xs.push_back(static_cast<double>(m.circuit.num_edges()));
    ys.push_back(best);
    std::cout << m.circuit.num_edges() << " edges: " << best << " s\n";
    if (csv) csv << m.circuit.num_edges() << ',' << best << '\n';
  }
  // time = a * edges, least squares through the origin
  double sxy = 0.0, sxx = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += xs[i] * ys[i];
    sxx += xs[i] * xs[i];
    mean += ys[i];
  }
  if (xs.size() < 2) {
    std::cout << "r2 n/a\n";
    return kOk;
  }
  mean /= static_cast<double>(ys.size());
  const double a = sxy / sxx;
  double res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    res += (ys[i] - a * xs[i]) * (ys[i] - a * xs[i]);
    tot += (ys[i] - mean) * (ys[i] - mean);
  }
  std::cout << "slope " << a << " s/edge\n";
  if (tot > 0.0) std::cout << "r2 " << 1.0 - res / tot << "\n";
  else std::cout << "r2 n/a\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic circuits with tractable sharpness regularization"};
  app.require_subcommand(1);
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--threads", threads, "worker threads for batch loops")->check(CLI::PositiveNumber);

  RunConfig cfg;
  std::string manifest;
  auto* train = app.add_subcommand("train", "train a circuit and write model, log, metrics and manifest");
  train->add_option("--manifest", manifest, "start from a manifest.json; flags given here override it");
  std::vector<CLI::Option*> overrides = {
      train->add_option("--dataset", cfg.dataset, "binary benchmark name"),
      train->add_option("--data-root", cfg.data_root, "benchmark directory (default $CIRCUIT_SHARP_DATA)"),
      train->add_option("--manifold", cfg.manifold, "synthetic manifold name"),
      train->add_option("--noise", cfg.noise, "manifold noise stddev"),
      train->add_option("--manifold-rows", cfg.manifold_rows, "rows per manifold split"),
      train->add_option("--fraction", cfg.fraction, "training fraction in (0,1]"),
      train->add_option("--seed", cfg.seed, "seed (subset, structure, batches)"),
      train->add_option("--structure", cfg.structure, "auto | rat[:depth=,sums=,inputs=,reps=] | hclt[:latents]"),
      train->add_option("--learner", cfg.learner, "em | sgd"),
      train->add_option("--mu-mode", cfg.mu_mode, "fixed | adaptive | layer | grid"),
      train->add_option("--mu", cfg.mu, "regularization weight"),
      train->add_option("--lambda", cfg.lambda, "simplex multiplier"),
      train->add_option("--alpha", cfg.alpha, "EM running-average weight (default 0.1 for em)"),
      train->add_option("--epochs", cfg.epochs, "epochs (default 100 em, 200 sgd)"),
      train->add_option("--batch-size", cfg.batch_size, "mini-batch size"),
      train->add_option("--lr", cfg.learning_rate, "Adam learning rate"),
      train->add_option("--learn-leaves", cfg.learn_leaves, "update leaf parameters"),
      train->add_option("--out", cfg.out, "output directory"),
  };

  std::string model_path, data_path, per_edge;
  bool fd_check = false;
  auto* trace = app.add_subcommand("trace", "print the Hessian trace of a model on data");
  trace->add_option("--model", model_path, "model.pc")->required();
  trace->add_option("--data", data_path, "CSV or .data file")->required();
  trace->add_option("--per-edge", per_edge, "write per-edge diagonal CSV");
  trace->add_flag("--fd-check", fd_check, "compare against finite differences (exit 1 above 1e-4)");

  std::string mode = "1d", out_dir = "landscape";
  std::size_t points = 0, eig_k = 10;
  double radius = 1.0;
  std::uint64_t lseed = 0;
  auto* land = app.add_subcommand("landscape", "loss surface and Hessian eigenvalues around a model");
  land->add_option("--model", model_path, "model.pc")->required();
  land->add_option("--data", data_path, "CSV or .data file")->required();
  land->add_option("--mode", mode, "1d | 2d");
  land->add_option("--points", points, "grid points per axis (default 51 in 1d, 25 in 2d)");
  land->add_option("--radius", radius, "grid radius");
  land->add_option("--seed", lseed, "direction seed");
  land->add_option("--eig", eig_k, "number of top eigenvalues (0 to skip)");
  land->add_option("--out", out_dir, "output directory");

  std::vector<std::size_t> sizes{1000, 10000, 100000, 1000000};
  std::size_t samples = 16;
  int repeats = 3;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "time the Hessian trace over growing circuits");
  bench->add_option("--sizes", sizes, "target edge counts")->delimiter(',');
  bench->add_option("--samples", samples, "samples per timing");
  bench->add_option("--repeats", repeats, "timings per size (minimum kept)");
  bench->add_option("--out", bench_out, "edges,seconds CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }
  set_num_threads(threads);

  try {
    if (train->parsed()) {
      RunConfig run;
      if (!manifest.empty()) {
        std::ifstream in(manifest);
        if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + manifest);
        from_json(json::parse(in), run);
      }
      const json given = to_json(cfg);
      json merged = to_json(run);
      const auto keys = std::vector<std::string>{"dataset", "data_root", "manifold", "noise", "manifold_rows",
                                                 "fraction", "seed", "structure", "learner", "mu_mode", "mu",
                                                 "lambda", "alpha", "epochs", "batch_size", "learning_rate",
                                                 "learn_leaves", "out"};
      for (std::size_t i = 0; i < overrides.size(); ++i)
        if (overrides[i]->count() > 0 || manifest.empty()) merged[keys[i]] = given[keys[i]];
      from_json(merged, run);
      return cmd_train(run);
    }
    if (trace->parsed()) return cmd_trace(model_path, data_path, per_edge, fd_check);
    if (land->parsed()) return cmd_landscape(model_path, data_path, mode, points, radius, lseed, eig_k, out_dir);
    if (bench->parsed()) return cmd_bench(sizes, samples, repeats, bench_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error: manifest: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}
