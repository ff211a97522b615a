// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "connlab/channels.hpp"
#include "connlab/equivariance.hpp"
#include "connlab/experiments.hpp"
#include "connlab/grad.hpp"
#include "connlab/permutation.hpp"
#include "support.hpp"

#ifndef CONNLAB_CONFIG_DIR
#define CONNLAB_CONFIG_DIR "configs"
#endif

using namespace connlab;
namespace ts = testing_support;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  std::string config_dir = CONNLAB_CONFIG_DIR;
  int workers = default_workers();
  bool quiet = false;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ExperimentConfig load(const Options& o, const std::string& name) {
  const auto path = std::filesystem::path(o.config_dir) / name;
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  return config_from_json(nlohmann::json::parse(is));
}

TrainOptions train_options(const Options& o, const std::string& tag) {
  TrainOptions t;
  t.workers = o.workers;
  if (!o.quiet) {
    t.on_log = [tag](const MetricsRow& r) {
      if (r.step % 1000 == 0) std::cerr << "  [" << tag << "] step " << r.step << " loss " << r.train_loss << '\n';
    };
  }
  return t;
}

Outcome a1_gradients(const Options&) {
  Engine engine(101);
  const LinkParams lp{};
  double worst = 0.0;
  int instances = 0;
  for (int depth = 1; depth <= 2; ++depth) {
    for (int n = 3; n <= 6; ++n) {
      for (int rep = 0; rep < 3; ++rep) {
        const auto params = ts::random_dense(depth, n, engine, -0.5, 0.5);
        const auto g = sample_er(n, 0.4, derive_seed(1000 + depth * 100 + n * 10, rep));
        worst = std::max(worst, ts::check_gradient(params, g, lp).max_rel_error);
        ++instances;
      }
    }
  }
  return {instances >= 20 && worst <= 1e-5, std::to_string(instances) + " instances, max rel error " + fmt(worst)};
}

Outcome a2_support_law(const Options&) {
  const LinkParams lp{};
  std::uniform_int_distribution<int> pick_n(2, 12);
  std::uniform_real_distribution<double> pick_p(0.05, 0.5);
  int mismatches = 0;
  int checked = 0;
  for (int depth = 1; depth <= 2; ++depth) {
    Engine engine(200 + depth);
    for (int i = 0; i < 200; ++i) {
      const int n = pick_n(engine);
      const double p = pick_p(engine);
      const auto g = sample_er(n, p, derive_seed(depth, i));
      const auto params = init_params(depth, n, IdentityInit{}, 0);
      const auto adjacency = augmented_adjacency(g);
      const auto pred = predict(model_output(params, adjacency), lp, ThresholdMode::kStrictPositive);
      mismatches += !(pred == power_support(adjacency, capacity(depth)));
      ++checked;
    }
  }
  return {mismatches == 0, std::to_string(checked) + " graphs, " + std::to_string(mismatches) + " support mismatches"};
}

Outcome a3_falsify(const Options&) {
  const LinkParams lp{};
  bool ok = true;
  std::ostringstream detail;
  for (const auto& [depth, n] : {std::pair{1, 5}, std::pair{2, 11}}) {
    const auto params = init_params(depth, n, IdentityInit{}, 0);
    const auto first = falsify_capacity(params, ThresholdMode::kStrictPositive, lp);
    const auto second = falsify_capacity(params, ThresholdMode::kStrictPositive, lp);
    const bool found = first.has_value() && second.has_value() && *first == *second;
    ok = ok && found;
    detail << "L=" << depth << " n=" << n << ": "
           << (found ? "counterexample with diameter " + std::to_string(diameter(*first)) : "none") << "; ";
  }
  return {ok, detail.str()};
}

// Trained runs are shared between criteria.
struct Runs {
  std::optional<TrainResult> er;
  std::optional<TrainResult> restricted;
};

const TrainResult& er_run(Runs& runs, const Options& o) {
  if (!runs.er) runs.er = train(load(o, "er_dynamics.json"), train_options(o, "er"));
  return *runs.er;
}

const TrainResult& restricted_run(Runs& runs, const Options& o) {
  if (!runs.restricted) runs.restricted = train(load(o, "restricted_dynamics.json"), train_options(o, "restricted"));
  return *runs.restricted;
}

Outcome a4_dynamics(Runs& runs, const Options& o) {
  const auto& rows = er_run(runs, o).rows;
  const double initial = rows.front().channels[0].share_j;
  double early_peak = -1.0;
  double peak = -1.0;
  for (const auto& r : rows) {
    const double j = r.channels[0].share_j;
    if (r.step <= 1000) early_peak = std::max(early_peak, j);
    peak = std::max(peak, j);
  }
  const auto& last = rows.back().channels[0];
  const bool rises = early_peak > initial;
  const bool falls = last.share_j <= 0.7 * peak;
  const bool ordered = last.share_i > last.share_j;
  const bool small_res = last.share_residual < 0.10;
  return {rises && falls && ordered && small_res,
          "share_J initial " + fmt(initial) + " early peak " + fmt(early_peak) + " peak " + fmt(peak) + " final " +
              fmt(last.share_j) + "; final share_I " + fmt(last.share_i) + " share_res " +
              fmt(last.share_residual)};
}

Outcome a5_data_lever(Runs& runs, const Options& o) {
  const auto& r = restricted_run(runs, o);
  const auto& last = r.channels.layers[0];
  bool ok = last.share_i >= 0.90 && last.share_j <= 0.05;
  std::string detail = "share_I " + fmt(last.share_i) + " share_J " + fmt(last.share_j) + "; OOD exact";
  int seen = 0;
  for (const auto& e : r.ood) {
    for (int k = 1; k <= 3; ++k) {
      if (e.name != "two_chain_k" + std::to_string(k)) continue;
      ok = ok && e.result.exact_match >= 0.95;
      detail += " k" + std::to_string(k) + "=" + fmt(e.result.exact_match);
      ++seen;
    }
  }
  return {ok && seen == 3, detail};
}

Outcome probe_outcome(const ProbeResult& probe, int reliable_up_to) {
  bool ok = true;
  std::string detail;
  for (int d = 1; d <= reliable_up_to + 1; ++d) {
    if (d >= static_cast<int>(probe.eval.by_distance.size())) {
      ok = false;
      detail += "d" + std::to_string(d) + " missing; ";
      continue;
    }
    const auto& b = probe.eval.by_distance[d];
    const bool thick = b.total >= kMinBucketPairs;
    const bool want = d <= reliable_up_to ? b.accuracy() >= kReliableAccuracy : b.accuracy() < kReliableAccuracy;
    ok = ok && thick && want;
    detail += "d" + std::to_string(d) + "=" + fmt(b.accuracy()) + " (" + std::to_string(b.total) + ") ";
  }
  return {ok, detail};
}

Outcome a6_probe(Runs& runs, const Options& o) {
  const auto& r = restricted_run(runs, o);
  const auto probe = capacity_probe(r.params, ErSpec{8, 0.2}, 20000, ThresholdMode::kHalfProb, LinkParams{}, 606);
  return probe_outcome(probe, 3);
}

Outcome a7_gradient_algebra(const Options&) {
  const int n = 4;
  const auto perms = all_permutations(n);
  Engine engine(707);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const int depth = 1 + i % 2;
    const auto params = ts::random_structured(depth, n, engine, -0.5, 0.5);
    const std::vector<Graph> graphs{sample_er(n, 0.5, derive_seed(707, i))};
    for (double r : grad_in_algebra_residual(graphs, params, perms, LinkParams{})) worst = std::max(worst, r);
  }
  return {worst <= 1e-10, "10 pairs x 24 permutations, max residual share " + fmt(worst)};
}

Outcome a8_sign_laws(const Options&) {
  Engine engine(808);
  const LinkParams lp{};
  double worst_push = -std::numeric_limits<double>::infinity();
  double worst_drop = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int n = 4 + i % 5;
    const int depth = 1 + i % 2;
    const auto g = ts::random_connected(n, 0.35, derive_seed(808, i));
    const auto params = ts::random_structured(depth, n, engine, 0.0, 0.5);
    const int layer = 1 + i % depth;
    const int k = channel_dim(layer);
    const Matrix delta = ts::random_matrix(k, k, engine, 0.0, 1.0);
    worst_push = std::max(worst_push, channel_push(params, g, layer, delta, lp).total);

    const auto adjacency = augmented_adjacency(g);
    const Matrix base = model_output(params, adjacency);
    for (double step : {1e-3, 1e-2, 1e-1}) {
      auto moved = params;
      moved.structured[layer - 1].b += step * delta;
      sync_weights(moved);
      worst_drop = std::max(worst_drop, (base - model_output(moved, adjacency)).maxCoeff());
    }
  }
  return {worst_push <= 1e-12 && worst_drop <= 1e-12,
          "max channel_push " + fmt(worst_push) + ", max output decrease " + fmt(worst_drop)};
}

Outcome a9_projection(const Options&) {
  Engine engine(909);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int n = 2 + i % 5;
    const int depth = 1 + i % 2;
    const auto params = ts::random_dense(depth, n, engine, -1.0, 1.0);
    const auto report = project_weights(params);
    for (int l = 0; l < depth; ++l) {
      const Matrix& w = params.weights[l];
      const auto k = w.rows() / n;
      Matrix basis(w.size(), 2 * k * k);
      for (Eigen::Index p = 0; p < k; ++p) {
        for (Eigen::Index q = 0; q < k; ++q) {
          Matrix e = Matrix::Zero(k, k);
          e(p, q) = 1.0;
          const Matrix bi = materialize(e, Matrix::Zero(k, k), n);
          const Matrix bj = materialize(Matrix::Zero(k, k), e, n);
          basis.col(p * k + q) = bi.reshaped();
          basis.col(k * k + p * k + q) = bj.reshaped();
        }
      }
      const Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(w.reshaped().eval());
      for (Eigen::Index p = 0; p < k; ++p) {
        for (Eigen::Index q = 0; q < k; ++q) {
          worst = std::max(worst, std::abs(coef(p * k + q) - report.layers[l].a_hat(p, q)));
          worst = std::max(worst, std::abs(coef(k * k + p * k + q) - report.layers[l].b_hat(p, q)));
        }
      }
    }
  }
  bool exact = true;
  for (const auto& [c, d, n] : {std::tuple{3.0, 0.5, 4}, std::tuple{2.0, -0.5, 3}, std::tuple{0.0, 1.0, 5}}) {
    Matrix m = Matrix::Constant(n, n, d);
    m.diagonal().setConstant(c);
    const auto b = project_block(m);
    exact = exact && b.a == c - d && b.b == d;
  }
  return {worst <= 1e-10 && exact,
          "50 weights, max coefficient error " + fmt(worst) + "; constant blocks " + (exact ? "exact" : "inexact")};
}

Outcome a10_equivariance(const Options&) {
  Engine engine(1010);
  std::vector<Permutation> perms;
  for (int i = 0; i < 8; ++i) perms.push_back(random_permutation(8, engine));
  const auto graphs = sample_many(ErSpec{8, 0.3}, 16, 1010);
  double worst = 0.0;
  for (int depth = 1; depth <= 2; ++depth) {
    for (int rep = 0; rep < 3; ++rep) {
      const auto params = ts::random_structured(depth, 8, engine, 0.0, 0.5);
      worst = std::max(worst, std::abs(cons_frob(params, graphs, perms).mean - 1.0));
      for (double v : layerwise_cons_frob(params, graphs, perms)) worst = std::max(worst, std::abs(v - 1.0));
    }
  }
  return {worst <= 1e-9, "max |ConsFrob - 1| over output and layers " + fmt(worst)};
}

Outcome a11_rho_sweep(const Options& o) {
  const std::vector<double> qs{1.0, 0.95, 0.9, 0.8, 0.5, 0.0};
  auto opts = train_options(o, "rho");
  const auto points = rho_sweep(load(o, "er_dynamics.json"), qs, opts);
  std::vector<double> share_i;
  std::vector<double> ood;
  std::string detail;
  for (const auto& p : points) {
    share_i.push_back(p.result.channels.layers[0].share_i);
    ood.push_back(mean_ood_per_pair(p.result));
    detail += "q=" + fmt(p.knob) + " (" + fmt(share_i.back()) + ", " + fmt(ood.back()) + ") ";
  }
  const double rho = spearman(share_i, ood);
  return {rho >= 0.8, "spearman " + fmt(rho) + "; " + detail};
}

// Two-layer n = 24 capacity check, hours on one core.
Outcome long_probe(const Options& o) {
  ExperimentConfig c;
  c.name = "long_l2_n24";
  c.model = ModelSpec{2, 24, GaussianInit{}, WeightMode::kDense, false};
  c.train = ErSpec{24, 0.1};
  c.optimizer = AdamConfig{};
  c.total_steps = 200000;
  c.fixed_samples = 0;
  c.batch_size = 64;
  c.log_every = 5000;
  c.seed = 24;
  const auto r = train(c, train_options(o, "long"));
  const auto probe = capacity_probe(r.params, c.train, 20000, ThresholdMode::kHalfProb, c.link, 2424);
  return probe_outcome(probe, 9);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"connlab acceptance suite"};
  Options options;
  std::string only;
  std::string out;
  bool run_long = false;
  app.add_option("--only", only, "comma-separated criteria to run, e.g. A1,A7");
  app.add_option("--out", out, "also write the result lines to this file");
  app.add_option("--configs", options.config_dir, "directory holding the recipe configs");
  app.add_option("--workers", options.workers, "worker threads for training");
  app.add_flag("--long", run_long, "also run the two-layer n = 24 capacity check");
  app.add_flag("--quiet", options.quiet, "no training progress on stderr");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) selected.insert(item);
  }

  Runs runs;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", [&] { return a1_gradients(options); }},
      {"A2", [&] { return a2_support_law(options); }},
      {"A3", [&] { return a3_falsify(options); }},
      {"A4", [&] { return a4_dynamics(runs, options); }},
      {"A5", [&] { return a5_data_lever(runs, options); }},
      {"A6", [&] { return a6_probe(runs, options); }},
      {"A7", [&] { return a7_gradient_algebra(options); }},
      {"A8", [&] { return a8_sign_laws(options); }},
      {"A9", [&] { return a9_projection(options); }},
      {"A10", [&] { return a10_equivariance(options); }},
      {"A11", [&] { return a11_rho_sweep(options); }},
      {"A6-long", [&] { return long_probe(options); }},
  };

  std::ofstream file;
  if (!out.empty()) file.open(out);
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    const bool is_long = id == "A6-long";
    if (selected.empty() ? is_long && !run_long : !selected.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome result;
    try {
      result = check();
    } catch (const std::exception& e) {
      result = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string line =
        id + " " + (result.pass ? "PASS" : "FAIL") + " " + result.detail + " [" + fmt(secs) + " s]";
    std::cout << line << std::endl;
    if (file) file << line << '\n';
    failures += !result.pass;
  }
  return failures == 0 ? 0 : 1;
}
