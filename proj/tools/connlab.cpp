// connlab command line: dataset generation, training, probes and sweeps.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numeric abort.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "connlab/channels.hpp"
#include "connlab/checkpoint.hpp"
#include "connlab/dataset.hpp"
#include "connlab/equivariance.hpp"
#include "connlab/experiments.hpp"
#include "connlab/version.hpp"

namespace fs = std::filesystem;
using namespace connlab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::string read_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + what + ": " + e.what());
  }
}

// Inline JSON, or a path to a JSON file.
nlohmann::json json_arg(const std::string& arg, const std::string& what) {
  const auto first = arg.find_first_not_of(" \t\n");
  if (first != std::string::npos && arg[first] == '{') return parse_json(arg, what);
  return parse_json(read_file(arg), arg);
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("CONNLAB_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || *end != '\0' || raw[0] == '-') throw ConfigError(std::string("CONNLAB_SEED is not a seed: ") + raw);
  return static_cast<std::uint64_t>(v);
}

std::uint64_t resolve_seed(std::uint64_t flag) { return env_seed().value_or(flag); }

ExperimentConfig load_config(const fs::path& path) {
  auto c = config_from_json(parse_json(read_file(path), path.string()));
  if (const auto s = env_seed()) c.seed = *s;
  return c;
}

/// base, or base_1, base_2, ... whichever does not exist yet.
fs::path unique_dir(const fs::path& base) {
  fs::path dir = base;
  for (int k = 1; fs::exists(dir); ++k) dir = fs::path(base.string() + "_" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const std::string& command, const fs::path& config_path,
                    const ExperimentConfig& config, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json m = {{"command", command},
                      {"config_path", fs::absolute(config_path).string()},
                      {"config", config_to_json(config)},
                      {"out_dir", fs::absolute(dir).string()},
                      {"seed", config.seed},
                      {"created_at", utc_now()},
                      {"version", kVersion}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream os(dir / "manifest.json");
  if (!os) throw ConfigError("cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

// Writes to `out`, or stdout for "-".
void emit(const std::string& out, const std::string& text) {
  if (out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(out);
  if (!os) throw ConfigError("cannot write " + out);
  os << text;
}

ThresholdMode threshold_arg(const std::string& s) { return threshold_mode_from_string(s); }

std::vector<double> number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ConfigError("not a number list: " + text);
    }
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

DistributionSpec eval_spec(const std::string& spec_arg, int n, double p) {
  if (spec_arg.empty()) return ErSpec{n, p};
  auto spec = spec_from_json(json_arg(spec_arg, "--spec"));
  if (spec_nodes(spec) != n) throw ConfigError("--spec: n disagrees with the checkpoint");
  return spec;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string spec;
  long count = 0;
  std::uint64_t seed = 0;
  std::string out = "-";
};

int cmd_gen(const GenArgs& a) {
  if (a.count < 0) throw ConfigError("--count must be >= 0");
  const auto spec = spec_from_json(json_arg(a.spec, "--spec"));
  std::ostringstream os;
  write_jsonl(os, generate_dataset(spec, static_cast<std::size_t>(a.count), resolve_seed(a.seed)));
  emit(a.out, os.str());
  return 0;
}

struct InitArgs {
  std::string config;
  std::string out;
};

int cmd_init(const InitArgs& a) {
  const auto c = load_config(a.config);
  Checkpoint ck;
  ck.params = detail::initial_params(c);
  ck.link = c.link;
  ck.rng_state = std::to_string(c.seed);
  ck.init = init_to_json(c.model.init);
  save_checkpoint(ck, a.out);
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string out;
  int workers = default_workers();
};

int cmd_train(const TrainArgs& a) {
  const auto c = load_config(a.config);
  const auto dir = unique_dir(a.out.empty() ? fs::path("runs") / c.name : fs::path(a.out));
  write_manifest(dir, "train", a.config, c);
  const auto result = train(c, TrainOptions{a.workers, dir, [](const MetricsRow& r) {
                                              std::cerr << "step " << r.step << " loss " << format_number(r.train_loss)
                                                        << " exact " << format_number(r.exact_match) << '\n';
                                            }});
  std::cout << dir.string() << '\n';
  std::cout << "heldout exact_match " << format_number(result.heldout.exact_match) << " per_pair_acc "
            << format_number(result.heldout.per_pair_acc) << '\n';
  return 0;
}

struct ProbeArgs {
  std::string checkpoint;
  std::string spec;
  double p = 0.2;
  int graphs = 2000;
  std::string threshold = "half_prob";
  std::uint64_t seed = 0;
  std::string out = "-";
};

int cmd_probe(const ProbeArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  if (a.graphs < 1) throw ConfigError("--graphs must be >= 1");
  const auto probe = capacity_probe(ck.params, eval_spec(a.spec, ck.params.n, a.p), a.graphs,
                                    threshold_arg(a.threshold), ck.link, resolve_seed(a.seed));
  const nlohmann::json j = {{"max_reliable_distance", probe.max_reliable_distance},
                            {"thin_buckets", probe.thin_buckets},
                            {"threshold", a.threshold},
                            {"eval", eval_to_json(probe.eval)}};
  emit(a.out, j.dump(2) + "\n");
  return 0;
}

struct ProjectArgs {
  std::string checkpoint;
  std::string out = "-";
};

int cmd_project(const ProjectArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  const auto report = project_weights(ck.params);
  std::ostringstream os;
  os << "layer,share_I,share_J,share_res,residual_norm,proj_I,proj_J\n";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& c = report.layers[l];
    os << l + 1 << ',' << format_number(c.share_i) << ',' << format_number(c.share_j) << ','
       << format_number(c.share_residual) << ',' << format_number(c.residual_norm) << ','
       << format_number(c.proj_energy_i) << ',' << format_number(c.proj_energy_j) << '\n';
  }
  emit(a.out, os.str());
  return 0;
}

struct EquivArgs {
  std::string checkpoint;
  std::string spec;
  double p = 0.2;
  int graphs = 64;
  int perms = 8;
  std::uint64_t seed = 0;
  std::string out = "-";
};

int cmd_equiv(const EquivArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  if (a.graphs < 1 || a.perms < 1) throw ConfigError("--graphs and --perms must be >= 1");
  const auto spec = eval_spec(a.spec, ck.params.n, a.p);
  const std::uint64_t seed = resolve_seed(a.seed);
  const auto score = cons_frob(ck.params, spec, a.graphs, a.perms, seed);
  // Same graphs and permutations as the output-level score.
  const auto graphs = sample_many(spec, static_cast<std::size_t>(a.graphs), derive_seed(seed, 0));
  auto engine = make_engine(derive_seed(seed, 1));
  std::vector<Permutation> perms;
  for (int i = 0; i < a.perms; ++i) perms.push_back(random_permutation(ck.params.n, engine));
  nlohmann::json layers = nlohmann::json::array();
  for (double v : layerwise_cons_frob(ck.params, graphs, perms)) {
    layers.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  }
  const nlohmann::json j = {{"cons_frob", score.mean},
                            {"num_graphs", score.num_graphs},
                            {"num_perms", score.num_perms},
                            {"skipped", score.skipped},
                            {"layers", std::move(layers)}};
  emit(a.out, j.dump(2) + "\n");
  return 0;
}

struct FalsifyArgs {
  std::string checkpoint;
  std::string threshold = "half_prob";
  std::string out = "-";
};

int cmd_falsify(const FalsifyArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  const auto mode = threshold_arg(a.threshold);
  const auto g = falsify_capacity(ck.params, mode, ck.link);
  nlohmann::json j = {{"capacity", capacity(ck.params.depth)},
                      {"threshold", a.threshold},
                      {"found", g.has_value()},
                      {"candidates", beyond_capacity_family(ck.params.n, ck.params.depth).size()}};
  if (g) {
    j["graph"] = nlohmann::json::parse(to_jsonl_line(*g, GraphMeta{diameter(*g), 0}));
    const auto pred = predict(model_output(ck.params, augmented_adjacency(*g)), ck.link, mode);
    const auto truth = connectivity_bits(*g);
    nlohmann::json wrong = nlohmann::json::array();
    for (int i = 0; i < g->n(); ++i) {
      for (int j2 = 0; j2 < g->n(); ++j2) {
        if (pred(i, j2) != truth(i, j2)) wrong.push_back({i, j2});
      }
    }
    j["mismatched_pairs"] = std::move(wrong);
  }
  emit(a.out, j.dump(2) + "\n");
  return 0;
}

struct SweepArgs {
  std::string config;
  std::string kind;
  std::string values;
  std::string out;
  int workers = default_workers();
};

int cmd_sweep(const SweepArgs& a) {
  const auto c = load_config(a.config);
  const bool diam = a.kind == "diam";
  const auto values = number_list(!a.values.empty() ? a.values : diam ? "2,3,4" : "1,0.95,0.9,0.8,0.5,0");
  std::vector<int> dmax;
  for (double v : values) {
    if (diam && (v != static_cast<int>(v) || v < 1)) throw ConfigError("diam sweep values must be positive integers");
    if (!diam && (v < 0.0 || v > 1.0)) throw ConfigError("rho sweep values must lie in [0, 1]");
    if (diam) dmax.push_back(static_cast<int>(v));
  }
  const auto dir = unique_dir(a.out.empty() ? fs::path("runs") / (c.name + "_" + a.kind) : fs::path(a.out));
  write_manifest(dir, "sweep", a.config, c, {{"kind", a.kind}, {"values", values}});
  const TrainOptions options{a.workers, dir, {}};
  if (diam) {
    data_lever_sweep(c, dmax, options);
  } else {
    rho_sweep(c, values, options);
  }
  std::cout << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Connectivity learning experiments with disentangled transformers"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Write a JSONL dataset of sampled graphs");
  g->add_option("--spec", gen.spec, "Distribution as inline JSON or a JSON file")->required();
  g->add_option("--count", gen.count, "Number of graphs")->required();
  g->add_option("--seed", gen.seed, "Base seed");
  g->add_option("--out", gen.out, "Output file, - for stdout");

  InitArgs init;
  auto* in = app.add_subcommand("init", "Write the untrained checkpoint a config starts from");
  in->add_option("--config", init.config, "Experiment config JSON")->required();
  in->add_option("--out", init.out, "Checkpoint path")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model; writes manifest, metrics, checkpoint and summary");
  t->add_option("--config", tr.config, "Experiment config JSON")->required();
  t->add_option("--out", tr.out, "Run directory (suffixed _1, _2, ... if taken)");
  t->add_option("--workers", tr.workers, "Worker threads")->check(CLI::PositiveNumber);

  ProbeArgs pr;
  auto* p = app.add_subcommand("probe", "Per-distance accuracy and largest reliable distance");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--spec", pr.spec, "Evaluation distribution (default ER(n, p))");
  p->add_option("--p", pr.p, "Edge probability of the default ER distribution");
  p->add_option("--graphs", pr.graphs, "Number of evaluation graphs");
  p->add_option("--threshold", pr.threshold, "strict_positive or half_prob");
  p->add_option("--seed", pr.seed);
  p->add_option("--out", pr.out, "Output JSON, - for stdout");

  ProjectArgs pj;
  auto* j = app.add_subcommand("project", "Project each layer onto the I and J channels");
  j->add_option("--checkpoint", pj.checkpoint)->required();
  j->add_option("--out", pj.out, "Output CSV, - for stdout");

  EquivArgs eq;
  auto* e = app.add_subcommand("equiv", "Permutation-equivariance consistency");
  e->add_option("--checkpoint", eq.checkpoint)->required();
  e->add_option("--spec", eq.spec, "Graph distribution (default ER(n, p))");
  e->add_option("--p", eq.p);
  e->add_option("--graphs", eq.graphs);
  e->add_option("--perms", eq.perms);
  e->add_option("--seed", eq.seed);
  e->add_option("--out", eq.out, "Output JSON, - for stdout");

  FalsifyArgs fa;
  auto* f = app.add_subcommand("falsify", "Search long chains for a graph the model gets wrong");
  f->add_option("--checkpoint", fa.checkpoint)->required();
  f->add_option("--threshold", fa.threshold, "strict_positive or half_prob");
  f->add_option("--out", fa.out, "Output JSON, - for stdout");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Diameter cap or beyond-capacity mixture sweep");
  s->add_option("--config", sw.config, "Base experiment config JSON")->required();
  s->add_option("--kind", sw.kind)->required()->check(CLI::IsMember({"diam", "rho"}));
  s->add_option("--values", sw.values, "Comma-separated dmax or q values");
  s->add_option("--out", sw.out, "Sweep directory (suffixed if taken)");
  s->add_option("--workers", sw.workers)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitConfig;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*in) return cmd_init(init);
    if (*t) return cmd_train(tr);
    if (*p) return cmd_probe(pr);
    if (*j) return cmd_project(pj);
    if (*e) return cmd_equiv(eq);
    if (*f) return cmd_falsify(fa);
    if (*s) return cmd_sweep(sw);
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& err) {
    std::cerr << "shape error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "io error: " << err.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
