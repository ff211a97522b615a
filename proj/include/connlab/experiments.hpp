#pragma once

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "connlab/channels.hpp"
#include "connlab/checkpoint.hpp"
#include "connlab/distributions.hpp"
#include "connlab/equivariance.hpp"
#include "connlab/errors.hpp"
#include "connlab/grad.hpp"
#include "connlab/graph.hpp"
#include "connlab/model.hpp"
#include "connlab/optim.hpp"
#include "connlab/parallel.hpp"

namespace connlab {

// ---------------------------------------------------------------------------
// Prediction and evaluation

enum class ThresholdMode { kStrictPositive, kHalfProb };

inline std::string to_string(ThresholdMode m) {
  return m == ThresholdMode::kStrictPositive ? "strict_positive" : "half_prob";
}

inline ThresholdMode threshold_mode_from_string(const std::string& s) {
  if (s == "strict_positive") return ThresholdMode::kStrictPositive;
  if (s == "half_prob") return ThresholdMode::kHalfProb;
  throw ConfigError("unknown threshold mode '" + s + "'");
}

/// Score above which phi_eps(z) > 1/2: ln(2 (1 - eps)) / alpha.
inline double half_prob_cutoff(const LinkParams& lp) { return std::log(2.0 * (1.0 - lp.epsilon)) / lp.alpha; }

inline BitMatrix predict(const Matrix& z, const LinkParams& lp, ThresholdMode mode) {
  const double cutoff = mode == ThresholdMode::kStrictPositive ? 0.0 : half_prob_cutoff(lp);
  const int n = static_cast<int>(z.rows());
  BitMatrix out(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (z(i, j) > cutoff) out.set(i, j);
    }
  }
  return out;
}

struct Bucket {
  long correct = 0;
  long total = 0;
  double accuracy() const { return total == 0 ? std::nan("") : static_cast<double>(correct) / total; }
};

struct EvalResult {
  double exact_match = 0.0;   // graphs predicted perfectly over all ordered pairs incl. diagonal
  double per_pair_acc = 0.0;  // over ordered pairs i != j
  long num_graphs = 0;
  std::vector<Bucket> by_distance;  // index d = 1..n-1; index 0 unused
  Bucket disconnected;

  long pairs() const {
    long t = disconnected.total;
    for (const auto& b : by_distance) t += b.total;
    return t;
  }
};

/// Scores any predictor (Graph -> BitMatrix) on a graph list.
template <typename Predictor>
EvalResult evaluate_with(Predictor&& predictor, std::span<const Graph> graphs) {
  if (graphs.empty()) throw ConfigError("evaluate: empty graph list");
  const int n = graphs.front().n();
  EvalResult res;
  res.by_distance.assign(static_cast<std::size_t>(n), Bucket{});
  long perfect = 0;
  long pair_correct = 0;
  long pair_total = 0;
  for (const auto& g : graphs) {
    if (g.n() != n) throw ShapeError("evaluate: graphs differ in vertex count");
    const BitMatrix pred = predictor(g);
    const auto dist = distances(g);
    bool all_ok = true;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const bool truth = dist.finite(i, j);
        const bool ok = pred(i, j) == truth;
        all_ok = all_ok && ok;
        if (i == j) continue;
        Bucket& b = truth ? res.by_distance[dist(i, j)] : res.disconnected;
        ++b.total;
        b.correct += ok;
        ++pair_total;
        pair_correct += ok;
      }
    }
    perfect += all_ok;
  }
  res.num_graphs = static_cast<long>(graphs.size());
  res.exact_match = static_cast<double>(perfect) / res.num_graphs;
  res.per_pair_acc = pair_total == 0 ? 1.0 : static_cast<double>(pair_correct) / pair_total;
  return res;
}

inline EvalResult evaluate(const ModelParams& params, std::span<const Graph> graphs, ThresholdMode mode,
                           const LinkParams& lp) {
  return evaluate_with(
      [&](const Graph& g) { return predict(model_output(params, augmented_adjacency(g)), lp, mode); }, graphs);
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
  nlohmann::json buckets = nlohmann::json::array();
  for (std::size_t d = 1; d < r.by_distance.size(); ++d) {
    const auto& b = r.by_distance[d];
    buckets.push_back({{"distance", d}, {"correct", b.correct}, {"total", b.total}});
  }
  return {{"exact_match", r.exact_match},
          {"per_pair_acc", r.per_pair_acc},
          {"num_graphs", r.num_graphs},
          {"by_distance", std::move(buckets)},
          {"disconnected", {{"correct", r.disconnected.correct}, {"total", r.disconnected.total}}}};
}

// ---------------------------------------------------------------------------
// Capacity probe and falsification

inline constexpr double kReliableAccuracy = 0.99;
inline constexpr long kMinBucketPairs = 100;

struct ProbeResult {
  EvalResult eval;
  int max_reliable_distance = 0;  // 0 when no bucket qualifies
  std::vector<int> thin_buckets;  // distances with fewer than kMinBucketPairs pairs
};

inline ProbeResult probe_from_eval(EvalResult eval) {
  ProbeResult out;
  for (std::size_t d = 1; d < eval.by_distance.size(); ++d) {
    const auto& b = eval.by_distance[d];
    if (b.total < kMinBucketPairs) {
      out.thin_buckets.push_back(static_cast<int>(d));
      continue;
    }
    if (b.accuracy() >= kReliableAccuracy) out.max_reliable_distance = static_cast<int>(d);
  }
  out.eval = std::move(eval);
  return out;
}

/// Per-distance reliability on held-out graphs drawn from `spec`.
inline ProbeResult capacity_probe(const ModelParams& params, const DistributionSpec& spec, int num_graphs,
                                  ThresholdMode mode, const LinkParams& lp, std::uint64_t seed) {
  const auto graphs = sample_many(spec, static_cast<std::size_t>(num_graphs), seed);
  return probe_from_eval(evaluate(params, graphs, mode, lp));
}

/// Graphs whose diameter exceeds 3^L: single chains of 3^L+2..n vertices, then
/// two-chain graphs with components of 3^L+2..n/2 vertices.
inline std::vector<Graph> beyond_capacity_family(int n, int depth) {
  std::vector<Graph> out;
  const long long first = capacity(depth) + 2;
  for (long long m = first; m <= n; ++m) out.push_back(make_chain(n, static_cast<int>(m)));
  for (long long k = first; 2 * k <= n; ++k) out.push_back(make_two_chain(n, static_cast<int>(k)));
  return out;
}

template <typename Predictor>
std::optional<Graph> falsify_capacity_with(Predictor&& predictor, int n, int depth) {
  for (auto& g : beyond_capacity_family(n, depth)) {
    if (!(predictor(g) == connectivity_bits(g))) return std::move(g);
  }
  return std::nullopt;
}

inline std::optional<Graph> falsify_capacity(const ModelParams& params, ThresholdMode mode, const LinkParams& lp) {
  return falsify_capacity_with(
      [&](const Graph& g) { return predict(model_output(params, augmented_adjacency(g)), lp, mode); }, params.n,
      params.depth);
}

// ---------------------------------------------------------------------------
// Configuration

// kSum: per-graph loss summed over all n^2 pairs, averaged over graphs.
// kPairMean: the same divided by n^2.
enum class LossReduction { kPairMean, kSum };

struct NamedSpec {
  std::string name;
  DistributionSpec spec;
};

struct ModelSpec {
  int depth = 1;
  int n = 8;
  InitScheme init = GaussianInit{};
  WeightMode mode = WeightMode::kDense;
  bool nonneg = false;
};

struct ExperimentConfig {
  std::string name = "run";
  ModelSpec model;
  LinkParams link;
  DistributionSpec train = ErSpec{8, 0.2};
  std::optional<DistributionSpec> heldout;  // defaults to `train`
  std::vector<NamedSpec> ood;
  OptimizerConfig optimizer = GdConfig{};
  long total_steps = 10000;
  long fixed_samples = 4096;  // 0 = stream fresh graphs every step
  int batch_size = 1000;      // streaming only
  int log_every = 100;
  int eval_graphs = 512;
  int equiv_graphs = 64;
  int equiv_perms = 8;
  std::uint64_t seed = 0;
  ThresholdMode threshold = ThresholdMode::kHalfProb;
  LossReduction reduction = LossReduction::kSum;

  void validate() const {
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (fixed_samples < 0) throw ConfigError("fixed_samples must be >= 0");
    if (fixed_samples == 0 && batch_size < 1) throw ConfigError("batch_size must be >= 1 when streaming");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (eval_graphs < 1) throw ConfigError("eval_graphs must be >= 1");
    if (equiv_graphs < 1 || equiv_perms < 1) throw ConfigError("equivariance sample sizes must be >= 1");
    link.validate();
    connlab::validate(train);
    if (model.depth < 1) throw ConfigError("model depth must be >= 1");
    const auto check_n = [&](const DistributionSpec& s, const std::string& what) {
      connlab::validate(s);
      if (spec_nodes(s) != model.n) throw ConfigError(what + ": n disagrees with the model");
    };
    check_n(train, "train");
    if (heldout) check_n(*heldout, "heldout");
    for (const auto& o : ood) check_n(o.spec, "ood '" + o.name + "'");
    if (model.n < 2) throw ConfigError("model n must be >= 2");
  }
};

inline nlohmann::json init_to_json(const InitScheme& scheme) {
  struct Visitor {
    nlohmann::json operator()(const IdentityInit&) const { return {{"kind", "identity"}}; }
    nlohmann::json operator()(const UniformInit& s) const {
      return {{"kind", "uniform"}, {"lo", s.lo}, {"hi", s.hi}};
    }
    nlohmann::json operator()(const GaussianInit& s) const {
      return {{"kind", "gaussian"}, {"mean", s.mean}, {"std", s.std}, {"scale_by_sqrt_dim", s.scale_by_sqrt_dim}};
    }
    nlohmann::json operator()(const StructuredZeroBInit& s) const {
      return {{"kind", "structured_zero_b"}, {"scale", s.scale}};
    }
  };
  return std::visit(Visitor{}, scheme);
}

inline InitScheme init_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "identity") return IdentityInit{};
  if (kind == "uniform") return UniformInit{j.value("lo", 0.0), j.value("hi", 0.01)};
  if (kind == "gaussian") {
    return GaussianInit{j.value("mean", 0.0), j.value("std", 0.02), j.value("scale_by_sqrt_dim", true)};
  }
  if (kind == "structured_zero_b") return StructuredZeroBInit{j.value("scale", 0.01)};
  throw ConfigError("unknown init kind '" + kind + "'");
}

inline nlohmann::json optimizer_config_to_json(const OptimizerConfig& c) {
  if (const auto* gd = std::get_if<GdConfig>(&c)) return {{"kind", "gd"}, {"lr", gd->lr}, {"cosine", gd->cosine}};
  const auto& a = std::get<AdamConfig>(c);
  return {{"kind", "adam"},   {"lr", a.lr},   {"beta1", a.beta1},   {"beta2", a.beta2},
          {"eps", a.eps},     {"weight_decay", a.weight_decay},     {"cosine", a.cosine}};
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json ood = nlohmann::json::array();
  for (const auto& o : c.ood) ood.push_back({{"name", o.name}, {"spec", spec_to_json(o.spec)}});
  nlohmann::json j = {
      {"name", c.name},
      {"model",
       {{"L", c.model.depth},
        {"n", c.model.n},
        {"mode", to_string(c.model.mode)},
        {"nonneg", c.model.nonneg},
        {"init", init_to_json(c.model.init)}}},
      {"link", {{"alpha", c.link.alpha}, {"epsilon", c.link.epsilon}}},
      {"train", spec_to_json(c.train)},
      {"ood", std::move(ood)},
      {"optimizer", optimizer_config_to_json(c.optimizer)},
      {"total_steps", c.total_steps},
      {"fixed_samples", c.fixed_samples},
      {"batch_size", c.batch_size},
      {"log_every", c.log_every},
      {"eval_graphs", c.eval_graphs},
      {"equiv_graphs", c.equiv_graphs},
      {"equiv_perms", c.equiv_perms},
      {"seed", c.seed},
      {"threshold", to_string(c.threshold)},
      {"loss_reduction", c.reduction == LossReduction::kPairMean ? "pair_mean" : "sum"},
  };
  if (c.heldout) j["heldout"] = spec_to_json(*c.heldout);
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.depth = m.value("L", c.model.depth);
      c.model.n = m.value("n", c.model.n);
      c.model.mode = weight_mode_from_string(m.value("mode", std::string("dense")));
      c.model.nonneg = m.value("nonneg", false);
      if (m.contains("init")) c.model.init = init_from_json(m["init"]);
    }
    if (j.contains("link")) {
      c.link.alpha = j["link"].value("alpha", c.link.alpha);
      c.link.epsilon = j["link"].value("epsilon", c.link.epsilon);
    }
    if (j.contains("train")) c.train = spec_from_json(j["train"]);
    if (j.contains("heldout")) c.heldout = spec_from_json(j["heldout"]);
    if (j.contains("ood")) {
      for (const auto& o : j["ood"]) c.ood.push_back({o.at("name").get<std::string>(), spec_from_json(o.at("spec"))});
    }
    if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j["optimizer"]);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.fixed_samples = j.value("fixed_samples", c.fixed_samples);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.log_every = j.value("log_every", c.log_every);
    c.eval_graphs = j.value("eval_graphs", c.eval_graphs);
    c.equiv_graphs = j.value("equiv_graphs", c.equiv_graphs);
    c.equiv_perms = j.value("equiv_perms", c.equiv_perms);
    c.seed = j.value("seed", c.seed);
    c.threshold = threshold_mode_from_string(j.value("threshold", std::string("half_prob")));
    const auto reduction = j.value("loss_reduction", std::string("sum"));
    if (reduction == "pair_mean") {
      c.reduction = LossReduction::kPairMean;
    } else if (reduction == "sum") {
      c.reduction = LossReduction::kSum;
    } else {
      throw ConfigError("unknown loss_reduction '" + reduction + "'");
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
}

/// Git blob id (SHA-1 of "blob <size>\0" + bytes) as lowercase hex.
inline std::string git_blob_hash(const std::string& bytes) {
  const std::string payload = "blob " + std::to_string(bytes.size()) + '\0' + bytes;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(payload.data()), payload.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 15]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct Example {
  AdjacencyMatrix adjacency;
  Matrix reach;
};

inline Example make_example(const Graph& g) { return {augmented_adjacency(g), connectivity(g).values}; }

struct BatchGradient {
  double loss = 0.0;
  GradientSet grads;
};

/// Mean over `examples` of the per-graph loss and gradient (further divided
/// by n^2 under pair_mean). Reduced in fixed chunk order for any worker count.
inline BatchGradient batch_gradient(const ModelParams& params, std::span<const Example> examples,
                                    const LinkParams& lp, LossReduction reduction, int workers) {
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (examples.size() + kChunk - 1) / kChunk;
  std::vector<BatchGradient> partial(chunks);
  check_shapes(params);
  parallel_chunks(examples.size(), kChunk, workers, [&](std::size_t c, std::size_t begin, std::size_t end) {
    GradientWorkspace ws(params.depth, params.n);
    BatchGradient acc{0.0, {}};
    for (const auto& w : params.weights) acc.grads.dw.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (std::size_t i = begin; i < end; ++i) {
      if (examples[i].adjacency.n() != params.n) throw ShapeError("batch_gradient: graph size differs from model");
      acc.loss += ws.accumulate(params, examples[i].adjacency.values, examples[i].reach, lp, acc.grads.dw);
    }
    partial[c] = std::move(acc);
  });
  BatchGradient total{0.0, {}};
  for (const auto& w : params.weights) total.grads.dw.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const auto& p : partial) {
    total.loss += p.loss;
    for (std::size_t l = 0; l < total.grads.dw.size(); ++l) total.grads.dw[l] += p.grads.dw[l];
  }
  for (const auto& m : total.grads.dw) {
    if (!m.allFinite()) throw NumericError("backward: non-finite gradient");
  }
  if (params.is_structured()) {
    total.grads.da.resize(params.depth);
    total.grads.db.resize(params.depth);
    for (int l = 0; l < params.depth; ++l) {
      contract_structured(total.grads.dw[l], params.n, total.grads.da[l], total.grads.db[l]);
    }
  }
  double scale = 1.0 / static_cast<double>(examples.size());
  if (reduction == LossReduction::kPairMean) scale /= static_cast<double>(params.n) * params.n;
  total.loss *= scale;
  total.grads *= scale;
  if (!std::isfinite(total.loss)) throw NumericError("training loss is not finite");
  return total;
}

struct MetricsRow {
  long step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double exact_match = 0.0;
  double per_pair_acc = 0.0;
  double cons_frob = 0.0;
  std::vector<LayerChannels> channels;
  std::vector<double> acc_by_distance;  // index 1..n-1
  double acc_disc = 0.0;
  std::vector<double> cons_frob_layers;
};

inline std::string metrics_header(int depth, int n) {
  std::ostringstream os;
  os << "step,lr,train_loss,exact_match,per_pair_acc,cons_frob";
  for (int l = 1; l <= depth; ++l) os << ",share_I_l" << l << ",share_J_l" << l << ",share_res_l" << l;
  for (int d = 1; d < n; ++d) os << ",acc_d" << d;
  os << ",acc_disc";
  for (int l = 1; l <= depth; ++l) os << ",proj_I_l" << l << ",proj_J_l" << l;
  for (int l = 1; l <= depth; ++l) os << ",cons_frob_l" << l;
  return os.str();
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string metrics_line(const MetricsRow& r) {
  std::ostringstream os;
  os << r.step << ',' << format_number(r.lr) << ',' << format_number(r.train_loss) << ','
     << format_number(r.exact_match) << ',' << format_number(r.per_pair_acc) << ',' << format_number(r.cons_frob);
  for (const auto& c : r.channels) {
    os << ',' << format_number(c.share_i) << ',' << format_number(c.share_j) << ','
       << format_number(c.share_residual);
  }
  for (std::size_t d = 1; d < r.acc_by_distance.size(); ++d) os << ',' << format_number(r.acc_by_distance[d]);
  os << ',' << format_number(r.acc_disc);
  for (const auto& c : r.channels) os << ',' << format_number(c.proj_energy_i) << ',' << format_number(c.proj_energy_j);
  for (double v : r.cons_frob_layers) os << ',' << format_number(v);
  return os.str();
}

struct NamedEval {
  std::string name;
  EvalResult result;
};

struct TrainResult {
  ModelParams params;
  Optimizer optimizer{GdConfig{}};
  std::vector<MetricsRow> rows;
  EvalResult heldout;
  std::vector<NamedEval> ood;
  ChannelReport channels;
  double cons_frob = 0.0;
  double train_rho = 0.0;  // beyond-capacity pair fraction of the (fixed) training set
};

struct TrainOptions {
  int workers = default_workers();
  std::optional<std::filesystem::path> out_dir;  // metrics.csv, checkpoint.json, summary.json
  std::function<void(const MetricsRow&)> on_log;
};

namespace detail {

// Disjoint seed streams derived from the run seed.
enum Stream : std::uint64_t { kTrainStream = 1, kHeldoutStream = 2, kInitStream = 3, kEquivStream = 4, kOodStream = 5 };

inline ModelParams initial_params(const ExperimentConfig& c) {
  ModelParams p = init_params(c.model.depth, c.model.n, c.model.init, derive_seed(c.seed, kInitStream));
  if (c.model.mode == WeightMode::kStructured && !p.is_structured()) {
    // Project the dense draw onto the algebra to get structured parameters.
    const auto report = project_weights(p);
    p.mode = WeightMode::kStructured;
    p.structured.clear();
    for (const auto& layer : report.layers) p.structured.push_back({layer.a_hat, layer.b_hat});
    sync_weights(p);
  }
  if (c.model.nonneg) {
    p.nonneg = true;
    p = clamp_nonneg(std::move(p));
  }
  return p;
}

inline OptimizerConfig with_total_steps(OptimizerConfig c, long total) {
  std::visit([&](auto& o) { o.total_steps = total; }, c);
  return c;
}

}  // namespace detail

inline MetricsRow measure(const ModelParams& params, const ExperimentConfig& c, long step, double lr,
                          double train_loss, std::span<const Graph> heldout, std::span<const Graph> equiv_graphs,
                          std::span<const Permutation> perms) {
  MetricsRow row;
  row.step = step;
  row.lr = lr;
  row.train_loss = train_loss;
  const auto eval = evaluate(params, heldout, c.threshold, c.link);
  row.exact_match = eval.exact_match;
  row.per_pair_acc = eval.per_pair_acc;
  row.acc_by_distance.assign(eval.by_distance.size(), std::nan(""));
  for (std::size_t d = 1; d < eval.by_distance.size(); ++d) row.acc_by_distance[d] = eval.by_distance[d].accuracy();
  row.acc_disc = eval.disconnected.accuracy();
  row.channels = project_weights(params).layers;
  row.cons_frob = cons_frob(params, equiv_graphs, perms).mean;
  row.cons_frob_layers = layerwise_cons_frob(params, equiv_graphs, perms);
  return row;
}

inline TrainResult train(const ExperimentConfig& config, const TrainOptions& options = {}) {
  config.validate();
  const int n = config.model.n;
  const int workers = std::max(1, options.workers);

  std::vector<Example> fixed;
  std::vector<Graph> fixed_graphs;
  const std::uint64_t train_seed = derive_seed(config.seed, detail::kTrainStream);
  if (config.fixed_samples > 0) {
    fixed_graphs = sample_many(config.train, static_cast<std::size_t>(config.fixed_samples), train_seed);
    fixed.reserve(fixed_graphs.size());
    for (const auto& g : fixed_graphs) fixed.push_back(make_example(g));
  }
  const auto heldout = sample_many(config.heldout.value_or(config.train), static_cast<std::size_t>(config.eval_graphs),
                                   derive_seed(config.seed, detail::kHeldoutStream));
  const std::uint64_t equiv_seed = derive_seed(config.seed, detail::kEquivStream);
  const auto equiv_graphs = sample_many(config.train, static_cast<std::size_t>(config.equiv_graphs),
                                        derive_seed(equiv_seed, 0));
  std::vector<Permutation> perms;
  {
    auto engine = make_engine(derive_seed(equiv_seed, 1));
    for (int i = 0; i < config.equiv_perms; ++i) perms.push_back(random_permutation(n, engine));
  }

  TrainResult result;
  result.params = detail::initial_params(config);
  result.optimizer = Optimizer(detail::with_total_steps(config.optimizer, config.total_steps));
  if (!fixed_graphs.empty()) result.train_rho = rho(fixed_graphs, config.model.depth);

  std::ofstream csv;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    csv.open(*options.out_dir / "metrics.csv");
    if (!csv) throw ConfigError("cannot write metrics.csv in " + options.out_dir->string());
    csv << metrics_header(config.model.depth, n) << '\n';
  }
  const auto log_row = [&](MetricsRow row) {
    if (csv.is_open()) csv << metrics_line(row) << '\n' << std::flush;
    if (options.on_log) options.on_log(row);
    result.rows.push_back(std::move(row));
  };

  std::vector<Example> stream;
  for (long step = 0; step <= config.total_steps; ++step) {
    std::span<const Example> batch = fixed;
    if (config.fixed_samples == 0) {
      stream.clear();
      for (int i = 0; i < config.batch_size; ++i) {
        const auto index = static_cast<std::uint64_t>(step) * config.batch_size + i;
        stream.push_back(make_example(sample(config.train, derive_seed(train_seed, index))));
      }
      batch = stream;
    }
    const bool final_step = step == config.total_steps;
    const bool log_now = step % config.log_every == 0 || final_step;
    if (final_step) {
      // Loss at the final parameters; no update follows.
      const auto bg = batch_gradient(result.params, batch, config.link, config.reduction, workers);
      log_row(measure(result.params, config, step, result.optimizer.current_lr(), bg.loss, heldout, equiv_graphs,
                      perms));
      break;
    }
    auto bg = batch_gradient(result.params, batch, config.link, config.reduction, workers);
    if (log_now) {
      log_row(measure(result.params, config, step, result.optimizer.current_lr(), bg.loss, heldout, equiv_graphs,
                      perms));
    }
    result.optimizer.step(result.params, bg.grads);
  }

  result.heldout = evaluate(result.params, heldout, config.threshold, config.link);
  for (std::size_t i = 0; i < config.ood.size(); ++i) {
    const auto graphs = sample_many(config.ood[i].spec, static_cast<std::size_t>(config.eval_graphs),
                                    derive_seed(derive_seed(config.seed, detail::kOodStream), i));
    result.ood.push_back({config.ood[i].name, evaluate(result.params, graphs, config.threshold, config.link)});
  }
  result.channels = project_weights(result.params);
  result.cons_frob = result.rows.back().cons_frob;

  if (options.out_dir) {
    Checkpoint ck;
    ck.params = result.params;
    ck.link = config.link;
    ck.step = config.total_steps;
    ck.rng_state = std::to_string(config.seed);
    ck.init = init_to_json(config.model.init);
    ck.optimizer = optimizer_to_json(result.optimizer);
    save_checkpoint(ck, *options.out_dir / "checkpoint.json");

    const auto config_json = config_to_json(config);
    nlohmann::json ood = nlohmann::json::object();
    for (const auto& o : result.ood) ood[o.name] = eval_to_json(o.result);
    nlohmann::json channels = nlohmann::json::array();
    for (const auto& l : result.channels.layers) {
      channels.push_back({{"share_I", l.share_i},
                          {"share_J", l.share_j},
                          {"share_res", l.share_residual},
                          {"residual_norm", l.residual_norm},
                          {"A_hat", matrix_to_json(l.a_hat)},
                          {"B_hat", matrix_to_json(l.b_hat)}});
    }
    const nlohmann::json summary = {
        {"config", config_json},
        {"input_hash", git_blob_hash(config_json.dump())},
        {"final",
         {{"heldout", eval_to_json(result.heldout)},
          {"ood", std::move(ood)},
          {"channels", std::move(channels)},
          {"cons_frob", result.cons_frob},
          {"train_rho", result.train_rho}}},
    };
    std::ofstream os(*options.out_dir / "summary.json");
    os << summary.dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("spearman: need two equal-length samples");
  const auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double nx = static_cast<double>(rx.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i] / nx;
    my += ry[i] / nx;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

struct SweepPoint {
  double knob = 0.0;  // dmax or q
  TrainResult result;
};

inline double mean_ood_per_pair(const TrainResult& r) {
  if (r.ood.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& o : r.ood) s += o.result.per_pair_acc;
  return s / static_cast<double>(r.ood.size());
}

inline double mean_ood_exact(const TrainResult& r) {
  if (r.ood.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& o : r.ood) s += o.result.exact_match;
  return s / static_cast<double>(r.ood.size());
}

inline void write_sweep_summary(const std::filesystem::path& path, const std::string& knob_name,
                                const std::vector<SweepPoint>& points) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << knob_name << ",train_rho,heldout_exact_match,heldout_per_pair_acc,ood_exact_match,ood_per_pair_acc";
  const int depth = points.empty() ? 0 : static_cast<int>(points.front().result.channels.layers.size());
  for (int l = 1; l <= depth; ++l) os << ",share_I_l" << l << ",share_J_l" << l << ",share_res_l" << l;
  os << '\n';
  for (const auto& p : points) {
    const auto& r = p.result;
    os << format_number(p.knob) << ',' << format_number(r.train_rho) << ',' << format_number(r.heldout.exact_match)
       << ',' << format_number(r.heldout.per_pair_acc) << ',' << format_number(mean_ood_exact(r)) << ','
       << format_number(mean_ood_per_pair(r));
    for (const auto& l : r.channels.layers) {
      os << ',' << format_number(l.share_i) << ',' << format_number(l.share_j) << ','
         << format_number(l.share_residual);
    }
    os << '\n';
  }
}

/// Trains once per dmax on base.train restricted to diam <= dmax.
inline std::vector<SweepPoint> data_lever_sweep(const ExperimentConfig& base, std::span<const int> dmax_list,
                                                const TrainOptions& options = {}) {
  std::vector<SweepPoint> out;
  for (int dmax : dmax_list) {
    ExperimentConfig c = base;
    c.name = base.name + "_d" + std::to_string(dmax);
    c.train = restricted(base.train, dmax);
    TrainOptions o = options;
    if (options.out_dir) o.out_dir = *options.out_dir / ("d" + std::to_string(dmax));
    out.push_back({static_cast<double>(dmax), train(c, o)});
  }
  if (options.out_dir) write_sweep_summary(*options.out_dir / "summary.csv", "dmax", out);
  return out;
}

/// Trains once per q on the stratified mixture q * G_<= + (1 - q) * G_>, where
/// the split is at the model capacity 3^L.
inline std::vector<SweepPoint> rho_sweep(const ExperimentConfig& base, std::span<const double> q_list,
                                         const TrainOptions& options = {}) {
  const int cap = static_cast<int>(capacity(base.model.depth));
  std::vector<SweepPoint> out;
  for (double q : q_list) {
    ExperimentConfig c = base;
    char tag[32];
    std::snprintf(tag, sizeof tag, "q%.3g", q);
    c.name = base.name + "_" + tag;
    c.train = mixture(q, restricted(base.train, cap), excluded(base.train, cap));
    if (!c.heldout) c.heldout = base.train;
    TrainOptions o = options;
    if (options.out_dir) o.out_dir = *options.out_dir / tag;
    out.push_back({q, train(c, o)});
  }
  if (options.out_dir) write_sweep_summary(*options.out_dir / "summary.csv", "q", out);
  return out;
}

}  // namespace connlab
