#include "mmvs/meta.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "mmvs/io.hpp"
#include "mmvs/ops.hpp"
#include "mmvs/rng.hpp"
#include "mmvs/serialize.hpp"

namespace mmvs {

namespace {

constexpr uint64_t kMetaStream = 0x3e7a;
constexpr uint64_t kTrainStream = 0x7a1e;
constexpr int kStateVersion = 1;

// `count` indices from [0, n): distinct while possible, then with repetition.
std::vector<size_t> Draw(Rng& rng, size_t n, int count) {
  std::vector<size_t> pool(n), out;
  std::iota(pool.begin(), pool.end(), size_t{0});
  size_t left = 0;
  for (int i = 0; i < count; ++i) {
    if (left == 0) left = n;
    const size_t j = UniformIndex(rng, left);
    std::swap(pool[j], pool[left - 1]);
    out.push_back(pool[--left]);
  }
  return out;
}

using LossFn = std::function<Tensor(const ParamSet&, const MultiViewSample&)>;

// Mean loss over the batch and its gradient with respect to every parameter.
std::pair<double, ParamSet> BatchGradient(const ParamSet& theta, std::span<const MultiViewSample> batch,
                                          const LossFn& loss) {
  ParamSet p = theta.Clone();
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0;
  for (const MultiViewSample& s : batch) {
    Tensor l = ops::MulScalar(loss(p, s), scale);
    total += l.item();
    l.Backward();
  }
  if (!std::isfinite(total)) throw NumericalError("non-finite loss");
  return {total, p.Gradients()};
}

Tensor SelfObjective(const ParamSet& p, const MultiViewSample& s, const NetworkConfig& net, const LossWeights& w) {
  return SelfLoss(p, s, net, w).total;
}

FrozenPredicate MaskFilter(bool on) {
  if (!on) return {};
  return [](std::string_view n) { return IsMaskParam(n); };
}

TrainResult RunTraining(const ParamSet& theta, std::span<const MultiViewSample> samples, const TrainConfig& cfg,
                        const LossFn& loss, const char* name, LossLog* log) {
  cfg.Validate();
  if (samples.empty() && cfg.steps > 0) throw std::invalid_argument("training needs at least one sample");
  TrainResult r;
  r.params = theta.Clone();
  Adam adam;
  const FrozenPredicate frozen = MaskFilter(cfg.freeze_tau);
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng = MakeRng(cfg.seed, {kTrainStream, static_cast<uint64_t>(step)});
    std::vector<MultiViewSample> batch;
    for (size_t i : Draw(rng, samples.size(), cfg.batch_size)) batch.push_back(samples[i]);
    auto [value, grads] = BatchGradient(r.params, batch, loss);
    r.losses.push_back(value);
    if (log) log->Write(step, name, value);
    if (cfg.optimizer == OptimizerKind::kAdam) {
      adam.Step(r.params, grads, cfg.lr, frozen);
    } else {
      SgdStepInPlace(r.params, grads, cfg.lr, frozen);
    }
  }
  return r;
}

}  // namespace

std::string OptimizerName(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind ParseOptimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string InnerPolicyName(InnerPolicy p) { return p == InnerPolicy::kSameDomain ? "same_domain" : "any_scene"; }

InnerPolicy ParseInnerPolicy(const std::string& name) {
  if (name == "same_domain") return InnerPolicy::kSameDomain;
  if (name == "any_scene") return InnerPolicy::kAnyScene;
  throw ConfigError("unknown inner policy '" + name + "' (expected same_domain or any_scene)");
}

void MetaConfig::Validate() const {
  if (k < 0) throw ConfigError("meta.k must be >= 0");
  if (!(alpha > 0) || !(beta > 0)) throw ConfigError("meta.alpha and meta.beta must be > 0");
  if (outer_batch < 1) throw ConfigError("meta.outer_batch must be >= 1");
  if (max_iterations < 0) throw ConfigError("meta.max_iterations must be >= 0");
  if (patience < 0) throw ConfigError("meta.patience must be >= 0");
  if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("meta.ema_decay must be in [0,1)");
  if (checkpoint_every < 0) throw ConfigError("meta.checkpoint_every must be >= 0");
}

void TrainConfig::Validate() const {
  if (!(lr >= 0)) throw ConfigError("learning rate must be >= 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

AdaptResult Adapt(const ParamSet& theta, std::span<const MultiViewSample> samples, double alpha,
                  const NetworkConfig& net, const LossWeights& weights) {
  AdaptResult r;
  r.params = theta.Clone();
  for (const MultiViewSample& s : samples) {
    auto [value, grads] = BatchGradient(
        r.params, std::span(&s, 1), [&](const ParamSet& p, const MultiViewSample& x) {
          return SelfObjective(p, x, net, weights);
        });
    r.self_losses.push_back(value);
    r.params = SgdStep(r.params, grads, alpha);
  }
  return r;
}

MetaStepLog MetaStep(TrainState& state, const SceneDataset& ds, const MetaConfig& cfg, const NetworkConfig& net,
                     const LossWeights& weights) {
  if (ds.val.empty()) throw std::invalid_argument("meta step needs a non-empty validation split");
  if (cfg.k > 0 && ds.train.empty()) throw std::invalid_argument("meta step needs a non-empty training split");
  Rng rng = MakeRng(cfg.seed, {kMetaStream, static_cast<uint64_t>(state.iteration)});
  MetaStepLog log;

  std::vector<MultiViewSample> inner;
  if (cfg.k > 0) {
    std::vector<size_t> pool(ds.train.size());
    std::iota(pool.begin(), pool.end(), size_t{0});
    if (cfg.inner_policy == InnerPolicy::kSameDomain && !ds.train_by_domain.empty()) {
      auto it = ds.train_by_domain.begin();
      std::advance(it, static_cast<long>(UniformIndex(rng, ds.train_by_domain.size())));
      log.domain_id = it->first;
      pool = it->second;
    }
    for (size_t i : Draw(rng, pool.size(), cfg.k)) inner.push_back(ds.train[pool[i]]);
  }

  std::vector<size_t> val_pool;
  for (size_t i = 0; i < ds.val.size(); ++i)
    if (log.domain_id < 0 || ds.val[i].domain_id == log.domain_id) val_pool.push_back(i);
  if (val_pool.empty()) {
    val_pool.resize(ds.val.size());
    std::iota(val_pool.begin(), val_pool.end(), size_t{0});
  }
  std::vector<MultiViewSample> outer;
  for (size_t i : Draw(rng, val_pool.size(), cfg.outer_batch)) outer.push_back(ds.val[val_pool[i]]);

  AdaptResult adapted = Adapt(state.params, inner, cfg.alpha, net, weights);
  log.self_losses = adapted.self_losses;
  auto [sup, grads] = BatchGradient(adapted.params, outer, [&](const ParamSet& p, const MultiViewSample& s) {
    return SupLoss(p, s, net).total;
  });
  log.sup_loss = sup;

  // The supervised loss does not depend on the mask net, so its parameters
  // take the inner-loop values instead of an outer update.
  const FrozenPredicate frozen = MaskFilter(cfg.carry_tau);
  if (cfg.outer_optimizer == OptimizerKind::kAdam) {
    state.adam.Step(state.params, grads, cfg.beta, frozen);
  } else {
    SgdStepInPlace(state.params, grads, cfg.beta, frozen);
  }
  if (cfg.carry_tau) {
    for (auto& e : state.params.entries()) {
      if (!IsMaskParam(e.name)) continue;
      const auto src = adapted.params.Get(e.name).values();
      std::copy(src.begin(), src.end(), e.tensor.mutable_values().begin());
    }
  }

  ++state.iteration;
  log.iteration = state.iteration;
  state.ema = std::isnan(state.ema) ? sup : cfg.ema_decay * state.ema + (1 - cfg.ema_decay) * sup;
  if (state.ema < state.best_ema) {
    state.best_ema = state.ema;
    state.best_iteration = state.iteration;
  }
  if (cfg.patience > 0 && state.iteration - state.best_iteration >= cfg.patience) state.converged = true;
  state.history.push_back(log);
  return log;
}

TrainState MetaTrain(const ParamSet& init, const SceneDataset& ds, const MetaConfig& cfg, const NetworkConfig& net,
                     const LossWeights& weights, const MetaTrainOptions& options) {
  cfg.Validate();
  net.Validate();
  weights.Validate();
  TrainState state;
  if (options.resume && !options.checkpoint_dir.empty() && HasTrainState(options.checkpoint_dir)) {
    state = LoadTrainState(options.checkpoint_dir, cfg);
  } else {
    state.params = init.Clone();
  }
  LossLog log;
  if (!options.loss_log.empty()) log = LossLog(options.loss_log);

  while (state.iteration < cfg.max_iterations && !state.converged) {
    const MetaStepLog step = MetaStep(state, ds, cfg, net, weights);
    if (log.is_open()) {
      if (!step.self_losses.empty()) {
        double m = 0;
        for (double v : step.self_losses) m += v;
        log.Write(step.iteration, "self", m / static_cast<double>(step.self_losses.size()));
      }
      log.Write(step.iteration, "sup", step.sup_loss);
    }
    if (options.on_step) options.on_step(step);
    if (!options.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) {
      SaveTrainState(state, cfg, options.checkpoint_dir);
    }
  }
  if (!options.checkpoint_dir.empty()) SaveTrainState(state, cfg, options.checkpoint_dir);
  return state;
}

uint64_t MetaConfigHash(const MetaConfig& cfg) {
  nlohmann::json j = ToJson(cfg);
  j.erase("max_iterations");
  j.erase("checkpoint_every");
  const std::string s = j.dump();
  return Fnv1a(s.data(), s.size());
}

bool HasTrainState(const std::string& dir) { return std::filesystem::exists(std::filesystem::path(dir) / "state.json"); }

void SaveTrainState(const TrainState& state, const MetaConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create checkpoint directory " + dir + ": " + ec.message());
  const fs::path d(dir);
  state.params.Save((d / "params.mmvs").string());
  state.adam.State().Save((d / "optimizer.mmvs").string());

  nlohmann::json j;
  j["format"] = "mmvs-train-state";
  j["version"] = kStateVersion;
  j["iteration"] = state.iteration;
  j["seed"] = cfg.seed;
  j["config_hash"] = MetaConfigHash(cfg);
  j["params_hash"] = state.params.Hash();
  j["ema"] = std::isnan(state.ema) ? nlohmann::json(nullptr) : nlohmann::json(state.ema);
  j["best_ema"] = std::isinf(state.best_ema) ? nlohmann::json(nullptr) : nlohmann::json(state.best_ema);
  j["best_iteration"] = state.best_iteration;
  j["converged"] = state.converged;
  nlohmann::json hist = nlohmann::json::array();
  for (const MetaStepLog& h : state.history) {
    hist.push_back({{"iteration", h.iteration},
                    {"domain", h.domain_id},
                    {"self", h.self_losses},
                    {"sup", h.sup_loss}});
  }
  j["history"] = std::move(hist);
  j["config"] = ToJson(cfg);

  // Write then rename so an interrupted save leaves the previous sidecar.
  const fs::path tmp = d / "state.json.tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw io::IoError("cannot write " + tmp.string());
    os << j.dump(2) << "\n";
    if (!os) throw io::IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, d / "state.json", ec);
  if (ec) throw io::IoError("cannot finalize " + (d / "state.json").string() + ": " + ec.message());
}

TrainState LoadTrainState(const std::string& dir, const MetaConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  std::ifstream is(d / "state.json");
  if (!is) throw io::IoError("cannot open " + (d / "state.json").string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io::IoError("malformed " + (d / "state.json").string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "mmvs-train-state" || j.at("version") != kStateVersion) {
      throw io::IoError("unsupported train state in " + dir);
    }
    if (j.at("config_hash").get<uint64_t>() != MetaConfigHash(cfg)) {
      throw ConfigError("checkpoint in " + dir + " was written with a different meta configuration");
    }
    TrainState s;
    s.params = ParamSet::Load((d / "params.mmvs").string());
    if (s.params.Hash() != j.at("params_hash").get<uint64_t>()) {
      throw io::IoError("parameter file in " + dir + " does not match its sidecar");
    }
    s.adam.Restore(ParamSet::Load((d / "optimizer.mmvs").string()));
    s.iteration = j.at("iteration").get<int64_t>();
    if (!j.at("ema").is_null()) s.ema = j.at("ema").get<double>();
    if (!j.at("best_ema").is_null()) s.best_ema = j.at("best_ema").get<double>();
    s.best_iteration = j.at("best_iteration").get<int64_t>();
    s.converged = j.at("converged").get<bool>();
    for (const auto& h : j.at("history")) {
      MetaStepLog l;
      l.iteration = h.at("iteration").get<int64_t>();
      l.domain_id = h.at("domain").get<int>();
      l.self_losses = h.at("self").get<std::vector<double>>();
      l.sup_loss = h.at("sup").get<double>();
      s.history.push_back(std::move(l));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw io::IoError("malformed " + (d / "state.json").string() + ": " + e.what());
  }
}

TrainResult FineTune(const ParamSet& theta, std::span<const MultiViewSample> samples, const TrainConfig& cfg,
                     const NetworkConfig& net, const LossWeights& weights, LossLog* log) {
  return RunTraining(
      theta, samples, cfg, [&](const ParamSet& p, const MultiViewSample& s) { return SelfObjective(p, s, net, weights); },
      "self", log);
}

TrainResult SupervisedTrain(const ParamSet& theta, std::span<const MultiViewSample> samples, const TrainConfig& cfg,
                            const NetworkConfig& net, LossLog* log) {
  return RunTraining(
      theta, samples, cfg, [&](const ParamSet& p, const MultiViewSample& s) { return SupLoss(p, s, net).total; },
      "sup", log);
}

double DepthMae(const ParamSet& theta, std::span<const MultiViewSample> samples, const NetworkConfig& net) {
  if (samples.empty()) throw std::invalid_argument("no samples to evaluate");
  NoGradGuard ng;
  double total = 0;
  for (const MultiViewSample& s : samples) total += SupLoss(theta, s, net).total.item();
  return total / static_cast<double>(samples.size());
}

double MeanSelfLoss(const ParamSet& theta, std::span<const MultiViewSample> samples, const NetworkConfig& net,
                    const LossWeights& weights) {
  if (samples.empty()) throw std::invalid_argument("no samples to evaluate");
  NoGradGuard ng;
  double total = 0;
  for (const MultiViewSample& s : samples) total += SelfLoss(theta, s, net, weights).total.item();
  return total / static_cast<double>(samples.size());
}

}  // namespace mmvs
