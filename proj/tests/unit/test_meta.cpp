#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "mmvs/meta.hpp"
#include "mmvs/serialize.hpp"

using namespace mmvs;
using namespace mmvs::testing;
namespace fs = std::filesystem;

namespace {

SceneDataset ToyDataset(uint64_t seed) {
  DatasetConfig dc;
  dc.seed = seed;
  dc.train_domains = {TestDomain(0, TextureFamily::kChecker), TestDomain(1, TextureFamily::kStripes)};
  dc.target_domain = TestDomain(2, TextureFamily::kValueNoise);
  dc.train_scenes = 4;
  dc.val_scenes = 2;
  dc.rig = SmallRig(5);
  return MakeDataset(dc);
}

MetaConfig ToyMeta(uint64_t seed) {
  MetaConfig c;
  c.alpha = 1e-2;
  c.beta = 1e-2;
  c.patience = 0;
  c.seed = seed;
  return c;
}

double MaxAbsDiff(const ParamSet& a, const ParamSet& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto x = a.entries()[i].tensor.values(), y = b.entries()[i].tensor.values();
    for (size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x[k] - y[k]));
  }
  return m;
}

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmvs_meta_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("adapt: k = 0 and alpha = 0 return theta; input untouched") {
  const NetworkConfig net = SmallNetwork();
  const ParamSet theta = InitParams(net, 1);
  const uint64_t h = theta.Hash();
  const SceneDataset ds = ToyDataset(2);
  CHECK(Adapt(theta, {}, 0.1, net, LossWeights{}).params.Hash() == h);
  const std::vector<MultiViewSample> three(ds.train.begin(), ds.train.begin() + 3);
  const AdaptResult zero = Adapt(theta, three, 0.0, net, LossWeights{});
  CHECK(zero.params.Hash() == h);
  CHECK(zero.self_losses.size() == 3);
  const AdaptResult moved = Adapt(theta, three, 1e-2, net, LossWeights{});
  CHECK(moved.params.Hash() != h);
  CHECK(theta.Hash() == h);
}

TEST_CASE("adapt: one step equals theta - alpha * finite-difference gradient") {
  PrecisionGuard f64(Precision::kFloat64);
  NetworkConfig net = SmallNetwork();
  net.use_conf_mask = false;
  const ParamSet theta = InitParams(net, 3);
  const MultiViewSample s = RenderedSample(4, 2, SmallRig(3));
  const double alpha = 0.05, h = 1e-6;
  for (const auto& [name, idx] : RandomPicks(theta, 4, 9, [](const std::string& n) { return !IsMaskParam(n); })) {
    auto loss_at = [&](double delta) {
      ParamSet p = theta.Clone();
      p.Get(name).mutable_values()[idx] += delta;
      NoGradGuard ng;
      return SelfLoss(p, s, net, LossWeights{}).total.item();
    };
    const double g = (loss_at(h) - loss_at(-h)) / (2 * h);
    const double before = theta.Get(name).values()[idx];
    const double after = Adapt(theta, std::span(&s, 1), alpha, net, LossWeights{}).params.Get(name).values()[idx];
    CHECK(after - before == doctest::Approx(-alpha * g).epsilon(1e-4).scale(1e-6));
  }
}

TEST_CASE("meta step with k = 0 or alpha = 0 is a plain supervised SGD step") {
  const NetworkConfig net = SmallNetwork();
  const SceneDataset full = ToyDataset(5);
  SceneDataset ds = full;
  ds.val = {full.val[0]};
  const ParamSet theta = InitParams(net, 6);
  MetaConfig cfg = ToyMeta(7);

  ParamSet direct;
  {
    ParamSet p = theta.Clone();
    SupLoss(p, ds.val[0], net).total.Backward();
    direct = SgdStep(theta, p.Gradients(), cfg.beta);
  }
  for (int variant = 0; variant < 2; ++variant) {
    TrainState st;
    st.params = theta.Clone();
    if (variant == 0) {
      cfg.k = 0;
    } else {
      cfg.k = 3;
      cfg.alpha = 0.0;
    }
    const MetaStepLog log = MetaStep(st, ds, cfg, net, LossWeights{});
    CHECK(MaxAbsDiff(st.params, direct) < 1e-7);
    CHECK(log.iteration == 1);
    CHECK(log.self_losses.size() == static_cast<size_t>(cfg.k));
  }
  CHECK(theta.Hash() == InitParams(net, 6).Hash());
}

TEST_CASE("meta step carries inner-adapted mask parameters") {
  const NetworkConfig net = SmallNetwork();
  const SceneDataset ds = ToyDataset(8);
  TrainState st;
  st.params = InitParams(net, 9);
  const ParamSet before = st.params.Clone();
  MetaStep(st, ds, ToyMeta(10), net, LossWeights{});
  bool mask_moved = false;
  for (const auto& e : before.entries())
    if (IsMaskParam(e.name))
      mask_moved |= !std::equal(e.tensor.values().begin(), e.tensor.values().end(),
                                st.params.Get(e.name).values().begin());
  CHECK(mask_moved);

  MetaConfig no_carry = ToyMeta(10);
  no_carry.carry_tau = false;
  TrainState st2;
  st2.params = before.Clone();
  MetaStep(st2, ds, no_carry, net, LossWeights{});
  for (const auto& e : before.entries())
    if (IsMaskParam(e.name))
      CHECK(std::equal(e.tensor.values().begin(), e.tensor.values().end(), st2.params.Get(e.name).values().begin()));
}

TEST_CASE("30 meta steps lower the outer supervised loss (2 of 3 seeds)") {
  const NetworkConfig net = SmallNetwork();
  int passed = 0;
  for (uint64_t seed : {1, 2, 3}) {
    MetaConfig cfg = ToyMeta(seed);
    cfg.max_iterations = 30;
    const TrainState st = MetaTrain(InitParams(net, seed), ToyDataset(seed), cfg, net, LossWeights{});
    REQUIRE(st.history.size() == 30);
    std::vector<double> first, last;
    for (int i = 0; i < 5; ++i) {
      first.push_back(st.history[i].sup_loss);
      last.push_back(st.history[25 + i].sup_loss);
    }
    std::sort(first.begin(), first.end());
    std::sort(last.begin(), last.end());
    MESSAGE("seed " << seed << ": median L_sup " << first[2] << " -> " << last[2]);
    passed += last[2] < first[2];
  }
  CHECK(passed >= 2);
}

TEST_CASE("meta train: determinism, loss log, checkpoint resume") {
  const NetworkConfig net = SmallNetwork();
  const SceneDataset ds = ToyDataset(11);
  const ParamSet init = InitParams(net, 12);
  MetaConfig cfg = ToyMeta(13);
  cfg.outer_optimizer = OptimizerKind::kAdam;
  cfg.beta = 1e-3;
  cfg.max_iterations = 8;

  const fs::path dir = TempDir("run");
  MetaTrainOptions opt;
  opt.loss_log = (dir / "loss.csv").string();
  fs::create_directories(dir);
  const TrainState a = MetaTrain(init, ds, cfg, net, LossWeights{}, opt);
  const TrainState b = MetaTrain(init, ds, cfg, net, LossWeights{});
  CHECK(a.params.Hash() == b.params.Hash());
  CHECK(a.iteration == 8);

  std::ifstream is(opt.loss_log);
  std::string line;
  int sup_rows = 0, self_rows = 0;
  while (std::getline(is, line)) {
    sup_rows += line.find(",sup,") != std::string::npos;
    self_rows += line.find(",self,") != std::string::npos;
  }
  CHECK(sup_rows == 8);
  CHECK(self_rows == 8);

  // Interrupted at 5, resumed to 8.
  const fs::path ck = TempDir("ckpt");
  MetaConfig part = cfg;
  part.max_iterations = 5;
  MetaTrainOptions ck_opt;
  ck_opt.checkpoint_dir = ck.string();
  const TrainState first = MetaTrain(init, ds, part, net, LossWeights{}, ck_opt);
  CHECK(first.iteration == 5);
  CHECK(HasTrainState(ck.string()));
  ck_opt.resume = true;
  const TrainState resumed = MetaTrain(init, ds, cfg, net, LossWeights{}, ck_opt);
  CHECK(resumed.iteration == 8);
  CHECK(resumed.params.Hash() == a.params.Hash());
  CHECK(resumed.adam.steps() == a.adam.steps());
  REQUIRE(resumed.history.size() == a.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) CHECK(resumed.history[i].sup_loss == a.history[i].sup_loss);
  CHECK(resumed.ema == a.ema);

  MetaConfig other = cfg;
  other.alpha = 2e-2;
  CHECK_THROWS_AS(LoadTrainState(ck.string(), other), ConfigError);
  fs::remove_all(dir);
  fs::remove_all(ck);
}

TEST_CASE("meta train stops on a plateau of the smoothed outer loss") {
  const NetworkConfig net = SmallNetwork();
  MetaConfig cfg = ToyMeta(14);
  cfg.beta = 1e-9;  // no progress, so the best smoothed value stops improving
  cfg.alpha = 1e-9;
  cfg.patience = 3;
  cfg.ema_decay = 0.0;
  cfg.max_iterations = 40;
  const TrainState st = MetaTrain(InitParams(net, 15), ToyDataset(14), cfg, net, LossWeights{});
  CHECK(st.converged);
  CHECK(st.iteration < 40);
  CHECK(st.iteration - st.best_iteration == cfg.patience);
  double best = st.history[0].sup_loss;
  for (int64_t i = 0; i < st.best_iteration; ++i) best = std::min(best, st.history[i].sup_loss);
  CHECK(best == st.best_ema);
}

TEST_CASE("fine-tune: zero steps, frozen tau, loss decreases") {
  const NetworkConfig net = SmallNetwork();
  const SceneDataset ds = ToyDataset(16);
  const ParamSet theta = InitParams(net, 17);
  TrainConfig cfg;
  cfg.steps = 0;
  CHECK(FineTune(theta, ds.target_train, cfg, net, LossWeights{}).params.Hash() == theta.Hash());

  cfg.steps = 3;
  cfg.lr = 1e-3;
  cfg.optimizer = OptimizerKind::kAdam;
  const TrainResult frozen = FineTune(theta, ds.target_train, cfg, net, LossWeights{});
  CHECK(frozen.losses.size() == 3);
  bool other_moved = false;
  for (const auto& e : theta.entries()) {
    const bool same = std::equal(e.tensor.values().begin(), e.tensor.values().end(),
                                 frozen.params.Get(e.name).values().begin());
    if (IsMaskParam(e.name)) {
      CHECK(same);
    } else {
      other_moved |= !same;
    }
  }
  CHECK(other_moved);

  cfg.freeze_tau = false;
  const TrainResult free = FineTune(theta, ds.target_train, cfg, net, LossWeights{});
  const auto before_w = theta.Get("mask.out.w").values(), after_w = free.params.Get("mask.out.w").values();
  CHECK(!std::equal(before_w.begin(), before_w.end(), after_w.begin()));

  cfg.steps = 40;
  cfg.freeze_tau = true;
  const TrainResult longer = FineTune(theta, ds.target_train, cfg, net, LossWeights{});
  CHECK(MeanSelfLoss(longer.params, ds.target_train, net, LossWeights{}) <
        MeanSelfLoss(theta, ds.target_train, net, LossWeights{}));
}

TEST_CASE("supervised training lowers depth error") {
  const NetworkConfig net = SmallNetwork();
  const SceneDataset ds = ToyDataset(18);
  const ParamSet theta = InitParams(net, 19);
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.lr = 3e-3;
  cfg.batch_size = 2;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.freeze_tau = false;
  const TrainResult r = SupervisedTrain(theta, ds.val, cfg, net);
  CHECK(DepthMae(r.params, ds.val, net) < DepthMae(theta, ds.val, net));
  CHECK(SupervisedTrain(theta, ds.val, cfg, net).params.Hash() == r.params.Hash());
}

TEST_CASE("meta and training config JSON") {
  MetaConfig m = ToyMeta(3);
  m.inner_policy = InnerPolicy::kAnyScene;
  m.outer_optimizer = OptimizerKind::kAdam;
  const MetaConfig m2 = MetaConfigFromJson(ToJson(m), "meta");
  CHECK(ToJson(m2) == ToJson(m));
  CHECK(MetaConfigHash(m2) == MetaConfigHash(m));
  MetaConfig m3 = m;
  m3.max_iterations = 7;
  CHECK(MetaConfigHash(m3) == MetaConfigHash(m));
  m3.k = 2;
  CHECK(MetaConfigHash(m3) != MetaConfigHash(m));

  TrainConfig t;
  t.optimizer = OptimizerKind::kAdam;
  CHECK(ToJson(TrainConfigFromJson(ToJson(t), "ft")) == ToJson(t));

  nlohmann::json bad = ToJson(m);
  bad["alpah"] = 1;
  CHECK_THROWS_AS(MetaConfigFromJson(bad, "meta"), ConfigError);
  bad = ToJson(m);
  bad["k"] = -1;
  CHECK_THROWS_AS(MetaConfigFromJson(bad, "meta"), ConfigError);
  bad = ToJson(m);
  bad["outer_optimizer"] = "rmsprop";
  CHECK_THROWS_AS(MetaConfigFromJson(bad, "meta"), ConfigError);
  nlohmann::json tb = ToJson(t);
  tb["batch_size"] = 0;
  CHECK_THROWS_AS(TrainConfigFromJson(tb, "ft"), ConfigError);
}
