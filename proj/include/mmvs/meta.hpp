#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmvs/losses.hpp"
#include "mmvs/network.hpp"
#include "mmvs/param_set.hpp"
#include "mmvs/scene.hpp"

namespace mmvs {

enum class OptimizerKind { kSgd, kAdam };
std::string OptimizerName(OptimizerKind k);
OptimizerKind ParseOptimizer(const std::string& name);

// How the k inner examples of one cycle are drawn: all from one randomly
// chosen training domain, or from the whole training split.
enum class InnerPolicy { kSameDomain, kAnyScene };
std::string InnerPolicyName(InnerPolicy p);
InnerPolicy ParseInnerPolicy(const std::string& name);

struct MetaConfig {
  int k = 3;
  double alpha = 1e-4;  // inner (self-supervised) SGD rate
  double beta = 1e-4;   // outer (supervised) rate
  InnerPolicy inner_policy = InnerPolicy::kSameDomain;
  int outer_batch = 1;
  int max_iterations = 1000;
  int patience = 50;          // iterations without a new best smoothed L_sup; 0 disables
  double ema_decay = 0.9;     // smoothing of the outer L_sup for early stopping
  int checkpoint_every = 0;   // 0: only the final checkpoint
  OptimizerKind outer_optimizer = OptimizerKind::kSgd;
  bool carry_tau = true;      // copy the inner-adapted mask parameters into theta
  uint64_t seed = 0;

  void Validate() const;
};

struct MetaStepLog {
  int64_t iteration = 0;  // 1-based index of the completed step
  int domain_id = -1;     // -1 when inner samples span domains
  std::vector<double> self_losses;
  double sup_loss = 0.0;
};

struct TrainState {
  ParamSet params;
  int64_t iteration = 0;
  Adam adam;
  double ema = std::numeric_limits<double>::quiet_NaN();
  double best_ema = std::numeric_limits<double>::infinity();
  int64_t best_iteration = 0;
  bool converged = false;
  std::vector<MetaStepLog> history;
};

struct AdaptResult {
  ParamSet params;
  std::vector<double> self_losses;  // L_self before each step
};

// One SGD step on L_self per sample, first order; theta is not modified.
AdaptResult Adapt(const ParamSet& theta, std::span<const MultiViewSample> samples, double alpha,
                  const NetworkConfig& net, const LossWeights& weights);

// Samples a task from ds.train / ds.val with the iteration's random stream,
// adapts, and applies the supervised gradient at the adapted parameters to
// state.params.
MetaStepLog MetaStep(TrainState& state, const SceneDataset& ds, const MetaConfig& cfg, const NetworkConfig& net,
                     const LossWeights& weights);

struct MetaTrainOptions {
  std::string checkpoint_dir;  // empty: no checkpoints
  std::string loss_log;        // empty: no CSV log
  bool resume = false;         // continue from checkpoint_dir when it holds a state
  std::function<void(const MetaStepLog&)> on_step;
};

TrainState MetaTrain(const ParamSet& init, const SceneDataset& ds, const MetaConfig& cfg, const NetworkConfig& net,
                     const LossWeights& weights, const MetaTrainOptions& options = {});

// Checkpoint directory: params.mmvs, optimizer.mmvs and state.json.
void SaveTrainState(const TrainState& state, const MetaConfig& cfg, const std::string& dir);
TrainState LoadTrainState(const std::string& dir, const MetaConfig& cfg);
bool HasTrainState(const std::string& dir);

// Hash of the settings that shape the trajectory (excludes max_iterations
// and checkpoint_every).
uint64_t MetaConfigHash(const MetaConfig& cfg);

// Plain mini-batch training used for self-supervised fine-tuning and for the
// supervised-pretraining baseline.
struct TrainConfig {
  double lr = 1e-5;
  int steps = 200;
  int batch_size = 4;
  bool freeze_tau = true;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  uint64_t seed = 0;

  void Validate() const;
};

struct TrainResult {
  ParamSet params;
  std::vector<double> losses;  // mean batch loss before each update
};

TrainResult FineTune(const ParamSet& theta, std::span<const MultiViewSample> samples, const TrainConfig& cfg,
                     const NetworkConfig& net, const LossWeights& weights, LossLog* log = nullptr);
TrainResult SupervisedTrain(const ParamSet& theta, std::span<const MultiViewSample> samples, const TrainConfig& cfg,
                            const NetworkConfig& net, LossLog* log = nullptr);

// Mean over samples of the masked depth L1 error.
double DepthMae(const ParamSet& theta, std::span<const MultiViewSample> samples, const NetworkConfig& net);
// Mean L_self over samples, no gradients.
double MeanSelfLoss(const ParamSet& theta, std::span<const MultiViewSample> samples, const NetworkConfig& net,
                    const LossWeights& weights);

}  // namespace mmvs
