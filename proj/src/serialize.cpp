#include "mmvs/serialize.hpp"

namespace mmvs {

using nlohmann::json;

StrictObject::StrictObject(const json& j, std::string context) : j_(j), context_(std::move(context)) {
  if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
}

const json* StrictObject::Child(const char* key) {
  seen_.insert(key);
  return j_.contains(key) ? &j_.at(key) : nullptr;
}

void StrictObject::Finish() const {
  for (auto it = j_.begin(); it != j_.end(); ++it) {
    if (!seen_.count(it.key())) throw ConfigError(context_ + ": unknown key '" + it.key() + "'");
  }
}

json ToJson(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d Vector3FromJson(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(context + ": expected an array of 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ConfigError(context + ": expected an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

json ToJson(const DomainSpec& d) {
  return {{"id", d.id},
          {"name", d.name},
          {"texture", TextureFamilyName(d.texture)},
          {"light_dir", ToJson(d.light_dir)},
          {"intensity", d.intensity},
          {"ambient", d.ambient},
          {"noise_sigma", d.noise_sigma},
          {"depth_min", d.depth_min},
          {"depth_max", d.depth_max}};
}

DomainSpec DomainFromJson(const json& j, const std::string& context, DomainSpec d) {
  StrictObject o(j, context);
  o.Get("id", d.id);
  o.Get("name", d.name);
  std::string tex = TextureFamilyName(d.texture);
  o.Get("texture", tex);
  try {
    d.texture = ParseTextureFamily(tex);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(context + ".texture: " + e.what());
  }
  if (const json* l = o.Child("light_dir")) d.light_dir = Vector3FromJson(*l, context + ".light_dir");
  o.Get("intensity", d.intensity);
  o.Get("ambient", d.ambient);
  o.Get("noise_sigma", d.noise_sigma);
  o.Get("depth_min", d.depth_min);
  o.Get("depth_max", d.depth_max);
  o.Finish();
  try {
    d.Validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return d;
}

json ToJson(const RigSpec& r) {
  return {{"num_views", r.num_views},       {"azimuth_span_deg", r.azimuth_span_deg},
          {"elevation_deg", r.elevation_deg}, {"width", r.width},
          {"height", r.height},             {"focal_factor", r.focal_factor},
          {"output_factor", r.output_factor}};
}

RigSpec RigFromJson(const json& j, const std::string& context, RigSpec r) {
  StrictObject o(j, context);
  o.Get("num_views", r.num_views);
  o.Get("azimuth_span_deg", r.azimuth_span_deg);
  o.Get("elevation_deg", r.elevation_deg);
  o.Get("width", r.width);
  o.Get("height", r.height);
  o.Get("focal_factor", r.focal_factor);
  o.Get("output_factor", r.output_factor);
  o.Finish();
  try {
    r.Validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return r;
}

json ToJson(const DatasetConfig& c) {
  json domains = json::array();
  for (const auto& d : c.train_domains) domains.push_back(ToJson(d));
  return {{"seed", c.seed},
          {"train_domains", domains},
          {"target_domain", ToJson(c.target_domain)},
          {"train_scenes", c.train_scenes},
          {"val_scenes", c.val_scenes},
          {"target_train_scenes", c.target_train_scenes},
          {"target_test_scenes", c.target_test_scenes},
          {"num_neighbors", c.num_neighbors},
          {"rig", ToJson(c.rig)},
          {"shuffle", c.shuffle}};
}

DatasetConfig DatasetConfigFromJson(const json& j, const std::string& context, DatasetConfig c) {
  StrictObject o(j, context);
  o.Get("seed", c.seed);
  if (const json* ds = o.Child("train_domains")) {
    if (!ds->is_array()) throw ConfigError(context + ".train_domains: expected an array");
    c.train_domains.clear();
    for (size_t i = 0; i < ds->size(); ++i) {
      c.train_domains.push_back(DomainFromJson((*ds)[i], context + ".train_domains[" + std::to_string(i) + "]"));
    }
  }
  if (const json* t = o.Child("target_domain")) {
    c.target_domain = DomainFromJson(*t, context + ".target_domain", c.target_domain);
  }
  o.Get("train_scenes", c.train_scenes);
  o.Get("val_scenes", c.val_scenes);
  o.Get("target_train_scenes", c.target_train_scenes);
  o.Get("target_test_scenes", c.target_test_scenes);
  o.Get("num_neighbors", c.num_neighbors);
  if (const json* r = o.Child("rig")) c.rig = RigFromJson(*r, context + ".rig", c.rig);
  o.Get("shuffle", c.shuffle);
  o.Finish();
  try {
    c.Validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return c;
}

namespace {

template <typename T>
T Validated(T value, const std::string& context) {
  try {
    value.Validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return value;
}

}  // namespace

json ToJson(const NetworkConfig& c) {
  return {{"feature_channels", c.feature_channels}, {"reg_channels", c.reg_channels},
          {"reg_levels", c.reg_levels},             {"mask_channels", c.mask_channels},
          {"num_depths", c.num_depths},             {"inverse_depth", c.inverse_depth},
          {"use_conf_mask", c.use_conf_mask}};
}

NetworkConfig NetworkConfigFromJson(const json& j, const std::string& context, NetworkConfig c) {
  StrictObject o(j, context);
  o.Get("feature_channels", c.feature_channels);
  o.Get("reg_channels", c.reg_channels);
  o.Get("reg_levels", c.reg_levels);
  o.Get("mask_channels", c.mask_channels);
  o.Get("num_depths", c.num_depths);
  o.Get("inverse_depth", c.inverse_depth);
  o.Get("use_conf_mask", c.use_conf_mask);
  o.Finish();
  return Validated(c, context);
}

json ToJson(const LossWeights& w) {
  return {{"gamma_photo", w.gamma_photo}, {"gamma_ssim", w.gamma_ssim},   {"gamma_smooth", w.gamma_smooth},
          {"mask_reg", w.mask_reg},       {"average_views", w.average_views}};
}

LossWeights LossWeightsFromJson(const json& j, const std::string& context, LossWeights w) {
  StrictObject o(j, context);
  o.Get("gamma_photo", w.gamma_photo);
  o.Get("gamma_ssim", w.gamma_ssim);
  o.Get("gamma_smooth", w.gamma_smooth);
  o.Get("mask_reg", w.mask_reg);
  o.Get("average_views", w.average_views);
  o.Finish();
  return Validated(w, context);
}

json ToJson(const MetaConfig& c) {
  return {{"k", c.k},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"inner_policy", InnerPolicyName(c.inner_policy)},
          {"outer_batch", c.outer_batch},
          {"max_iterations", c.max_iterations},
          {"patience", c.patience},
          {"ema_decay", c.ema_decay},
          {"checkpoint_every", c.checkpoint_every},
          {"outer_optimizer", OptimizerName(c.outer_optimizer)},
          {"carry_tau", c.carry_tau},
          {"seed", c.seed}};
}

MetaConfig MetaConfigFromJson(const json& j, const std::string& context, MetaConfig c) {
  StrictObject o(j, context);
  std::string policy = InnerPolicyName(c.inner_policy), opt = OptimizerName(c.outer_optimizer);
  o.Get("k", c.k);
  o.Get("alpha", c.alpha);
  o.Get("beta", c.beta);
  o.Get("inner_policy", policy);
  o.Get("outer_batch", c.outer_batch);
  o.Get("max_iterations", c.max_iterations);
  o.Get("patience", c.patience);
  o.Get("ema_decay", c.ema_decay);
  o.Get("checkpoint_every", c.checkpoint_every);
  o.Get("outer_optimizer", opt);
  o.Get("carry_tau", c.carry_tau);
  o.Get("seed", c.seed);
  o.Finish();
  c.inner_policy = ParseInnerPolicy(policy);
  c.outer_optimizer = ParseOptimizer(opt);
  return Validated(c, context);
}

json ToJson(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"freeze_tau", c.freeze_tau},
          {"optimizer", OptimizerName(c.optimizer)},
          {"seed", c.seed}};
}

TrainConfig TrainConfigFromJson(const json& j, const std::string& context, TrainConfig c) {
  StrictObject o(j, context);
  std::string opt = OptimizerName(c.optimizer);
  o.Get("lr", c.lr);
  o.Get("steps", c.steps);
  o.Get("batch_size", c.batch_size);
  o.Get("freeze_tau", c.freeze_tau);
  o.Get("optimizer", opt);
  o.Get("seed", c.seed);
  o.Finish();
  c.optimizer = ParseOptimizer(opt);
  return Validated(c, context);
}

json ToJson(const FusionConfig& c) {
  return {{"prob_threshold", c.prob_threshold}, {"reproj_px", c.reproj_px},         {"rel_depth", c.rel_depth},
          {"min_views", c.min_views},           {"max_neighbors", c.max_neighbors}, {"conf_threshold", c.conf_threshold}};
}

FusionConfig FusionConfigFromJson(const json& j, const std::string& context, FusionConfig c) {
  StrictObject o(j, context);
  o.Get("prob_threshold", c.prob_threshold);
  o.Get("reproj_px", c.reproj_px);
  o.Get("rel_depth", c.rel_depth);
  o.Get("min_views", c.min_views);
  o.Get("max_neighbors", c.max_neighbors);
  o.Get("conf_threshold", c.conf_threshold);
  o.Finish();
  return Validated(c, context);
}

json ToJson(const EvalConfig& c) {
  return {{"max_dist", c.max_dist}, {"thresholds", c.thresholds}, {"gt_factor", c.gt_factor}};
}

EvalConfig EvalConfigFromJson(const json& j, const std::string& context, EvalConfig c) {
  StrictObject o(j, context);
  o.Get("max_dist", c.max_dist);
  o.Get("thresholds", c.thresholds);
  o.Get("gt_factor", c.gt_factor);
  o.Finish();
  return Validated(c, context);
}

}  // namespace mmvs
