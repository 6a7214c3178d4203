#pragma once

#include <json.hpp>
#include <set>
#include <stdexcept>
#include <string>

#include "mmvs/eval.hpp"
#include "mmvs/fusion.hpp"
#include "mmvs/losses.hpp"
#include "mmvs/meta.hpp"
#include "mmvs/network.hpp"
#include "mmvs/scene.hpp"

namespace mmvs {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads fields of a JSON object and rejects keys that were never read.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context);

  template <typename T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }
  // Returns the sub-object (or null) and marks the key as read.
  const nlohmann::json* Child(const char* key);
  const std::string& context() const { return context_; }
  // Throws ConfigError naming the first unknown key.
  void Finish() const;

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

nlohmann::json ToJson(const DomainSpec& d);
nlohmann::json ToJson(const RigSpec& r);
nlohmann::json ToJson(const DatasetConfig& c);
nlohmann::json ToJson(const NetworkConfig& c);
nlohmann::json ToJson(const LossWeights& w);
nlohmann::json ToJson(const MetaConfig& c);
nlohmann::json ToJson(const TrainConfig& c);
nlohmann::json ToJson(const FusionConfig& c);
nlohmann::json ToJson(const EvalConfig& c);

// Start from `base` and override the keys present in j.
DomainSpec DomainFromJson(const nlohmann::json& j, const std::string& context, DomainSpec base = {});
RigSpec RigFromJson(const nlohmann::json& j, const std::string& context, RigSpec base = {});
DatasetConfig DatasetConfigFromJson(const nlohmann::json& j, const std::string& context, DatasetConfig base = {});
NetworkConfig NetworkConfigFromJson(const nlohmann::json& j, const std::string& context, NetworkConfig base = {});
LossWeights LossWeightsFromJson(const nlohmann::json& j, const std::string& context, LossWeights base = {});
MetaConfig MetaConfigFromJson(const nlohmann::json& j, const std::string& context, MetaConfig base = {});
TrainConfig TrainConfigFromJson(const nlohmann::json& j, const std::string& context, TrainConfig base = {});
FusionConfig FusionConfigFromJson(const nlohmann::json& j, const std::string& context, FusionConfig base = {});
EvalConfig EvalConfigFromJson(const nlohmann::json& j, const std::string& context, EvalConfig base = {});

nlohmann::json ToJson(const Eigen::Vector3d& v);
Eigen::Vector3d Vector3FromJson(const nlohmann::json& j, const std::string& context);

}  // namespace mmvs
