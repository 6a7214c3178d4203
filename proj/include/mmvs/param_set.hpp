#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmvs/tensor.hpp"

namespace mmvs {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named parameter tensors in insertion order.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  void Add(std::string name, Tensor tensor);
  bool Contains(std::string_view name) const;
  const Tensor& Get(std::string_view name) const;
  Tensor& Get(std::string_view name);

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int64_t NumScalars() const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  // Value-identical copy whose tensors are fresh leaves.
  ParamSet Clone() const;
  // Gradients currently accumulated on each tensor (zeros when absent).
  ParamSet Gradients() const;
  void ZeroGrad();

  // FNV-1a over names, shapes and value bits.
  uint64_t Hash() const;

  // Little-endian "MMVS" format: magic, u32 version, u32 count, then per
  // entry u32 name length, name bytes, u32 rank, u32 dims, float32 values.
  void Write(std::ostream& os) const;
  static ParamSet Read(std::istream& is);
  void Save(const std::string& path) const;
  static ParamSet Load(const std::string& path);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

inline constexpr uint32_t kCheckpointVersion = 1;

// Names excluded from an update.
using FrozenPredicate = std::function<bool(std::string_view)>;

// params - lr * grads as a new ParamSet; the input is untouched.
ParamSet SgdStep(const ParamSet& params, const ParamSet& grads, double lr,
                 const FrozenPredicate& frozen = {});
void SgdStepInPlace(ParamSet& params, const ParamSet& grads, double lr,
                    const FrozenPredicate& frozen = {});

// Adam with bias correction. Moments are kept per parameter name.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void Step(ParamSet& params, const ParamSet& grads, double lr, const FrozenPredicate& frozen = {});
  int64_t steps() const { return steps_; }

  // Stored in the checkpoint format as "m/<name>", "v/<name>" and "step".
  ParamSet State() const;
  void Restore(const ParamSet& state);

 private:
  double beta1_, beta2_, eps_;
  int64_t steps_ = 0;
  ParamSet m_, v_;
};

uint64_t Fnv1a(const void* data, size_t size, uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace mmvs
