#pragma once

// Small rendered multi-view samples and a parameter-subset gradient check.

#include <string>
#include <utility>
#include <vector>

#include "grad_check.hpp"
#include "mmvs/network.hpp"
#include "mmvs/scene.hpp"

namespace mmvs::testing {

inline DomainSpec TestDomain(int id = 0, TextureFamily fam = TextureFamily::kValueNoise) {
  DomainSpec d;
  d.id = id;
  d.name = "d" + std::to_string(id);
  d.texture = fam;
  return d;
}

inline RigSpec SmallRig(int views = 5) {
  RigSpec r;
  r.num_views = views;
  r.width = 48;
  r.height = 32;
  return r;
}

// Reference view 0 with neighbours 1..n of a generated scene.
inline MultiViewSample RenderedSample(uint64_t seed, int num_neighbors, const RigSpec& rig = SmallRig(),
                                      const DomainSpec& domain = TestDomain()) {
  const SceneSpec scene = GenerateScene(seed, domain, rig);
  const std::vector<Camera> cams = MakeRig(rig, domain);
  MultiViewSample s;
  s.domain_id = domain.id;
  s.depth_min = domain.depth_min;
  s.depth_max = domain.depth_max;
  for (int v = 0; v <= num_neighbors; ++v) {
    RenderedView rv = RenderView(scene, cams[v], domain, v, rig.output_factor);
    View view{v, rv.image, cams[v]};
    if (v == 0) {
      s.ref = view;
      s.gt_depth = rv.gt_depth;
    } else {
      s.neighbors.push_back(view);
    }
  }
  return s;
}

inline NetworkConfig SmallNetwork() {
  NetworkConfig c;
  c.feature_channels = 4;
  c.reg_channels = 4;
  c.mask_channels = 4;
  c.num_depths = 8;
  return c;
}

using ParamFn = std::function<Tensor(const ParamSet&)>;

// Finite-difference check of f with respect to the listed (name, index)
// scalars of `params`.
inline GradCheckResult CheckParamGradients(const ParamFn& f, const ParamSet& params,
                                           const std::vector<std::pair<std::string, int64_t>>& picks,
                                           double h = 1e-5) {
  std::vector<std::string> names;
  std::vector<std::vector<int64_t>> which;
  std::vector<Tensor> inputs;
  for (const auto& [name, idx] : picks) {
    size_t k = 0;
    while (k < names.size() && names[k] != name) ++k;
    if (k == names.size()) {
      names.push_back(name);
      which.emplace_back();
      inputs.push_back(params.Get(name));
    }
    which[k].push_back(idx);
  }
  return CheckGradients(
      [&](const std::vector<Tensor>& in) {
        ParamSet p = params.Clone();
        for (size_t k = 0; k < names.size(); ++k) p.Get(names[k]) = in[k];
        return f(p);
      },
      inputs, h, which);
}

// `count` random (name, index) picks over all parameters matching `keep`.
inline std::vector<std::pair<std::string, int64_t>> RandomPicks(
    const ParamSet& params, int count, uint64_t seed,
    const std::function<bool(const std::string&)>& keep = {}) {
  std::vector<const ParamSet::Entry*> pool;
  for (const auto& e : params.entries())
    if (!keep || keep(e.name)) pool.push_back(&e);
  Rng rng = MakeRng(seed, {0x9c1c});
  std::vector<std::pair<std::string, int64_t>> out;
  for (int i = 0; i < count; ++i) {
    const auto* e = pool[UniformIndex(rng, pool.size())];
    out.emplace_back(e->name, static_cast<int64_t>(UniformIndex(rng, e->tensor.numel())));
  }
  return out;
}

}  // namespace mmvs::testing
