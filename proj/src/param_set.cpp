#include "mmvs/param_set.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mmvs {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

uint64_t Fnv1a(const void* data, size_t size, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ParamSet::Add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor)});
}

bool ParamSet::Contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

const Tensor& ParamSet::Get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second].tensor;
}

Tensor& ParamSet::Get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).Get(name));
}

int64_t ParamSet::NumScalars() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

ParamSet ParamSet::Clone() const {
  ParamSet out;
  for (const auto& e : entries_) {
    std::vector<double> v(e.tensor.values().begin(), e.tensor.values().end());
    Tensor t = Tensor::Parameter(e.tensor.shape(), std::move(v));
    // Parameter() rounds; keep exact bits even when the current precision is
    // narrower than the source.
    std::copy(e.tensor.values().begin(), e.tensor.values().end(), t.mutable_values().begin());
    out.Add(e.name, std::move(t));
  }
  return out;
}

ParamSet ParamSet::Gradients() const {
  ParamSet out;
  for (const auto& e : entries_) {
    Tensor g = Tensor::Zeros(e.tensor.shape());
    if (e.tensor.has_grad()) std::copy(e.tensor.grad().begin(), e.tensor.grad().end(), g.mutable_values().begin());
    out.Add(e.name, std::move(g));
  }
  return out;
}

void ParamSet::ZeroGrad() {
  for (auto& e : entries_) e.tensor.ZeroGrad();
}

uint64_t ParamSet::Hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) {
    h = Fnv1a(e.name.data(), e.name.size(), h);
    for (int64_t d : e.tensor.shape()) h = Fnv1a(&d, sizeof(d), h);
    const auto v = e.tensor.values();
    h = Fnv1a(v.data(), v.size() * sizeof(double), h);
  }
  return h;
}

namespace {

void PutU32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t GetU32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("checkpoint truncated");
  return v;
}

}  // namespace

void ParamSet::Write(std::ostream& os) const {
  os.write("MMVS", 4);
  PutU32(os, kCheckpointVersion);
  PutU32(os, static_cast<uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    PutU32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    PutU32(os, static_cast<uint32_t>(e.tensor.rank()));
    for (int64_t d : e.tensor.shape()) PutU32(os, static_cast<uint32_t>(d));
    std::vector<float> buf(e.tensor.values().begin(), e.tensor.values().end());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint");
}

ParamSet ParamSet::Read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MMVS", 4) != 0) throw FormatError("bad checkpoint magic");
  const uint32_t version = GetU32(is);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = GetU32(is);
  ParamSet out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = GetU32(is);
    if (len > (1u << 16)) throw FormatError("unreasonable parameter name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated");
    const uint32_t rank = GetU32(is);
    if (rank > 8) throw FormatError("unreasonable tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = GetU32(is);
    std::vector<float> buf(NumElements(shape));
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw FormatError("checkpoint truncated");
    }
    out.Add(std::move(name), Tensor::Parameter(shape, std::vector<double>(buf.begin(), buf.end())));
  }
  return out;
}

void ParamSet::Save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  Write(os);
}

ParamSet ParamSet::Load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return Read(is);
}

namespace {

void CheckCompatible(const ParamSet& params, const ParamSet& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("parameter/gradient count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.entries()[i];
    const auto& g = grads.entries()[i];
    if (p.name != g.name || p.tensor.shape() != g.tensor.shape()) {
      throw std::invalid_argument("parameter/gradient mismatch at " + p.name + " vs " + g.name + " " +
                                  ShapeString(g.tensor.shape()));
    }
  }
}

}  // namespace

ParamSet SgdStep(const ParamSet& params, const ParamSet& grads, double lr, const FrozenPredicate& frozen) {
  ParamSet out = params.Clone();
  SgdStepInPlace(out, grads, lr, frozen);
  return out;
}

void SgdStepInPlace(ParamSet& params, const ParamSet& grads, double lr, const FrozenPredicate& frozen) {
  CheckCompatible(params, grads);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entries()[i];
    if (frozen && frozen(p.name)) continue;
    auto v = p.tensor.mutable_values();
    const auto g = grads.entries()[i].tensor.values();
    for (size_t k = 0; k < v.size(); ++k) v[k] = StoreRounded(v[k] - lr * g[k]);
  }
}

void Adam::Step(ParamSet& params, const ParamSet& grads, double lr, const FrozenPredicate& frozen) {
  CheckCompatible(params, grads);
  if (m_.empty()) {
    for (const auto& e : params.entries()) {
      m_.Add(e.name, Tensor::Zeros(e.tensor.shape()));
      v_.Add(e.name, Tensor::Zeros(e.tensor.shape()));
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entries()[i];
    if (frozen && frozen(p.name)) continue;
    auto pv = p.tensor.mutable_values();
    auto mv = m_.Get(p.name).mutable_values();
    auto vv = v_.Get(p.name).mutable_values();
    const auto g = grads.entries()[i].tensor.values();
    for (size_t k = 0; k < pv.size(); ++k) {
      mv[k] = StoreRounded(beta1_ * mv[k] + (1 - beta1_) * g[k]);
      vv[k] = StoreRounded(beta2_ * vv[k] + (1 - beta2_) * g[k] * g[k]);
      pv[k] = StoreRounded(pv[k] - lr * (mv[k] / c1) / (std::sqrt(vv[k] / c2) + eps_));
    }
  }
}

ParamSet Adam::State() const {
  ParamSet s;
  s.Add("step", Tensor::FromValues({}, {static_cast<double>(steps_)}));
  for (const auto& e : m_.entries()) s.Add("m/" + e.name, e.tensor.Detach());
  for (const auto& e : v_.entries()) s.Add("v/" + e.name, e.tensor.Detach());
  return s;
}

void Adam::Restore(const ParamSet& state) {
  m_ = ParamSet();
  v_ = ParamSet();
  steps_ = state.Contains("step") ? static_cast<int64_t>(state.Get("step").item()) : 0;
  for (const auto& e : state.entries()) {
    if (e.name.rfind("m/", 0) == 0) m_.Add(e.name.substr(2), e.tensor.Detach());
    if (e.name.rfind("v/", 0) == 0) v_.Add(e.name.substr(2), e.tensor.Detach());
  }
}

}  // namespace mmvs
