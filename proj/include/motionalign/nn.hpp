#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "motionalign/ops.hpp"

// Named parameter storage and the layer building blocks composed from ops.
// Parameters live in a ParamStore as plain tensors; each forward pass binds
// the whole store onto a fresh graph (leaf nodes), so the same module code
// serves float training and double-precision finite-difference checks.

namespace ma {

template <typename S>
struct ParamDef {
  std::string name;
  Tensor<S> value;
  bool decay = true;  // false for norm scale/offset and the cls token
};

template <typename S>
class ParamStore {
 public:
  int add(const std::string& name, Tensor<S> init, bool decay = true) {
    MA_CHECK(index_.find(name) == index_.end(), "duplicate parameter: " + name);
    params_.push_back(ParamDef<S>{name, std::move(init), decay});
    index_[name] = int(params_.size()) - 1;
    return int(params_.size()) - 1;
  }
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }
  int size() const { return int(params_.size()); }
  ParamDef<S>& param(int i) { return params_[size_t(i)]; }
  const ParamDef<S>& param(int i) const { return params_[size_t(i)]; }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  // key ← m·key + (1−m)·query, elementwise over every parameter.
  void ema_from(const ParamStore& query, S m) {
    MA_CHECK(size() == query.size(), "param store size mismatch");
    for (int i = 0; i < size(); ++i) {
      ParamDef<S>& k = params_[size_t(i)];
      const ParamDef<S>& q = query.param(i);
      MA_CHECK(k.value.same_shape(q.value), "param shape mismatch: " + k.name);
      for (int64_t j = 0; j < k.value.numel(); ++j)
        k.value[j] = m * k.value[j] + (S(1) - m) * q.value[j];
    }
  }
  void copy_from(const ParamStore& o) { ema_from(o, S(0)); }

 private:
  std::vector<ParamDef<S>> params_;
  std::unordered_map<std::string, int> index_;
};

// A store bound onto one graph: vars[i] is the leaf for parameter i. Carries
// the train/dropout context so layers don't need extra arguments everywhere.
template <typename S>
struct Binding {
  Graph<S>* g = nullptr;
  std::vector<Var<S>> vars;
  bool train = false;
  Rng* rng = nullptr;  // dropout stream; required when train and dropout>0

  Var<S> operator[](int idx) const { return vars[size_t(idx)]; }
};

template <typename S>
Binding<S> bind(Graph<S>& g, const ParamStore<S>& ps, bool needs_grad,
                bool train = false, Rng* rng = nullptr) {
  Binding<S> b;
  b.g = &g;
  b.train = train;
  b.rng = rng;
  b.vars.reserve(size_t(ps.size()));
  for (int i = 0; i < ps.size(); ++i) b.vars.push_back(g.leaf(ps.param(i).value, needs_grad));
  return b;
}

// Fan-in-scaled normal init: N(0, 1/fan_in) entries.
template <typename S>
Tensor<S> init_normal(Rng& rng, std::vector<int> dims, int fan_in) {
  Tensor<S> t(std::move(dims));
  S sd = S(1) / std::sqrt(S(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = S(rng.normal()) * sd;
  return t;
}

template <typename S>
struct LinearLayer {
  int w = -1, b = -1;
  int in = 0, out = 0;

  LinearLayer() = default;
  LinearLayer(ParamStore<S>& ps, const std::string& prefix, int in_, int out_, Rng& rng)
      : in(in_), out(out_) {
    w = ps.add(prefix + ".w", init_normal<S>(rng, {out_, in_}, in_));
    b = ps.add(prefix + ".b", Tensor<S>::zeros({out_}));
  }
  Var<S> operator()(const Binding<S>& bd, Var<S> x) const {
    return linear(x, bd[w], bd[b]);
  }
};

template <typename S>
struct Conv3dLayer {
  int w = -1, b = -1;
  int ci = 0, co = 0;
  ConvSpec spec;

  Conv3dLayer() = default;
  Conv3dLayer(ParamStore<S>& ps, const std::string& prefix, int ci_, int co_,
              ConvSpec spec_, Rng& rng)
      : ci(ci_), co(co_), spec(spec_) {
    int k = ci_ * spec.kt * spec.kh * spec.kw;
    w = ps.add(prefix + ".w", init_normal<S>(rng, {co_, k}, k));
    b = ps.add(prefix + ".b", Tensor<S>::zeros({co_}));
  }
  Var<S> operator()(const Binding<S>& bd, Var<S> x) const {
    return conv3d(x, bd[w], bd[b], spec);
  }
};

template <typename S>
struct GroupNormLayer {
  int gamma = -1, beta = -1;
  int groups = 0;
  S eps = S(1e-5);

  GroupNormLayer() = default;
  GroupNormLayer(ParamStore<S>& ps, const std::string& prefix, int channels, int groups_)
      : groups(groups_) {
    MA_CHECK(channels % groups_ == 0, "channels not divisible by groups");
    gamma = ps.add(prefix + ".gamma", Tensor<S>::full({channels}, S(1)), /*decay=*/false);
    beta = ps.add(prefix + ".beta", Tensor<S>::zeros({channels}), /*decay=*/false);
  }
  Var<S> operator()(const Binding<S>& bd, Var<S> x) const {
    return group_norm(x, bd[gamma], bd[beta], groups, eps);
  }
};

template <typename S>
struct LayerNormLayer {
  int gamma = -1, beta = -1;
  S eps = S(1e-5);

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<S>& ps, const std::string& prefix, int dim) {
    gamma = ps.add(prefix + ".gamma", Tensor<S>::full({dim}, S(1)), /*decay=*/false);
    beta = ps.add(prefix + ".beta", Tensor<S>::zeros({dim}), /*decay=*/false);
  }
  Var<S> operator()(const Binding<S>& bd, Var<S> x) const {
    return layer_norm(x, bd[gamma], bd[beta], eps);
  }
};

// Two-layer MLP head applied to feature rows (the pointwise "two successive
// 1x1 convolutions" form when rows are map cells). linear_mode drops the
// nonlinearity so pooling/projection commutation can be asserted in tests.
template <typename S>
struct ProjectionHead {
  LinearLayer<S> fc1, fc2;
  bool linear_mode = false;

  ProjectionHead() = default;
  ProjectionHead(ParamStore<S>& ps, const std::string& prefix, int in, int hidden,
                 int out, Rng& rng)
      : fc1(ps, prefix + ".fc1", in, hidden, rng), fc2(ps, prefix + ".fc2", hidden, out, rng) {}
  Var<S> operator()(const Binding<S>& bd, Var<S> rows) const {
    Var<S> h = fc1(bd, rows);
    if (!linear_mode) h = relu(h);
    return fc2(bd, h);
  }
};

}  // namespace ma
