#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace derain {

// Named learnable parameters with paired gradient buffers. Entry order is
// the registration order and is the canonical order for checkpoints and
// optimizer state.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  int add(std::string name, Tensor init) {
    DERAIN_CHECK(index_.find(name) == index_.end(), ErrorCode::InvalidArgument,
                 "duplicate parameter name ", name);
    int id = int(entries_.size());
    Entry e;
    e.name = std::move(name);
    e.grad = Tensor::zeros(init.shape());
    e.value = std::move(init);
    index_[e.name] = id;
    entries_.push_back(std::move(e));
    return id;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  Entry& at(int id) { return entries_[std::size_t(id)]; }
  const Entry& at(int id) const { return entries_[std::size_t(id)]; }
  int size() const { return int(entries_.size()); }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(0.0f);
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// Lazily registers store entries as tape params, one Var per entry per tape.
// Parameters shared across time steps map to a single Var, so the tape
// accumulates their gradient over every step that uses them.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, ParamStore& store)
      : tape_(&tape), store_(&store), vars_(std::size_t(store.size())) {}

  Var var(int id) {
    Var& v = vars_[std::size_t(id)];
    if (!v.valid()) v = tape_->param(store_->at(id).value, store_->at(id).name);
    return v;
  }

  // store.grad += scale * d(loss)/d(param); untouched parameters contribute 0
  void accumulate_grads(float scale) {
    for (int id = 0; id < store_->size(); ++id) {
      if (!vars_[std::size_t(id)].valid()) continue;
      const Tensor* g = tape_->grad_ptr(vars_[std::size_t(id)]);
      if (!g) continue;
      Tensor& dst = store_->at(id).grad;
      for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += scale * (*g)[i];
    }
  }

 private:
  Tape* tape_;
  ParamStore* store_;
  std::vector<Var> vars_;
};

}  // namespace derain
