#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tbgc/autodiff.hpp"
#include "tbgc/error.hpp"
#include "tbgc/tensor.hpp"

namespace tbgc {

// Which part of the model a parameter belongs to: the shared backbone, or the
// exclusive head of one task. The backbone/head partition is what the
// backbone-oriented clip operates on.
struct Role {
  enum class Kind { Backbone, Head };

  Kind kind = Kind::Backbone;
  std::string task; // nonempty iff Head

  static Role backbone() { return Role{Kind::Backbone, ""}; }
  static Role head(std::string task_id) {
    if (task_id.empty()) throw Error("head role requires a task id");
    return Role{Kind::Head, std::move(task_id)};
  }

  bool is_backbone() const { return kind == Kind::Backbone; }

  std::string str() const { return is_backbone() ? "backbone" : "head:" + task; }

  static Role parse(const std::string& s) {
    if (s == "backbone") return backbone();
    if (s.rfind("head:", 0) == 0 && s.size() > 5) return head(s.substr(5));
    throw Error("unknown role '" + s + "'");
  }

  friend bool operator==(const Role& a, const Role& b) {
    return a.kind == b.kind && a.task == b.task;
  }
};

// Ordered, named parameter tensors, each tagged with a role. Iteration order
// is insertion order everywhere so runs are reproducible.
class ParamStore {
public:
  void add(const std::string& name, Role role, Tensor value) {
    if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, std::move(role), std::move(value)});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& value(const std::string& name) { return entries_[checked_index(name)].value; }
  const Role& role(const std::string& name) const { return entry(name).role; }

  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  bool has_backbone() const {
    for (const auto& e : entries_) {
      if (e.role.is_backbone()) return true;
    }
    return false;
  }

  std::vector<std::string> task_ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (!e.role.is_backbone() && std::find(out.begin(), out.end(), e.role.task) == out.end()) {
        out.push_back(e.role.task);
      }
    }
    return out;
  }

private:
  struct Entry {
    std::string name;
    Role role;
    Tensor value;
  };

  std::size_t checked_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  const Entry& entry(const std::string& name) const { return entries_[checked_index(name)]; }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Registers (or fetches) a store parameter as a differentiable tape leaf.
inline Var param(Tape& tape, const ParamStore& store, const std::string& name) {
  return tape.leaf(name, store.value(name));
}

// Checks that a gradient map only names store parameters with matching shapes.
inline void check_aligned(const GradMap& grads, const ParamStore& store) {
  for (const auto& [name, g] : grads) {
    if (!store.has(name)) throw AlignmentError("gradient for unknown parameter '" + name + "'");
    if (!store.value(name).same_shape(g)) {
      throw AlignmentError("gradient shape " + g.shape_string() + " vs parameter " +
                           store.value(name).shape_string() + " for '" + name + "'");
    }
  }
}

} // namespace tbgc
