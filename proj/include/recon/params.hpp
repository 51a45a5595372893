#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "recon/tape.hpp"
#include "recon/tensor.hpp"

namespace recon {

// Named parameter tensors with one gradient slot each. Iteration order is
// insertion order, which is deterministic given identical construction.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grads();
  std::size_t scalar_count() const;

  // Creates one leaf per parameter on the tape; returns handles keyed by name.
  std::unordered_map<std::string, Var> attach(Tape& tape) const;
  // Adds the tape gradients of the attached leaves into the grad slots.
  void pull_grads(const Tape& tape, const std::unordered_map<std::string, Var>& vars);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct GradCheckEntry {
  std::string param;
  std::size_t flat_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  // Absolute floor used in the relative-error denominator so that near-zero
  // gradient pairs are compared absolutely. Kept well above the difference
  // noise floor (~eps*|f|/step) so roundoff cannot masquerade as a gradient
  // bug.
  double denom_floor = 1e-3;
  // Optional subset: indices into the flattened parameter list to probe
  // ((param index, flat offset) pairs). Empty means every scalar.
  std::vector<std::pair<std::size_t, std::size_t>> subset;
};

// Central-difference check of analytic gradients. `f` must populate the
// grad slots of `store` when `want_grad` is true and always return the
// scalar objective. Throws if two identical evaluations disagree.
GradCheckReport finite_difference_check(
    const std::function<double(ParamStore&, bool want_grad)>& f, ParamStore& store,
    const GradCheckOptions& opts);

}  // namespace recon
