#include "recon/params.hpp"

#include <cmath>

namespace recon {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw TensorError("ParamStore: duplicate parameter '" + name + "'");
  Entry e;
  e.name = name;
  e.grad = Tensor::zeros(init.shape);
  e.value = std::move(init);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw TensorError("ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw TensorError("ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw TensorError("ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second].grad;
}

const Tensor& ParamStore::grad(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw TensorError("ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second].grad;
}

void ParamStore::zero_grads() {
  for (Entry& e : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

std::unordered_map<std::string, Var> ParamStore::attach(Tape& tape) const {
  std::unordered_map<std::string, Var> vars;
  vars.reserve(entries_.size());
  for (const Entry& e : entries_) vars[e.name] = tape.leaf(e.value, e.name);
  return vars;
}

void ParamStore::pull_grads(const Tape& tape, const std::unordered_map<std::string, Var>& vars) {
  for (Entry& e : entries_) {
    auto it = vars.find(e.name);
    if (it == vars.end()) continue;
    const Tensor* g = tape.grad_of(it->second);
    if (!g) continue;  // unreachable parameter: gradient stays zero
    for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad.data[i] += g->data[i];
    e.grad.quantize();
  }
}

GradCheckReport finite_difference_check(
    const std::function<double(ParamStore&, bool want_grad)>& f, ParamStore& store,
    const GradCheckOptions& opts) {
  if (opts.step <= 0.0) throw TensorError("finite_difference_check: step must be > 0");

  GradCheckReport report;
  if (store.size() == 0) return report;  // vacuous pass

  store.zero_grads();
  const double base = f(store, true);
  const double base2 = f(store, false);
  if (base != base2) {
    throw TensorError("finite_difference_check: objective is not deterministic (" +
                      std::to_string(base) + " vs " + std::to_string(base2) + ")");
  }

  // Snapshot analytic gradients before the perturbation sweeps.
  std::vector<Tensor> analytic;
  for (const auto& e : store.entries()) analytic.push_back(e.grad);

  std::vector<std::pair<std::size_t, std::size_t>> subset = opts.subset;
  if (subset.empty()) {
    for (std::size_t p = 0; p < store.size(); ++p)
      for (std::size_t i = 0; i < store.entries()[p].value.size(); ++i) subset.emplace_back(p, i);
  }

  for (const auto& [p, i] : subset) {
    auto& entry = store.entries()[p];
    const double orig = entry.value.data[i];
    const double h = opts.step * std::max(1.0, std::fabs(orig));
    entry.value.data[i] = orig + h;
    const double fp = f(store, false);
    entry.value.data[i] = orig - h;
    const double fm = f(store, false);
    entry.value.data[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[p].data[i];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), opts.denom_floor});
    GradCheckEntry ge;
    ge.param = entry.name;
    ge.flat_index = i;
    ge.analytic = a;
    ge.numeric = numeric;
    ge.rel_error = std::fabs(a - numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, ge.rel_error);
    report.entries.push_back(std::move(ge));
  }
  report.pass = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace recon
