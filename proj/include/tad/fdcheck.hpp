#pragma once

// Finite-difference oracle behind the gradient checks (test suite and the
// `gradcheck` CLI subcommand): rebuilds the graph under coordinate
// perturbations and compares central differences against the recorded
// backward gradients.

#include "tad/ndgrad.hpp"
#include "tad/params.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace tad {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t unreliable = 0;  // skipped: the FD oracle disagreed with itself
  std::string worst;  // "name[i] analytic=... fd=..." for the max_rel coordinate
};

inline FdResult fd_check(std::vector<Array> inputs, const Builder& builder,
                         double h = 1e-5, double floor = 1e-8) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (auto& a : inputs) leaves.push_back(tape.leaf(a, true));
  Var loss = builder(tape, leaves);
  tape.backward(loss);
  std::vector<Array> analytic;
  analytic.reserve(leaves.size());
  for (auto& v : leaves) analytic.push_back(v.grad());

  auto eval = [&](const std::vector<Array>& ins) {
    Tape t2;
    std::vector<Var> ls;
    ls.reserve(ins.size());
    for (const auto& a : ins) ls.push_back(t2.leaf(a, true));
    return builder(t2, ls).item();
  };

  FdResult r;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    for (std::size_t i = 0; i < inputs[n].size(); ++i) {
      const double keep = inputs[n].data[i];
      inputs[n].data[i] = keep + h;
      const double lp = eval(inputs);
      inputs[n].data[i] = keep - h;
      const double lm = eval(inputs);
      inputs[n].data[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[n].data[i];
      if (std::abs(an) <= floor && std::abs(fd) <= floor) continue;
      const double rel = std::abs(an - fd) / std::max(std::abs(an), std::abs(fd));
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = "input" + std::to_string(n) + "[" + std::to_string(i) +
                  "] analytic=" + std::to_string(an) + " fd=" + std::to_string(fd);
      }
      ++r.checked;
    }
  }
  return r;
}

// Same idea, but perturbing every trainable parameter in a store. The builder
// sees a fresh tape + binding each evaluation; stateful builders can record
// boundary values (masks, detached segments) on the first call and replay
// them afterwards so the finite differences probe the recorded function.
//
// With `tol` set, each coordinate is probed at h and h/2 first; when the two
// estimates disagree beyond a quarter of the tolerance band the FD oracle
// itself is unusable there (a min/max/interp kink inside the stencil, or a
// gradient below the 64-bit roundoff floor) and the coordinate is counted as
// unreliable instead of compared.
using ModelBuilder = std::function<Var(Tape&, const ParamBinding&)>;

inline FdResult fd_check_params(ParamStore& store, const ModelBuilder& builder,
                                double h = 1e-5, double floor = 1e-8,
                                double tol = 0.0) {
  Tape tape;
  ParamBinding binding(tape, store);
  Var loss = builder(tape, binding);
  tape.backward(loss);
  auto analytic = binding.grads();

  auto eval = [&]() {
    Tape t2;
    ParamBinding b2(t2, store);
    return builder(t2, b2).item();
  };

  FdResult r;
  for (const auto& name : store.names()) {
    Array& value = store.get(name);
    const Array& an = analytic.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value.data[i];
      auto central = [&](double step) {
        value.data[i] = keep + step;
        const double lp = eval();
        value.data[i] = keep - step;
        const double lm = eval();
        value.data[i] = keep;
        return (lp - lm) / (2.0 * step);
      };
      double fd = central(h);
      if (tol > 0.0) {
        const double fd_half = central(h / 2.0);
        if (std::abs(an.data[i]) <= floor && std::abs(fd) <= floor &&
            std::abs(fd_half) <= floor)
          continue;
        if (std::abs(fd - fd_half) >
            0.25 * tol * std::max(std::abs(fd), std::abs(fd_half))) {
          ++r.unreliable;
          continue;
        }
        fd = fd_half;
      }
      if (std::abs(an.data[i]) <= floor && std::abs(fd) <= floor) continue;
      const double rel =
          std::abs(an.data[i] - fd) / std::max(std::abs(an.data[i]), std::abs(fd));
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = name + "[" + std::to_string(i) + "] analytic=" +
                  std::to_string(an.data[i]) + " fd=" + std::to_string(fd);
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace tad
