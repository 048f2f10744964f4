#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "corrnet/autograd.hpp"
#include "corrnet/config.hpp"
#include "corrnet/rng.hpp"

// Central finite-difference checks of the reverse-mode gradients, always in
// double precision.
namespace corrnet::gradcheck {

/// One randomly drawn instance: leaf tensors that are perturbed and a forward
/// pass reading them. Non-scalar outputs are projected onto fixed random
/// weights before differentiation.
struct Problem {
  std::vector<std::pair<std::string, Var<double>>> leaves;
  std::function<Var<double>(Tape<double>&)> forward;
};

struct Case {
  std::string name;
  bool module = false;            // composite forward rather than a single primitive
  double tolerance = 1e-4;
  double coordinate_fraction = 1.0;  // share of leaf coordinates perturbed
  std::function<Problem(Rng&)> make;
};

struct Options {
  std::size_t seeds = 10;
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
};

struct CheckReport {
  std::string name;
  bool module = false;
  std::size_t seeds = 0;
  double worst = 0.0;  // largest relative error over seeds and leaves
  double tolerance = 0.0;
  std::string worst_leaf;
  std::vector<std::string> ops;  // tape ops replayed by this check

  bool passed() const { return worst < tolerance; }
};

struct SuiteReport {
  std::vector<CheckReport> checks;
  std::vector<std::string> uncovered;  // registered ops never exercised

  bool passed() const;
};

/// Every op name a differentiable primitive can record on a tape.
const std::vector<std::string>& differentiable_ops();

/// Primitive and module checks; module shapes follow cfg's correlation and
/// identification settings on a tiny network.
std::vector<Case> default_cases(const ExperimentConfig& cfg);

/// A primitive whose adjoint is deliberately wrong, for exercising the failure path.
Case corrupted_fixture();

/// max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf, 1e-6), per leaf.
double relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric);

CheckReport run_case(const Case& c, const Options& opts);
SuiteReport run_suite(const std::vector<Case>& cases, const Options& opts);

}  // namespace corrnet::gradcheck
