#pragma once

#include "dfmtl/losses.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace dfmtl {

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double expected = 0.0;
  double error = 0.0;
  double tolerance = 0.0;
};

/// Gradient under test: d loss / d anchor for the multi-instance Info-NCE.
using AnchorGradient = std::function<VecR(const VecR& anchor, const MatR& keys, const PoolIndex& pools,
                                          Temperature<Real> tau)>;

AnchorGradient analytic_anchor_gradient();

/// Central-difference gradient of the Info-NCE loss with step h.
VecR finite_difference_gradient(const VecR& anchor, const MatR& keys, const PoolIndex& pools,
                                Temperature<Real> tau, Real h = 1e-5);

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, 1e-12).
Real relative_error(const VecR& a, const VecR& b);

/// Closed-form loss values on hand-built inputs (tolerance 1e-6).
std::vector<CheckResult> analytic_loss_checks();

/// Finite-difference gradient checks for D in {4,8,32}, queue sizes
/// {2,8,64}, `seeds` seeds each (tolerance 1e-4 relative).
std::vector<CheckResult> gradient_checks(const AnchorGradient& gradient, int seeds = 5);

struct SelfcheckReport {
  std::vector<CheckResult> results;
  bool all_passed() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

SelfcheckReport run_selfcheck(const AnchorGradient& gradient = analytic_anchor_gradient());

}  // namespace dfmtl
