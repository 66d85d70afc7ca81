#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr double kGradcheckEps = 1e-5;
/// Largest fraction of coordinates a group may leave unchecked because the
/// finite-difference reference was unreliable there.
inline constexpr double kGradcheckMaxSkipFraction = 0.05;

struct GradcheckResult {
  double max_rel_error = 0.0;  // over checked coordinates
  std::size_t checked = 0;
  std::size_t skipped = 0;  // reference unreliable: kink or extreme curvature inside the stencil
};

/// Compares the reverse-mode gradient of scalar `f` against a Richardson
/// extrapolated central difference, (4·D(ε/2) − D(ε)) / 3 with
/// D(h) = (f(x+h) − f(x−h)) / 2h. The error is |g_ad − g_fd| / max(1, |g_fd|).
/// A coordinate is skipped when D(ε) and D(ε/2) disagree by more than
/// kGradcheckTolerance in the same relative sense, since then f is not smooth
/// enough at that scale for the reference to mean anything. `f` must rebuild
/// its graph on every call.
GradcheckResult gradcheck(const std::function<Tensor()>& f, std::span<Tensor> params,
                          double eps = kGradcheckEps);

/// Single-input form: checks ∂f/∂x at `point`.
GradcheckResult gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                          double eps = kGradcheckEps);

struct GradcheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
  std::string error;  // set when evaluation threw
};

/// Runs the finite-difference suite over every op family, each model
/// component and the composed pipeline for every fusion, at `points` random
/// points per group. A group passes when its worst error is below
/// kGradcheckTolerance and at most kGradcheckMaxSkipFraction of its
/// coordinates were skipped. `fault_op` (an op name such as "tanh") flips
/// that op's backward rule for the duration of the call.
std::vector<GradcheckGroup> run_gradcheck_suite(std::uint64_t seed, std::size_t points = 10,
                                                const std::string& fault_op = {});

}  // namespace mmfuse
