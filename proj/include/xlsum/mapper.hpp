#pragma once

#include <cstdint>
#include <vector>

#include "xlsum/channel.hpp"
#include "xlsum/precoder.hpp"

namespace xlsum {

/// The candidate processing windows: class c covers [starts[c], starts[c] + window).
struct ClassGrid {
  int antennas = 0;
  int window = 0;
  std::vector<int> starts;

  int classes() const { return static_cast<int>(starts.size()); }
  VisibilityRegion window_of(int cls) const;
};

/// Window i starts at round(i (M - N) / (C - 1)); a single class starts at 0.
ClassGrid build_class_grid(int antennas, int window, int classes);

struct Assignment {
  std::vector<int> class_of;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

SelectionMatrix selection_for(const ClassGrid& grid, const Assignment& a);

/// Classes fully inside the region, or the maximal-overlap classes if none is.
std::vector<int> candidate_classes(const VisibilityRegion& vr,
                                   const ClassGrid& grid);

/// Sum-rate of an assignment through the truncated-ZF pipeline.
SelectionEvaluation evaluate_assignment(const ComplexMatrix& h,
                                        const ClassGrid& grid,
                                        const Assignment& a,
                                        const PowerConfig& power);

struct OracleOptions {
  bool restrict_to_vr = false;
  std::uint64_t budget = 1'000'000;
  int threads = 1;
};

struct OracleResult {
  Assignment assignment;
  double sum_rate = 0.0;
  std::uint64_t space_size = 0;
};

/// Per-user candidate lists: the full grid, or VR candidates when restricted.
std::vector<std::vector<int>> oracle_candidates(const ChannelMatrix& channel,
                                                const ClassGrid& grid,
                                                bool restrict_to_vr);

/// Product of candidate counts, saturating at UINT64_MAX.
std::uint64_t assignment_space_size(
    const std::vector<std::vector<int>>& candidates);

/**
 * Exhaustive search over joint assignments for the sum-rate maximizer.
 *
 * Assignments are enumerated lexicographically (user 0 most significant) and
 * ties resolve to the earliest one, independent of the thread count. Throws
 * BudgetExceeded before evaluating anything if the space is too large, and
 * AllInfeasible when no assignment yields a solvable precoder.
 */
OracleResult exhaustive_oracle(const ChannelMatrix& channel,
                               const ClassGrid& grid, const PowerConfig& power,
                               const OracleOptions& options = {});

/// Each user picks the class holding the most channel energy; ties -> lowest.
Assignment energy_greedy_baseline(const ComplexMatrix& h,
                                  const ClassGrid& grid);

struct EffectiveWindow {
  int user = 0;
  VisibilityRegion antennas;
  std::vector<int> co_users;  // ascending, includes user
};

EffectiveWindow effective_window(int user,
                                 const std::vector<VisibilityRegion>& vrs);

}  // namespace xlsum
