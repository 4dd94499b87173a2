#include "xlsum/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "xlsum/errors.hpp"

namespace xlsum {

VisibilityRegion ClassGrid::window_of(int cls) const {
  return {starts.at(static_cast<std::size_t>(cls)), window};
}

ClassGrid build_class_grid(int antennas, int window, int classes) {
  if (window < 1 || window > antennas) {
    throw InvalidConfig("window size must lie in [1, M]");
  }
  if (classes < 1) throw InvalidConfig("need at least one class");
  ClassGrid grid;
  grid.antennas = antennas;
  grid.window = window;
  const long span = antennas - window;
  for (int i = 0; i < classes; ++i) {
    if (classes == 1) {
      grid.starts.push_back(0);
      break;
    }
    // round(i * span / (C - 1)), halves rounded up, in exact integer arithmetic
    const long den = classes - 1;
    grid.starts.push_back(static_cast<int>((2 * i * span + den) / (2 * den)));
  }
  return grid;
}

SelectionMatrix selection_for(const ClassGrid& grid, const Assignment& a) {
  const int users = static_cast<int>(a.class_of.size());
  SelectionMatrix s = SelectionMatrix::zeros(grid.antennas, users);
  for (int k = 0; k < users; ++k) {
    const int cls = a.class_of[static_cast<std::size_t>(k)];
    if (cls < 0 || cls >= grid.classes()) {
      throw InvalidConfig("assignment class " + std::to_string(cls) +
                          " outside the grid");
    }
    const VisibilityRegion w = grid.window_of(cls);
    s.mask.block(w.start, k, w.length, 1).setOnes();
  }
  return s;
}

std::vector<int> candidate_classes(const VisibilityRegion& vr,
                                   const ClassGrid& grid) {
  std::vector<int> inside;
  int best_overlap = 0;
  for (int c = 0; c < grid.classes(); ++c) {
    const VisibilityRegion w = grid.window_of(c);
    if (w.start >= vr.start && w.end() <= vr.end()) inside.push_back(c);
    best_overlap = std::max(best_overlap, w.overlap(vr));
  }
  if (!inside.empty()) return inside;
  std::vector<int> fallback;
  for (int c = 0; c < grid.classes(); ++c) {
    if (grid.window_of(c).overlap(vr) == best_overlap) fallback.push_back(c);
  }
  return fallback;
}

SelectionEvaluation evaluate_assignment(const ComplexMatrix& h,
                                        const ClassGrid& grid,
                                        const Assignment& a,
                                        const PowerConfig& power) {
  return evaluate_selection(h, selection_for(grid, a), power);
}

std::vector<std::vector<int>> oracle_candidates(const ChannelMatrix& channel,
                                                const ClassGrid& grid,
                                                bool restrict_to_vr) {
  std::vector<std::vector<int>> out;
  for (int k = 0; k < channel.users_count(); ++k) {
    if (restrict_to_vr) {
      out.push_back(
          candidate_classes(channel.vrs.at(static_cast<std::size_t>(k)), grid));
    } else {
      std::vector<int> all(static_cast<std::size_t>(grid.classes()));
      for (int c = 0; c < grid.classes(); ++c) all[static_cast<std::size_t>(c)] = c;
      out.push_back(std::move(all));
    }
  }
  return out;
}

std::uint64_t assignment_space_size(
    const std::vector<std::vector<int>>& candidates) {
  std::uint64_t size = 1;
  for (const auto& c : candidates) {
    const std::uint64_t n = c.size();
    if (n == 0) return 0;
    if (size > std::numeric_limits<std::uint64_t>::max() / n) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    size *= n;
  }
  return size;
}

namespace {

struct ScanBest {
  double value = -std::numeric_limits<double>::infinity();
  std::uint64_t index = std::numeric_limits<std::uint64_t>::max();
};

Assignment decode(std::uint64_t index,
                  const std::vector<std::vector<int>>& candidates) {
  Assignment a;
  a.class_of.resize(candidates.size());
  for (std::size_t k = candidates.size(); k-- > 0;) {
    const std::uint64_t n = candidates[k].size();
    a.class_of[k] = candidates[k][index % n];
    index /= n;
  }
  return a;
}

ScanBest scan_range(const ChannelMatrix& channel, const ClassGrid& grid,
                    const PowerConfig& power,
                    const std::vector<std::vector<int>>& candidates,
                    std::uint64_t begin, std::uint64_t end) {
  ScanBest best;
  for (std::uint64_t q = begin; q < end; ++q) {
    const double value =
        evaluate_assignment(channel.h, grid, decode(q, candidates), power)
            .sum_rate;
    if (value > best.value) {
      best.value = value;
      best.index = q;
    }
  }
  return best;
}

}  // namespace

OracleResult exhaustive_oracle(const ChannelMatrix& channel,
                               const ClassGrid& grid, const PowerConfig& power,
                               const OracleOptions& options) {
  if (channel.antennas() != grid.antennas) {
    throw DimensionMismatch("oracle: grid and channel antenna counts differ");
  }
  power.validate(channel.users_count());
  const auto candidates =
      oracle_candidates(channel, grid, options.restrict_to_vr);
  const std::uint64_t space = assignment_space_size(candidates);
  if (space > options.budget) throw BudgetExceeded(space, options.budget);

  const std::uint64_t workers = std::clamp<std::uint64_t>(
      static_cast<std::uint64_t>(std::max(options.threads, 1)), 1, space);
  std::vector<ScanBest> partial(workers);
  if (workers == 1) {
    partial[0] = scan_range(channel, grid, power, candidates, 0, space);
  } else {
    std::vector<std::jthread> pool;
    for (std::uint64_t w = 0; w < workers; ++w) {
      const std::uint64_t begin = space * w / workers;
      const std::uint64_t end = space * (w + 1) / workers;
      pool.emplace_back([&, w, begin, end] {
        partial[w] = scan_range(channel, grid, power, candidates, begin, end);
      });
    }
  }
  // Chunks are ordered, so a strict comparison keeps the earliest maximizer.
  ScanBest best;
  for (const ScanBest& p : partial) {
    if (p.value > best.value) best = p;
  }
  if (best.index == std::numeric_limits<std::uint64_t>::max()) {
    throw AllInfeasible("oracle: every assignment is infeasible");
  }
  OracleResult out;
  out.assignment = decode(best.index, candidates);
  out.sum_rate = best.value;
  out.space_size = space;
  return out;
}

Assignment energy_greedy_baseline(const ComplexMatrix& h,
                                  const ClassGrid& grid) {
  Assignment a;
  for (Eigen::Index k = 0; k < h.cols(); ++k) {
    int best_class = 0;
    double best_energy = -1.0;
    for (int c = 0; c < grid.classes(); ++c) {
      const VisibilityRegion w = grid.window_of(c);
      const double energy = h.col(k).segment(w.start, w.length).squaredNorm();
      if (energy > best_energy) {
        best_energy = energy;
        best_class = c;
      }
    }
    a.class_of.push_back(best_class);
  }
  return a;
}

EffectiveWindow effective_window(int user,
                                 const std::vector<VisibilityRegion>& vrs) {
  const VisibilityRegion& target = vrs.at(static_cast<std::size_t>(user));
  EffectiveWindow ew;
  ew.user = user;
  int lo = target.start;
  int hi = target.end();
  for (int j = 0; j < static_cast<int>(vrs.size()); ++j) {
    const VisibilityRegion& other = vrs[static_cast<std::size_t>(j)];
    if (j == user || other.overlap(target) > 0) {
      ew.co_users.push_back(j);
      lo = std::min(lo, other.start);
      hi = std::max(hi, other.end());
    }
  }
  ew.antennas = {lo, hi - lo};
  return ew;
}

}  // namespace xlsum
