#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dispkit {

/// Outcome of the finite-difference audit of one loss term.
struct GradcheckTermReport {
  std::string term;
  int instances = 0;
  long long compared = 0;       // gradient entries compared after exclusions
  double max_rel_error = 0.0;
};

struct GradcheckOptions {
  int instances = 20;       // random instances per term
  int height = 8;
  int width = 8;
  double step = 1e-6;       // central-difference step (64-bit arithmetic)
  double exclusion = 1e-3;  // radius around sampling-lattice points and L1 kinks
  std::uint64_t seed = 2026;
};

/// Compare the analytic gradient of each loss term with respect to disparity
/// (through the warp where the term samples one) against central finite
/// differences of the same functional. Entries whose sampling coordinates fall
/// within `exclusion` of an integer column, the image border, or an L1 kink
/// are skipped; everything else is compared relative to
/// max(|analytic|, |numeric|, 1e-3 * field scale). Adaptive and edge weights
/// are held fixed, matching their constant treatment in the objective.
std::vector<GradcheckTermReport> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace dispkit
