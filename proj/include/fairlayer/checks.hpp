#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairlayer/constraints.hpp"
#include "fairlayer/projection.hpp"
#include "fairlayer/rng.hpp"

namespace fairlayer {

struct CheckResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;      // worst observed value of the checked quantity
  double threshold = 0.0;  // bound it must respect
  std::string detail;
};

/// Feasible random instance: a constraint mix anchored at a known interior
/// point, plus a raw input displaced from it.
struct RandomInstance {
  ConstraintSet<double> C;
  VecXd z;
  VecXd anchor;
};

/// Mixes halfspaces, parity pairs, residual pairs, boxes and equality rows,
/// each arranged to hold at a sampled anchor point so the set is feasible.
RandomInstance make_random_instance(CounterRng& rng, Index n_max = 16, Index q_max = 10,
                                    bool with_equalities = true);

// Property suites. Seeds fix the instance streams; each returns one line per
// checked property.
CheckResult check_oracle_equivalence(std::uint64_t seed, int instances = 100);
CheckResult check_jvp_finite_difference(std::uint64_t seed, int instances = 100);
CheckResult check_adjoint_consistency(std::uint64_t seed, int instances = 100);
CheckResult check_network_gradient(std::uint64_t seed);
std::vector<CheckResult> check_lipschitz(std::uint64_t seed, Index pairs_per_family = 1000);
std::vector<CheckResult> check_spectral(std::uint64_t seed, int instances = 100);
CheckResult check_local_affineness(std::uint64_t seed, int instances = 40,
                                   int probes_per_instance = 50);
std::vector<CheckResult> check_lemma1(std::uint64_t seed, int trials = 1000);
std::vector<CheckResult> check_thm2_stream(std::uint64_t seed, Index horizon = 5000);

/// Named suite for the command line: kkt, spectral, lipschitz, lemma1, thm2,
/// oracle, or all.
std::vector<CheckResult> run_check_suite(const std::string& suite, std::uint64_t seed);

}  // namespace fairlayer
