#pragma once

#include <string>
#include <vector>

namespace kwd {

// One named block of runtime checks. Suites collect failures instead of
// throwing so a broken build reports everything wrong at once.
struct CheckSuite {
  std::string name;
  int checks = 0;
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok) failures.push_back(what);
  }
};

// Oracle and property suites. Each is self-contained and deterministic;
// `check_formats` writes scratch files under `scratch_dir`.
CheckSuite check_infonce_oracle();    // vs an independent softmax cross-entropy oracle
CheckSuite check_cld_oracle();        // vs an independent k-way softmax cross-entropy oracle
CheckSuite check_gradients();         // finite differences: every layer kind, normalisation, both losses
CheckSuite check_momentum_ema();      // closed-form geometric decay and endpoint behaviour
CheckSuite check_queue_fifo();        // randomized push programs vs a tail-of-stream oracle
CheckSuite check_kmeans();            // inertia monotonicity, assignment consistency, unit centroids
CheckSuite check_controlled_views();  // shared/varied parameter contract over many triplets
CheckSuite check_augment();           // transform algebra: rotations, blur, jitter, flip frequency
CheckSuite check_schedule();          // SGD and cosine closed forms, finite-difference harness
CheckSuite check_metrics();           // definitional cases plus a brute-force recount oracle
CheckSuite check_formats(const std::string& scratch_dir);  // byte-exact file round-trips

std::vector<CheckSuite> run_all_checks(const std::string& scratch_dir);

}  // namespace kwd
