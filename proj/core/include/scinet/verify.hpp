#pragma once

// The embedded oracle suite behind `scinet verify`: every check compares a
// library computation against an independent reference and reports the
// measured error next to its tolerance.

#include <cstdint>
#include <string>
#include <vector>

#include "scinet/scin.hpp"

namespace scinet {

struct CheckResult {
  std::string name;
  double tolerance = 0.0;
  double measured = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  // Epsilon handed to the normalization checks; 0 is a deliberate fault.
  double epsilon = kDefaultEpsilon;
  uint64_t seed = 0x5e1f;
};

// Individual checks, grouped as the suite reports them.
CheckResult check_adain_moments(const VerifyOptions& opts);
CheckResult check_sigma_positive(const VerifyOptions& opts);
CheckResult check_scin_neutrality(const VerifyOptions& opts);
CheckResult check_scin_adain_equivalence(const VerifyOptions& opts);
CheckResult check_style_encoder_oracle(const VerifyOptions& opts);
CheckResult check_cross_attention_oracle(const VerifyOptions& opts);
CheckResult check_attention_rows(const VerifyOptions& opts);
CheckResult check_pe_shapes(const VerifyOptions& opts);
CheckResult check_pe_branch_isolation(const VerifyOptions& opts);
CheckResult check_icl_oracle(const VerifyOptions& opts);
CheckResult check_icl_permutation(const VerifyOptions& opts);
CheckResult check_icl_default_tau(const VerifyOptions& opts);
CheckResult check_gradient_scin(const VerifyOptions& opts);
CheckResult check_gradient_realign(const VerifyOptions& opts);
CheckResult check_gradient_icl(const VerifyOptions& opts);
CheckResult check_gradient_style_loss(const VerifyOptions& opts);
CheckResult check_gradient_style_encoder(const VerifyOptions& opts);
CheckResult check_loss_zero_at_identity(const VerifyOptions& opts);
CheckResult check_total_loss_weights(const VerifyOptions& opts);
CheckResult check_identity_weights(const VerifyOptions& opts);

// Runs every check above in order. A check that throws is reported as failed
// with the exception text.
std::vector<CheckResult> run_verification(const VerifyOptions& opts = {});

// Fixed-width table, one row per check, and a trailing summary line.
std::string format_report(const std::vector<CheckResult>& results);

}  // namespace scinet
