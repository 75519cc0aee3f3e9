#pragma once

#include <cstdint>
#include <vector>

#include "mmkd/losses.hpp"

namespace mmkd {

/// |analytic - numeric| / max(1, |analytic|, |numeric|).
double relative_error(double analytic, double numeric);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int trials = 50;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct GradcheckCase {
  int trial = 0;
  RelationMode mode = RelationMode::Gram;
  ActivationSource source = ActivationSource::Logits;
  bool normalize_rows = false;
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
};

struct GradcheckResult {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares backward() against central differences for every student
/// parameter of total_distill_loss on random toy instances (dims <= 8). Each
/// trial checks both relation modes with all four loss terms active.
GradcheckResult run_gradcheck(const GradcheckOptions& options);

/// Max relative error over all student parameters for one fixed instance.
double check_student_gradients(const ModalNet& teacher, const ModalNet& student, const ModalSample& sample,
                               const DistillConfig& cfg, double step);

}  // namespace mmkd
