#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "mmkd/modal_net.hpp"

namespace mmkd {

enum class RelationMode { Gram, RawActivations };
enum class OptimizerKind { Adam, SGD };

std::string_view to_string(RelationMode mode);
RelationMode relation_mode_from_string(std::string_view name);
std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view name);

/// Every tunable of a teacher or distillation run.
struct DistillConfig {
  // Weights of the text-only, image-only and joint cross-entropy terms.
  double alpha = 1.0 / 3.0;
  double beta = 1.0 / 3.0;
  double gamma = 1.0 / 3.0;
  double temperature = 2.0;
  double lambda_kd = 1.0;
  double lambda_mr = 1.0;
  RelationMode relation_mode = RelationMode::Gram;
  ActivationSource relation_source = ActivationSource::Logits;
  bool normalize_rows = true;

  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;

  // Architecture. The student reuses the teacher's hidden width.
  int hidden_dim = 32;
  int teacher_depth = 6;
  int student_depth = 1;

  /// Throws ParameterError naming the first invalid field.
  void validate() const;

  friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

/// JSON document with exactly the DistillConfig field names. Missing fields
/// keep their defaults; unknown fields are rejected.
std::string config_to_json(const DistillConfig& cfg);
DistillConfig config_from_json(std::string_view document);

using Matrix3 = std::array<std::array<double, 3>, 3>;

/// Value snapshot of a 3x3 modality relation matrix.
struct GramMatrix {
  Matrix3 values{};

  double max_asymmetry() const;
  /// Smallest eigenvalue of the symmetric part, closed form for 3x3.
  double min_eigenvalue() const;
  bool is_symmetric(double tol = 1e-12) const { return max_asymmetry() <= tol; }
  bool is_psd(double tol = 1e-8) const { return min_eigenvalue() >= -tol; }

  static GramMatrix from_tensor(const Tensor& g);
};

/// T^2 * KL(softmax(teacher/T) || softmax(student/T)). The teacher side is
/// treated as a constant.
Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double temperature);

/// -log softmax(logits)[label].
Tensor ce_loss(const Tensor& logits, int label);

/// alpha*CE(text) + beta*CE(image) + gamma*CE(joint).
Tensor tri_modality_ce(const ModalNet& student, const ModalSample& sample, const DistillConfig& cfg);
Tensor tri_modality_ce(const std::array<ForwardResult, 3>& passes, int label, const DistillConfig& cfg);

/// Differentiable A * A^T, optionally after L2-normalizing each row of A.
Tensor gram_tensor(const Tensor& activations, bool normalize_rows);
GramMatrix gram(const ModalityActivations& acts, bool normalize_rows);

/// MSE between teacher and student relation representations: Gram matrices
/// (9 entries) or raw activation matrices (3*D entries).
Tensor relation_loss(const ModalityActivations& teacher_acts, const ModalityActivations& student_acts,
                     const DistillConfig& cfg);

/// Constant per-mode teacher outputs, computed once and reused.
struct TeacherOutputs {
  std::array<Tensor, 3> logits;
  std::array<Tensor, 3> hidden;
};

TeacherOutputs teacher_outputs(const ModalNet& teacher, const ModalSample& sample);

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double kd = 0.0;  // mean over the three modality passes
  double mr = 0.0;
};

struct DistillLoss {
  Tensor loss;
  LossBreakdown parts;
};

/// ce + lambda_kd * kd + lambda_mr * mr for one sample.
DistillLoss total_distill_loss(const ModalNet& teacher, const ModalNet& student, const ModalSample& sample,
                               const DistillConfig& cfg);
DistillLoss total_distill_loss(const TeacherOutputs& teacher, const ModalNet& student, const ModalSample& sample,
                               const DistillConfig& cfg);

}  // namespace mmkd
