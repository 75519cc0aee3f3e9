#include "mmkd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mmkd/errors.hpp"

namespace mmkd {

std::string_view to_string(RelationMode mode) { return mode == RelationMode::Gram ? "gram" : "raw"; }

RelationMode relation_mode_from_string(std::string_view name) {
  if (name == "gram") return RelationMode::Gram;
  if (name == "raw") return RelationMode::RawActivations;
  throw ParameterError("unknown relation mode '" + std::string(name) + "' (expected gram or raw)");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::SGD;
  throw ParameterError("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

void DistillConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError(std::string(name) + " must be >= 0");
  };
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string(name) + " must be > 0");
  };
  nonneg(alpha, "alpha");
  nonneg(beta, "beta");
  nonneg(gamma, "gamma");
  nonneg(lambda_kd, "lambda_kd");
  nonneg(lambda_mr, "lambda_mr");
  positive(temperature, "temperature");
  positive(learning_rate, "learning_rate");
  positive(adam_epsilon, "adam_epsilon");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ParameterError("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ParameterError("adam_beta2 must be in [0, 1)");
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (hidden_dim < 1) throw ParameterError("hidden_dim must be >= 1");
  if (teacher_depth < 1) throw ParameterError("teacher_depth must be >= 1");
  if (student_depth < 1) throw ParameterError("student_depth must be >= 1");
}

// ---------------------------------------------------------------------------

double GramMatrix::max_asymmetry() const {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(values[i][j] - values[j][i]));
  }
  return worst;
}

double GramMatrix::min_eigenvalue() const {
  std::array<std::array<double, 3>, 3> a{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) a[i][j] = 0.5 * (values[i][j] + values[j][i]);
  }
  // Cyclic Jacobi rotations.
  for (int sweep = 0; sweep < 50; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off == 0.0) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  return std::min({a[0][0], a[1][1], a[2][2]});
}

GramMatrix GramMatrix::from_tensor(const Tensor& g) {
  if (g.shape() != Shape{3, 3}) throw DimensionError("GramMatrix needs a 3x3 tensor, got " + shape_to_string(g.shape()));
  GramMatrix out;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) out.values[i][j] = g.at(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double temperature) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw DimensionError("kd_loss: teacher logits " + shape_to_string(teacher_logits.shape()) +
                         " vs student logits " + shape_to_string(student_logits.shape()));
  }
  const Tensor teacher = teacher_logits.detach();
  const Tensor p_teacher = softmax_t(teacher, temperature);
  const Tensor log_p_teacher = log_softmax_t(teacher, temperature);
  const Tensor log_p_student = log_softmax_t(student_logits, temperature);
  const Tensor kl = sum(mul(p_teacher, sub(log_p_teacher, log_p_student)));
  return scale(kl, temperature * temperature);
}

Tensor ce_loss(const Tensor& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw DataError("ce_loss: label " + std::to_string(label) + " out of range for " +
                    std::to_string(logits.size()) + " classes");
  }
  return scale(pick(log_softmax_t(logits, 1.0), static_cast<std::size_t>(label)), -1.0);
}

Tensor tri_modality_ce(const std::array<ForwardResult, 3>& passes, int label, const DistillConfig& cfg) {
  const std::array<Tensor, 3> terms = {scale(ce_loss(passes[0].logits, label), cfg.alpha),
                                       scale(ce_loss(passes[1].logits, label), cfg.beta),
                                       scale(ce_loss(passes[2].logits, label), cfg.gamma)};
  return add_n(terms);
}

Tensor tri_modality_ce(const ModalNet& student, const ModalSample& sample, const DistillConfig& cfg) {
  return tri_modality_ce(forward_all_modes(student, sample), sample.label, cfg);
}

Tensor gram_tensor(const Tensor& activations, bool normalize) {
  const Tensor a = normalize ? normalize_rows(activations) : activations;
  return matmul(a, transpose(a));
}

GramMatrix gram(const ModalityActivations& acts, bool normalize) {
  return GramMatrix::from_tensor(gram_tensor(acts.values.detach(), normalize));
}

Tensor relation_loss(const ModalityActivations& teacher_acts, const ModalityActivations& student_acts,
                     const DistillConfig& cfg) {
  const Tensor teacher = teacher_acts.values.detach();
  const Tensor& student = student_acts.values;
  if (teacher.rank() != 2 || student.rank() != 2 || teacher.rows() != 3 || student.rows() != 3) {
    throw DimensionError("relation_loss: activations must have 3 rows, got " + shape_to_string(teacher.shape()) +
                         " and " + shape_to_string(student.shape()));
  }
  if (cfg.relation_mode == RelationMode::RawActivations) {
    if (teacher.shape() != student.shape()) {
      throw DimensionError("relation_loss: raw mode needs equal activation widths, got teacher " +
                           shape_to_string(teacher.shape()) + " and student " + shape_to_string(student.shape()) +
                           "; use relation_mode=gram for mismatched widths");
    }
    return mean(square(sub(teacher, student)));
  }
  return mean(square(sub(gram_tensor(teacher, cfg.normalize_rows), gram_tensor(student, cfg.normalize_rows))));
}

TeacherOutputs teacher_outputs(const ModalNet& teacher, const ModalSample& sample) {
  TeacherOutputs out;
  for (auto mode : kModalityModes) {
    auto r = forward(teacher, sample, mode);
    const auto i = static_cast<std::size_t>(mode);
    out.logits[i] = r.logits.detach();
    out.hidden[i] = r.hidden.detach();
  }
  return out;
}

DistillLoss total_distill_loss(const TeacherOutputs& teacher, const ModalNet& student, const ModalSample& sample,
                               const DistillConfig& cfg) {
  const auto passes = forward_all_modes(student, sample);
  const Tensor ce = tri_modality_ce(passes, sample.label, cfg);

  std::array<Tensor, 3> kd_terms;
  for (std::size_t i = 0; i < 3; ++i) kd_terms[i] = kd_loss(teacher.logits[i], passes[i].logits, cfg.temperature);
  const Tensor kd = scale(add_n(kd_terms), 1.0 / 3.0);

  const auto& teacher_rows = cfg.relation_source == ActivationSource::Logits ? teacher.logits : teacher.hidden;
  const ModalityActivations teacher_acts{stack_rows(teacher_rows), cfg.relation_source};
  const ModalityActivations student_acts = activations_from(passes, cfg.relation_source);
  const Tensor mr = relation_loss(teacher_acts, student_acts, cfg);

  const std::array<Tensor, 3> parts = {ce, scale(kd, cfg.lambda_kd), scale(mr, cfg.lambda_mr)};
  DistillLoss out{add_n(parts), {}};
  out.parts.ce = ce.item();
  out.parts.kd = kd.item();
  out.parts.mr = mr.item();
  out.parts.total = out.loss.item();
  return out;
}

DistillLoss total_distill_loss(const ModalNet& teacher, const ModalNet& student, const ModalSample& sample,
                               const DistillConfig& cfg) {
  if (teacher.text_dim() != student.text_dim() || teacher.image_dim() != student.image_dim() ||
      teacher.num_classes() != student.num_classes()) {
    throw DimensionError("teacher (text_dim=" + std::to_string(teacher.text_dim()) + ", image_dim=" +
                         std::to_string(teacher.image_dim()) + ", num_classes=" + std::to_string(teacher.num_classes()) +
                         ") and student (text_dim=" + std::to_string(student.text_dim()) + ", image_dim=" +
                         std::to_string(student.image_dim()) + ", num_classes=" +
                         std::to_string(student.num_classes()) + ") are incompatible");
  }
  return total_distill_loss(teacher_outputs(teacher, sample), student, sample, cfg);
}

}  // namespace mmkd
