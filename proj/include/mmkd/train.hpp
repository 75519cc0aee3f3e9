#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmkd/losses.hpp"
#include "mmkd/modal_net.hpp"
#include "mmkd/synth_data.hpp"

namespace mmkd {

/// SGD or Adam over a fixed parameter list. Moments start at zero and
/// mirror the parameter shapes.
class Optimizer {
 public:
  Optimizer(const DistillConfig& cfg, std::vector<Tensor> params);

  /// Applies one update from the current gradients. Parameters without a
  /// gradient are left unchanged.
  void step();
  void zero_grad();

  OptimizerKind kind() const { return kind_; }
  int steps_taken() const { return steps_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  int steps_ = 0;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_kd = 0.0;
  double loss_mr = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::string role;  // "teacher" or "student"
  /// Losses and accuracy before the first update.
  EpochRecord initial;
  /// One record per epoch, losses averaged over that epoch's training samples.
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::optional<double> test_accuracy;
  DistillConfig config;
  /// Not serialized, so report documents stay reproducible.
  double wall_seconds = 0.0;
};

struct RelationRecord {
  int epoch = 0;
  Matrix3 teacher_gram{};
  Matrix3 student_gram{};
  Matrix3 abs_distance{};
  double frobenius_distance = 0.0;
};

/// Teacher and student relation matrices averaged over a fixed probe set,
/// one record per checkpoint (epoch 0 is the untrained student).
struct RelationTrace {
  ActivationSource source = ActivationSource::Logits;
  bool normalize_rows = false;
  std::size_t probe_size = 0;
  std::vector<RelationRecord> records;

  const RelationRecord& at_epoch(int epoch) const;
};

inline constexpr std::size_t kProbeSize = 64;

/// Fraction of samples whose argmax logit equals the label; ties go to the
/// lowest class index.
double evaluate(const ModalNet& net, const Dataset& ds, ModalityMode mode);

struct TeacherRun {
  ModalNet net;
  TrainReport report;
};

/// Supervised training with the tri-modality cross-entropy only. Returns the
/// best-validation snapshot.
TeacherRun train_teacher(const Dataset& train, const Dataset& val, const DistillConfig& cfg);

struct StudentRun {
  ModalNet net;
  TrainReport report;
  RelationTrace trace;
};

/// Distils a frozen teacher into a fresh student of depth cfg.student_depth
/// (or into `initial_student` when given).
StudentRun distill_student(const ModalNet& teacher, const Dataset& train, const Dataset& val, const DistillConfig& cfg,
                           const std::optional<ModalNet>& initial_student = std::nullopt);

/// Relation record of one (teacher, student) pair over a probe set.
RelationRecord relation_snapshot(const ModalNet& teacher, const ModalNet& student, const Dataset& probe,
                                 const DistillConfig& cfg, int epoch);

struct ComparisonRow {
  std::uint64_t seed = 0;
  std::string arm;  // "KD" (lambda_mr = 0) or "Ours"
  double lambda_mr = 0.0;
  double teacher_val_accuracy = 0.0;
  double teacher_test_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double final_frobenius = 0.0;
};

struct ArmSummary {
  std::string arm;
  double median_val_accuracy = 0.0;
  double median_test_accuracy = 0.0;
  double median_final_frobenius = 0.0;
};

struct ComparisonTable {
  DistillConfig config;
  int num_seeds = 0;
  std::vector<ComparisonRow> rows;
  ArmSummary kd;
  ArmSummary ours;
};

/// Per seed: one teacher, then two students that differ only in lambda_mr
/// (0 for "KD", cfg.lambda_mr for "Ours", 1 if cfg.lambda_mr is 0).
ComparisonTable compare_kd_vs_mr(const Dataset& ds, const DistillConfig& cfg, int num_seeds);

std::string render_table(const ComparisonTable& table);

std::string report_to_json(const TrainReport& report);
std::string trace_to_json(const RelationTrace& trace);
std::string table_to_json(const ComparisonTable& table);

double median(std::vector<double> values);

}  // namespace mmkd
