#include "mmkd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmkd/errors.hpp"
#include "mmkd/rng.hpp"

namespace mmkd {

using nlohmann::json;

Optimizer::Optimizer(const DistillConfig& cfg, std::vector<Tensor> params)
    : kind_(cfg.optimizer),
      lr_(cfg.learning_rate),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_epsilon),
      params_(std::move(params)) {
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw ContractError("optimizer parameters must be leaf tensors");
    if (kind_ == OptimizerKind::Adam) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
}

void Optimizer::step() {
  ++steps_;
  const double bias1 = 1.0 - std::pow(beta1_, steps_);
  const double bias2 = 1.0 - std::pow(beta2_, steps_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    if (kind_ == OptimizerKind::SGD) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
      continue;
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps_);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

const RelationRecord& RelationTrace::at_epoch(int epoch) const {
  for (const auto& r : records) {
    if (r.epoch == epoch) return r;
  }
  throw ContractError("relation trace has no record for epoch " + std::to_string(epoch));
}

double median(std::vector<double> values) {
  if (values.empty()) throw ParameterError("median of an empty list");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double evaluate(const ModalNet& net, const Dataset& ds, ModalityMode mode) {
  if (ds.samples.empty()) throw ParameterError("evaluate: dataset is empty");
  ModalNet frozen = net;
  frozen.set_trainable(false);
  std::size_t correct = 0;
  for (const auto& s : ds.samples) {
    const auto result = forward(frozen, s, mode);
    const auto logits = result.logits.data();
    const auto best = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.samples.size());
}

namespace {

void check_compatible(const ModalNet& net, const Dataset& ds, const char* what) {
  if (net.text_dim() != ds.text_dim || net.image_dim() != ds.image_dim || net.num_classes() < ds.num_classes) {
    throw DimensionError(std::string(what) + " has text_dim=" + std::to_string(net.text_dim()) +
                         ", image_dim=" + std::to_string(net.image_dim()) +
                         ", num_classes=" + std::to_string(net.num_classes()) + " but the data has text_dim=" +
                         std::to_string(ds.text_dim) + ", image_dim=" + std::to_string(ds.image_dim) +
                         ", num_classes=" + std::to_string(ds.num_classes));
  }
}

Matrix3 mean_gram(const std::vector<GramMatrix>& grams) {
  Matrix3 out{};
  for (const auto& g : grams) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) out[i][j] += g.values[i][j];
    }
  }
  const double n = static_cast<double>(grams.size());
  for (auto& row : out) {
    for (auto& v : row) v /= n;
  }
  return out;
}

RelationRecord make_record(int epoch, const Matrix3& teacher, const Matrix3& student) {
  RelationRecord r;
  r.epoch = epoch;
  r.teacher_gram = teacher;
  r.student_gram = student;
  double sq = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double d = teacher[i][j] - student[i][j];
      r.abs_distance[i][j] = std::abs(d);
      sq += d * d;
    }
  }
  r.frobenius_distance = std::sqrt(sq);
  return r;
}

std::vector<GramMatrix> probe_grams(const ModalNet& net, const Dataset& probe, const DistillConfig& cfg) {
  ModalNet frozen = net;
  frozen.set_trainable(false);
  std::vector<GramMatrix> out;
  out.reserve(probe.samples.size());
  for (const auto& s : probe.samples) {
    out.push_back(gram(activations_matrix(frozen, s, cfg.relation_source), cfg.normalize_rows));
  }
  return out;
}

Dataset probe_subset(const Dataset& val) {
  Dataset probe = val;
  if (probe.samples.size() > kProbeSize) probe.samples.resize(kProbeSize);
  return probe;
}

using SampleLoss = std::function<DistillLoss(std::size_t index)>;

// Shared mini-batch loop training `net` in place. `loss_for` builds the loss
// of training sample i on the current weights of `net`; `checkpoint` runs
// after every epoch (and once before training, with epoch 0).
struct LoopResult {
  ModalNet best;
  TrainReport report;
};

LoopResult run_training(ModalNet& net, const Dataset& train, const Dataset& val, const DistillConfig& cfg,
                        const std::string& role, const SampleLoss& loss_for,
                        const std::function<void(int, const ModalNet&)>& checkpoint) {
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n = train.samples.size();
  TrainReport report;
  report.role = role;
  report.config = cfg;

  auto summarize = [&](int epoch, double total, double ce, double kd, double mr) {
    const double count = static_cast<double>(n);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss_total = total / count;
    rec.loss_ce = ce / count;
    rec.loss_kd = kd / count;
    rec.loss_mr = mr / count;
    rec.val_accuracy = evaluate(net, val, ModalityMode::Joint);
    return rec;
  };

  {
    net.set_trainable(false);
    double total = 0, ce = 0, kd = 0, mr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto parts = loss_for(i).parts;
      total += parts.total;
      ce += parts.ce;
      kd += parts.kd;
      mr += parts.mr;
    }
    report.initial = summarize(0, total, ce, kd, mr);
    net.set_trainable(true);
  }
  ModalNet best = net;
  report.best_epoch = 0;
  report.best_val_accuracy = report.initial.val_accuracy;
  if (checkpoint) checkpoint(0, net);

  Optimizer opt(cfg, net.parameters());
  auto rng = make_rng(cfg.seed, streams::kShuffle);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0, ce = 0, kd = 0, mr = 0;
    for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
      const std::size_t stop = std::min(n, start + batch);
      try {
        std::vector<Tensor> losses;
        losses.reserve(stop - start);
        for (std::size_t k = start; k < stop; ++k) {
          auto l = loss_for(order[k]);
          total += l.parts.total;
          ce += l.parts.ce;
          kd += l.parts.kd;
          mr += l.parts.mr;
          losses.push_back(std::move(l.loss));
        }
        const Tensor batch_loss = scale(add_n(losses), 1.0 / static_cast<double>(stop - start));
        opt.zero_grad();
        backward(batch_loss);
        opt.step();
      } catch (const NumericError& e) {
        throw TrainingError(role + " training diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b) + ": " + e.what());
      }
    }
    if (!std::isfinite(total)) {
      throw TrainingError(role + " training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
    }
    auto rec = summarize(epoch, total, ce, kd, mr);
    if (rec.val_accuracy > report.best_val_accuracy) {
      report.best_val_accuracy = rec.val_accuracy;
      report.best_epoch = epoch;
      best.copy_weights_from(net);
    }
    report.epochs.push_back(rec);
    if (checkpoint) checkpoint(epoch, net);
  }
  opt.zero_grad();
  best.set_trainable(false);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(best), std::move(report)};
}

}  // namespace

TeacherRun train_teacher(const Dataset& train, const Dataset& val, const DistillConfig& cfg) {
  cfg.validate();
  train.validate();
  val.validate();
  ModalNet net = new_modal_net(train.text_dim, train.image_dim, cfg.hidden_dim, train.num_classes, cfg.teacher_depth,
                               cfg.seed);
  check_compatible(net, val, "teacher");

  DistillConfig teacher_cfg = cfg;
  teacher_cfg.lambda_kd = 0.0;
  teacher_cfg.lambda_mr = 0.0;
  const auto& samples = train.samples;
  SampleLoss loss_for = [&](std::size_t i) {
    const Tensor ce = tri_modality_ce(net, samples[i], teacher_cfg);
    DistillLoss out{ce, {}};
    out.parts.ce = ce.item();
    out.parts.total = out.parts.ce;
    return out;
  };
  auto result = run_training(net, train, val, teacher_cfg, "teacher", loss_for, {});
  result.report.config = cfg;
  return {std::move(result.best), std::move(result.report)};
}

RelationRecord relation_snapshot(const ModalNet& teacher, const ModalNet& student, const Dataset& probe,
                                 const DistillConfig& cfg, int epoch) {
  if (probe.samples.empty()) throw ParameterError("relation_snapshot: probe set is empty");
  return make_record(epoch, mean_gram(probe_grams(teacher, probe, cfg)), mean_gram(probe_grams(student, probe, cfg)));
}

StudentRun distill_student(const ModalNet& teacher, const Dataset& train, const Dataset& val, const DistillConfig& cfg,
                           const std::optional<ModalNet>& initial_student) {
  cfg.validate();
  train.validate();
  val.validate();
  check_compatible(teacher, train, "teacher");
  check_compatible(teacher, val, "teacher");

  ModalNet frozen = teacher;
  frozen.set_trainable(false);

  ModalNet student = initial_student
                         ? *initial_student
                         : new_modal_net(teacher.text_dim(), teacher.image_dim(), teacher.hidden_dim(),
                                         teacher.num_classes(), cfg.student_depth,
                                         make_rng(cfg.seed, streams::kStudentInit)());
  if (student.text_dim() != teacher.text_dim() || student.image_dim() != teacher.image_dim() ||
      student.num_classes() != teacher.num_classes()) {
    throw DimensionError("student (text_dim=" + std::to_string(student.text_dim()) + ", image_dim=" +
                         std::to_string(student.image_dim()) + ", num_classes=" + std::to_string(student.num_classes()) +
                         ") does not match teacher (text_dim=" + std::to_string(teacher.text_dim()) + ", image_dim=" +
                         std::to_string(teacher.image_dim()) + ", num_classes=" + std::to_string(teacher.num_classes()) +
                         ")");
  }

  std::vector<TeacherOutputs> cached;
  cached.reserve(train.samples.size());
  for (const auto& s : train.samples) cached.push_back(teacher_outputs(frozen, s));

  const Dataset probe = probe_subset(val);
  const Matrix3 teacher_gram = mean_gram(probe_grams(frozen, probe, cfg));

  RelationTrace trace;
  trace.source = cfg.relation_source;
  trace.normalize_rows = cfg.normalize_rows;
  trace.probe_size = probe.samples.size();

  const auto& samples = train.samples;
  SampleLoss loss_for = [&](std::size_t i) { return total_distill_loss(cached[i], student, samples[i], cfg); };
  auto checkpoint = [&](int epoch, const ModalNet& net) {
    trace.records.push_back(make_record(epoch, teacher_gram, mean_gram(probe_grams(net, probe, cfg))));
  };
  auto result = run_training(student, train, val, cfg, "student", loss_for, checkpoint);
  return {std::move(result.best), std::move(result.report), std::move(trace)};
}

ComparisonTable compare_kd_vs_mr(const Dataset& ds, const DistillConfig& cfg, int num_seeds) {
  if (num_seeds < 1) throw ParameterError("num_seeds must be >= 1");
  cfg.validate();
  const auto parts = split(ds, kDefaultSplit, cfg.seed);

  ComparisonTable table;
  table.config = cfg;
  table.num_seeds = num_seeds;
  const double ours_lambda = cfg.lambda_mr > 0.0 ? cfg.lambda_mr : 1.0;
  for (int k = 0; k < num_seeds; ++k) {
    DistillConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(k);
    const auto teacher = train_teacher(parts.train, parts.val, run_cfg);
    const double teacher_val = evaluate(teacher.net, parts.val, ModalityMode::Joint);
    const double teacher_test = evaluate(teacher.net, parts.test, ModalityMode::Joint);
    for (const auto& [arm, lambda] : {std::pair<const char*, double>{"KD", 0.0}, {"Ours", ours_lambda}}) {
      DistillConfig arm_cfg = run_cfg;
      arm_cfg.lambda_mr = lambda;
      const auto student = distill_student(teacher.net, parts.train, parts.val, arm_cfg);
      ComparisonRow row;
      row.seed = run_cfg.seed;
      row.arm = arm;
      row.lambda_mr = lambda;
      row.teacher_val_accuracy = teacher_val;
      row.teacher_test_accuracy = teacher_test;
      row.val_accuracy = evaluate(student.net, parts.val, ModalityMode::Joint);
      row.test_accuracy = evaluate(student.net, parts.test, ModalityMode::Joint);
      row.final_frobenius = student.trace.records.back().frobenius_distance;
      table.rows.push_back(std::move(row));
    }
  }

  auto summarize = [&](const std::string& arm) {
    std::vector<double> val, test, frob;
    for (const auto& r : table.rows) {
      if (r.arm != arm) continue;
      val.push_back(r.val_accuracy);
      test.push_back(r.test_accuracy);
      frob.push_back(r.final_frobenius);
    }
    return ArmSummary{arm, median(val), median(test), median(frob)};
  };
  table.kd = summarize("KD");
  table.ours = summarize("Ours");
  return table;
}

namespace {

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

std::string render_table(const ComparisonTable& table) {
  std::ostringstream out;
  out << "KD vs KD+MR (accuracy %, joint mode), " << table.num_seeds << " seed(s)\n";
  out << pad("seed", 6) << pad("arm", 6) << pad("lambda_mr", 11) << pad("teacher val", 13) << pad("teacher test", 14)
      << pad("val", 9) << pad("test", 9) << pad("rel dist", 12) << "\n";
  for (const auto& r : table.rows) {
    out << pad(std::to_string(r.seed), 6) << pad(r.arm, 6) << pad(fixed(r.lambda_mr, 3), 11)
        << pad(fixed(100 * r.teacher_val_accuracy, 2), 13) << pad(fixed(100 * r.teacher_test_accuracy, 2), 14)
        << pad(fixed(100 * r.val_accuracy, 2), 9) << pad(fixed(100 * r.test_accuracy, 2), 9)
        << pad(fixed(r.final_frobenius, 4), 12) << "\n";
  }
  out << "\n";
  out << pad("median", 12) << pad("val", 9) << pad("test", 9) << pad("rel dist", 12) << "\n";
  for (const auto* s : {&table.kd, &table.ours}) {
    out << pad(s->arm, 12) << pad(fixed(100 * s->median_val_accuracy, 2), 9)
        << pad(fixed(100 * s->median_test_accuracy, 2), 9) << pad(fixed(s->median_final_frobenius, 4), 12) << "\n";
  }
  out << "\nPublished reference at full scale (12-layer UNITER teacher, real datasets; not reproduced here):\n"
      << "  VE   test  KD 71.22  Ours 72.45   val  KD 71.43  Ours 72.66\n"
      << "  NLVR test  KD 73.62  Ours 75.33   val  KD 73.45  Ours 75.06\n"
      << "  HM   test  KD 68.22  Ours 69.54   val  KD 67.89  Ours 69.85\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Documents

namespace {

json matrix_json(const Matrix3& m) {
  json rows = json::array();
  for (const auto& r : m) rows.push_back(json::array({r[0], r[1], r[2]}));
  return rows;
}

json epoch_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss_total", r.train_loss_total},
          {"loss_ce", r.loss_ce},
          {"loss_kd", r.loss_kd},
          {"loss_mr", r.loss_mr},
          {"val_accuracy", r.val_accuracy}};
}

}  // namespace

std::string report_to_json(const TrainReport& report) {
  json doc;
  doc["role"] = report.role;
  doc["initial"] = epoch_json(report.initial);
  json epochs = json::array();
  for (const auto& r : report.epochs) epochs.push_back(epoch_json(r));
  doc["epochs"] = std::move(epochs);
  doc["best_epoch"] = report.best_epoch;
  doc["best_val_accuracy"] = report.best_val_accuracy;
  doc["test_accuracy"] = report.test_accuracy ? json(*report.test_accuracy) : json(nullptr);
  doc["config"] = json::parse(config_to_json(report.config));
  return doc.dump(2) + "\n";
}

std::string trace_to_json(const RelationTrace& trace) {
  json doc;
  doc["source"] = to_string(trace.source);
  doc["normalize_rows"] = trace.normalize_rows;
  doc["probe_size"] = trace.probe_size;
  json records = json::array();
  for (const auto& r : trace.records) {
    records.push_back({{"epoch", r.epoch},
                       {"teacher_gram", matrix_json(r.teacher_gram)},
                       {"student_gram", matrix_json(r.student_gram)},
                       {"abs_distance", matrix_json(r.abs_distance)},
                       {"frobenius_distance", r.frobenius_distance}});
  }
  doc["records"] = std::move(records);
  return doc.dump(2) + "\n";
}

std::string table_to_json(const ComparisonTable& table) {
  json doc;
  doc["num_seeds"] = table.num_seeds;
  doc["config"] = json::parse(config_to_json(table.config));
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"seed", r.seed},
                    {"arm", r.arm},
                    {"lambda_mr", r.lambda_mr},
                    {"teacher_val_accuracy", r.teacher_val_accuracy},
                    {"teacher_test_accuracy", r.teacher_test_accuracy},
                    {"val_accuracy", r.val_accuracy},
                    {"test_accuracy", r.test_accuracy},
                    {"final_frobenius", r.final_frobenius}});
  }
  doc["rows"] = std::move(rows);
  for (const auto* s : {&table.kd, &table.ours}) {
    doc["median"][s->arm] = {{"val_accuracy", s->median_val_accuracy},
                             {"test_accuracy", s->median_test_accuracy},
                             {"final_frobenius", s->median_final_frobenius}};
  }
  return doc.dump(2) + "\n";
}

}  // namespace mmkd
