#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mmkd/errors.hpp"
#include "mmkd/train.hpp"

using namespace mmkd;

namespace {

DistillConfig small_config() {
  DistillConfig cfg;
  cfg.epochs = 3;
  cfg.hidden_dim = 8;
  cfg.teacher_depth = 2;
  cfg.batch_size = 16;
  cfg.seed = 4;
  return cfg;
}

struct Fixture {
  DatasetSplits parts = split(generate(300, 4, 4, 3, 0.1, 1), kDefaultSplit, 1);
  DistillConfig cfg = small_config();
};

}  // namespace

TEST_CASE("optimizer state mirrors parameters") {
  const auto net = new_modal_net(2, 2, 3, 2, 1, 0);
  DistillConfig cfg;
  Optimizer adam(cfg, net.parameters());
  REQUIRE(adam.first_moments().size() == net.parameters().size());
  for (std::size_t k = 0; k < net.parameters().size(); ++k) {
    CHECK(adam.first_moments()[k].size() == net.parameters()[k].size());
    CHECK(adam.second_moments()[k].size() == net.parameters()[k].size());
    for (double m : adam.first_moments()[k]) CHECK(m == 0.0);
    for (double v : adam.second_moments()[k]) CHECK(v == 0.0);
  }
  cfg.optimizer = OptimizerKind::SGD;
  CHECK(Optimizer(cfg, net.parameters()).kind() == OptimizerKind::SGD);
}

TEST_CASE("adam first step moves each weight by about lr") {
  auto w = Tensor::vector({1.0, -2.0}, true);
  DistillConfig cfg;
  cfg.learning_rate = 0.01;
  Optimizer adam(cfg, {w});
  backward(sum(mul(w, Tensor::vector({3.0, -0.5}))));
  adam.step();
  CHECK(w.at(0) == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(w.at(1) == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(adam.steps_taken() == 1);
}

TEST_CASE("zero epochs is rejected") {
  Fixture f;
  f.cfg.epochs = 0;
  CHECK_THROWS_AS(train_teacher(f.parts.train, f.parts.val, f.cfg), ParameterError);
}

TEST_CASE("evaluate contract") {
  const auto ds = generate(300, 2, 2, 3, 0.1, 0);
  const auto zero = new_modal_net(2, 2, 3, 3, 1, 0);
  std::vector<DenseLayer> layers;
  for (const auto& l : zero.layers()) layers.push_back({Tensor::zeros(l.weight.shape()), Tensor::zeros(l.bias.shape())});
  const ModalNet constant(2, 2, 3, 3, layers);
  CHECK(evaluate(constant, ds, ModalityMode::Joint) == doctest::Approx(1.0 / 3.0));

  const auto net = new_modal_net(2, 2, 8, 3, 2, 9);
  Dataset self_labeled = ds;
  for (auto& s : self_labeled.samples) {
    const auto logits = forward(net, s, ModalityMode::ImageOnly).logits;
    s.label = static_cast<int>(std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin());
  }
  CHECK(evaluate(net, self_labeled, ModalityMode::ImageOnly) == 1.0);

  Dataset shuffled = ds;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.samples.begin(), shuffled.samples.end(), rng);
  CHECK(evaluate(net, shuffled, ModalityMode::Joint) == evaluate(net, ds, ModalityMode::Joint));

  CHECK_THROWS_AS(evaluate(net, Dataset{{}, 2, 2, 3}, ModalityMode::Joint), ParameterError);
}

TEST_CASE("teacher training is deterministic and decomposes its loss") {
  Fixture f;
  const auto a = train_teacher(f.parts.train, f.parts.val, f.cfg);
  const auto b = train_teacher(f.parts.train, f.parts.val, f.cfg);
  CHECK(serialize(a.net) == serialize(b.net));
  CHECK(report_to_json(a.report) == report_to_json(b.report));
  CHECK(a.report.epochs.size() == 3);
  CHECK(a.report.role == "teacher");
  for (const auto& e : a.report.epochs) {
    CHECK(e.loss_kd == 0.0);
    CHECK(e.loss_mr == 0.0);
    CHECK(e.train_loss_total == e.loss_ce);
  }
  CHECK(evaluate(a.net, f.parts.val, ModalityMode::Joint) == a.report.best_val_accuracy);
  CHECK(a.net.depth() == f.cfg.teacher_depth);
}

TEST_CASE("distillation invariants") {
  Fixture f;
  const auto teacher = train_teacher(f.parts.train, f.parts.val, f.cfg).net;
  const auto before = serialize(teacher);
  const auto run = distill_student(teacher, f.parts.train, f.parts.val, f.cfg);
  CHECK(serialize(teacher) == before);
  CHECK(run.net.depth() == f.cfg.student_depth);
  CHECK(run.net.hidden_dim() == teacher.hidden_dim());
  CHECK(run.report.role == "student");

  for (const auto& e : run.report.epochs) {
    CHECK(std::abs(e.train_loss_total - (e.loss_ce + f.cfg.lambda_kd * e.loss_kd + f.cfg.lambda_mr * e.loss_mr)) < 1e-9);
  }
  CHECK(evaluate(run.net, f.parts.val, ModalityMode::Joint) == run.report.best_val_accuracy);

  REQUIRE(run.trace.records.size() == static_cast<std::size_t>(f.cfg.epochs) + 1);
  CHECK(run.trace.probe_size == std::min<std::size_t>(kProbeSize, f.parts.val.size()));
  for (std::size_t k = 0; k < run.trace.records.size(); ++k) {
    const auto& r = run.trace.records[k];
    CHECK(r.epoch == static_cast<int>(k));
    double frob = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        const double d = r.teacher_gram[i][j] - r.student_gram[i][j];
        CHECK(std::abs(r.abs_distance[i][j] - std::abs(d)) <= 1e-12);
        frob += d * d;
      }
    }
    CHECK(std::abs(r.frobenius_distance - std::sqrt(frob)) <= 1e-12);
    CHECK(r.teacher_gram == run.trace.records[0].teacher_gram);
  }
  CHECK_THROWS_AS(run.trace.at_epoch(99), ContractError);

  const auto again = distill_student(teacher, f.parts.train, f.parts.val, f.cfg);
  CHECK(serialize(again.net) == serialize(run.net));
  CHECK(trace_to_json(again.trace) == trace_to_json(run.trace));
}

TEST_CASE("relation weight leaves the other loss components untouched before the first update") {
  Fixture f;
  const auto teacher = new_modal_net(4, 4, 8, 3, 2, 17);
  auto with = f.cfg;
  with.lambda_mr = 1.0;
  auto without = f.cfg;
  without.lambda_mr = 0.0;
  const auto a = distill_student(teacher, f.parts.train, f.parts.val, with);
  const auto b = distill_student(teacher, f.parts.train, f.parts.val, without);
  CHECK(a.report.initial.loss_ce == b.report.initial.loss_ce);
  CHECK(a.report.initial.loss_kd == b.report.initial.loss_kd);
  CHECK(a.report.initial.loss_mr == b.report.initial.loss_mr);
  CHECK(b.trace.records.size() == a.trace.records.size());
  CHECK(b.trace.records[0].student_gram == a.trace.records[0].student_gram);
}

TEST_CASE("student initialized to the teacher starts with zero distillation losses") {
  Fixture f;
  const auto teacher = new_modal_net(4, 4, 8, 3, 2, 17);
  for (auto mode : {RelationMode::Gram, RelationMode::RawActivations}) {
    auto cfg = f.cfg;
    cfg.epochs = 1;
    cfg.relation_mode = mode;
    const auto run = distill_student(teacher, f.parts.train, f.parts.val, cfg, teacher);
    CHECK(run.report.initial.loss_kd == 0.0);
    CHECK(run.report.initial.loss_mr == 0.0);
    CHECK(run.trace.records[0].frobenius_distance == 0.0);
  }
}

TEST_CASE("incompatible teacher and data are rejected with both dims") {
  Fixture f;
  const auto teacher = new_modal_net(3, 4, 8, 3, 2, 0);
  CHECK_THROWS_WITH_AS(distill_student(teacher, f.parts.train, f.parts.val, f.cfg), doctest::Contains("text_dim=3"),
                       DimensionError);
}

TEST_CASE("a small SGD step decreases the single-sample loss") {
  std::mt19937_64 rng(55);
  int failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto teacher = new_modal_net(3, 3, 6, 3, 2, rng());
    auto student = new_modal_net(3, 3, 6, 3, 1, rng());
    student.set_trainable(true);
    const ModalSample s{test_util::normal_values(3, rng), test_util::normal_values(3, rng), static_cast<int>(rng() % 3)};
    DistillConfig cfg;
    cfg.optimizer = OptimizerKind::SGD;
    cfg.learning_rate = 1e-4;
    cfg.relation_mode = trial % 2 == 0 ? RelationMode::Gram : RelationMode::RawActivations;
    const auto before = total_distill_loss(teacher, student, s, cfg);
    Optimizer opt(cfg, student.parameters());
    backward(before.loss);
    opt.step();
    const auto after = total_distill_loss(teacher, student, s, cfg);
    if (!(after.parts.total < before.parts.total)) ++failures;
  }
  CHECK(failures <= 1);
}

TEST_CASE("comparison with one seed") {
  Fixture f;
  f.cfg.epochs = 2;
  const auto ds = generate(300, 4, 4, 3, 0.1, 1);
  const auto table = compare_kd_vs_mr(ds, f.cfg, 1);
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].arm == "KD");
  CHECK(table.rows[1].arm == "Ours");
  CHECK(table.rows[0].lambda_mr == 0.0);
  CHECK(table.rows[1].lambda_mr == f.cfg.lambda_mr);
  CHECK(table.rows[0].teacher_val_accuracy == table.rows[1].teacher_val_accuracy);
  CHECK(table.rows[0].teacher_test_accuracy == table.rows[1].teacher_test_accuracy);
  CHECK(table.kd.median_val_accuracy == table.rows[0].val_accuracy);

  const auto text = render_table(table);
  CHECK(text.find("val") != std::string::npos);
  CHECK(text.find("test") != std::string::npos);
  CHECK(text.find("73.62") != std::string::npos);
  CHECK(text.find("75.33") != std::string::npos);
  CHECK(text.find("median") != std::string::npos);
  CHECK_THROWS_AS(compare_kd_vs_mr(ds, f.cfg, 0), ParameterError);
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), ParameterError);
}
