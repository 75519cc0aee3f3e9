#include "mmkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mmkd/errors.hpp"
#include "mmkd/rng.hpp"

namespace mmkd {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

double check_student_gradients(const ModalNet& teacher, const ModalNet& student, const ModalSample& sample,
                               const DistillConfig& cfg, double step) {
  ModalNet net = student;
  net.set_trainable(true);
  ModalNet frozen = teacher;
  frozen.set_trainable(false);
  const TeacherOutputs cached = teacher_outputs(frozen, sample);

  backward(total_distill_loss(cached, net, sample, cfg).loss);
  auto params = net.parameters();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());
  net.set_trainable(false);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor&) { return total_distill_loss(cached, net, sample, cfg).parts.total; }, params[k], step);
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      worst = std::max(worst, relative_error(analytic[k][i], numeric.at(i)));
    }
  }
  return worst;
}

namespace {

// Nonzero biases keep pre-activations away from the relu kink.
void randomize(ModalNet& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> bias(-0.5, 0.5);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (const auto& layer : net.layers()) {
    Tensor w = layer.weight;
    Tensor b = layer.bias;
    for (auto& v : w.mutable_data()) v += jitter(rng);
    for (auto& v : b.mutable_data()) v = bias(rng);
  }
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& options) {
  if (options.trials < 1) throw ParameterError("gradcheck: trials must be >= 1");
  auto rng = make_rng(options.seed, streams::kGradcheck);
  std::uniform_int_distribution<int> feat_dim(2, 4), hidden_dim(3, 6), classes(2, 4), teacher_depth(1, 3),
      student_depth(1, 2);
  std::uniform_real_distribution<double> weight(0.2, 1.0), temperature(1.0, 4.0), lambda(0.5, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  GradcheckResult result;
  for (int t = 0; t < options.trials; ++t) {
    const int dt = feat_dim(rng), di = feat_dim(rng), h = hidden_dim(rng), c = classes(rng);
    ModalNet teacher = new_modal_net(dt, di, h, c, teacher_depth(rng), rng());
    ModalNet student = new_modal_net(dt, di, h, c, student_depth(rng), rng());
    randomize(teacher, rng);
    randomize(student, rng);

    ModalSample sample;
    sample.text_feats.resize(static_cast<std::size_t>(dt));
    sample.image_feats.resize(static_cast<std::size_t>(di));
    for (auto& v : sample.text_feats) v = normal(rng);
    for (auto& v : sample.image_feats) v = normal(rng);
    sample.label = std::uniform_int_distribution<int>(0, c - 1)(rng);

    DistillConfig cfg;
    cfg.alpha = weight(rng);
    cfg.beta = weight(rng);
    cfg.gamma = weight(rng);
    cfg.temperature = temperature(rng);
    cfg.lambda_kd = lambda(rng);
    cfg.lambda_mr = lambda(rng);
    cfg.relation_source = t % 2 == 0 ? ActivationSource::Logits : ActivationSource::Hidden;
    cfg.normalize_rows = (t / 2) % 2 == 1;

    for (auto mode : {RelationMode::Gram, RelationMode::RawActivations}) {
      cfg.relation_mode = mode;
      GradcheckCase gc;
      gc.trial = t;
      gc.mode = mode;
      gc.source = cfg.relation_source;
      gc.normalize_rows = cfg.normalize_rows;
      gc.parameters = student.parameter_count();
      gc.max_rel_error = check_student_gradients(teacher, student, sample, cfg, options.step);
      result.max_rel_error = std::max(result.max_rel_error, gc.max_rel_error);
      result.cases.push_back(gc);
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace mmkd
