// mmkd: command-line driver for the multimodal distillation lab.
//
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "mmkd/errors.hpp"
#include "mmkd/gradcheck.hpp"
#include "mmkd/heatmap.hpp"
#include "mmkd/synth_data.hpp"
#include "mmkd/train.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : mmkd::Error {
  using mmkd::Error::Error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mmkd::IoError("cannot open " + path + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mmkd::IoError("cannot open " + path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw mmkd::IoError("failed writing " + path);
}

mmkd::DistillConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return mmkd::config_from_json(read_text(path));
}

// Config snapshot next to the report: <command>_seed<N>.config.json.
void write_config_snapshot(const std::string& report_path, const std::string& command, const mmkd::DistillConfig& cfg) {
  const auto dir = fs::path(report_path).parent_path();
  const auto name = command + "_seed" + std::to_string(cfg.seed) + ".config.json";
  write_text((dir / name).string(), mmkd::config_to_json(cfg));
}

std::string pct(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::fixed << 100.0 * v << "%";
  return s.str();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  int n = 2000;
  int classes = 3;
  int text_dim = 4;
  int image_dim = 4;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  mmkd::Dataset ds;
  try {
    ds = mmkd::generate(a.n, a.text_dim, a.image_dim, a.classes, a.noise, a.seed);
  } catch (const mmkd::ParameterError& e) {
    throw UsageError(e.what());
  }
  mmkd::write_csv(ds, a.out);
  std::cout << "wrote " << ds.size() << " samples to " << a.out << "\n";
  return 0;
}

struct TrainTeacherArgs {
  std::string data, config, out_model, out_report;
};

int run_train_teacher(const TrainTeacherArgs& a) {
  const auto cfg = load_config(a.config);
  const auto ds = mmkd::read_csv(a.data);
  const auto parts = mmkd::split(ds, mmkd::kDefaultSplit, cfg.seed);
  auto run = mmkd::train_teacher(parts.train, parts.val, cfg);
  run.report.test_accuracy = mmkd::evaluate(run.net, parts.test, mmkd::ModalityMode::Joint);
  write_text(a.out_model, mmkd::serialize(run.net));
  write_text(a.out_report, mmkd::report_to_json(run.report));
  write_config_snapshot(a.out_report, "train-teacher", cfg);
  std::cout << "teacher: best val " << pct(run.report.best_val_accuracy) << " (epoch " << run.report.best_epoch
            << "), test " << pct(*run.report.test_accuracy) << "\n";
  std::cerr << "train-teacher took " << run.report.wall_seconds << " s\n";
  return 0;
}

struct DistillArgs {
  std::string data, teacher, config, out_model, out_report, out_trace, heatmap_dir;
};

int run_distill(const DistillArgs& a) {
  const auto cfg = load_config(a.config);
  const auto teacher = mmkd::deserialize(read_text(a.teacher));
  const auto ds = mmkd::read_csv(a.data);
  const auto parts = mmkd::split(ds, mmkd::kDefaultSplit, cfg.seed);
  auto run = mmkd::distill_student(teacher, parts.train, parts.val, cfg);
  run.report.test_accuracy = mmkd::evaluate(run.net, parts.test, mmkd::ModalityMode::Joint);
  write_text(a.out_model, mmkd::serialize(run.net));
  write_text(a.out_report, mmkd::report_to_json(run.report));
  write_text(a.out_trace, mmkd::trace_to_json(run.trace));
  write_config_snapshot(a.out_report, "distill", cfg);

  const fs::path dir = a.heatmap_dir.empty() ? fs::path(a.out_trace).parent_path() : fs::path(a.heatmap_dir);
  if (!dir.empty()) fs::create_directories(dir);
  for (const auto& r : run.trace.records) {
    const std::string stem = "trace_epoch" + std::to_string(r.epoch) + "_";
    mmkd::emit_heatmap(r.teacher_gram, (dir / (stem + "gt.pgm")).string());
    mmkd::emit_heatmap(r.student_gram, (dir / (stem + "gs.pgm")).string());
    mmkd::emit_heatmap(r.abs_distance, (dir / (stem + "absdiff.pgm")).string());
  }
  const auto& first = run.trace.at_epoch(1);
  const auto& last = run.trace.records.back();
  std::cout << "student: best val " << pct(run.report.best_val_accuracy) << " (epoch " << run.report.best_epoch
            << "), test " << pct(*run.report.test_accuracy) << "; relation distance " << first.frobenius_distance
            << " (epoch 1) -> " << last.frobenius_distance << " (epoch " << last.epoch << ")\n";
  std::cerr << "distill took " << run.report.wall_seconds << " s\n";
  return 0;
}

struct CompareArgs {
  std::string data, config, out, out_json;
  int seeds = 10;
};

int run_compare(const CompareArgs& a) {
  const auto cfg = load_config(a.config);
  const auto ds = mmkd::read_csv(a.data);
  const auto table = mmkd::compare_kd_vs_mr(ds, cfg, a.seeds);
  const auto text = mmkd::render_table(table);
  write_text(a.out, text);
  write_config_snapshot(a.out, "compare", cfg);
  write_text(a.out_json.empty() ? a.out + ".json" : a.out_json, mmkd::table_to_json(table));
  std::cout << text;
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int trials = 50;
  bool corrupt = false;
};

int run_gradcheck(const GradcheckArgs& a) {
  mmkd::GradcheckOptions opts;
  opts.seed = a.seed;
  opts.trials = a.trials;
  std::optional<mmkd::testing::ScopedBackwardFault> fault;
  if (a.corrupt) fault.emplace();
  const auto result = mmkd::run_gradcheck(opts);
  std::cout << "gradcheck: " << result.cases.size() << " cases over " << a.trials
            << " trials, max relative error " << result.max_rel_error << " (tolerance " << opts.tolerance << ")\n";
  std::cout << (result.passed ? "PASS" : "FAIL") << "\n";
  return result.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal knowledge distillation with modality-level Gram matrices"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic multimodal dataset as CSV");
  gen_cmd->add_option("--n", gen.n, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--classes", gen.classes, "Number of classes")->capture_default_str()->check(CLI::Range(2, 1000));
  gen_cmd->add_option("--text-dim", gen.text_dim, "Text feature width")->capture_default_str()->check(CLI::Range(2, 100000));
  gen_cmd->add_option("--image-dim", gen.image_dim, "Image feature width")->capture_default_str()->check(CLI::Range(2, 100000));
  gen_cmd->add_option("--noise", gen.noise, "Observation noise std")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output CSV path")->required();

  TrainTeacherArgs tt;
  auto* tt_cmd = app.add_subcommand("train-teacher", "Train the teacher on the tri-modality cross-entropy");
  tt_cmd->add_option("--data", tt.data, "Dataset CSV")->required();
  tt_cmd->add_option("--config", tt.config, "Config JSON (defaults if omitted)");
  tt_cmd->add_option("--out-model", tt.out_model, "Teacher model document")->required();
  tt_cmd->add_option("--out-report", tt.out_report, "Training report document")->required();

  DistillArgs di;
  auto* di_cmd = app.add_subcommand("distill", "Distil a frozen teacher into a shallow student");
  di_cmd->add_option("--data", di.data, "Dataset CSV")->required();
  di_cmd->add_option("--teacher", di.teacher, "Teacher model document")->required();
  di_cmd->add_option("--config", di.config, "Config JSON (defaults if omitted)");
  di_cmd->add_option("--out-model", di.out_model, "Student model document")->required();
  di_cmd->add_option("--out-report", di.out_report, "Training report document")->required();
  di_cmd->add_option("--out-trace", di.out_trace, "Relation trace document")->required();
  di_cmd->add_option("--heatmap-dir", di.heatmap_dir, "Directory for PGM heatmaps (default: next to the trace)");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "KD vs KD + relation loss over several seeds");
  cmp_cmd->add_option("--data", cmp.data, "Dataset CSV")->required();
  cmp_cmd->add_option("--config", cmp.config, "Config JSON (defaults if omitted)");
  cmp_cmd->add_option("--seeds", cmp.seeds, "Number of seeds")->capture_default_str()->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--out", cmp.out, "Plain-text table path")->required();
  cmp_cmd->add_option("--out-json", cmp.out_json, "Table document path (default: <out>.json)");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  gc_cmd->add_option("--seed", gc.seed, "Instance seed")->capture_default_str();
  gc_cmd->add_option("--trials", gc.trials, "Random instances")->capture_default_str()->check(CLI::PositiveNumber);
  gc_cmd->add_flag("--corrupt-backward", gc.corrupt, "Perturb matmul backward (self-test)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*tt_cmd) return run_train_teacher(tt);
    if (*di_cmd) return run_distill(di);
    if (*cmp_cmd) return run_compare(cmp);
    if (*gc_cmd) return run_gradcheck(gc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
