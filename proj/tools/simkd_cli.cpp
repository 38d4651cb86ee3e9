// simkd: command-line front end for the distillation lab.
//
// Exit codes: 0 success, 1 validation / data / config failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "simkd/simkd.hpp"

namespace fs = std::filesystem;
using namespace simkd;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("--seeds expects a comma-separated list of nonnegative integers");
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  return seeds;
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

std::string teacher_checkpoint_path(const ExperimentConfig& cfg, std::size_t i) {
  if (cfg.teachers.at(i).checkpoint) return *cfg.teachers[i].checkpoint;
  const std::string name = cfg.teachers.size() == 1 ? "teacher.skdc" : "teacher" + std::to_string(i) + ".skdc";
  return (fs::path(cfg.output_dir) / name).string();
}

NetworkSpec teacher_spec(const ExperimentConfig& cfg, const TrainingData& data, std::size_t i) {
  return parse_arch(cfg.teachers.at(i).arch, data.train.sample_shape(), data.train.num_classes,
                    cfg.teachers.size() == 1 ? "teacher.arch" : "teachers[" + std::to_string(i) + "].arch");
}

NetworkSpec student_spec(const ExperimentConfig& cfg, const TrainingData& data) {
  if (!cfg.student_arch) throw ConfigError("config: missing 'student'");
  return parse_arch(*cfg.student_arch, data.train.sample_shape(), data.train.num_classes, "student.arch");
}

std::vector<Model> load_teachers(const ExperimentConfig& cfg, const TrainingData& data) {
  if (cfg.teachers.empty()) throw ConfigError("config: this command needs 'teacher' or 'teachers'");
  std::vector<Model> out;
  for (std::size_t i = 0; i < cfg.teachers.size(); ++i)
    out.push_back(read_model(teacher_spec(cfg, data, i), teacher_checkpoint_path(cfg, i)));
  return out;
}

std::vector<const Model*> pointers(const std::vector<Model>& ms) {
  std::vector<const Model*> p;
  for (const auto& m : ms) p.push_back(&m);
  return p;
}

std::string run_id_for(const ExperimentConfig& cfg, const TrainReport& r) {
  return cfg.run_id ? *cfg.run_id + "_s" + std::to_string(r.seed) : default_run_id(r);
}

void print_heads(const TrainReport& r) {
  std::printf("%s seed %llu:", r.method.c_str(), static_cast<unsigned long long>(r.seed));
  for (const auto& h : r.heads) {
    std::printf(" %s top1 %.2f nll %.4f", h.head.c_str(), h.metrics.top1, h.metrics.nll);
    if (h.metrics.l2) std::printf(" l2 %.4f", *h.metrics.l2);
  }
  if (r.pruning_ratio) std::printf(" pruning_ratio %s", format_real(*r.pruning_ratio).c_str());
  std::printf("\n");
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const SyntheticOptions& o, const std::string& train_out, const std::string& test_out) {
  auto [train, test] = gen_synthetic(o);
  write_dataset(train, train_out);
  write_dataset(test, test_out);
  std::printf("wrote %zu training and %zu test samples (%zux%zux%zu, %zu classes)\n", train.size(), test.size(),
              o.channels, o.height, o.width, o.num_classes);
  return 0;
}

int cmd_train_teacher(const std::string& config_path, const std::string& metrics_override) {
  const ExperimentConfig cfg = load_experiment(config_path);
  if (cfg.teachers.empty()) throw ConfigError("config: train-teacher needs 'teacher' or 'teachers'");
  const TrainingData data = load_data(cfg.data);
  const fs::path out = ensure_dir(cfg.output_dir);
  const std::string metrics = metrics_override.empty() ? (out / "metrics.csv").string() : metrics_override;
  for (std::size_t i = 0; i < cfg.teachers.size(); ++i) {
    auto res = train_model(teacher_spec(cfg, data, i), data, cfg.teachers[i].train);
    res.report.method = cfg.teachers.size() == 1 ? "teacher" : "teacher" + std::to_string(i);
    const std::string path = teacher_checkpoint_path(cfg, i);
    write_checkpoint(res.model, path);
    append_csv(metrics, rows_from_report(res.report, run_id_for(cfg, res.report)));
    print_heads(res.report);
    std::printf("checkpoint: %s\n", path.c_str());
  }
  return 0;
}

int cmd_distill(const std::string& config_path, const std::string& seeds_text, const std::string& metrics_override) {
  const ExperimentConfig cfg = load_experiment(config_path);
  if (cfg.distill.method == Method::Teacher) throw ConfigError("distill: use train-teacher for method 'teacher'");
  const TrainingData data = load_data(cfg.data);
  const NetworkSpec student = student_spec(cfg, data);
  std::vector<Model> teachers;
  if (cfg.distill.method != Method::Baseline) teachers = load_teachers(cfg, data);
  std::vector<std::uint64_t> seeds = seeds_text.empty() ? cfg.seeds : parse_seed_list(seeds_text);
  if (seeds.empty()) seeds.push_back(cfg.distill.seed);
  const fs::path out = ensure_dir(cfg.output_dir);
  const std::string metrics = metrics_override.empty() ? (out / "metrics.csv").string() : metrics_override;
  for (auto seed : seeds) {
    DistillConfig c = cfg.distill;
    c.seed = seed;
    RunResult res = run_method(pointers(teachers), student, data, c);
    const std::string id = run_id_for(cfg, res.report);
    write_checkpoint(res.tensors, (out / (id + ".skdc")).string());
    append_csv(metrics, rows_from_report(res.report, id));
    print_heads(res.report);
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, int teacher_index, std::uint64_t seed,
             const std::string& split) {
  const ExperimentConfig cfg = load_experiment(config_path);
  const TrainingData data = load_data(cfg.data);
  const Dataset& set = split == "train" ? data.train : data.test;
  EvalMetrics m;
  if (teacher_index >= 0) {
    const Model t = read_model(teacher_spec(cfg, data, static_cast<std::size_t>(teacher_index)), checkpoint);
    m = evaluate(t, set, data.norm);
  } else {
    const NetworkSpec student = student_spec(cfg, data);
    std::vector<Model> teachers;
    if (cfg.distill.method != Method::Baseline) teachers = load_teachers(cfg, data);
    DistillConfig c = cfg.distill;
    c.seed = seed;
    const Deployment d = restore_deployment(pointers(teachers), student, c, read_checkpoint(checkpoint));
    m = evaluate_with([&](const Tensor& x) { return BatchPrediction{d.logits(x), std::nullopt}; }, set, data.norm);
  }
  std::printf("top1 %s\nnll %s\n", format_real(m.top1).c_str(), format_real(m.nll).c_str());
  return 0;
}

int cmd_export_features(const std::string& config_path, const std::string& checkpoint, int teacher_index,
                        std::uint64_t seed, const std::string& split, const std::string& out_path) {
  const ExperimentConfig cfg = load_experiment(config_path);
  const TrainingData data = load_data(cfg.data);
  const Dataset& set = split == "train" ? data.train : data.test;
  std::function<Tensor(const Tensor&)> features;
  std::vector<Model> teachers;
  std::optional<Model> teacher;
  Deployment d;
  if (teacher_index >= 0) {
    teacher = read_model(teacher_spec(cfg, data, static_cast<std::size_t>(teacher_index)), checkpoint);
    features = [&](const Tensor& x) { return predict(*teacher, x).first; };
  } else {
    const NetworkSpec student = student_spec(cfg, data);
    if (cfg.distill.method != Method::Baseline) teachers = load_teachers(cfg, data);
    DistillConfig c = cfg.distill;
    c.seed = seed;
    d = restore_deployment(pointers(teachers), student, c, read_checkpoint(checkpoint));
    features = d.features;
  }
  std::ofstream out(out_path);
  if (!out) throw InputError("cannot write '" + out_path + "'");
  bool header = false;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += 250) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + 250); ++i) idx.push_back(i);
    Tensor f = features(to_tensor(set, idx, data.norm));
    const std::size_t dim = f.size() / f.dim(0);
    if (!header) {
      out << "label";
      for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
      out << "\n";
      header = true;
    }
    for (std::size_t b = 0; b < idx.size(); ++b) {
      out << static_cast<int>(set.labels[idx[b]]);
      for (std::size_t j = 0; j < dim; ++j) out << "," << format_real(f[b * dim + j]);
      out << "\n";
    }
  }
  std::printf("wrote %zu feature rows to %s\n", set.size(), out_path.c_str());
  return 0;
}

int cmd_count_params(const std::string& config_path, const std::string& kind, std::size_t cs, std::size_t ct,
                     std::size_t r) {
  if (!config_path.empty()) {
    const ExperimentConfig cfg = load_experiment(config_path);
    const TrainingData data = load_data(cfg.data);
    for (std::size_t i = 0; i < cfg.teachers.size(); ++i) {
      const NetworkSpec t = teacher_spec(cfg, data, i);
      std::printf("teacher%s: total %zu encoder %zu classifier %zu\n",
                  cfg.teachers.size() == 1 ? "" : std::to_string(i).c_str(), param_count(t), param_count(t.encoder),
                  param_count(LayerSpec{t.classifier}));
    }
    if (cfg.student_arch) {
      const NetworkSpec s = student_spec(cfg, data);
      std::printf("student: total %zu encoder %zu classifier %zu\n", param_count(s), param_count(s.encoder),
                  param_count(LayerSpec{s.classifier}));
      if (cfg.distill.method == Method::SimKD && cfg.teachers.size() == 1) {
        const NetworkSpec t = teacher_spec(cfg, data, 0);
        const ProjectorSpec ps{cfg.distill.projector, cfg.distill.r, s.feature_dim(), t.feature_dim(), true};
        const ParamBudget b{param_count(s.encoder), param_count(projector_layers(ps)), param_count(t),
                            param_count(LayerSpec{t.classifier}), param_count(LayerSpec{s.classifier})};
        std::printf("projector: %llu\npruning ratio: %s\n", static_cast<unsigned long long>(b.proj),
                    format_real(pruning_ratio(b)).c_str());
      }
    }
    return 0;
  }
  if (kind.empty() || cs == 0 || ct == 0) throw UsageError("count-params needs --config or --projector with --cs/--ct");
  const ProjectorSpec spec{projector_kind_from_string(kind), r, cs, ct, true};
  const auto layers = projector_layers(spec);
  std::printf("%zu\n", param_count(layers));
  if (spec.kind == ProjectorKind::Bottleneck)
    std::printf("formula: %llu\n", static_cast<unsigned long long>(projector_param_formula(cs, ct, r)));
  return 0;
}

int cmd_pruning_ratio(std::uint64_t se, std::uint64_t proj, std::uint64_t t, std::uint64_t tc, std::uint64_t sc) {
  std::printf("%s\n", format_real(pruning_ratio({se, proj, t, tc, sc})).c_str());
  return 0;
}

int cmd_check_proposition(std::uint64_t cs, std::uint64_t ct, std::uint64_t r) {
  const PropositionCheck c = check_proposition(cs, ct, r);
  std::printf("left: %s, right: %s\n", c.left_holds ? "holds" : "fails", c.right_holds ? "holds" : "fails");
  return c.left_holds == c.left_condition && c.right_holds ? 0 : 1;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed) {
  bool ok = true;
  for (const auto& s : run_gradcheck(instances, seed)) {
    std::printf("%-30s %4zu instances  max rel err %.3e  %s\n", s.name.c_str(), s.instances, s.max_rel_error,
                s.passed ? "ok" : "FAIL");
    ok = ok && s.passed;
  }
  return ok ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out_path) {
  std::vector<MetricsRow> rows;
  for (const auto& f : files) {
    auto part = read_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::string text = format_report(rows);
  if (out_path.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream out(out_path);
    if (!out) throw InputError("cannot write '" + out_path + "'");
    out << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SimKD distillation lab"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic train/test dataset pair");
  SyntheticOptions so;
  std::string train_out, test_out;
  gen->add_option("--out-train", train_out, "Training set file")->required();
  gen->add_option("--out-test", test_out, "Test set file")->required();
  gen->add_option("--classes", so.num_classes);
  gen->add_option("--per-class", so.per_class);
  gen->add_option("--test-per-class", so.test_per_class);
  gen->add_option("--height", so.height);
  gen->add_option("--width", so.width);
  gen->add_option("--channels", so.channels);
  gen->add_option("--difficulty", so.difficulty);
  gen->add_option("--seed", so.seed);

  std::string config, metrics, seeds_text, checkpoint, split = "test", out_path, kind;
  int teacher_index = -1;
  std::uint64_t seed = 0;

  auto* tt = app.add_subcommand("train-teacher", "Train the configured teacher(s) with cross-entropy");
  tt->add_option("--config", config)->required();
  tt->add_option("--metrics", metrics, "Metrics CSV (default <output.dir>/metrics.csv)");

  auto* dist = app.add_subcommand("distill", "Run the configured method for one or more seeds");
  dist->add_option("--config", config)->required();
  dist->add_option("--seeds", seeds_text, "Comma-separated seeds, e.g. 0,1,2,3");
  dist->add_option("--metrics", metrics);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the configured data");
  ev->add_option("--config", config)->required();
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--teacher", teacher_index, "Evaluate teacher i instead of the distilled artifact");
  ev->add_option("--seed", seed, "Seed the artifact was trained with");
  ev->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));

  auto* ex = app.add_subcommand("export-features", "Dump penultimate features and labels as CSV");
  ex->add_option("--config", config)->required();
  ex->add_option("--checkpoint", checkpoint)->required();
  ex->add_option("--teacher", teacher_index);
  ex->add_option("--seed", seed);
  ex->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  ex->add_option("--out", out_path)->required();

  auto* cp = app.add_subcommand("count-params", "Exact parameter counts");
  std::size_t cs = 0, ct = 0, r = 2;
  cp->add_option("--config", config);
  cp->add_option("--projector", kind, "Projector kind: one_conv, two_conv, bottleneck_dw, bottleneck, linear");
  cp->add_option("--cs", cs);
  cp->add_option("--ct", ct);
  cp->add_option("--r", r);

  auto* pr = app.add_subcommand("pruning-ratio", "1 - (se + proj + tc - sc) / t");
  std::uint64_t se = 0, proj = 0, tparams = 0, tc = 0, sc = 0;
  pr->add_option("--se", se)->required();
  pr->add_option("--proj", proj);
  pr->add_option("--t", tparams)->required();
  pr->add_option("--tc", tc);
  pr->add_option("--sc", sc);

  auto* prop = app.add_subcommand("check-proposition", "Evaluate 2F(2r) < F(r) < 4F(2r) exactly");
  std::uint64_t pcs = 64, pct = 0, pr_r = 0;
  prop->add_option("--cs", pcs);
  prop->add_option("--ct", pct)->required();
  prop->add_option("--r", pr_r)->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  std::size_t instances = 100;
  gc->add_option("--instances", instances);
  gc->add_option("--seed", seed);

  auto* rep = app.add_subcommand("report", "Aggregate metrics CSVs into mean ± std tables");
  std::vector<std::string> files;
  rep->add_option("files", files, "Metrics CSV files")->required();
  rep->add_option("--out", out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(so, train_out, test_out);
    if (tt->parsed()) return cmd_train_teacher(config, metrics);
    if (dist->parsed()) return cmd_distill(config, seeds_text, metrics);
    if (ev->parsed()) return cmd_eval(config, checkpoint, teacher_index, seed, split);
    if (ex->parsed()) return cmd_export_features(config, checkpoint, teacher_index, seed, split, out_path);
    if (cp->parsed()) return cmd_count_params(config, kind, cs, ct, r);
    if (pr->parsed()) return cmd_pruning_ratio(se, proj, tparams, tc, sc);
    if (prop->parsed()) return cmd_check_proposition(pcs, pct, pr_r);
    if (gc->parsed()) return cmd_gradcheck(instances, seed);
    if (rep->parsed()) return cmd_report(files, out_path);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
