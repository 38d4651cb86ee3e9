#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "simkd/dataset.hpp"
#include "simkd/distiller.hpp"
#include "simkd/zoo.hpp"

namespace simkd {

// Experiment configuration (JSON). Sections: data, teacher | teachers,
// student, distill, output. Unknown keys are rejected everywhere; see
// docs/experiment_config.schema.json.

using Json = nlohmann::json;

struct DataConfig {
  std::optional<std::string> train_path;
  std::optional<std::string> test_path;
  std::optional<SyntheticOptions> generator;
  std::optional<Normalization> normalization;
  std::optional<AugmentOptions> augmentation;
};

struct TeacherConfig {
  Json arch;
  std::optional<std::string> checkpoint;
  DistillConfig train;  // schedule for train-teacher
};

struct ExperimentConfig {
  DataConfig data;
  std::vector<TeacherConfig> teachers;
  std::optional<Json> student_arch;
  DistillConfig distill;
  std::vector<std::uint64_t> seeds;  // empty: distill.seed only
  std::string output_dir = ".";
  std::optional<std::string> run_id;
};

namespace detail {

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get(const Json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": missing or of the wrong type");
  }
}

template <class T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

inline std::size_t get_count(const Json& j, const std::string& key, std::size_t fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError(where + "." + key + ": expected a nonnegative integer");
  return v.get<std::size_t>();
}

inline SyntheticOptions parse_generator(const Json& j) {
  const std::string w = "data.generator";
  check_keys(j, {"classes", "per_class", "test_per_class", "height", "width", "channels", "difficulty", "seed"}, w);
  SyntheticOptions o;
  o.num_classes = get_count(j, "classes", o.num_classes, w);
  o.per_class = get_count(j, "per_class", o.per_class, w);
  o.test_per_class = get_count(j, "test_per_class", o.test_per_class, w);
  o.height = get_count(j, "height", o.height, w);
  o.width = get_count(j, "width", o.width, w);
  o.channels = get_count(j, "channels", o.channels, w);
  o.difficulty = get_or<double>(j, "difficulty", o.difficulty, w);
  o.seed = get_count(j, "seed", o.seed, w);
  return o;
}

inline DataConfig parse_data(const Json& j) {
  check_keys(j, {"train_path", "test_path", "generator", "normalization", "augmentation"}, "data");
  DataConfig d;
  if (j.contains("train_path") || j.contains("test_path")) {
    d.train_path = get<std::string>(j, "train_path", "data");
    d.test_path = get<std::string>(j, "test_path", "data");
  }
  if (j.contains("generator")) d.generator = parse_generator(j.at("generator"));
  if (d.train_path.has_value() == d.generator.has_value())
    throw ConfigError("data: give either train_path/test_path or generator");
  if (j.contains("normalization")) {
    const Json& n = j.at("normalization");
    check_keys(n, {"mean", "std"}, "data.normalization");
    Normalization norm{get<std::vector<double>>(n, "mean", "data.normalization"),
                       get<std::vector<double>>(n, "std", "data.normalization")};
    if (norm.mean.size() != norm.std.size()) throw ConfigError("data.normalization: mean and std lengths differ");
    for (double s : norm.std)
      if (!(s > 0.0)) throw ConfigError("data.normalization: std entries must be positive");
    d.normalization = norm;
  }
  if (j.contains("augmentation")) {
    const Json& a = j.at("augmentation");
    check_keys(a, {"hflip_prob", "pad", "crop"}, "data.augmentation");
    AugmentOptions opt;
    opt.hflip_prob = get_or<double>(a, "hflip_prob", opt.hflip_prob, "data.augmentation");
    opt.pad = get_count(a, "pad", opt.pad, "data.augmentation");
    if (!get_or<bool>(a, "crop", true, "data.augmentation")) opt.pad = 0;
    if (!(opt.hflip_prob >= 0.0 && opt.hflip_prob <= 1.0))
      throw ConfigError("data.augmentation.hflip_prob must lie in [0, 1]");
    d.augmentation = opt;
  }
  return d;
}

inline void parse_schedule(const Json& j, DistillConfig& c, const std::string& w) {
  c.T = get_or<double>(j, "T", c.T, w);
  c.epochs = get_count(j, "epochs", c.epochs, w);
  c.batch_size = get_count(j, "batch_size", c.batch_size, w);
  c.lr = get_or<double>(j, "lr", c.lr, w);
  if (j.contains("lr_milestones")) {
    c.lr_milestones.clear();
    for (const auto& m : j.at("lr_milestones")) {
      if (!m.is_number_integer() || m.get<long long>() < 0)
        throw ConfigError(w + ".lr_milestones: expected nonnegative integers");
      c.lr_milestones.push_back(m.get<std::size_t>());
    }
  }
  c.momentum = get_or<double>(j, "momentum", c.momentum, w);
  c.weight_decay = get_or<double>(j, "weight_decay", c.weight_decay, w);
  c.seed = get_count(j, "seed", c.seed, w);
  c.eval_batch = get_count(j, "eval_batch", c.eval_batch, w);
}

inline const std::set<std::string> kScheduleKeys = {"T",        "epochs",       "batch_size", "lr",  "lr_milestones",
                                                    "momentum", "weight_decay", "seed",       "eval_batch"};

inline TeacherConfig parse_teacher(const Json& j, const std::string& w) {
  check_keys(j, {"arch", "checkpoint", "train"}, w);
  TeacherConfig t;
  if (!j.contains("arch")) throw ConfigError(w + ": missing 'arch'");
  t.arch = j.at("arch");
  if (j.contains("checkpoint")) t.checkpoint = get<std::string>(j, "checkpoint", w);
  t.train.method = Method::Teacher;
  if (j.contains("train")) {
    check_keys(j.at("train"), kScheduleKeys, w + ".train");
    parse_schedule(j.at("train"), t.train, w + ".train");
  }
  return t;
}

inline DistillConfig parse_distill(const Json& j, std::vector<std::uint64_t>& seeds) {
  std::set<std::string> keys = kScheduleKeys;
  keys.insert({"method", "seeds", "projector", "alpha", "k_blocks", "variant"});
  check_keys(j, keys, "distill");
  DistillConfig c;
  c.method = method_from_string(get<std::string>(j, "method", "distill"));
  parse_schedule(j, c, "distill");
  if (j.contains("seeds"))
    for (const auto& s : j.at("seeds")) {
      if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("distill.seeds: expected integers");
      seeds.push_back(s.get<std::uint64_t>());
    }
  if (j.contains("projector")) {
    const Json& p = j.at("projector");
    check_keys(p, {"kind", "r"}, "distill.projector");
    if (p.contains("kind")) c.projector = projector_kind_from_string(get<std::string>(p, "kind", "distill.projector"));
    c.r = get_count(p, "r", c.r, "distill.projector");
  }
  if (c.method == Method::Joint && !j.contains("alpha")) throw ConfigError("distill: joint training needs 'alpha'");
  if (c.method == Method::SimKDPlus && !j.contains("k_blocks"))
    throw ConfigError("distill: simkd_plus needs 'k_blocks'");
  if (c.method == Method::MultiTeacher && !j.contains("variant"))
    throw ConfigError("distill: multi_teacher needs 'variant'");
  c.alpha = get_or<double>(j, "alpha", c.alpha, "distill");
  c.k_blocks = get_count(j, "k_blocks", c.k_blocks, "distill");
  if (j.contains("variant")) c.multi = multi_variant_from_string(get<std::string>(j, "variant", "distill"));
  validate(c);
  return c;
}

inline LayerSpec parse_layer(const Json& j, const std::string& w) {
  const std::string type = get<std::string>(j, "type", w);
  if (type == "dense") {
    check_keys(j, {"type", "in", "out", "bias"}, w);
    return Dense{get_count(j, "in", 0, w), get_count(j, "out", 0, w), get_or<bool>(j, "bias", true, w)};
  }
  if (type == "conv") {
    check_keys(j, {"type", "in", "out", "k", "depthwise"}, w);
    return Conv{get_count(j, "in", 0, w), get_count(j, "out", 0, w), get_count(j, "k", 3, w),
                get_or<bool>(j, "depthwise", false, w)};
  }
  if (type == "batchnorm") {
    check_keys(j, {"type", "ch"}, w);
    return BatchNorm{get_count(j, "ch", 0, w)};
  }
  if (type == "avgpool") {
    check_keys(j, {"type", "window"}, w);
    return AvgPool{get_count(j, "window", 2, w)};
  }
  check_keys(j, {"type"}, w);
  if (type == "relu") return ReLU{};
  if (type == "gap") return GlobalAvgPool{};
  if (type == "flatten") return Flatten{};
  throw ConfigError(w + ": unknown layer type '" + type + "'");
}

}  // namespace detail

/// Resolves an architecture description. `input` / `classes` default to the
/// dataset's when the description omits them.
inline NetworkSpec parse_arch(const Json& j, const Shape& input, std::size_t classes, const std::string& where) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  Shape in = input;
  if (j.contains("input")) in = get<std::vector<std::size_t>>(j, "input", where);
  const std::size_t k = get_count(j, "classes", classes, where);
  if (j.contains("preset")) {
    const std::string preset = get<std::string>(j, "preset", where);
    if (preset == "desk_cnn") {
      check_keys(j, {"preset", "width", "input", "classes"}, where);
      return desk_cnn(get_count(j, "width", 16, where), k, in);
    }
    if (preset == "mlp") {
      check_keys(j, {"preset", "hidden", "input", "classes"}, where);
      const auto hidden = get<std::vector<std::size_t>>(j, "hidden", where);
      NetworkSpec s = mlp(shape_size(in), hidden, k);
      if (in.size() != 1) {
        s.input = in;
        s.encoder.insert(s.encoder.begin(), Flatten{});
        for (auto& e : s.block_ends) ++e;
        if (s.block_ends.empty()) s.block_ends.push_back(s.encoder.size());
      }
      validate(s);
      return s;
    }
    throw ConfigError(where + ": unknown preset '" + preset + "'");
  }
  check_keys(j, {"input", "encoder", "classifier", "block_ends", "classes"}, where);
  NetworkSpec s;
  s.input = in;
  if (j.contains("encoder")) {
    const Json& layers = j.at("encoder");
    if (!layers.is_array()) throw ConfigError(where + ".encoder: expected an array");
    for (std::size_t i = 0; i < layers.size(); ++i)
      s.encoder.push_back(parse_layer(layers[i], where + ".encoder[" + std::to_string(i) + "]"));
  }
  if (!j.contains("classifier")) throw ConfigError(where + ": missing 'classifier'");
  const Json& c = j.at("classifier");
  check_keys(c, {"in", "out"}, where + ".classifier");
  s.classifier = Dense{get_count(c, "in", 0, where + ".classifier"), get_count(c, "out", k, where + ".classifier"), true};
  if (j.contains("block_ends")) s.block_ends = get<std::vector<std::size_t>>(j, "block_ends", where);
  validate(s);
  return s;
}

inline ExperimentConfig parse_experiment(const Json& j) {
  using namespace detail;
  check_keys(j, {"data", "teacher", "teachers", "student", "distill", "output"}, "config");
  ExperimentConfig c;
  if (!j.contains("data")) throw ConfigError("config: missing 'data'");
  c.data = parse_data(j.at("data"));
  if (j.contains("teacher") && j.contains("teachers")) throw ConfigError("config: give 'teacher' or 'teachers', not both");
  if (j.contains("teacher")) c.teachers.push_back(parse_teacher(j.at("teacher"), "teacher"));
  if (j.contains("teachers")) {
    if (!j.at("teachers").is_array() || j.at("teachers").empty())
      throw ConfigError("teachers: expected a non-empty array");
    for (std::size_t i = 0; i < j.at("teachers").size(); ++i)
      c.teachers.push_back(parse_teacher(j.at("teachers")[i], "teachers[" + std::to_string(i) + "]"));
  }
  if (j.contains("student")) {
    check_keys(j.at("student"), {"arch"}, "student");
    if (!j.at("student").contains("arch")) throw ConfigError("student: missing 'arch'");
    c.student_arch = j.at("student").at("arch");
  }
  if (j.contains("distill")) {
    c.distill = parse_distill(j.at("distill"), c.seeds);
  } else {
    c.distill.method = Method::Teacher;
  }
  if (j.contains("output")) {
    check_keys(j.at("output"), {"dir", "run_id"}, "output");
    c.output_dir = get_or<std::string>(j.at("output"), "dir", c.output_dir, "output");
    if (j.at("output").contains("run_id")) c.run_id = get<std::string>(j.at("output"), "run_id", "output");
  }
  if (c.data.augmentation) {
    c.distill.augment = c.data.augmentation;
    for (auto& t : c.teachers) t.train.augment = c.data.augmentation;
  }
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_experiment(j);
}

/// Loads or generates the data described by the config.
inline TrainingData load_data(const DataConfig& d) {
  Dataset train, test;
  if (d.generator) {
    std::tie(train, test) = gen_synthetic(*d.generator);
  } else {
    train = read_dataset(*d.train_path);
    test = read_dataset(*d.test_path);
  }
  if (d.normalization && d.normalization->mean.size() != train.channels)
    throw ConfigError("data.normalization: expected one entry per channel");
  return make_training_data(std::move(train), std::move(test), d.normalization);
}

}  // namespace simkd
