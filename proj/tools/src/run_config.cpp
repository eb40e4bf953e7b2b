#include "rankpose_cli/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include "rankpose/error.hpp"

namespace rankpose::cli {

using nlohmann::json;

namespace {

// Reads fields of one JSON object, remembering which keys were consumed so
// leftovers can be reported by their full path.
class Fields {
 public:
  Fields(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  std::string path(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json* find(std::string_view key) {
    seen_.emplace(key);
    const auto it = doc_.find(std::string(key));
    return it == doc_.end() ? nullptr : &*it;
  }

  void number(std::string_view key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path(key) + ": expected a number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(std::string_view key, Int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (v->get<std::int64_t>() < 0 && !v->is_number_unsigned()) {
          throw ConfigError(path(key) + ": expected a non-negative integer");
        }
        out = static_cast<Int>(v->get<std::uint64_t>());
      } else {
        out = static_cast<Int>(v->get<std::int64_t>());
      }
    }
  }

  void boolean(std::string_view key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  bool string(std::string_view key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key) + ": expected a string");
      out = v->get<std::string>();
      return true;
    }
    return false;
  }

  template <typename Enum, std::size_t N>
  void choice(std::string_view key, Enum& out, const std::pair<const char*, Enum> (&table)[N]) {
    std::string name;
    if (!string(key, name)) return;
    for (const auto& [label, value] : table) {
      if (name == label) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& entry : table) allowed += std::string(allowed.empty() ? "" : ", ") + entry.first;
    throw ConfigError(path(key) + ": unknown value '" + name + "' (expected one of " + allowed + ")");
  }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!seen_.contains(item.key())) throw ConfigError("unknown key '" + path(item.key()) + "'");
    }
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

constexpr std::pair<const char*, GridMode> kGridModes[] = {
    {"2d", GridMode::kTwoD}, {"1d_x", GridMode::kOneDX}, {"1d_y", GridMode::kOneDY}};
constexpr std::pair<const char*, ModelKind> kModels[] = {{"free_logits", ModelKind::kFreeLogits},
                                                         {"linear", ModelKind::kLinear}};
constexpr std::pair<const char*, TrainLoss> kLosses[] = {
    {"mse", TrainLoss::kMse},
    {"kl", TrainLoss::kKl},
    {"spatial_rank", TrainLoss::kSpatialRank},
    {"spatial_rs", TrainLoss::kSpatialRS},
    {"spatial_rs_isort", TrainLoss::kSpatialRSInstanceSort}};
constexpr std::pair<const char*, OutputLayout> kLayouts[] = {{"heatmap2d", OutputLayout::kHeatmap2D},
                                                             {"simcc", OutputLayout::kSimCC}};
constexpr std::pair<const char*, OptimizerKind> kOptimizers[] = {{"sgd", OptimizerKind::kSgd},
                                                                 {"adam", OptimizerKind::kAdam}};
constexpr std::pair<const char*, PckReference> kPckRefs[] = {{"bbox_diag", PckReference::kBBoxDiag},
                                                             {"head_size", PckReference::kHeadSize}};

template <typename Enum, std::size_t N>
const char* name_of(Enum value, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [label, v] : table) {
    if (v == value) return label;
  }
  return "?";
}

void number_list(Fields& f, std::string_view key, std::vector<double>& out) {
  if (const json* v = f.find(key)) {
    if (!v->is_array()) throw ConfigError(f.path(key) + ": expected an array of numbers");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_number()) throw ConfigError(f.path(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }
}

template <typename Int>
void integer_list(Fields& f, std::string_view key, std::vector<Int>& out) {
  if (const json* v = f.find(key)) {
    if (!v->is_array()) throw ConfigError(f.path(key) + ": expected an array of integers");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_number_integer() || (std::is_unsigned_v<Int> && e.get<std::int64_t>() < 0 && !e.is_number_unsigned())) {
        throw ConfigError(f.path(key) + ": expected an array of integers");
      }
      out.push_back(static_cast<Int>(e.get<std::int64_t>()));
    }
  }
}

// Runs `validate` and re-raises any library error as a ConfigError at `path`.
template <typename Fn>
void checked(const std::string& path, Fn&& validate) {
  try {
    validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void apply_grid(const json& doc, const std::string& path, GridShape& shape) {
  Fields f(doc, path);
  f.integer("height", shape.height);
  f.integer("width", shape.width);
  f.choice("mode", shape.mode, kGridModes);
  f.integer("split_factor", shape.split_factor);
  f.finish();
  checked(path, [&] { shape.validate(); });
}

void apply_annotation(const json& doc, const std::string& path, Annotation& ann,
                      std::optional<double>* target_ratio = nullptr) {
  Fields f(doc, path);
  std::string kind = ann.kind == AnnotationKind::kDot ? "dot" : "gaussian";
  f.string("kind", kind);
  if (kind == "dot") {
    ann = Annotation::dot();
  } else if (kind == "gaussian") {
    double sigma = ann.kind == AnnotationKind::kGaussian ? ann.sigma : 2.0;
    int radius = -1;
    f.number("sigma", sigma);
    f.integer("truncation_radius", radius);
    if (target_ratio != nullptr) {
      double target = 0.0;
      if (f.find("target_ratio") != nullptr) {
        f.number("target_ratio", target);
        *target_ratio = target;
      }
    }
    checked(path, [&] { ann = Annotation::gaussian(sigma, radius); });
  } else {
    throw ConfigError(f.path("kind") + ": unknown value '" + kind + "' (expected dot or gaussian)");
  }
  f.finish();
}

void apply_synth(const json& doc, const std::string& path, SynthSpec& spec) {
  Fields f(doc, path);
  f.integer("num_instances", spec.num_instances);
  if (const json* g = f.find("grid")) apply_grid(*g, f.path("grid"), spec.grid);
  f.integer("num_keypoints", spec.num_keypoints);
  f.integer("feature_dim", spec.feature_dim);
  f.number("noise_sigma", spec.noise_sigma);
  if (const json* r = f.find("area_range")) {
    if (!r->is_array() || r->size() != 2 || !(*r)[0].is_number() || !(*r)[1].is_number()) {
      throw ConfigError(f.path("area_range") + ": expected [min, max]");
    }
    spec.area_range = {(*r)[0].get<double>(), (*r)[1].get<double>()};
  }
  f.number("occlusion_prob", spec.occlusion_prob);
  f.number("encoding_length_scale", spec.encoding_length_scale);
  f.boolean("scale_feature", spec.scale_feature);
  f.finish();
  checked(path, [&] { spec.validate(); });
}

void apply_loss(const json& doc, const std::string& path, LossConfig& cfg) {
  Fields f(doc, path);
  std::string preset;
  if (f.string("preset", preset)) {
    if (preset == "vitpose_b") {
      cfg = LossConfig::vitpose_b();
    } else if (preset == "vitpose_h") {
      cfg = LossConfig::vitpose_h();
    } else if (preset == "simcc_res50") {
      cfg = LossConfig::simcc_res50();
    } else if (preset == "simcc_hrnet48") {
      cfg = LossConfig::simcc_hrnet48();
    } else {
      throw ConfigError(f.path("preset") + ": unknown preset '" + preset + "'");
    }
  }
  f.number("rank_delta", cfg.rank_delta);
  f.number("rank_coeff", cfg.rank_coeff);
  f.number("sort_delta", cfg.sort_delta);
  f.number("sort_coeff", cfg.sort_coeff);
  f.number("isort_delta", cfg.isort_delta);
  f.number("isort_coeff", cfg.isort_coeff);
  f.number("positivity_threshold", cfg.positivity_threshold);
  f.boolean("include_self_pair", cfg.include_self_pair);
  f.finish();
  checked(path, [&] { cfg.validate(); });
}

void apply_train(const json& doc, const std::string& path, TrainConfig& cfg) {
  Fields f(doc, path);
  f.choice("model", cfg.model, kModels);
  f.choice("loss", cfg.loss, kLosses);
  f.choice("layout", cfg.layout, kLayouts);
  f.integer("split_factor", cfg.split_factor);
  if (const json* a = f.find("annotation")) apply_annotation(*a, f.path("annotation"), cfg.annotation);
  if (const json* a = f.find("annotation_1d")) {
    apply_annotation(*a, f.path("annotation_1d"), cfg.annotation_1d);
  }
  f.number("kl_beta", cfg.kl_beta);
  f.number("lr", cfg.lr);
  f.integer("epochs", cfg.epochs);
  f.integer("batch_size", cfg.batch_size);
  integer_list(f, "lr_decay_epochs", cfg.lr_decay_epochs);
  f.number("lr_gamma", cfg.lr_gamma);
  f.choice("optimizer", cfg.optimizer, kOptimizers);
  f.number("holdout_fraction", cfg.holdout_fraction);
  f.number("init_scale", cfg.init_scale);
  f.finish();
}

void apply_eval(const json& doc, const std::string& path, EvalConfig& cfg) {
  Fields f(doc, path);
  number_list(f, "thresholds", cfg.options.thresholds);
  f.number("pck_alpha", cfg.options.pck_alpha);
  f.choice("pck_reference", cfg.options.pck_reference, kPckRefs);
  number_list(f, "falloffs", cfg.falloffs);
  f.finish();
  for (double t : cfg.options.thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError(f.path("thresholds") + ": thresholds must lie in (0, 1)");
  }
  if (cfg.options.thresholds.empty()) throw ConfigError(f.path("thresholds") + ": must not be empty");
  if (!(cfg.options.pck_alpha > 0.0)) throw ConfigError(f.path("pck_alpha") + ": must be positive");
  for (double k : cfg.falloffs) {
    if (!(k > 0.0)) throw ConfigError(f.path("falloffs") + ": falloffs must be positive");
  }
}

ImbalanceCase parse_imbalance_case(const json& doc, const std::string& path) {
  Fields f(doc, path);
  ImbalanceCase c;
  f.string("name", c.name);
  if (const json* g = f.find("grid")) {
    apply_grid(*g, f.path("grid"), c.shape);
  } else {
    throw ConfigError(f.path("grid") + ": required");
  }
  if (const json* a = f.find("annotation")) apply_annotation(*a, f.path("annotation"), c.annotation, &c.target_ratio);
  f.number("tau", c.tau);
  f.finish();
  if (!(c.tau >= 0.0 && c.tau < 1.0)) throw ConfigError(f.path("tau") + ": must lie in [0, 1)");
  if (c.name.empty()) throw ConfigError(f.path("name") + ": required");
  return c;
}

void apply_verify(const json& doc, const std::string& path, VerifyConfig& cfg) {
  Fields f(doc, path);
  f.integer("cases", cfg.cases);
  f.number("tolerance", cfg.tolerance);
  f.integer("finite_diff_cases", cfg.finite_diff_cases);
  f.number("finite_diff_epsilon", cfg.finite_diff_epsilon);
  f.number("finite_diff_tolerance", cfg.finite_diff_tolerance);
  f.finish();
  if (!(cfg.tolerance > 0.0)) throw ConfigError(f.path("tolerance") + ": must be positive");
  if (!(cfg.finite_diff_epsilon > 0.0)) throw ConfigError(f.path("finite_diff_epsilon") + ": must be positive");
}

void apply_benchmark(const json& doc, const std::string& path, const TrainConfig& base,
                     BenchmarkConfig& cfg) {
  Fields f(doc, path);
  integer_list(f, "seeds", cfg.seeds);
  if (const json* runs = f.find("runs")) {
    if (!runs->is_array()) throw ConfigError(f.path("runs") + ": expected an array");
    cfg.runs.clear();
    for (std::size_t i = 0; i < runs->size(); ++i) {
      const std::string rpath = f.path("runs") + "[" + std::to_string(i) + "]";
      Fields rf((*runs)[i], rpath);
      BenchmarkRun run{"", base};
      rf.string("name", run.name);
      if (run.name.empty()) throw ConfigError(rf.path("name") + ": required");
      if (const json* t = rf.find("train")) apply_train(*t, rf.path("train"), run.train);
      if (const json* l = rf.find("loss")) apply_loss(*l, rf.path("loss"), run.train.loss_cfg);
      rf.finish();
      checked(rpath, [&] { run.train.validate(); });
      cfg.runs.push_back(std::move(run));
    }
  }
  f.string("reference", cfg.reference);
  f.string("candidate", cfg.candidate);
  f.number("min_spearman_gain", cfg.min_spearman_gain);
  f.number("max_error_ratio", cfg.max_error_ratio);
  f.finish();
  const auto known = [&](const std::string& name) {
    if (name.empty()) return true;
    for (const auto& r : cfg.runs) {
      if (r.name == name) return true;
    }
    return false;
  };
  if (!known(cfg.reference)) throw ConfigError(f.path("reference") + ": no run named '" + cfg.reference + "'");
  if (!known(cfg.candidate)) throw ConfigError(f.path("candidate") + ": no run named '" + cfg.candidate + "'");
}

}  // namespace

void RunConfig::propagate() {
  synth.seed = seed;
  train.seed = seed;
  train.workers = workers;
  for (auto& run : benchmark.runs) run.train.workers = workers;
}

std::vector<ImbalanceCase> standard_imbalance_cases() {
  const GridShape grid2d = GridShape::two_d(64, 48);
  const GridShape x = GridShape::one_d_x(192, 2);
  const GridShape y = GridShape::one_d_y(256, 2);
  return {
      {"heatmap_dot", grid2d, Annotation::dot(), std::nullopt, 0.0},
      {"heatmap_gaussian", grid2d, Annotation::gaussian(2.0), std::nullopt, 0.0},
      {"simcc_x_dot", x, Annotation::dot(), std::nullopt, 0.0},
      {"simcc_y_dot", y, Annotation::dot(), std::nullopt, 0.0},
      {"simcc_x_gaussian", x, Annotation::gaussian(2.0), 1.2, 0.0},
      {"simcc_y_gaussian", y, Annotation::gaussian(2.0), 2.0, 0.0},
  };
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.imbalance = standard_imbalance_cases();
  cfg.propagate();
  return cfg;
}

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg = default_run_config();
  Fields f(doc, "");
  f.integer("seed", cfg.seed);
  f.integer("workers", cfg.workers);
  if (cfg.workers < 1) throw ConfigError("workers: must be >= 1");
  if (const json* s = f.find("synth")) apply_synth(*s, "synth", cfg.synth);
  if (const json* l = f.find("loss")) apply_loss(*l, "loss", cfg.train.loss_cfg);
  if (const json* t = f.find("train")) apply_train(*t, "train", cfg.train);
  checked("train", [&] { cfg.train.validate(); });
  if (const json* e = f.find("eval")) apply_eval(*e, "eval", cfg.eval);
  if (const json* im = f.find("imbalance")) {
    Fields imf(*im, "imbalance");
    if (const json* cases = imf.find("cases")) {
      if (!cases->is_array()) throw ConfigError("imbalance.cases: expected an array");
      cfg.imbalance.clear();
      for (std::size_t i = 0; i < cases->size(); ++i) {
        cfg.imbalance.push_back(parse_imbalance_case((*cases)[i], "imbalance.cases[" + std::to_string(i) + "]"));
      }
    }
    imf.finish();
  }
  if (const json* v = f.find("verify")) apply_verify(*v, "verify", cfg.verify);
  if (const json* b = f.find("benchmark")) apply_benchmark(*b, "benchmark", cfg.train, cfg.benchmark);
  f.finish();
  cfg.propagate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return parse_run_config(doc);
}

const char* to_string(TrainLoss loss) { return name_of(loss, kLosses); }
const char* to_string(ModelKind model) { return name_of(model, kModels); }
const char* to_string(OutputLayout layout) { return name_of(layout, kLayouts); }
const char* to_string(OptimizerKind optimizer) { return name_of(optimizer, kOptimizers); }
const char* to_string(GridMode mode) { return name_of(mode, kGridModes); }

json to_json(const GridShape& shape) {
  return {{"height", shape.height},
          {"width", shape.width},
          {"mode", to_string(shape.mode)},
          {"split_factor", shape.split_factor}};
}

json to_json(const Annotation& annotation) {
  if (annotation.kind == AnnotationKind::kDot) return {{"kind", "dot"}};
  return {{"kind", "gaussian"}, {"sigma", annotation.sigma}, {"truncation_radius", annotation.truncation_radius}};
}

json to_json(const SynthSpec& spec) {
  return {{"num_instances", spec.num_instances},
          {"grid", to_json(spec.grid)},
          {"num_keypoints", spec.num_keypoints},
          {"feature_dim", spec.feature_dim},
          {"noise_sigma", spec.noise_sigma},
          {"area_range", {spec.area_range.first, spec.area_range.second}},
          {"occlusion_prob", spec.occlusion_prob},
          {"encoding_length_scale", spec.encoding_length_scale},
          {"scale_feature", spec.scale_feature}};
}

json to_json(const LossConfig& cfg) {
  return {{"rank_delta", cfg.rank_delta},
          {"rank_coeff", cfg.rank_coeff},
          {"sort_delta", cfg.sort_delta},
          {"sort_coeff", cfg.sort_coeff},
          {"isort_delta", cfg.isort_delta},
          {"isort_coeff", cfg.isort_coeff},
          {"positivity_threshold", cfg.positivity_threshold},
          {"include_self_pair", cfg.include_self_pair}};
}

json to_json(const TrainConfig& cfg) {
  return {{"model", to_string(cfg.model)},
          {"loss", to_string(cfg.loss)},
          {"layout", to_string(cfg.layout)},
          {"split_factor", cfg.split_factor},
          {"annotation", to_json(cfg.annotation)},
          {"annotation_1d", to_json(cfg.annotation_1d)},
          {"kl_beta", cfg.kl_beta},
          {"lr", cfg.lr},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr_decay_epochs", cfg.lr_decay_epochs},
          {"lr_gamma", cfg.lr_gamma},
          {"optimizer", to_string(cfg.optimizer)},
          {"holdout_fraction", cfg.holdout_fraction},
          {"init_scale", cfg.init_scale}};
}

json to_json(const RunConfig& cfg) {
  json imbalance = json::array();
  for (const auto& c : cfg.imbalance) {
    json ann = to_json(c.annotation);
    if (c.target_ratio) ann["target_ratio"] = *c.target_ratio;
    imbalance.push_back({{"name", c.name}, {"grid", to_json(c.shape)}, {"annotation", ann}, {"tau", c.tau}});
  }
  json runs = json::array();
  for (const auto& r : cfg.benchmark.runs) {
    runs.push_back({{"name", r.name}, {"train", to_json(r.train)}, {"loss", to_json(r.train.loss_cfg)}});
  }
  return {{"seed", cfg.seed},
          {"workers", cfg.workers},
          {"synth", to_json(cfg.synth)},
          {"loss", to_json(cfg.train.loss_cfg)},
          {"train", to_json(cfg.train)},
          {"eval",
           {{"thresholds", cfg.eval.options.thresholds},
            {"pck_alpha", cfg.eval.options.pck_alpha},
            {"pck_reference", name_of(cfg.eval.options.pck_reference, kPckRefs)},
            {"falloffs", cfg.eval.falloffs}}},
          {"imbalance", {{"cases", imbalance}}},
          {"verify",
           {{"cases", cfg.verify.cases},
            {"tolerance", cfg.verify.tolerance},
            {"finite_diff_cases", cfg.verify.finite_diff_cases},
            {"finite_diff_epsilon", cfg.verify.finite_diff_epsilon},
            {"finite_diff_tolerance", cfg.verify.finite_diff_tolerance}}},
          {"benchmark",
           {{"seeds", cfg.benchmark.seeds},
            {"runs", runs},
            {"reference", cfg.benchmark.reference},
            {"candidate", cfg.benchmark.candidate},
            {"min_spearman_gain", cfg.benchmark.min_spearman_gain},
            {"max_error_ratio", cfg.benchmark.max_error_ratio}}}};
}

SynthSpec synth_from_json(const json& doc, const std::string& path) {
  SynthSpec spec;
  apply_synth(doc, path, spec);
  return spec;
}

Annotation annotation_from_json(const json& doc, const std::string& path) {
  Annotation ann;
  apply_annotation(doc, path, ann);
  return ann;
}

GridShape grid_from_json(const json& doc, const std::string& path) {
  GridShape shape;
  apply_grid(doc, path, shape);
  return shape;
}

}  // namespace rankpose::cli
