#include "scaat/config.hpp"

#include "scaat/fileio.hpp"

#include <cstdio>
#include <limits>
#include <set>

namespace scaat {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Reads the keys of one JSON object, remembering which ones were used so
// that leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string name;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, name);
    try {
      out = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

Json num(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }

double num_from(const Json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? kNaN : v.get<double>();
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool same_number(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same_curve(const PerturbationCurve& a, const PerturbationCurve& b) {
  return a.order == b.order && a.fraction == b.fraction && a.repeats == b.repeats &&
         a.values == b.values && a.stddev == b.stddev;
}

}  // namespace

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

ModelSpec RunConfig::model_spec(const Dataset& data) const {
  return ModelSpec{model.arch,      data.channels, data.height, data.width,
                   data.num_classes, model.hidden, seed};
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e = eval;
  e.seed = seed;
  return e;
}

void RunConfig::validate() const {
  try {
    train_config().validate();
    eval_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (model.arch == Arch::cnn && model.hidden.empty()) {
    throw ConfigError("model.hidden: a cnn needs at least one conv layer");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

Json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& e = c.eval;
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"format", to_string(c.dataset.format)},
                  {"train", c.dataset.train},
                  {"test", c.dataset.test},
                  {"train_limit", c.dataset.train_limit},
                  {"test_limit", c.dataset.test_limit}};
  j["model"] = {{"arch", to_string(c.model.arch)}, {"hidden", c.model.hidden}};
  j["train"] = {{"mode", to_string(t.mode)},
                {"lambda", t.lambda},
                {"batch_size", t.batch_size},
                {"iterations", t.iterations},
                {"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"optimizer", t.optimizer},
                {"mask_region", opt(t.mask_region)},
                {"adversarial",
                 {{"variant", to_string(t.adv.variant)},
                  {"epsilon", t.adv.epsilon},
                  {"steps", t.adv.steps},
                  {"alpha", opt(t.adv.alpha)}}},
                {"q",
                 {{"q0", t.q.q0},
                  {"gamma", t.q.gamma},
                  {"q_min", t.q.q_min},
                  {"q_max", t.q.q_max},
                  {"warmup_iters", opt(t.q.warmup_iters)}}}};
  j["evaluation"] = {{"saliency", to_string(e.saliency)},
                     {"steps", e.curve.steps},
                     {"fraction", e.curve.fraction},
                     {"repeats", e.curve.repeats},
                     {"region", opt(e.curve.region)},
                     {"smoothgrad_samples", e.smoothgrad_samples},
                     {"smoothgrad_sigma", e.smoothgrad_sigma},
                     {"ig_steps", e.ig_steps},
                     {"limit", e.limit}};
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Reader top(j, "config");
  int version = 0;
  top.get("schema_version", version);
  if (version != kSchemaVersion) {
    throw ConfigError("config.schema_version: expected " + std::to_string(kSchemaVersion) +
                      ", got " + std::to_string(version));
  }
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);
  if (const Json* d = top.child("dataset")) {
    Reader r(*d, "config.dataset");
    r.get_enum("format", c.dataset.format, dataset_format_from_string);
    r.get("train", c.dataset.train);
    r.get("test", c.dataset.test);
    r.get("train_limit", c.dataset.train_limit);
    r.get("test_limit", c.dataset.test_limit);
    r.finish();
  }
  if (const Json* m = top.child("model")) {
    Reader r(*m, "config.model");
    r.get_enum("arch", c.model.arch, arch_from_string);
    r.get("hidden", c.model.hidden);
    r.finish();
  }
  if (const Json* tj = top.child("train")) {
    auto& t = c.train;
    Reader r(*tj, "config.train");
    r.get_enum("mode", t.mode, train_mode_from_string);
    r.get("lambda", t.lambda);
    r.get("batch_size", t.batch_size);
    r.get("iterations", t.iterations);
    r.get("learning_rate", t.learning_rate);
    r.get("momentum", t.momentum);
    r.get("optimizer", t.optimizer);
    r.get("mask_region", t.mask_region);
    if (const Json* a = r.child("adversarial")) {
      Reader ra(*a, "config.train.adversarial");
      ra.get_enum("variant", t.adv.variant, attack_variant_from_string);
      ra.get("epsilon", t.adv.epsilon);
      ra.get("steps", t.adv.steps);
      ra.get("alpha", t.adv.alpha);
      ra.finish();
    }
    if (const Json* q = r.child("q")) {
      Reader rq(*q, "config.train.q");
      rq.get("q0", t.q.q0);
      rq.get("gamma", t.q.gamma);
      rq.get("q_min", t.q.q_min);
      rq.get("q_max", t.q.q_max);
      rq.get("warmup_iters", t.q.warmup_iters);
      rq.finish();
    }
    r.finish();
  }
  if (const Json* ej = top.child("evaluation")) {
    auto& e = c.eval;
    Reader r(*ej, "config.evaluation");
    r.get_enum("saliency", e.saliency, saliency_method_from_string);
    r.get("steps", e.curve.steps);
    r.get("fraction", e.curve.fraction);
    r.get("repeats", e.curve.repeats);
    r.get("region", e.curve.region);
    r.get("smoothgrad_samples", e.smoothgrad_samples);
    r.get("smoothgrad_sigma", e.smoothgrad_sigma);
    r.get("ig_steps", e.ig_steps);
    r.get("limit", e.limit);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Dataset load_split(const RunConfig& c, const std::string& split) {
  const bool test = split == "test";
  return load_dataset(test ? c.dataset.test : c.dataset.train, c.dataset.format, split,
                      test ? c.dataset.test_limit : c.dataset.train_limit);
}

Json to_json(const ModelSpec& s) {
  return {{"arch", to_string(s.arch)},   {"channels", s.channels},
          {"height", s.height},          {"width", s.width},
          {"num_classes", s.num_classes}, {"hidden", s.hidden},
          {"seed", s.seed}};
}

ModelSpec model_spec_from_json(const Json& j) {
  ModelSpec s;
  Reader r(j, "model");
  r.get_enum("arch", s.arch, arch_from_string);
  r.get("channels", s.channels);
  r.get("height", s.height);
  r.get("width", s.width);
  r.get("num_classes", s.num_classes);
  r.get("hidden", s.hidden);
  r.get("seed", s.seed);
  r.finish();
  return s;
}

Json to_json(const LogRecord& r) {
  return {{"iter", r.iter},
          {"L_cls", r.l_cls},
          {"L_adv", r.l_adv},
          {"mean_q", r.mean_q},
          {"batch_acc", r.batch_acc}};
}

std::string training_log_jsonl(std::span<const LogRecord> log) {
  std::string out;
  for (const auto& r : log) out += to_json(r).dump() + "\n";
  return out;
}

Json to_json(const QState& q, std::span<const std::vector<double>> history) {
  Json h = Json::array();
  for (const auto& snap : history) h.push_back(snap);
  return {{"q0", q.cfg.q0},
          {"gamma", q.cfg.gamma},
          {"q_min", q.cfg.q_min},
          {"q_max", q.cfg.q_max},
          {"warmup_iters", q.warmup_iters},
          {"mean_q", q.mean()},
          {"q", q.q},
          {"history", std::move(h)}};
}

Json to_json(const PerturbationCurve& c) {
  Json values = Json::array(), stddev = Json::array();
  for (double v : c.values) values.push_back(num(v));
  for (double v : c.stddev) stddev.push_back(num(v));
  return {{"order", to_string(c.order)},
          {"steps", c.steps()},
          {"fraction", c.fraction},
          {"repeats", c.repeats},
          {"values", std::move(values)},
          {"std", std::move(stddev)}};
}

PerturbationCurve curve_from_json(const Json& j) {
  PerturbationCurve c;
  c.order = order_from_string(j.at("order").get<std::string>());
  c.fraction = j.at("fraction").get<double>();
  c.repeats = j.at("repeats").get<std::size_t>();
  for (const auto& v : j.at("values")) c.values.push_back(v.is_null() ? kNaN : v.get<double>());
  for (const auto& v : j.at("std")) c.stddev.push_back(v.is_null() ? kNaN : v.get<double>());
  return c;
}

Json to_json(const MetricsReport& r) {
  Json samples = Json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"index", s.index},
                       {"label", s.label},
                       {"predicted", s.predicted},
                       {"entropy", num(s.entropy)},
                       {"size_kib", num(s.size_kib)},
                       {"gini", num(s.gini)},
                       {"aopc_lerf", num(s.aopc_lerf)},
                       {"aopc_morf", num(s.aopc_morf)},
                       {"aopc_rel", num(s.aopc_rel)}});
  }
  return {{"aggregate",
           {{"samples", r.samples.size()},
            {"entropy", num(r.entropy)},
            {"size_kib", num(r.size_kib)},
            {"gini", num(r.gini)},
            {"aopc_lerf", num(r.aopc_lerf)},
            {"aopc_morf", num(r.aopc_morf)},
            {"aopc_rel", num(r.aopc_rel)},
            {"accuracy", num(r.accuracy)}}},
          {"curves", {{"lerf", to_json(r.lerf)}, {"morf", to_json(r.morf)}}},
          {"samples", std::move(samples)}};
}

MetricsReport report_from_json(const Json& j) {
  MetricsReport r;
  try {
    const auto& a = j.at("aggregate");
    r.entropy = num_from(a, "entropy");
    r.size_kib = num_from(a, "size_kib");
    r.gini = num_from(a, "gini");
    r.aopc_lerf = num_from(a, "aopc_lerf");
    r.aopc_morf = num_from(a, "aopc_morf");
    r.aopc_rel = num_from(a, "aopc_rel");
    r.accuracy = num_from(a, "accuracy");
    r.lerf = curve_from_json(j.at("curves").at("lerf"));
    r.morf = curve_from_json(j.at("curves").at("morf"));
    for (const auto& s : j.at("samples")) {
      SampleMetrics m;
      m.index = s.at("index").get<std::size_t>();
      m.label = s.at("label").get<int>();
      m.predicted = s.at("predicted").get<int>();
      m.entropy = num_from(s, "entropy");
      m.size_kib = num_from(s, "size_kib");
      m.gini = num_from(s, "gini");
      m.aopc_lerf = num_from(s, "aopc_lerf");
      m.aopc_morf = num_from(s, "aopc_morf");
      m.aopc_rel = num_from(s, "aopc_rel");
      r.samples.push_back(m);
    }
  } catch (const std::exception& e) {
    throw ConfigError(std::string("metrics report: ") + e.what());
  }
  return r;
}

bool same_report(const MetricsReport& a, const MetricsReport& b) {
  if (a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto &x = a.samples[i], &y = b.samples[i];
    if (x.index != y.index || x.label != y.label || x.predicted != y.predicted) return false;
    if (!same_number(x.entropy, y.entropy) || !same_number(x.size_kib, y.size_kib) ||
        !same_number(x.gini, y.gini) || !same_number(x.aopc_lerf, y.aopc_lerf) ||
        !same_number(x.aopc_morf, y.aopc_morf) || !same_number(x.aopc_rel, y.aopc_rel)) {
      return false;
    }
  }
  return same_number(a.entropy, b.entropy) && same_number(a.size_kib, b.size_kib) &&
         same_number(a.gini, b.gini) && same_number(a.aopc_lerf, b.aopc_lerf) &&
         same_number(a.aopc_morf, b.aopc_morf) && same_number(a.aopc_rel, b.aopc_rel) &&
         same_number(a.accuracy, b.accuracy) && same_curve(a.lerf, b.lerf) &&
         same_curve(a.morf, b.morf);
}

std::string report_csv(const MetricsReport& r) {
  std::string out = "index,label,predicted,entropy,size_kib,gini,aopc_lerf,aopc_morf,aopc_rel\n";
  for (const auto& s : r.samples) {
    out += std::to_string(s.index) + "," + std::to_string(s.label) + "," +
           std::to_string(s.predicted) + "," + fmt(s.entropy) + "," + fmt(s.size_kib) + "," +
           fmt(s.gini) + "," + fmt(s.aopc_lerf) + "," + fmt(s.aopc_morf) + "," +
           fmt(s.aopc_rel) + "\n";
  }
  return out;
}

std::string curve_csv(const PerturbationCurve& c) {
  std::string out = "step,mean_decay,std\n";
  for (std::size_t l = 0; l < c.steps(); ++l) {
    out += std::to_string(l + 1) + "," + fmt(c.values[l]) + "," +
           fmt(l < c.stddev.size() ? c.stddev[l] : kNaN) + "\n";
  }
  return out;
}

ReportFiles export_report(const MetricsReport& r, const std::filesystem::path& dir,
                          const Json& config_echo) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create directory: " + ec.message());
  ReportFiles f{dir / "metrics.json", dir / "metrics.csv", dir / "curve_lerf.csv",
                dir / "curve_morf.csv"};
  Json j = to_json(r);
  if (config_echo.is_object() && config_echo.contains("seed")) j["seed"] = config_echo["seed"];
  j["config"] = config_echo;
  write_file_atomic(f.json, dump_json(j));
  write_file_atomic(f.csv, report_csv(r));
  write_file_atomic(f.lerf_csv, curve_csv(r.lerf));
  write_file_atomic(f.morf_csv, curve_csv(r.morf));
  return f;
}

}  // namespace scaat
