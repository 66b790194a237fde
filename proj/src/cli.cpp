#include "scaat/cli.hpp"

#include "scaat/checkpoint.hpp"
#include "scaat/config.hpp"
#include "scaat/fileio.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace scaat {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig read_config(const std::string& path) {
  if (path.empty()) throw UsageError("no config given (use --config)");
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  return load_run_config(path);
}

// The config used to evaluate a checkpoint: --config when given, else the
// config.json a `train` run left next to it.
RunConfig config_for(const std::string& ckpt, const std::string& explicit_config) {
  if (!explicit_config.empty()) return read_config(explicit_config);
  const fs::path beside = fs::path(ckpt).parent_path() / "config.json";
  if (!fs::exists(beside)) {
    throw UsageError("no --config given and no config.json next to " + ckpt);
  }
  return load_run_config(beside);
}

struct Loaded {
  RunConfig config;
  Dataset data;
  ParamSet<float> params;
};

Loaded load_model(const std::string& ckpt, const std::string& config, const std::string& split) {
  Loaded l{config_for(ckpt, config), {}, {}};
  if (split != "train" && split != "test") throw UsageError("--dataset must be train or test");
  l.data = load_split(l.config, split);
  l.params = load_checkpoint(ckpt, l.config.model_spec(l.data));
  return l;
}

std::vector<std::size_t> parse_indices(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("--indices: '" + item + "' is not an index");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--indices: no sample index given");
  return out;
}

std::string cell(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Common {
  std::string ckpt, config, split = "test", saliency, out;
  std::size_t limit = 0;
  bool limit_set = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--ckpt", c.ckpt, "SCT1 checkpoint")->required();
  cmd->add_option("--config", c.config, "run config (default: config.json beside the checkpoint)");
  cmd->add_option("--dataset", c.split, "split to use: train|test")->capture_default_str();
  cmd->add_option("--saliency", c.saliency, "vanilla|smoothgrad|ig (default: from config)");
  cmd->add_option("--out", c.out, "output directory");
}

EvalConfig eval_for(const RunConfig& rc, const Common& c, std::size_t limit, bool limit_set) {
  EvalConfig e = rc.eval_config();
  if (!c.saliency.empty()) {
    try {
      e.saliency = saliency_method_from_string(c.saliency);
    } catch (const std::invalid_argument& ex) {
      throw UsageError(ex.what());
    }
  }
  if (limit_set) e.limit = limit;
  return e;
}

fs::path default_out(const std::string& ckpt, const std::string& what) {
  return fs::path(ckpt).parent_path() / what;
}

int cmd_train(const std::string& config_path, const std::string& mode, const std::string& out_dir,
              const std::optional<std::uint64_t>& seed,
              const std::optional<std::size_t>& iterations, std::ostream& out) {
  RunConfig rc = read_config(config_path);
  if (!mode.empty()) {
    try {
      rc.train.mode = train_mode_from_string(mode);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (!out_dir.empty()) rc.output_dir = out_dir;
  if (seed) rc.seed = *seed;
  if (iterations) rc.train.iterations = *iterations;
  rc.validate();

  const Dataset data = load_split(rc, "train");
  const ModelSpec spec = rc.model_spec(data);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = scaat_train(data, spec, rc.train_config());
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path dir = rc.output_dir;
  write_file_atomic(dir / "config.json", dump_json(to_json(rc)));
  write_file_atomic(dir / "model.json", dump_json(to_json(spec)));
  save_checkpoint(dir / "model.sct", result.params);
  write_file_atomic(dir / "qstate.json", dump_json(to_json(result.q, result.q_history)));
  write_file_atomic(dir / "train_log.jsonl", training_log_jsonl(result.log));

  const auto& last = result.log.back();
  out << "trained " << to_string(rc.train.mode) << " for " << rc.train.iterations
      << " iterations in " << std::fixed << std::setprecision(1) << secs << " s\n"
      << std::defaultfloat << "final L_cls " << last.l_cls << ", L_adv " << last.l_adv
      << ", mean q " << last.mean_q << "\n"
      << "wrote " << (dir / "model.sct").string() << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, std::ostream& out) {
  auto l = load_model(c.ckpt, c.config, c.split);
  const EvalConfig e = eval_for(l.config, c, c.limit, c.limit_set);
  const auto report = evaluate_model(l.params, l.data, e);
  const fs::path dir = c.out.empty() ? default_out(c.ckpt, "eval-" + c.split) : fs::path(c.out);
  Json echo = to_json(l.config);
  echo["evaluation"]["saliency"] = to_string(e.saliency);
  echo["evaluation"]["limit"] = e.limit;
  echo["checkpoint"] = c.ckpt;
  echo["split"] = c.split;
  const auto files = export_report(report, dir, echo);
  out << "samples    " << report.samples.size() << "\n"
      << "accuracy   " << cell(report.accuracy) << "\n"
      << "entropy    " << cell(report.entropy) << "\n"
      << "size_kib   " << cell(report.size_kib) << "\n"
      << "gini       " << cell(report.gini) << "\n"
      << "aopc_lerf  " << cell(report.aopc_lerf) << "\n"
      << "aopc_morf  " << cell(report.aopc_morf) << "\n"
      << "aopc_rel   " << cell(report.aopc_rel) << "\n"
      << "wrote " << files.json.string() << " and " << files.csv.string() << "\n";
  return 0;
}

int cmd_saliency(const Common& c, const std::string& indices, const std::string& format,
                 std::ostream& out) {
  auto l = load_model(c.ckpt, c.config, c.split);
  const EvalConfig e = eval_for(l.config, c, 0, false);
  const fs::path dir = c.out.empty() ? default_out(c.ckpt, "saliency-" + c.split) : fs::path(c.out);
  for (std::size_t i : parse_indices(indices)) {
    if (i >= l.data.size()) {
      throw UsageError("--indices: sample " + std::to_string(i) + " outside dataset of " +
                       std::to_string(l.data.size()));
    }
    Rng rng = make_rng(e.seed, Stream::smoothing, i);
    const auto map = saliency_for(l.params, l.data.sample(i), l.data.labels[i], e, rng);
    const std::string stem = "saliency_" + std::to_string(i);
    if (format == "pgm" || format == "both") write_pgm(dir / (stem + ".pgm"), map);
    if (format == "csv" || format == "both") write_csv(dir / (stem + ".csv"), map);
    out << "sample " << i << " label " << l.data.labels[i] << " -> " << (dir / stem).string()
        << "\n";
  }
  return 0;
}

int cmd_curves(const Common& c, const std::string& order, std::ostream& out) {
  auto l = load_model(c.ckpt, c.config, c.split);
  const EvalConfig e = eval_for(l.config, c, c.limit, c.limit_set);
  const auto report = evaluate_model(l.params, l.data, e);
  const fs::path dir = c.out.empty() ? default_out(c.ckpt, "curves-" + c.split) : fs::path(c.out);
  if (order == "lerf" || order == "both") {
    write_file_atomic(dir / "curve_lerf.csv", curve_csv(report.lerf));
    out << "LeRF AOPC " << cell(report.aopc_lerf) << " -> " << (dir / "curve_lerf.csv").string()
        << "\n";
  }
  if (order == "morf" || order == "both") {
    write_file_atomic(dir / "curve_morf.csv", curve_csv(report.morf));
    out << "MoRF AOPC " << cell(report.aopc_morf) << " -> " << (dir / "curve_morf.csv").string()
        << "\n";
  }
  return 0;
}

MetricsReport report_for(const std::string& source, const std::string& config,
                         const Common& c) {
  // A metrics.json from an earlier `evaluate` is reused as is.
  if (fs::path(source).extension() == ".json") {
    try {
      return report_from_json(Json::parse(read_file(source)));
    } catch (const Json::exception& e) {
      throw ConfigError(source + ": " + e.what());
    }
  }
  auto l = load_model(source, config, c.split);
  return evaluate_model(l.params, l.data, eval_for(l.config, c, c.limit, c.limit_set));
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& a_config,
                const std::string& b_config, const Common& c, std::ostream& out) {
  const auto ra = report_for(a, a_config, c);
  const auto rb = report_for(b, b_config, c);
  struct Row {
    const char* name;
    double a, b;
  };
  const Row rows[] = {{"entropy", ra.entropy, rb.entropy},
                      {"size_kib", ra.size_kib, rb.size_kib},
                      {"aopc_lerf", ra.aopc_lerf, rb.aopc_lerf},
                      {"aopc_morf", ra.aopc_morf, rb.aopc_morf},
                      {"aopc_rel", ra.aopc_rel, rb.aopc_rel},
                      {"gini", ra.gini, rb.gini},
                      {"accuracy", ra.accuracy, rb.accuracy}};
  std::string csv = "metric,a,b,delta\n";
  out << std::left << std::setw(12) << "metric" << std::setw(14) << "a" << std::setw(14) << "b"
      << "delta (b-a)\n";
  for (const auto& r : rows) {
    const double d = r.b - r.a;
    out << std::setw(12) << r.name << std::setw(14) << cell(r.a) << std::setw(14) << cell(r.b)
        << cell(d) << "\n";
    csv += std::string(r.name) + "," + cell(r.a) + "," + cell(r.b) + "," + cell(d) + "\n";
  }
  if (!c.out.empty()) write_file_atomic(fs::path(c.out) / "compare.csv", csv);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Saliency-constrained adaptive adversarial training", "scaat"};
  app.require_subcommand(1);

  std::string config, mode, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config, "run config JSON");
  train->add_option("--mode", mode, "regular|scaat-fixed|scaat-adaptive (default: from config)");
  train->add_option("--out", out_dir, "output directory (default: from config)");
  train->add_option("--seed", seed, "override the run seed");
  train->add_option("--iterations", iterations, "override the iteration count");

  Common ev, sal, cur, cmp;
  auto* evaluate = app.add_subcommand("evaluate", "metrics suite over a checkpoint");
  add_common(evaluate, ev);
  evaluate->add_option("--limit", ev.limit, "evaluate the first N samples");

  std::string indices, format = "both";
  auto* saliency = app.add_subcommand("saliency", "export saliency maps of chosen samples");
  add_common(saliency, sal);
  saliency->add_option("--indices", indices, "comma-separated sample indices")->required();
  saliency->add_option("--format", format, "pgm|csv|both")
      ->check(CLI::IsMember({"pgm", "csv", "both"}))
      ->capture_default_str();

  std::string order = "both";
  auto* curves = app.add_subcommand("curves", "export mean LeRF/MoRF perturbation curves");
  add_common(curves, cur);
  curves->add_option("--limit", cur.limit, "evaluate the first N samples");
  curves->add_option("--order", order, "lerf|morf|both")
      ->check(CLI::IsMember({"lerf", "morf", "both"}))
      ->capture_default_str();

  std::string a, b, a_config, b_config;
  auto* compare = app.add_subcommand("compare", "metric table for two checkpoints");
  compare->add_option("--a", a, "checkpoint or metrics.json")->required();
  compare->add_option("--b", b, "checkpoint or metrics.json")->required();
  compare->add_option("--a-config", a_config, "config for --a");
  compare->add_option("--b-config", b_config, "config for --b");
  compare->add_option("--dataset", cmp.split, "split to use: train|test")->capture_default_str();
  compare->add_option("--saliency", cmp.saliency, "vanilla|smoothgrad|ig");
  compare->add_option("--limit", cmp.limit, "evaluate the first N samples");
  compare->add_option("--out", cmp.out, "also write compare.csv here");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(config, mode, out_dir, seed, iterations, out);
    ev.limit_set = evaluate->count("--limit") > 0;
    cur.limit_set = curves->count("--limit") > 0;
    cmp.limit_set = compare->count("--limit") > 0;
    if (evaluate->parsed()) return cmd_evaluate(ev, out);
    if (saliency->parsed()) return cmd_saliency(sal, indices, format, out);
    if (curves->parsed()) return cmd_curves(cur, order, out);
    if (compare->parsed()) return cmd_compare(a, b, a_config, b_config, cmp, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace scaat
