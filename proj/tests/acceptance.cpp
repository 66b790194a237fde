// Acceptance checks 1-10. Prints one PASS/FAIL/SKIP line per criterion.
// Exit status: 0 when every selected check passes, 1 on any failure, 77
// when the only selected check was skipped.

#include "scaat/checkpoint.hpp"
#include "scaat/cli.hpp"
#include "scaat/config.hpp"
#include "scaat/divergence.hpp"
#include "scaat/fileio.hpp"
#include "support/gradcheck.hpp"
#include "support/linear_probe.hpp"
#include "support/oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

using namespace scaat;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome verdict(bool ok, std::string detail) {
  return {ok ? Status::pass : Status::fail, std::move(detail)};
}

// 1. Finite-difference checks of every autodiff primitive.
Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(1, Stream::evaluation);
  double worst = 0.0;
  std::string worst_op;
  std::size_t failed = 0, total = 0;
  for (const auto& op : testing::primitive_names()) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto r = testing::primitive_trial(op, rng);
      ++total;
      if (!r.ok(1e-3)) ++failed;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_op = op;
      }
    }
  }
  const double secs = seconds_since(t0);
  return verdict(failed == 0 && secs < 60.0,
                 std::to_string(total) + " checks over " +
                     std::to_string(testing::primitive_names().size()) + " primitives, " +
                     std::to_string(failed) + " failed, worst rel err " +
                     fmt("%.2e", worst) + " (" + worst_op + "), " + fmt("%.1f s", secs));
}

// 2. KL/JS properties on random simplex pairs and the two reference values.
Outcome divergence_suite() {
  Rng rng = make_rng(2, Stream::evaluation);
  std::uniform_int_distribution<std::size_t> len(2, 10);
  std::exponential_distribution<double> gamma1(1.0);
  auto simplex = [&](std::size_t n) {
    std::vector<double> v(n);
    double s = 0;
    for (auto& x : v) s += (x = gamma1(rng));
    for (auto& x : v) x /= s;
    return v;
  };
  std::size_t violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = len(rng);
    const auto p = simplex(n), q = simplex(n);
    if (kl_div(p, q) < 0 || kl_div(q, p) < 0 || js_div(p, q) < 0) ++violations;
    if (js_div(p, q) != js_div(q, p)) ++violations;
    if (kl_div(p, p) != 0.0) ++violations;
  }
  // High-precision references: 1 - log2(3)/2 and 1 bit.
  const double ref1 = 0.20751874963942190927, ref2 = 1.0;
  const double e1 = std::abs(kl_div(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75}) - ref1);
  const double e2 = std::abs(kl_div(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}) - ref2);
  return verdict(violations == 0 && e1 <= 1e-6 && e2 <= 1e-6,
                 "10000 pairs, " + std::to_string(violations) + " violations; |KL - 0.20752| = " +
                     fmt("%.1e", e1) + ", |KL - 1 bit| = " + fmt("%.1e", e2));
}

// 3. Exact feasibility of masked PGD/FGSM perturbations.
template <typename T>
bool exact_feasible(const Perturbation<T>& p, double eps) {
  const T e = static_cast<T>(eps);
  const std::size_t plane = p.shape[1] * p.shape[2];
  std::vector<char> on(plane, 0);
  for (std::size_t k : p.mask) on[k] = 1;
  for (Eigen::Index i = 0; i < p.delta.size(); ++i) {
    const T v = p.delta(i);
    if (!(std::abs(v) <= e)) return false;
    if (!on[static_cast<std::size_t>(i) % plane] && v != T(0)) return false;
  }
  return true;
}

Outcome constraint_exactness() {
  Rng rng = make_rng(3, Stream::evaluation);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0;
  const double eps_choices[] = {1.0 / 255, 4.0 / 255, 8.0 / 255, 16.0 / 255, 0.1};
  for (int call = 0; call < 1000; ++call) {
    const bool use_cnn = call % 2 == 0;
    const std::size_t side = use_cnn ? 8 : 4, channels = 1 + call % 3;
    AdvConfig cfg;
    cfg.epsilon = eps_choices[call % 5];
    cfg.steps = 1 + call % 6;
    cfg.variant = call % 4 < 2 ? AttackVariant::pgd : AttackVariant::fgsm;
    if (call % 7 == 0) cfg.alpha = 2.5 * cfg.epsilon;
    const double keep = u(rng);
    IndexSet mask;
    for (std::size_t p = 0; p < side * side; ++p) {
      if (u(rng) < keep) mask.push_back(p);
    }
    Vec<double> xv(static_cast<Eigen::Index>(channels * side * side));
    for (auto& v : xv) {
      const double r = u(rng);
      v = r < 0.1 ? 0.0 : r > 0.9 ? 1.0 : u(rng);
    }
    const ModelSpec spec = use_cnn ? ModelSpec{Arch::cnn, channels, side, side, 3, {2}, std::uint64_t(call)}
                                   : ModelSpec{Arch::mlp, channels, side, side, 3, {5}, std::uint64_t(call)};
    Rng pr = make_rng(static_cast<std::uint64_t>(call), Stream::perturbation);
    const int y = call % 3;
    if (call % 3 == 0) {
      auto params = init_model<float>(spec, false);
      Tensor<float> x({channels, side, side}, xv.cast<float>());
      auto p = cfg.variant == AttackVariant::pgd ? pgd_masked(params, x, y, cfg, mask, pr)
                                                 : fgsm_masked(params, x, y, cfg, mask, pr);
      violations += !(exact_feasible(p, cfg.epsilon) && satisfies_constraints(p, x, cfg.epsilon));
    } else {
      auto params = init_model<double>(spec, false);
      Tensor<double> x({channels, side, side}, xv);
      auto p = cfg.variant == AttackVariant::pgd ? pgd_masked(params, x, y, cfg, mask, pr)
                                                 : fgsm_masked(params, x, y, cfg, mask, pr);
      violations += !(exact_feasible(p, cfg.epsilon) && satisfies_constraints(p, x, cfg.epsilon));
    }
  }
  return verdict(violations == 0, "1000 calls, " + std::to_string(violations) + " violations");
}

// 4. Masked PGD against a brute-force grid on two-feature logistic models.
Outcome pgd_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto c = testing::logistic_case(seed);
    AdvConfig cfg;
    Rng r = make_rng(seed, Stream::perturbation);
    const auto p = pgd_masked(c.params, c.x, 0, cfg, c.mask, r);
    const double g = testing::grid_maximum(c, cfg.epsilon);
    ok += p.objective >= 0.95 * g;
  }
  const double secs = seconds_since(t0);
  return verdict(ok >= 190 && secs < 120.0,
                 std::to_string(ok) + "/200 within 5% of the grid maximum (need 190), " +
                     fmt("%.1f s", secs));
}

// 5. q update rule and the q invariants over a full training run.
Outcome q_state_machine() {
  const QConfig cfg;
  bool examples = update_q(0.5, 3, true, cfg, 10) == 0.5 && update_q(0.5, 10, false, cfg, 10) == 0.5 &&
                  update_q(0.5, 11, true, cfg, 10) == 0.55 && update_q(0.1, 11, false, cfg, 10) == 0.1;
  std::size_t bad = 0;
  for (int m = -10; m <= 10; ++m) {
    const double q = std::clamp(cfg.q0 + m * cfg.gamma, cfg.q_min, cfg.q_max);
    for (std::size_t it = 1; it <= 8; ++it) {
      for (bool ok : {false, true}) {
        const double next = update_q(q, it, ok, cfg, 4);
        const double want = it <= 4 ? q : std::min(std::max(ok ? q + cfg.gamma : q - cfg.gamma, cfg.q_min), cfg.q_max);
        bad += next != want;
      }
    }
  }

  SyntheticSpec s;
  s.n = 512;
  const auto data = make_half_informative(s);
  TrainConfig tc;
  tc.iterations = 200;
  std::size_t bound = 0, grid = 0, frozen = 0, stale = 0, moved = 0;
  std::vector<double> prev(data.size(), tc.q.q0);
  const std::size_t warmup = tc.q.warmup_for(tc.iterations);
  scaat_train(data, reference_cnn(1, 16, 16, 2, 5), tc,
              [&](const LogRecord& rec, const ParamSet<float>&, const QState& qs,
                  std::span<const std::size_t> batch) {
                std::vector<char> in(data.size(), 0);
                for (std::size_t i : batch) in[i] = 1;
                for (std::size_t i = 0; i < qs.q.size(); ++i) {
                  const double q = qs.q[i];
                  bound += q < tc.q.q_min || q > tc.q.q_max;
                  const double m = (q - tc.q.q0) / tc.q.gamma;
                  grid += std::abs(m - std::round(m)) > 1e-9;
                  frozen += rec.iter <= warmup && q != tc.q.q0;
                  stale += !in[i] && q != prev[i];
                  moved += q != prev[i];
                  prev[i] = q;
                }
              });
  const bool ok = examples && bad == 0 && bound + grid + frozen + stale == 0 && moved > 0;
  return verdict(ok, std::string("examples ") + (examples ? "match" : "differ") + ", " +
                         std::to_string(bad) + " rule mismatches; 200-iteration run: " +
                         std::to_string(bound) + " bound, " + std::to_string(grid) + " grid, " +
                         std::to_string(frozen) + " warm-up, " + std::to_string(stale) +
                         " off-batch violations, " + std::to_string(moved) + " updates");
}

// 6. Adaptive q ends higher on mostly-background samples.
Outcome adaptive_q_behaviour() {
  const auto t0 = std::chrono::steady_clock::now();
  int passing = 0;
  std::string diffs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticSpec s;
    s.seed = seed;
    const auto data = make_half_informative(s);
    TrainConfig tc;
    tc.iterations = 600;
    tc.seed = seed;
    const auto r = scaat_train(data, reference_cnn(1, 16, 16, 2, seed), tc);
    double hi = 0, lo = 0;
    int nh = 0, nl = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.irrelevant_ratio[i] > 0.5) {
        hi += r.q.q[i];
        ++nh;
      } else {
        lo += r.q.q[i];
        ++nl;
      }
    }
    const double d = hi / nh - lo / nl;
    passing += d >= 0.05;
    diffs += (seed ? " " : "") + fmt("%+.3f", d);
  }
  const double secs = seconds_since(t0);
  return verdict(passing >= 4 && secs < 600.0,
                 "mean q(75% irrelevant) - mean q(25% irrelevant) per seed: " + diffs + "; " +
                     std::to_string(passing) + "/5 >= 0.05, " + fmt("%.0f s", secs));
}

// 7. Directional comparison on a CIFAR-10 subset.
Outcome cifar_direction() {
  const char* dir = std::getenv("SCAAT_CIFAR_DIR");
  if (!dir || !*dir) return {Status::skip, "SCAAT_CIFAR_DIR not set; no CIFAR-10 binaries available"};
  std::size_t iterations = 2000;
  if (const char* it = std::getenv("SCAAT_CIFAR_ITERS")) iterations = std::stoul(it);
  const auto train = load_cifar(dir, "train", 5000);
  const auto test = load_cifar(dir, "test", 1000);
  const auto spec = reference_cnn(3, 32, 32, 10, 0);
  EvalConfig ec;
  MetricsReport rep[2];
  double secs[2];
  const TrainMode modes[2] = {TrainMode::regular, TrainMode::scaat_adaptive_q};
  for (int k = 0; k < 2; ++k) {
    TrainConfig tc;
    tc.mode = modes[k];
    tc.iterations = iterations;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = scaat_train(train, spec, tc);
    rep[k] = evaluate_model(r.params, test, ec);
    secs[k] = seconds_since(t0);
  }
  const auto &reg = rep[0], &sc = rep[1];
  const bool entropy = reg.entropy - sc.entropy >= 0.2;
  const bool lerf = sc.aopc_lerf > 0 ? reg.aopc_lerf / sc.aopc_lerf >= 2.0 : reg.aopc_lerf > 0;
  const bool rel = reg.aopc_rel > 0 && sc.aopc_rel / reg.aopc_rel >= 2.0;
  const bool gini = sc.gini - reg.gini >= 0.03;
  const bool acc = std::abs(sc.accuracy - reg.accuracy) <= 0.02;
  const bool time = secs[0] <= 3600 && secs[1] <= 3600;
  return verdict(entropy && lerf && rel && gini && acc && time,
                 "entropy " + fmt("%.3f -> %.3f", reg.entropy, sc.entropy) + ", AOPC_lerf " +
                     fmt("%.4f -> %.4f", reg.aopc_lerf, sc.aopc_lerf) + ", AOPC_rel " +
                     fmt("%.2f -> %.2f", reg.aopc_rel, sc.aopc_rel) + ", gini " +
                     fmt("%.3f -> %.3f", reg.gini, sc.gini) + ", accuracy " +
                     fmt("%.3f -> %.3f", reg.accuracy, sc.accuracy) + ", " +
                     fmt("%.0f s / %.0f s", secs[0], secs[1]));
}

// 8. Wall-clock cost of adversarial training relative to regular training.
Outcome cost_ratio() {
  Dataset d;
  d.channels = 3;
  d.height = d.width = 32;
  d.num_classes = 10;
  Rng rng = make_rng(8, Stream::evaluation);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < 640; ++i) {
    for (int k = 0; k < 3072; ++k) d.images.push_back(u(rng));
    d.labels.push_back(i % 10);
  }
  const auto spec = reference_cnn(3, 32, 32, 10, 0);
  auto time_run = [&](TrainMode mode, AttackVariant variant) {
    TrainConfig tc;
    tc.mode = mode;
    tc.iterations = 30;
    tc.adv.variant = variant;
    const auto t0 = std::chrono::steady_clock::now();
    scaat_train(d, spec, tc);
    return seconds_since(t0) / 30.0;
  };
  const double regular = time_run(TrainMode::regular, AttackVariant::pgd);
  const double pgd = time_run(TrainMode::scaat_adaptive_q, AttackVariant::pgd);
  const double fgsm = time_run(TrainMode::scaat_adaptive_q, AttackVariant::fgsm);
  const double ratio = pgd / regular;
  const bool in_band = ratio >= 1.5 && ratio <= 4.0;
  return verdict(in_band && fgsm < pgd,
                 fmt("regular %.3f s/it, PGD-4 %.3f s/it, FGSM %.3f s/it; PGD-4 ratio %.2fx", regular,
                     pgd, fgsm, ratio) +
                     (in_band ? " (in [1.5, 4])" : " (outside [1.5, 4])") +
                     (fgsm < pgd ? ", FGSM cheaper" : ", FGSM not cheaper"));
}

// 9. Metric oracles.
Outcome metric_oracles() {
  std::size_t bad = 0;
  for (std::size_t n : {1u, 2u, 16u, 100u, 9216u}) {
    std::vector<double> uniform(n, 0.7), one_hot(n, 0.0);
    one_hot[n - 1] = 1.3;
    bad += std::abs(saliency_entropy(uniform) - std::log2(double(n))) > 1e-9;
    bad += std::abs(gini_index(uniform)) > 1e-9;
    bad += std::abs(saliency_entropy(one_hot)) > 1e-9;
    bad += std::abs(gini_index(one_hot) - double(n - 1) / double(n)) > 1e-9;
  }
  std::size_t below = 0, steps = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = testing::linear_probe(seed);
    CurveConfig cfg;
    cfg.region = p.region;
    const auto map = vanilla_gsmap(p.params, p.x, 1);
    const auto order = rank_tiles(map, p.region, Order::lerf);
    Rng fill = make_rng(7, Stream::evaluation);
    const auto lerf = perturbation_curve_ranked(p.params, p.x, order, p.region, cfg, fill);
    std::vector<double> random_mean(cfg.steps, 0.0);
    std::vector<std::size_t> perm(order.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng shuffle(seed + 100);
    for (int k = 0; k < 50; ++k) {
      std::shuffle(perm.begin(), perm.end(), shuffle);
      Rng f = make_rng(7, Stream::evaluation);
      const auto c = perturbation_curve_ranked(p.params, p.x, perm, p.region, cfg, f);
      for (std::size_t l = 0; l < cfg.steps; ++l) random_mean[l] += c.values[l] / 50.0;
    }
    for (std::size_t l = 0; l < cfg.steps; ++l) {
      ++steps;
      below += lerf.values[l] < random_mean[l];
    }
  }
  return verdict(bad == 0 && below == steps,
                 std::to_string(bad) + " analytic mismatches; LeRF below the random-ranking mean at " +
                     std::to_string(below) + "/" + std::to_string(steps) + " steps");
}

// 10. Two identically seeded `train` runs.
Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / ("scaat_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  write_file_atomic(dir / "run.json", R"({
  "schema_version": 1,
  "seed": 10,
  "dataset": {"format": "synthetic", "train": "half-informative:n=256,size=16,seed=10"},
  "train": {"mode": "scaat-adaptive", "iterations": 60, "batch_size": 32, "q": {"warmup_iters": 5}}
})");
  std::ostringstream sink;
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    ran = ran && run_cli({"scaat", "train", "--config", (dir / "run.json").string(), "--out",
                          (dir / run).string()},
                         sink, sink) == 0;
  }
  std::size_t same = 0, files = 0;
  for (const char* f : {"model.sct", "train_log.jsonl", "qstate.json"}) {
    ++files;
    if (ran && read_file(dir / "a" / f) == read_file(dir / "b" / f)) ++same;
  }
  fs::remove_all(dir);
  return verdict(ran && same == files, std::to_string(same) + "/" + std::to_string(files) +
                                           " artifacts byte-identical (checkpoint, log, q state)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int only = 0;
  app.add_option("--only", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks{
      {"gradient correctness", gradient_correctness},
      {"divergence suite", divergence_suite},
      {"constraint exactness", constraint_exactness},
      {"PGD oracle", pgd_oracle},
      {"q state machine", q_state_machine},
      {"adaptive q behaviour", adaptive_q_behaviour},
      {"CIFAR-10 direction", cifar_direction},
      {"cost ratio", cost_ratio},
      {"metric oracles", metric_oracles},
      {"reproducibility", reproducibility}};

  int failed = 0, skipped = 0, ran = 0;
  for (std::size_t k = 0; k < checks.size(); ++k) {
    if (only && static_cast<std::size_t>(only) != k + 1) continue;
    ++ran;
    Outcome o;
    try {
      o = checks[k].second();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    std::cout << "criterion " << (k + 1) << " [" << checks[k].first << "]: " << tag << " - "
              << o.detail << std::endl;
    failed += o.status == Status::fail;
    skipped += o.status == Status::skip;
  }
  if (failed) return 1;
  if (ran == 1 && skipped == 1) return 77;
  return 0;
}
