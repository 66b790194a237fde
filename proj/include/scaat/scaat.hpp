#pragma once

// Saliency-constrained adaptive adversarial training: per-sample
// perturbation proportions, the combined objective and the training loop.

#include "scaat/adversarial.hpp"
#include "scaat/dataset.hpp"

#include <functional>
#include <optional>
#include <stdexcept>

namespace scaat {

enum class TrainMode { regular, scaat_fixed_q, scaat_adaptive_q };

/// "regular", "scaat-fixed", "scaat-adaptive".
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& name);

struct QConfig {
  double q0 = 0.5;
  double gamma = 0.05;
  double q_min = 0.1;
  double q_max = 0.9;
  /// Iterations with q frozen; 10% of the run when unset.
  std::optional<std::size_t> warmup_iters;

  std::size_t warmup_for(std::size_t iterations) const {
    return warmup_iters ? *warmup_iters : iterations / 10;
  }
  void validate() const;
};

struct QState {
  QConfig cfg;
  std::size_t warmup_iters = 0;
  std::vector<double> q;

  static QState initial(const QConfig& cfg, std::size_t samples, std::size_t warmup);
  double mean() const;
};

/// One adaptive step: frozen through warm-up (iter <= warmup), then +gamma
/// when the adversarial sample is still classified correctly, -gamma
/// otherwise, clamped to [q_min, q_max]. `iter` counts from 1.
double update_q(double q, std::size_t iter, bool adv_correct, const QConfig& cfg,
                std::size_t warmup_iters);

struct TrainConfig {
  TrainMode mode = TrainMode::scaat_adaptive_q;
  double lambda = 1.0;
  std::size_t batch_size = 64;
  std::size_t iterations = 1000;
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// Only "sgd-momentum-cosine" is implemented.
  std::string optimizer = "sgd-momentum-cosine";
  std::uint64_t seed = 0;
  AdvConfig adv;
  QConfig q;
  /// Region side for mask saliency; chosen from the input size when unset.
  std::optional<std::size_t> mask_region;

  void validate() const;
};

/// Learning rate at 1-based iteration t of n: lr0 * (1 + cos(pi (t-1) / n)) / 2.
double cosine_lr(double lr0, std::size_t t, std::size_t n);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> cls;
  Tensor<T> adv;  // undefined when no adversarial batch is given
  Tensor<T> clean_scores;
  Tensor<T> adv_scores;
};

/// Combined objective from clean scores f(x) that are still attached to
/// `params`: mean CE(f(x), y) + lambda * mean JS(softmax f(x_adv) || softmax f(x)).
/// Passing an undefined x_adv gives the plain cross-entropy graph.
template <typename T>
LossTerms<T> scaat_loss_terms_from_scores(const ParamSet<T>& params, Tensor<T> clean_scores,
                              const Tensor<T>& x_adv, std::span<const int> y, double lambda) {
  LossTerms<T> out;
  out.clean_scores = std::move(clean_scores);
  out.cls = cross_entropy(out.clean_scores, y);
  if (!x_adv.defined()) {
    out.total = out.cls;
    return out;
  }
  out.adv_scores = forward(params, x_adv);
  out.adv = js_divergence(softmax(out.adv_scores), softmax(out.clean_scores));
  out.total = add(out.cls, mul(out.adv, static_cast<T>(lambda)));
  return out;
}

template <typename T>
LossTerms<T> scaat_loss_terms(const ParamSet<T>& params, const Tensor<T>& x,
                              const Tensor<T>& x_adv, std::span<const int> y, double lambda) {
  return scaat_loss_terms_from_scores(params, forward(params, x), x_adv, y, lambda);
}

template <typename T>
Tensor<T> scaat_loss(const ParamSet<T>& params, const Tensor<T>& x, const Tensor<T>& x_adv,
                     std::span<const int> y, double lambda) {
  return scaat_loss_terms(params, x, x_adv, y, lambda).total;
}

struct LogRecord {
  std::size_t iter = 0;
  double l_cls = 0.0;
  double l_adv = 0.0;
  double mean_q = 0.0;
  double batch_acc = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Called after every iteration with the updated parameters and q table and
/// the batch indices just used.
using TrainObserver = std::function<void(const LogRecord&, const ParamSet<float>&,
                                         const QState&, std::span<const std::size_t>)>;

struct TrainResult {
  ParamSet<float> params;
  QState q;
  /// q table at the end of every epoch, plus the final table.
  std::vector<std::vector<double>> q_history;
  std::vector<LogRecord> log;
};

TrainResult scaat_train(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg,
                        const TrainObserver& observer = {});

}  // namespace scaat
