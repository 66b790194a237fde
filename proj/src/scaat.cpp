#include "scaat/scaat.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace scaat {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::regular:
      return "regular";
    case TrainMode::scaat_fixed_q:
      return "scaat-fixed";
    case TrainMode::scaat_adaptive_q:
      return "scaat-adaptive";
  }
  return "regular";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "regular") return TrainMode::regular;
  if (name == "scaat-fixed") return TrainMode::scaat_fixed_q;
  if (name == "scaat-adaptive") return TrainMode::scaat_adaptive_q;
  throw std::invalid_argument("unknown training mode '" + name +
                              "' (expected regular|scaat-fixed|scaat-adaptive)");
}

void QConfig::validate() const {
  if (!(q_min >= 0.0 && q_min <= q_max && q_max <= 1.0)) {
    throw std::invalid_argument("q bounds must satisfy 0 <= q_min <= q_max <= 1");
  }
  if (!(q0 >= q_min && q0 <= q_max)) throw std::invalid_argument("q0 must lie in [q_min, q_max]");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
}

QState QState::initial(const QConfig& cfg, std::size_t samples, std::size_t warmup) {
  return QState{cfg, warmup, std::vector<double>(samples, cfg.q0)};
}

double QState::mean() const {
  if (q.empty()) return 0.0;
  return std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
}

double update_q(double q, std::size_t iter, bool adv_correct, const QConfig& cfg,
                std::size_t warmup_iters) {
  if (iter <= warmup_iters) return q;
  const double next = adv_correct ? q + cfg.gamma : q - cfg.gamma;
  return std::min(std::max(next, cfg.q_min), cfg.q_max);
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
  if (optimizer != "sgd-momentum-cosine") {
    throw std::invalid_argument("unknown optimizer '" + optimizer +
                                "' (expected sgd-momentum-cosine)");
  }
  if (mask_region && *mask_region == 0) throw std::invalid_argument("mask_region must be >= 1");
  adv.validate();
  q.validate();
}

double cosine_lr(double lr0, std::size_t t, std::size_t n) {
  const double phase = static_cast<double>(t - 1) / static_cast<double>(n);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

namespace {

// Reshuffled index stream; a new permutation starts whenever fewer than a
// full batch of indices remain.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, Rng rng)
      : n_(n), batch_(std::min(batch, n)), rng_(std::move(rng)), order_(n) {
    reshuffle();
  }

  std::span<const std::size_t> next(bool& new_epoch) {
    new_epoch = false;
    if (pos_ + batch_ > n_) {
      reshuffle();
      new_epoch = true;
    }
    std::span<const std::size_t> out(order_.data() + pos_, batch_);
    pos_ += batch_;
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

TrainResult scaat_train(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg,
                        const TrainObserver& observer) {
  cfg.validate();
  data.validate();
  if (spec.input_shape() != data.sample_shape() || spec.num_classes != data.num_classes) {
    throw std::invalid_argument("model expects " + shape_str(spec.input_shape()) + " with " +
                                std::to_string(spec.num_classes) + " classes, dataset has " +
                                shape_str(data.sample_shape()) + " with " +
                                std::to_string(data.num_classes));
  }
  const bool adversarial = cfg.mode != TrainMode::regular;
  const bool adaptive = cfg.mode == TrainMode::scaat_adaptive_q;
  const std::size_t region =
      cfg.mask_region ? *cfg.mask_region : mask_region_side(spec.height, spec.width);

  TrainResult result{init_model<float>(spec, true), {}, {}, {}};
  auto& params = result.params;
  std::vector<Vec<float>> velocity;
  for (const auto& [n, t] : params.tensors) velocity.push_back(Vec<float>::Zero(t.values().size()));

  result.q = QState::initial(cfg.q, data.size(), cfg.q.warmup_for(cfg.iterations));
  auto& qs = result.q;
  BatchSampler sampler(data.size(), cfg.batch_size, make_rng(cfg.seed, Stream::data));
  Rng pert_rng = make_rng(cfg.seed, Stream::perturbation);

  std::vector<Tensor<float>> leaves;
  for (const auto& [n, t] : params.tensors) leaves.push_back(t);

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    bool new_epoch = false;
    const auto idx = sampler.next(new_epoch);
    if (new_epoch) result.q_history.push_back(qs.q);
    const Tensor<float> xb = data.batch(idx);
    const std::vector<int> yb = data.labels_of(idx);
    const std::size_t b = idx.size();

    // In the adversarial modes the clean forward is shared between the
    // mask saliency (gradient to the input) and the training loss.
    Tensor<float> x_adv;
    Tensor<float> clean_scores;
    if (adversarial) {
      const auto x_leaf = xb.detach(true);
      clean_scores = forward(params, x_leaf);
      auto maps = maps_from_gradient(selected_score_gradient(clean_scores, x_leaf, yb, true), spec);
      std::vector<IndexSet> masks;
      masks.reserve(b);
      for (std::size_t i = 0; i < b; ++i) {
        masks.push_back(lowest(region_average(maps[i], region), qs.q[idx[i]]));
      }
      const Vec<float> clean_probs = softmax(clean_scores.detach()).values();
      auto perts = masked_search(params, xb, std::span<const IndexSet>(masks), cfg.adv, pert_rng,
                                 &clean_probs);
      Vec<float> moved = xb.values();
      const std::size_t d = data.sample_size();
      for (std::size_t i = 0; i < b; ++i) {
        moved.segment(static_cast<Eigen::Index>(i * d), static_cast<Eigen::Index>(d)) +=
            perts[i].delta;
      }
      x_adv = Tensor<float>(xb.shape(), std::move(moved));
    } else {
      clean_scores = forward(params, xb);
    }

    auto terms = scaat_loss_terms_from_scores(params, clean_scores, x_adv, yb, cfg.lambda);
    const double loss = terms.total.item();
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite loss " + std::to_string(loss) + " at iteration " +
                          std::to_string(it));
    }
    LogRecord rec;
    rec.iter = it;
    rec.l_cls = terms.cls.item();
    rec.l_adv = adversarial ? static_cast<double>(terms.adv.item()) : 0.0;
    const auto pred = argmax_rows(terms.clean_scores);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < b; ++i) correct += pred[i] == static_cast<std::size_t>(yb[i]);
    rec.batch_acc = static_cast<double>(correct) / static_cast<double>(b);
    std::vector<std::size_t> adv_pred;
    if (adaptive) adv_pred = argmax_rows(terms.adv_scores);

    const auto grads = gradients<float>(terms.total, leaves);
    const float lr = static_cast<float>(cosine_lr(cfg.learning_rate, it, cfg.iterations));
    const float mu = static_cast<float>(cfg.momentum);
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      velocity[k] = mu * velocity[k] + grads[k].values();
      leaves[k].values_mut() -= lr * velocity[k];
    }
    if (!params.all_finite()) {
      throw TrainingError("non-finite parameters after iteration " + std::to_string(it));
    }

    if (adaptive) {
      for (std::size_t i = 0; i < b; ++i) {
        double& q = qs.q[idx[i]];
        q = update_q(q, it, adv_pred[i] == static_cast<std::size_t>(yb[i]), qs.cfg, qs.warmup_iters);
      }
    }
    rec.mean_q = qs.mean();
    result.log.push_back(rec);
    if (observer) observer(rec, params, qs, idx);
  }
  result.q_history.push_back(qs.q);
  return result;
}

}  // namespace scaat
