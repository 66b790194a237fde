#pragma once

// Saliency-masked perturbation search. The objective for sample i is
// js_div(f(x_i + delta_i), f(x_i)) on softmax outputs; only pixels in the
// sample's mask may move, by at most epsilon, and x + delta stays in [0,1].

#include "scaat/divergence.hpp"
#include "scaat/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scaat {

enum class AttackVariant { pgd, fgsm };

std::string to_string(AttackVariant v);
AttackVariant attack_variant_from_string(const std::string& name);

struct AdvConfig {
  double epsilon = 8.0 / 255.0;
  std::size_t steps = 4;
  /// Per-step size; epsilon / 2 when unset.
  std::optional<double> alpha;
  AttackVariant variant = AttackVariant::pgd;

  double step_size() const { return alpha ? *alpha : epsilon / 2.0; }
  void validate() const;
};

template <typename T>
struct Perturbation {
  Shape shape;  // (C,H,W)
  Vec<T> delta;
  IndexSet mask;
  double objective = 0.0;
  /// Objective of every visited iterate, in visit order.
  std::vector<double> trace;
};

namespace detail {

template <typename T>
T sign(T v) {
  return static_cast<T>((v > T(0)) - (v < T(0)));
}

// Clamps one delta entry into [-eps, eps] and keeps x + delta inside [0,1]
// as evaluated in T.
template <typename T>
T project_entry(T x, T d, T eps) {
  d = std::clamp(d, -eps, eps);
  if (x + d > T(1)) d = std::min(d, T(1) - x);
  if (x + d < T(0)) d = std::max(d, -x);
  while (x + d > T(1)) d = std::nextafter(d, T(0));
  while (x + d < T(0)) d = std::nextafter(d, T(0));
  return d;
}

template <typename T>
class MaskedSearch {
 public:
  MaskedSearch(const ParamSet<T>& params, const Tensor<T>& batch,
               std::span<const IndexSet> masks, const AdvConfig& cfg,
               const Vec<T>* clean_probs)
      : params_(frozen_view(params)), batch_(as_batch(params, batch)), masks_(masks), cfg_(cfg) {
    cfg_.validate();
    const auto& s = params_.spec;
    n_ = batch_.dim(0);
    plane_ = s.height * s.width;
    d_ = s.input_size();
    nc_ = s.num_classes;
    if (masks.size() != n_) {
      throw ShapeError("masked search: " + std::to_string(masks.size()) + " masks for " +
                       std::to_string(n_) + " samples");
    }
    on_mask_.assign(n_ * plane_, 0);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t p : masks[i]) {
        if (p >= plane_) {
          throw std::out_of_range("mask index " + std::to_string(p) + " outside " +
                                  std::to_string(plane_) + " pixels");
        }
        on_mask_[i * plane_ + p] = 1;
      }
    }
    if (clean_probs) {
      clean_ = *clean_probs;
    } else {
      clean_ = softmax(forward(params_, batch_)).values();
    }
    eps_ = static_cast<T>(cfg_.epsilon);
  }

  std::vector<Perturbation<T>> run(Rng& rng) {
    Vec<T> delta = initial(rng);
    std::vector<Perturbation<T>> out(n_);
    std::vector<double> obj;
    Vec<T> grad;
    evaluate(delta, true, obj, grad);
    if (cfg_.variant == AttackVariant::fgsm) {
      for (Eigen::Index e = 0; e < delta.size(); ++e) {
        delta[e] = eps_ * sign(grad[e]);
      }
      project(delta);
      evaluate(delta, false, obj, grad);
      record(delta, obj, out);
    } else {
      const T alpha = static_cast<T>(cfg_.step_size());
      for (std::size_t step = 1; step <= cfg_.steps; ++step) {
        delta += alpha * grad.unaryExpr([](T v) { return sign(v); });
        project(delta);
        evaluate(delta, step < cfg_.steps, obj, grad);
        record(delta, obj, out);
      }
    }
    for (std::size_t i = 0; i < n_; ++i) {
      out[i].shape = params_.spec.input_shape();
      out[i].mask = masks_[i];
    }
    return out;
  }

 private:
  Vec<T> initial(Rng& rng) {
    // One U(-1,1) draw per masked entry, scaled by epsilon, so the draw
    // sequence does not depend on the radius.
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec<T> delta = Vec<T>::Zero(static_cast<Eigen::Index>(n_ * d_));
    const std::size_t channels = params_.spec.channels;
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t p : masks_[i]) {
          delta[static_cast<Eigen::Index>(i * d_ + c * plane_ + p)] =
              static_cast<T>(u(rng) * cfg_.epsilon);
        }
      }
    }
    project(delta);
    return delta;
  }

  void project(Vec<T>& delta) const {
    const T* x = batch_.values().data();
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = 0; k < d_; ++k) {
        const std::size_t e = i * d_ + k;
        T& d = delta[static_cast<Eigen::Index>(e)];
        if (!on_mask_[i * plane_ + k % plane_]) {
          d = T(0);
          continue;
        }
        d = project_entry(x[e], d, eps_);
      }
    }
  }

  void evaluate(const Vec<T>& delta, bool want_grad, std::vector<double>& obj, Vec<T>& grad) {
    Tensor<T> x(batch_.shape(), batch_.values() + delta, want_grad);
    auto probs = softmax(forward(params_, x));
    obj.assign(n_, 0.0);
    std::vector<double> p(nc_), q(nc_);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t c = 0; c < nc_; ++c) {
        p[c] = static_cast<double>(probs.values()[static_cast<Eigen::Index>(i * nc_ + c)]);
        q[c] = static_cast<double>(clean_[static_cast<Eigen::Index>(i * nc_ + c)]);
      }
      obj[i] = js_div(p, q);
    }
    if (want_grad) {
      Tensor<T> target(probs.shape(), clean_);
      grad = gradient(js_divergence(probs, target), x).values();
    }
  }

  void record(const Vec<T>& delta, const std::vector<double>& obj,
              std::vector<Perturbation<T>>& out) const {
    for (std::size_t i = 0; i < n_; ++i) {
      auto& r = out[i];
      const bool first = r.trace.empty();
      r.trace.push_back(obj[i]);
      if (first || obj[i] > r.objective) {
        r.objective = obj[i];
        r.delta = delta.segment(static_cast<Eigen::Index>(i * d_), static_cast<Eigen::Index>(d_));
      }
    }
  }

  ParamSet<T> params_;
  Tensor<T> batch_;
  std::span<const IndexSet> masks_;
  AdvConfig cfg_;
  std::size_t n_ = 0, plane_ = 0, d_ = 0, nc_ = 0;
  std::vector<char> on_mask_;
  Vec<T> clean_;
  T eps_{};
};

}  // namespace detail

/// Runs the configured variant on every sample of a (N,C,H,W) batch.
/// `clean_probs`, when given, must be softmax(f(batch)) flattened (N,Nc).
template <typename T>
std::vector<Perturbation<T>> masked_search(const ParamSet<T>& params, const Tensor<T>& batch,
                                           std::span<const IndexSet> masks, const AdvConfig& cfg,
                                           Rng& rng, const Vec<T>* clean_probs = nullptr) {
  return detail::MaskedSearch<T>(params, batch, masks, cfg, clean_probs).run(rng);
}

/// k-step projected sign-gradient ascent from a uniform start in the masked
/// epsilon-box; returns the best of the k post-step iterates. The label is
/// accepted for interface symmetry; the objective does not use it.
template <typename T>
Perturbation<T> pgd_masked(const ParamSet<T>& params, const Tensor<T>& x, int /*y*/,
                           AdvConfig cfg, const IndexSet& mask, Rng& rng) {
  cfg.variant = AttackVariant::pgd;
  return masked_search(params, x, std::span<const IndexSet>(&mask, 1), cfg, rng).front();
}

/// Single signed step of size epsilon, with the gradient taken at the same
/// random start point the PGD search uses.
template <typename T>
Perturbation<T> fgsm_masked(const ParamSet<T>& params, const Tensor<T>& x, int /*y*/,
                            AdvConfig cfg, const IndexSet& mask, Rng& rng) {
  cfg.variant = AttackVariant::fgsm;
  return masked_search(params, x, std::span<const IndexSet>(&mask, 1), cfg, rng).front();
}

/// Exact constraint check: |delta| <= epsilon, zero off the mask, and
/// x + delta inside [0,1] (all in T).
template <typename T>
bool satisfies_constraints(const Perturbation<T>& p, const Tensor<T>& x, double epsilon) {
  const T eps = static_cast<T>(epsilon);
  const std::size_t d = static_cast<std::size_t>(p.delta.size());
  const std::size_t plane = p.shape[1] * p.shape[2];
  std::vector<char> on(plane, 0);
  for (std::size_t k : p.mask) on[k] = 1;
  for (std::size_t e = 0; e < d; ++e) {
    const T v = p.delta[static_cast<Eigen::Index>(e)];
    if (!(std::abs(v) <= eps)) return false;
    if (!on[e % plane] && v != T(0)) return false;
    const T moved = x.values()[static_cast<Eigen::Index>(e)] + v;
    if (moved < T(0) || moved > T(1)) return false;
  }
  return true;
}

}  // namespace scaat
