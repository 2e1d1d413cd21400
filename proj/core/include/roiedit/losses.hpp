#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>

#include <nlohmann/json.hpp>

#include "roiedit/autograd.hpp"
#include "roiedit/latent.hpp"
#include "roiedit/networks.hpp"

namespace roiedit {

// Composite objective weights; fixed, not configuration.
inline constexpr double kRecWeight = 1.0;
inline constexpr double kGanRecWeight = 0.5;
inline constexpr double kGanSwapWeight = 0.5;
inline constexpr double kCooccurWeight = 0.5;
inline constexpr double kRoiWeight = 0.2;

struct LossReport {
  double l_rec = 0;
  double l_gan_rec = 0;
  double l_gan_swap = 0;
  double l_cooccur = 0;
  double l_total = 0;

  nlohmann::json to_json() const;
};

struct OverallLossReport {
  std::map<RoiId, LossReport> per_roi;
  double l_overall = 0;

  nlohmann::json to_json() const;
};

/// Mean absolute pixel difference.
double reconstruction_loss(const ImageTensor& pred, const ImageTensor& target);

/// softplus(-logit)
double generator_gan_loss(double logit_on_fake);

/// softplus(-logit_real) + softplus(logit_fake)
double discriminator_gan_loss(double logit_real, double logit_fake);

/// Assembles a report from already-evaluated components.
LossReport combine_components(double l_rec, double l_gan_rec, double l_gan_swap, double l_cooccur);

LossReport composite_loss(const ImageTensor& pred, const ImageTensor& target, double gan_logit_rec,
                          double gan_logit_swap, double cooccur_logit);

/// Requires exactly one entry per ROI.
OverallLossReport overall_smpn_loss(const std::map<RoiId, LossReport>& reports);

// ---- differentiable forms ---------------------------------------------------

template <typename T>
struct CompositeLossTerms {
  ag::Var<T> rec;
  ag::Var<T> gan_rec;
  ag::Var<T> gan_swap;
  ag::Var<T> cooccur;
  ag::Var<T> total;

  LossReport report() const;
};

/// Logit arguments are (N, 1) batches; each GAN component is the batch mean.
template <typename T>
CompositeLossTerms<T> composite_loss(const ag::Var<T>& pred, const ag::Var<T>& target, const ag::Var<T>& logits_rec,
                                     const ag::Var<T>& logits_swap, const ag::Var<T>& logits_cooccur);

/// Batch-mean generator loss, softplus(-logit).
template <typename T>
ag::Var<T> generator_gan_loss(const ag::Var<T>& logits);

/// Batch-mean discriminator loss.
template <typename T>
ag::Var<T> discriminator_gan_loss(const ag::Var<T>& logits_real, const ag::Var<T>& logits_fake);

template <typename T>
ag::Var<T> overall_smpn_loss(const std::array<CompositeLossTerms<T>, kNumRois>& per_roi);

/// Maps an (N, H, W, 3) batch to (N, 1) logits.
template <typename T>
using Critic = std::function<ag::Var<T>(const ag::Var<T>&)>;

/// Mean over the batch of ||d critic / d x||^2.
template <typename T>
double r1_penalty(const Critic<T>& critic, std::span<const ImageTensor> real_batch);

}  // namespace roiedit
