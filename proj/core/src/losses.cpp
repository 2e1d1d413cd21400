#include "roiedit/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace roiedit {

nlohmann::json LossReport::to_json() const {
  return {{"l_rec", l_rec},
          {"l_gan_rec", l_gan_rec},
          {"l_gan_swap", l_gan_swap},
          {"l_cooccur", l_cooccur},
          {"l_total", l_total}};
}

nlohmann::json OverallLossReport::to_json() const {
  nlohmann::json j;
  for (const auto& [roi, r] : per_roi) j["per_roi"][std::string(roi_name(roi))] = r.to_json();
  j["l_overall"] = l_overall;
  return j;
}

double reconstruction_loss(const ImageTensor& pred, const ImageTensor& target) {
  require_same_shape(pred, target, "reconstruction_loss");
  if (pred.empty()) throw ShapeError("reconstruction_loss: empty images");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(static_cast<double>(pred[i]) - target[i]);
  return s / static_cast<double>(pred.size());
}

double generator_gan_loss(double logit_on_fake) { return ag::softplus_value(-logit_on_fake); }

double discriminator_gan_loss(double logit_real, double logit_fake) {
  return ag::softplus_value(-logit_real) + ag::softplus_value(logit_fake);
}

LossReport combine_components(double l_rec, double l_gan_rec, double l_gan_swap, double l_cooccur) {
  LossReport r{l_rec, l_gan_rec, l_gan_swap, l_cooccur, 0};
  r.l_total = kRecWeight * l_rec + kGanRecWeight * l_gan_rec + kGanSwapWeight * l_gan_swap + kCooccurWeight * l_cooccur;
  return r;
}

LossReport composite_loss(const ImageTensor& pred, const ImageTensor& target, double gan_logit_rec,
                          double gan_logit_swap, double cooccur_logit) {
  return combine_components(reconstruction_loss(pred, target), generator_gan_loss(gan_logit_rec),
                            generator_gan_loss(gan_logit_swap), generator_gan_loss(cooccur_logit));
}

OverallLossReport overall_smpn_loss(const std::map<RoiId, LossReport>& reports) {
  if (reports.size() != kNumRois) {
    throw std::invalid_argument("overall loss needs exactly one report per roi, got " + std::to_string(reports.size()));
  }
  OverallLossReport out;
  for (RoiId roi : kAllRois) {
    auto it = reports.find(roi);
    if (it == reports.end()) throw std::invalid_argument("overall loss: missing roi " + std::string(roi_name(roi)));
    out.per_roi[roi] = it->second;
    out.l_overall += kRoiWeight * it->second.l_total;
  }
  return out;
}

template <typename T>
LossReport CompositeLossTerms<T>::report() const {
  LossReport r;
  r.l_rec = rec->value[0];
  r.l_gan_rec = gan_rec->value[0];
  r.l_gan_swap = gan_swap->value[0];
  r.l_cooccur = cooccur->value[0];
  r.l_total = total->value[0];
  return r;
}

template <typename T>
ag::Var<T> generator_gan_loss(const ag::Var<T>& logits) {
  return ag::mean(ag::softplus(ag::scale(logits, T(-1))));
}

template <typename T>
ag::Var<T> discriminator_gan_loss(const ag::Var<T>& logits_real, const ag::Var<T>& logits_fake) {
  return ag::weighted_sum<T>({ag::mean(ag::softplus(ag::scale(logits_real, T(-1)))), ag::mean(ag::softplus(logits_fake))},
                             {T(1), T(1)});
}

template <typename T>
CompositeLossTerms<T> composite_loss(const ag::Var<T>& pred, const ag::Var<T>& target, const ag::Var<T>& logits_rec,
                                     const ag::Var<T>& logits_swap, const ag::Var<T>& logits_cooccur) {
  CompositeLossTerms<T> t;
  t.rec = ag::mean_abs_diff(pred, target);
  t.gan_rec = generator_gan_loss(logits_rec);
  t.gan_swap = generator_gan_loss(logits_swap);
  t.cooccur = generator_gan_loss(logits_cooccur);
  t.total = ag::weighted_sum<T>({t.rec, t.gan_rec, t.gan_swap, t.cooccur},
                                {T(kRecWeight), T(kGanRecWeight), T(kGanSwapWeight), T(kCooccurWeight)});
  return t;
}

template <typename T>
ag::Var<T> overall_smpn_loss(const std::array<CompositeLossTerms<T>, kNumRois>& per_roi) {
  std::vector<ag::Var<T>> terms;
  for (const auto& t : per_roi) terms.push_back(t.total);
  return ag::weighted_sum<T>(terms, std::vector<T>(kNumRois, T(kRoiWeight)));
}

template <typename T>
double r1_penalty(const Critic<T>& critic, std::span<const ImageTensor> real_batch) {
  if (real_batch.empty()) throw std::invalid_argument("r1_penalty: empty batch");
  auto x = ag::parameter(stack_images<T>(real_batch));
  auto logits = critic(x);
  ag::backward(ag::weighted_sum<T>({ag::mean(logits)}, {T(logits->value.size())}));
  if (!x->has_grad()) return 0.0;
  double s = 0;
  for (T g : x->grad.values()) s += static_cast<double>(g) * g;
  return s / static_cast<double>(real_batch.size());
}

#define ROIEDIT_INSTANTIATE_LOSSES(T)                                                                              \
  template struct CompositeLossTerms<T>;                                                                           \
  template ag::Var<T> generator_gan_loss<T>(const ag::Var<T>&);                                                    \
  template ag::Var<T> discriminator_gan_loss<T>(const ag::Var<T>&, const ag::Var<T>&);                             \
  template CompositeLossTerms<T> composite_loss<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&,        \
                                                   const ag::Var<T>&, const ag::Var<T>&);                          \
  template ag::Var<T> overall_smpn_loss<T>(const std::array<CompositeLossTerms<T>, kNumRois>&);                    \
  template double r1_penalty<T>(const Critic<T>&, std::span<const ImageTensor>);

ROIEDIT_INSTANTIATE_LOSSES(float)
ROIEDIT_INSTANTIATE_LOSSES(double)

}  // namespace roiedit
