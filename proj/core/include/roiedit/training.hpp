#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roiedit/checkpoint.hpp"
#include "roiedit/data.hpp"
#include "roiedit/losses.hpp"
#include "roiedit/networks.hpp"

namespace roiedit {

struct TrainConfig {
  int batch_size = 4;
  int steps = 0;
  double learning_rate = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  int r1_interval = 16;
  double r1_gamma = 1.0;
  int refs_per_patch = 4;
  std::uint64_t seed = 0;
  Phase phase = Phase::smn;

  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepLog {
  int step = 0;
  Phase phase = Phase::smn;
  LossReport generator;                      // smn: the composite loss
  std::optional<OverallLossReport> overall;  // smpn only
  double d_loss = 0;
  std::optional<double> r1;

  double objective() const { return overall ? overall->l_overall : generator.l_total; }
  double l_rec() const;
  nlohmann::json to_json() const;
};

/// Crop placement for the co-occurrence terms of one step. Entry k belongs to
/// batch element k; references come from the style-source element.
struct CropPlan {
  int patch_size = 0;
  int refs_per_patch = 0;
  std::vector<ag::CropSpec> targets;     // on the swapped decode, batch k
  std::vector<ag::CropSpec> references;  // refs_per_patch per k, on the style source
  std::vector<ag::CropSpec> real_targets;

  static CropPlan draw(int batch, int image_size, int patch_size, int refs_per_patch, std::mt19937_64& rng);
};

/// Swap pairing: element k takes the texture of element (k + 1) mod n.
std::vector<int> swap_pairing(int n);

/// Identity of the decoder parameters used by each decode call.
struct DecodeTrace {
  std::vector<const void*> decoder_params;
};

template <typename T>
struct GeneratorObjective {
  ag::Var<T> total;
  std::vector<CompositeLossTerms<T>> terms;  // 1 (smn) or 5 (smpn, kAllRois order)
  ag::Var<T> real_images;                    // discriminator positives
  ag::Var<T> style_sources;                  // references for the patch discriminator
  ag::Var<T> fake_images;                    // reconstructions followed by swaps
  ag::Var<T> swapped;
};

/// Full-image objective: reconstruction and swap decodes of x (N, H, W, 3).
template <typename T>
GeneratorObjective<T> smn_objective(const Autoencoder<T>& ae, const Discriminators<T>& disc, const ag::Var<T>& x,
                                    const CropPlan& plan);

/// Sliced objective: for every ROI, decode the slice-masked structure with the
/// shared decoder and score against y[roi]; total is the 0.2-weighted sum.
template <typename T>
GeneratorObjective<T> smpn_objective(const Autoencoder<T>& ae, const Discriminators<T>& disc, const ag::Var<T>& x,
                                     const std::array<ag::Var<T>, kNumRois>& y, const SliceScheme& scheme,
                                     const CropPlan& plan, DecodeTrace* trace = nullptr);

/// Adaptive-moment optimizer over a ParamSet.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps = 1e-8) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamSet<float>& params);

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Adds the parameter gradient of (gamma / 2) * weight * mean ||d D / d x||^2 to
/// the image discriminator's gradients, using a tangent pass along the input
/// gradient (exact for the piecewise-linear discriminator). Returns the mean
/// squared input-gradient norm.
double accumulate_r1_gradient(Discriminators<float>& disc, const ag::Var<float>& real, double gamma,
                              double weight);

using BatchSource = std::function<const TrainingBatch&()>;
using StepCallback = std::function<void(const StepLog&)>;

struct TrainResult {
  AutoencoderParams autoencoder;
  DiscriminatorParams discriminators;
  std::vector<StepLog> log;
};

/// One generator update followed by one discriminator update per step.
class Trainer {
 public:
  Trainer(AutoencoderParams ae, DiscriminatorParams disc, TrainConfig cfg, SliceScheme scheme);
  StepLog step(const TrainingBatch& batch);

  AutoencoderParams& autoencoder() { return ae_; }
  DiscriminatorParams& discriminators() { return disc_; }
  int steps_done() const { return step_; }

 private:
  AutoencoderParams ae_;
  DiscriminatorParams disc_;
  TrainConfig cfg_;
  SliceScheme scheme_;
  Adam opt_g_;
  Adam opt_d_;
  std::mt19937_64 rng_;
  int step_ = 0;
};

/// Full-image training. Fresh weights are seeded from cfg.seed when no init is given.
TrainResult train_smn(const BatchSource& data, const TrainConfig& cfg, const ModelConfig& model,
                      const AutoencoderParams* init = nullptr, const DiscriminatorParams* disc_init = nullptr,
                      const StepCallback& on_step = {});

/// Sliced fine-tuning; `init` must be SMN weights.
TrainResult train_smpn(const BatchSource& data, const TrainConfig& cfg, const ModelConfig& model,
                       const AutoencoderParams* init, const DiscriminatorParams* disc_init = nullptr,
                       const StepCallback& on_step = {});

/// Mean of l_rec over the last `window` log entries.
double windowed_l_rec(const std::vector<StepLog>& log, std::size_t window);

}  // namespace roiedit
