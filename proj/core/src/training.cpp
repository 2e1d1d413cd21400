#include "roiedit/training.hpp"

#include <cmath>
#include <numeric>

namespace roiedit {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (r1_interval < 1) throw std::invalid_argument("r1_interval must be >= 1");
  if (r1_gamma < 0) throw std::invalid_argument("r1_gamma must be >= 0");
  if (refs_per_patch < 1) throw std::invalid_argument("refs_per_patch must be >= 1");
}

double StepLog::l_rec() const {
  if (!overall) return generator.l_rec;
  double s = 0;
  for (const auto& [roi, r] : overall->per_roi) s += kRoiWeight * r.l_rec;
  return s;
}

nlohmann::json StepLog::to_json() const {
  nlohmann::json j = {{"step", step}, {"phase", phase_name(phase)}, {"d_loss", d_loss}};
  if (overall) {
    j.update(overall->to_json());
  } else {
    j.update(generator.to_json());
  }
  if (r1) j["r1"] = *r1;
  return j;
}

CropPlan CropPlan::draw(int batch, int image_size, int patch_size, int refs_per_patch, std::mt19937_64& rng) {
  CropPlan p;
  p.patch_size = patch_size;
  p.refs_per_patch = refs_per_patch;
  std::uniform_int_distribution<int> pos(0, image_size - patch_size);
  auto spec = [&](int b) { return ag::CropSpec{b, pos(rng), pos(rng)}; };
  for (int b = 0; b < batch; ++b) {
    p.targets.push_back(spec(b));
    p.real_targets.push_back(spec(b));
    for (int r = 0; r < refs_per_patch; ++r) p.references.push_back(spec(b));
  }
  return p;
}

std::vector<int> swap_pairing(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) idx[k] = (k + 1) % n;
  return idx;
}

namespace {

std::vector<int> range(int begin, int count) {
  std::vector<int> r(static_cast<std::size_t>(count));
  std::iota(r.begin(), r.end(), begin);
  return r;
}

/// Decodes each structure input twice (own texture, swapped texture), scores every
/// output and assembles one composite loss per structure input.
template <typename T>
GeneratorObjective<T> build_objective(const Autoencoder<T>& ae, const Discriminators<T>& disc,
                                      const typename Autoencoder<T>::Latents& lat,
                                      const std::vector<ag::Var<T>>& structures, const std::vector<ag::Var<T>>& targets,
                                      const CropPlan& plan, DecodeTrace* trace) {
  const int n = lat.texture->value.dim(0);
  const int groups = static_cast<int>(structures.size());
  if (static_cast<int>(plan.targets.size()) != groups * n) {
    throw std::invalid_argument("crop plan does not cover the batch");
  }
  const auto pairing = swap_pairing(n);
  auto textures = ag::concat_batch<T>({lat.texture, ag::gather_batch(lat.texture, pairing)});

  std::vector<ag::Var<T>> outs, hybrids, styles;
  for (int g = 0; g < groups; ++g) {
    if (trace) trace->decoder_params.push_back(ae.params().get("dec.conv0.weight").get());
    auto out = ae.decode(ag::concat_batch<T>({structures[g], structures[g]}), textures);
    hybrids.push_back(ag::gather_batch(out, range(n, n)));
    styles.push_back(ag::gather_batch(targets[g], pairing));
    outs.push_back(std::move(out));
  }

  GeneratorObjective<T> obj;
  obj.fake_images = ag::concat_batch(outs);
  obj.swapped = ag::concat_batch(hybrids);
  obj.style_sources = ag::concat_batch(styles);
  obj.real_images = ag::concat_batch(targets);

  auto logits = disc.image_logits(obj.fake_images);
  auto cooc = disc.cooccurrence_logits(ag::crops(obj.swapped, plan.targets, plan.patch_size),
                                       ag::crops(obj.style_sources, plan.references, plan.patch_size),
                                       plan.refs_per_patch);
  for (int g = 0; g < groups; ++g) {
    auto pred = ag::gather_batch(outs[g], range(0, n));
    obj.terms.push_back(composite_loss<T>(pred, targets[g], ag::gather_batch(logits, range(2 * g * n, n)),
                                          ag::gather_batch(logits, range(2 * g * n + n, n)),
                                          ag::gather_batch(cooc, range(g * n, n))));
  }
  return obj;
}

}  // namespace

template <typename T>
GeneratorObjective<T> smn_objective(const Autoencoder<T>& ae, const Discriminators<T>& disc, const ag::Var<T>& x,
                                    const CropPlan& plan) {
  auto lat = ae.encode(x);
  auto obj = build_objective<T>(ae, disc, lat, {lat.structure}, {x}, plan, nullptr);
  obj.total = obj.terms[0].total;
  return obj;
}

template <typename T>
GeneratorObjective<T> smpn_objective(const Autoencoder<T>& ae, const Discriminators<T>& disc, const ag::Var<T>& x,
                                     const std::array<ag::Var<T>, kNumRois>& y, const SliceScheme& scheme,
                                     const CropPlan& plan, DecodeTrace* trace) {
  auto lat = ae.encode(x);
  std::vector<ag::Var<T>> structures, targets;
  for (RoiId roi : kAllRois) {
    structures.push_back(ag::channel_mask(lat.structure, make_slice_mask(scheme, roi).as_vector()));
    targets.push_back(y[roi_index(roi)]);
  }
  auto obj = build_objective<T>(ae, disc, lat, structures, targets, plan, trace);
  std::array<CompositeLossTerms<T>, kNumRois> per_roi;
  std::copy(obj.terms.begin(), obj.terms.end(), per_roi.begin());
  obj.total = overall_smpn_loss<T>(per_roi);
  return obj;
}

template GeneratorObjective<float> smn_objective<float>(const Autoencoder<float>&, const Discriminators<float>&,
                                                        const ag::Var<float>&, const CropPlan&);
template GeneratorObjective<double> smn_objective<double>(const Autoencoder<double>&, const Discriminators<double>&,
                                                          const ag::Var<double>&, const CropPlan&);
template GeneratorObjective<float> smpn_objective<float>(const Autoencoder<float>&, const Discriminators<float>&,
                                                         const ag::Var<float>&,
                                                         const std::array<ag::Var<float>, kNumRois>&,
                                                         const SliceScheme&, const CropPlan&, DecodeTrace*);
template GeneratorObjective<double> smpn_objective<double>(const Autoencoder<double>&, const Discriminators<double>&,
                                                           const ag::Var<double>&,
                                                           const std::array<ag::Var<double>, kNumRois>&,
                                                           const SliceScheme&, const CropPlan&, DecodeTrace*);

void Adam::step(ParamSet<float>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, p] : params.entries()) {
    if (!p->has_grad()) continue;
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(p->value.size(), 0.0f);
      st.v.assign(p->value.size(), 0.0f);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      st.m[i] = static_cast<float>(beta1_ * st.m[i] + (1.0 - beta1_) * g);
      st.v[i] = static_cast<float>(beta2_ * st.v[i] + (1.0 - beta2_) * g * g);
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      p->value[i] = static_cast<float>(p->value[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

double accumulate_r1_gradient(Discriminators<float>& disc, const ag::Var<float>& real, double gamma,
                              double weight) {
  const int n = real->value.dim(0);
  const bool trainable = disc.params().entries().begin()->second->requires_grad;
  auto& params = disc.params();

  params.set_trainable(false);
  auto x = ag::parameter(real->value);
  ag::backward(ag::weighted_sum<float>({ag::mean(disc.image_logits(x))}, {static_cast<float>(n)}));
  params.set_trainable(trainable);
  if (!x->has_grad()) return 0.0;

  double sq = 0;
  for (float g : x->grad.values()) sq += static_cast<double>(g) * g;
  const double penalty = sq / n;
  if (gamma == 0.0 || !trainable) return penalty;

  // d/dtheta of (gamma/2) w mean ||g||^2 is (gamma w / N) d/dtheta sum_n <g_n, v_n> at v = g,
  // and <g_n, v_n> is the directional derivative of the logit along v_n.
  auto jvp = disc.image_logits_jvp(real->value, x->grad);
  ag::backward(ag::weighted_sum<float>({ag::mean(jvp)}, {static_cast<float>(gamma * weight)}));
  return penalty;
}

// ---- trainer -------------------------------------------------------------

Trainer::Trainer(AutoencoderParams ae, DiscriminatorParams disc, TrainConfig cfg, SliceScheme scheme)
    : ae_(std::move(ae)),
      disc_(std::move(disc)),
      cfg_(cfg),
      scheme_(std::move(scheme)),
      opt_g_(cfg.learning_rate, cfg.beta1, cfg.beta2),
      opt_d_(cfg.learning_rate, cfg.beta1, cfg.beta2),
      rng_(cfg.seed ^ 0x5bd1e995ULL) {
  cfg_.validate();
  require_valid_scheme(scheme_);
}

namespace {

void check_finite(const LossReport& r, int step, const std::string& where) {
  const std::pair<const char*, double> parts[] = {
      {"l_rec", r.l_rec}, {"l_gan_rec", r.l_gan_rec}, {"l_gan_swap", r.l_gan_swap}, {"l_cooccur", r.l_cooccur}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      throw TrainingError("non-finite " + std::string(name) + where + " at step " + std::to_string(step));
    }
  }
}

}  // namespace

StepLog Trainer::step(const TrainingBatch& batch) {
  batch.validate();
  const int n = static_cast<int>(batch.size());
  const bool sliced = cfg_.phase == Phase::smpn;
  const int image_size = ae_.arch().image_size;
  const int groups = sliced ? kNumRois : 1;
  const CropPlan plan = CropPlan::draw(groups * n, image_size, ae_.arch().patch_size, cfg_.refs_per_patch, rng_);

  StepLog log;
  log.step = step_;
  log.phase = cfg_.phase;

  // generator update
  ae_.params().set_trainable(true);
  disc_.params().set_trainable(false);
  ae_.params().zero_grad();
  auto x = ag::constant(stack_images<float>(batch.X));
  GeneratorObjective<float> obj;
  if (sliced) {
    std::array<ag::Var<float>, kNumRois> y;
    for (RoiId roi : kAllRois) y[roi_index(roi)] = ag::constant(stack_images<float>(batch.Y.at(roi)));
    obj = smpn_objective<float>(ae_, disc_, x, y, scheme_, plan);
    std::map<RoiId, LossReport> reports;
    for (RoiId roi : kAllRois) {
      reports[roi] = obj.terms[roi_index(roi)].report();
      check_finite(reports[roi], step_, " for roi " + std::string(roi_name(roi)));
    }
    log.overall = overall_smpn_loss(reports);
    log.generator = combine_components(0, 0, 0, 0);
    log.generator.l_total = log.overall->l_overall;
  } else {
    obj = smn_objective<float>(ae_, disc_, x, plan);
    log.generator = obj.terms[0].report();
    check_finite(log.generator, step_, "");
  }
  ag::backward(obj.total);
  opt_g_.step(ae_.params());

  // discriminator update on detached samples
  ae_.params().set_trainable(false);
  disc_.params().set_trainable(true);
  disc_.params().zero_grad();
  auto real = ag::constant(obj.real_images->value);
  auto fake = ag::constant(obj.fake_images->value);
  auto style = ag::constant(obj.style_sources->value);
  auto swapped = ag::constant(obj.swapped->value);
  obj = GeneratorObjective<float>{};

  auto d_img = discriminator_gan_loss<float>(disc_.image_logits(real), disc_.image_logits(fake));
  auto refs = ag::crops(style, plan.references, plan.patch_size);
  auto cooc_real = disc_.cooccurrence_logits(ag::crops(style, plan.real_targets, plan.patch_size), refs,
                                             plan.refs_per_patch);
  auto cooc_fake = disc_.cooccurrence_logits(ag::crops(swapped, plan.targets, plan.patch_size), refs,
                                             plan.refs_per_patch);
  auto d_cooc = discriminator_gan_loss<float>(cooc_real, cooc_fake);
  auto d_total = ag::weighted_sum<float>({d_img, d_cooc}, {1.0f, 1.0f});
  log.d_loss = d_total->value[0];
  if (!std::isfinite(log.d_loss)) throw TrainingError("non-finite discriminator loss at step " + std::to_string(step_));
  ag::backward(d_total);
  if (step_ % cfg_.r1_interval == 0 && cfg_.r1_gamma > 0) {
    log.r1 = accumulate_r1_gradient(disc_, real, cfg_.r1_gamma, cfg_.r1_interval);
  }
  opt_d_.step(disc_.params());
  disc_.params().set_trainable(false);
  ++step_;
  return log;
}

namespace {

TrainResult run(const BatchSource& data, const TrainConfig& cfg, const ModelConfig& model, AutoencoderParams ae,
                DiscriminatorParams disc, const StepCallback& on_step) {
  TrainResult result{std::move(ae), std::move(disc), {}};
  if (cfg.steps == 0) return result;
  Trainer trainer(std::move(result.autoencoder), std::move(result.discriminators), cfg, model.slice_scheme);
  for (int s = 0; s < cfg.steps; ++s) {
    const TrainingBatch& batch = data();
    result.log.push_back(trainer.step(batch));
    if (on_step) on_step(result.log.back());
  }
  trainer.autoencoder().params().set_trainable(false);
  trainer.discriminators().params().set_trainable(false);
  result.autoencoder = std::move(trainer.autoencoder());
  result.discriminators = std::move(trainer.discriminators());
  return result;
}

}  // namespace

TrainResult train_smn(const BatchSource& data, const TrainConfig& cfg, const ModelConfig& model,
                      const AutoencoderParams* init, const DiscriminatorParams* disc_init, const StepCallback& on_step) {
  if (cfg.phase != Phase::smn) throw std::invalid_argument("train_smn requires phase smn");
  cfg.validate();
  model.validate();
  const ArchSpec arch = ArchSpec::from_config(model);
  AutoencoderParams ae = init ? AutoencoderParams(arch, init->params().clone()) : AutoencoderParams(arch, cfg.seed);
  DiscriminatorParams disc =
      disc_init ? DiscriminatorParams(arch, disc_init->params().clone()) : DiscriminatorParams(arch, cfg.seed);
  ae.params().set_trainable(false);
  disc.params().set_trainable(false);
  return run(data, cfg, model, std::move(ae), std::move(disc), on_step);
}

TrainResult train_smpn(const BatchSource& data, const TrainConfig& cfg, const ModelConfig& model,
                       const AutoencoderParams* init, const DiscriminatorParams* disc_init,
                       const StepCallback& on_step) {
  if (init == nullptr) throw TrainingError("SMPN requires SMN weights");
  if (cfg.phase != Phase::smpn) throw std::invalid_argument("train_smpn requires phase smpn");
  cfg.validate();
  model.validate();
  const ArchSpec arch = ArchSpec::from_config(model);
  AutoencoderParams ae(arch, init->params().clone());
  DiscriminatorParams disc =
      disc_init ? DiscriminatorParams(arch, disc_init->params().clone()) : DiscriminatorParams(arch, cfg.seed);
  ae.params().set_trainable(false);
  disc.params().set_trainable(false);
  return run(data, cfg, model, std::move(ae), std::move(disc), on_step);
}

double windowed_l_rec(const std::vector<StepLog>& log, std::size_t window) {
  if (log.empty()) throw std::invalid_argument("windowed_l_rec: empty log");
  window = std::min(window, log.size());
  double s = 0;
  for (auto it = log.end() - static_cast<std::ptrdiff_t>(window); it != log.end(); ++it) s += it->l_rec();
  return s / static_cast<double>(window);
}

}  // namespace roiedit
