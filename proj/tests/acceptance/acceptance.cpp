// Acceptance harness: one PASS/FAIL line per primary criterion.
//
//   roiedit_acceptance --cli <roiedit binary> --work <dir> [--skip-training] [--strict]
//
// Exit status is 0 once every criterion has been evaluated; --strict makes any
// FAIL return 1.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "roiedit/checkpoint.hpp"
#include "roiedit/data.hpp"
#include "roiedit/evaluation.hpp"
#include "roiedit/image_io.hpp"
#include "roiedit/losses.hpp"
#include "roiedit/pipeline.hpp"
#include "roiedit/training.hpp"

namespace fs = std::filesystem;
using namespace roiedit;

namespace {

// Regression bounds for the toy run. The stated targets are kept; the
// measured baseline is printed next to them.
constexpr double kMaxTrainSeconds = 1800;
constexpr double kMinMeanIou = 0.6;
constexpr double kMaxWindowedRec = 0.08;
constexpr std::size_t kRecWindow = 100;

constexpr double kMattingTol = 1e-6;
constexpr double kGradTol = 1e-3;
constexpr double kFdStep = 1e-4;
constexpr double kLeakTol = 1e-6;
constexpr double kMaxMedianEdit = 0.5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  if (!o.pass) ++g_failures;
}

Outcome guarded(const std::function<Outcome()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- oracles ---------------------------------------------------------------

double kernel_at(int i, int j) {
  const double c = 1.0 / (1.0 + 4.0 * std::exp(-0.5) + 4.0 * std::exp(-1.0));
  return c * std::exp(-(i * i + j * j) / 2.0);
}

int pad_index(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - i - 1;
  return i;
}

std::vector<double> oracle_blur(const std::vector<double>& img, int h, int w, int c) {
  std::vector<double> out(img.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        for (int i = -1; i <= 1; ++i)
          for (int j = -1; j <= 1; ++j)
            out[(y * w + x) * c + k] += kernel_at(i, j) * img[(pad_index(y + i, h) * w + pad_index(x + j, w)) * c + k];
  return out;
}

std::vector<double> to_double(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

ImageTensor random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  ImageTensor t({h, w, 3});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// ---- fast criteria ---------------------------------------------------------

Outcome matting() {
  std::mt19937_64 rng(12345);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_image(8, 8, rng), y = random_image(8, 8, rng);
    RoiMask m(8, 8);
    std::vector<double> md(64);
    for (int p = 0; p < 64; ++p) {
      const bool on = (rng() & 1) != 0;
      m.set(p / 8, p % 8, on);
      md[p] = on ? 1.0 : 0.0;
    }
    const auto alpha = oracle_blur(md, 8, 8, 1);
    std::vector<double> blend(x.size());
    for (int p = 0; p < 64; ++p)
      for (int k = 0; k < 3; ++k) blend[p * 3 + k] = (1 - alpha[p]) * x[p * 3 + k] + alpha[p] * y[p * 3 + k];
    const auto ref = oracle_blur(blend, 8, 8, 3);
    const auto r = alpha_matting(x, m, y);
    for (int p = 0; p < 64; ++p) worst = std::max(worst, std::abs(r.matte[p] - alpha[p]));
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(r.composite[i] - ref[i]));
  }

  const auto x = random_image(8, 8, rng), y = random_image(8, 8, rng);
  const bool full = alpha_matting(x, RoiMask(8, 8, true), y).composite == blur(y);
  const bool empty = alpha_matting(x, RoiMask(8, 8, false), y).composite == blur(x);

  RoiMask single(7, 7);
  single.set(3, 3, true);
  const auto r = alpha_matting(ImageTensor({7, 7, 3}, 0.0f), single, ImageTensor({7, 7, 3}, 1.0f));
  double energy = 0;
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j) energy += kernel_at(i, j) * kernel_at(i, j);
  const double centre = r.composite.at(3, 3, 0);
  const bool single_ok = std::abs(centre - energy) <= kMattingTol && std::abs(energy - 0.1256) < 5e-5;

  return {worst <= kMattingTol && full && empty && single_ok,
          "50 random 8x8 max err " + fmt(worst) + " (tol 1e-6); all-true " + (full ? "ok" : "bad") + ", all-false " +
              (empty ? "ok" : "bad") + ", single pixel " + fmt(centre) + " vs sum k^2 " + fmt(energy)};
}

StructureTensor random_structure(int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.f, 2.f);
  Tensor<float> t({h, w, kStructureChannels});
  for (auto& v : t.values()) v = n(rng);
  return StructureTensor(t);
}

SliceScheme random_partition(std::mt19937_64& rng) {
  // shuffle channels, cut into five non-empty runs, leave a random tail unassigned
  std::vector<int> ch(kStructureChannels);
  for (int i = 0; i < kStructureChannels; ++i) ch[i] = i;
  std::shuffle(ch.begin(), ch.end(), rng);
  const int used = kNumRois + static_cast<int>(rng() % (kStructureChannels - kNumRois + 1));
  std::vector<int> cuts = {0};
  std::vector<int> inner;
  for (int i = 1; i < used; ++i) inner.push_back(i);
  std::shuffle(inner.begin(), inner.end(), rng);
  inner.resize(kNumRois - 1);
  std::sort(inner.begin(), inner.end());
  cuts.insert(cuts.end(), inner.begin(), inner.end());
  cuts.push_back(used);
  SliceScheme::Assignment a;
  for (int r = 0; r < kNumRois; ++r)
    for (int i = cuts[r]; i < cuts[r + 1]; ++i) a[kAllRois[r]].insert(ch[i]);
  return SliceScheme(a);
}

Outcome slicing() {
  std::mt19937_64 rng(2718);
  std::uniform_real_distribution<float> u(-3.f, 3.f);
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 6), w = 1 + static_cast<int>(rng() % 6);
    const auto s1 = random_structure(h, w, rng), s2 = random_structure(h, w, rng);
    const auto scheme = random_partition(rng);
    bool ok = !validate_scheme(scheme).has_value();

    const RoiId roi = kAllRois[rng() % kNumRois];
    const SliceMask m = make_slice_mask(scheme, roi);
    for (int c = 0; c < kStructureChannels; ++c) ok &= m.keep[c] == (scheme.channels(roi).count(c) != 0);

    const auto once = apply_slice_mask(s1, m);
    ok &= apply_slice_mask(once, m) == once;

    const float a = u(rng);
    Tensor<float> mix(s1.tensor().shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * s1.tensor()[i] + s2.tensor()[i];
    const auto lhs = apply_slice_mask(StructureTensor(mix), m);
    const auto r2 = apply_slice_mask(s2, m);
    for (std::size_t i = 0; i < mix.size(); ++i) {
      const float want = a * once.tensor()[i] + r2.tensor()[i];
      ok &= std::abs(lhs.tensor()[i] - want) <= 1e-6f * (1.f + std::abs(want));
    }

    // disjoint ROIs compose to the union of their channels
    Tensor<float> sum(s1.tensor().shape());
    for (RoiId r : kAllRois) {
      const auto part = apply_slice_mask(s1, make_slice_mask(scheme, r));
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += part.tensor()[i];
    }
    std::array<bool, kStructureChannels> assigned{};
    for (const auto& [r, chans] : scheme.assignment())
      for (int c : chans) assigned[c] = true;
    for (std::size_t i = 0; i < sum.size(); ++i) ok &= sum[i] == (assigned[i % kStructureChannels] ? s1.tensor()[i] : 0.f);

    // one random corruption must be rejected
    auto bad = scheme.assignment();
    const RoiId victim = kAllRois[rng() % kNumRois];
    switch (rng() % 4) {
      case 0:
        bad.erase(victim);
        break;
      case 1:
        bad[victim].insert(*bad[kAllRois[(roi_index(victim) + 1) % kNumRois]].begin());
        break;
      case 2:
        bad[victim].insert(kStructureChannels + static_cast<int>(rng() % 5));
        break;
      default:
        bad[victim].clear();
    }
    ok &= validate_scheme(SliceScheme(bad)).has_value();
    failures += !ok;
  }
  return {failures == 0, "1000 randomized cases, " + std::to_string(failures) + " failures"};
}

Outcome shapes() {
  std::string detail;
  bool ok = true;
  for (int h : {32, 64, 128}) {
    ModelConfig m;
    m.image_size = h;
    const AutoencoderParams ae(ArchSpec::from_config(m), 1);
    std::mt19937_64 rng(h);
    const auto [s, t] = encode(ae, random_image(h, h, rng));
    const auto y = decode(ae, s, t);
    const bool good = s.height() == h / 16 && s.width() == h / 16 && s.tensor().dim(2) == 8 &&
                      t.size() == static_cast<std::size_t>(kTextureDim) && y.shape() == std::vector<int>{h, h, 3};
    ok &= good;
    detail += "H=" + std::to_string(h) + " S_s " + std::to_string(s.height()) + "x" + std::to_string(s.width()) + "x" +
              std::to_string(s.tensor().dim(2)) + " S_t " + std::to_string(t.size()) + "; ";
  }
  return {ok, detail.substr(0, detail.size() - 2)};
}

ArchSpec tiny_arch() {
  ArchSpec a;
  a.image_size = 4;
  a.encoder_widths = {2, 2};
  a.decoder_widths = {2, 2};
  a.texture_dim = 4;
  a.disc_widths = {2, 2};
  a.patch_widths = {2};
  a.patch_size = 2;
  a.patch_hidden = 3;
  return a;
}

Tensor<double> random_double(std::vector<int> shape, std::uint64_t seed) {
  Tensor<double> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

struct GradCheck {
  double worst = 0;
  int kinks = 0;
};

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::max(std::abs(a), std::abs(b))); }

// Central differences against the analytic gradient. The networks are piecewise
// linear, so a +-step can cross an activation kink; such entries show up as
// disagreeing one-sided slopes and are compared against the one-sided slope
// that stays on the analytic side.
GradCheck check_gradients(ParamSet<double>& params, const std::function<ag::Var<double>()>& loss) {
  params.set_trainable(true);
  params.zero_grad();
  ag::backward(loss());
  GradCheck out;
  for (const auto& [name, p] : params.entries()) {
    const Tensor<double> analytic = p->has_grad() ? p->grad : Tensor<double>(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      auto at = [&](double offset) {
        ag::NoGradGuard g;
        p->value[i] = saved + offset;
        const double v = loss()->value[0];
        p->value[i] = saved;
        return v;
      };
      const double plus = at(kFdStep), minus = at(-kFdStep);
      double err = rel_err(analytic[i], (plus - minus) / (2 * kFdStep));
      if (err >= kGradTol) {
        // second-order one-sided differences on each side
        const double centre = at(0);
        const double right = (-3 * centre + 4 * plus - at(2 * kFdStep)) / (2 * kFdStep);
        const double left = (3 * centre - 4 * minus + at(-2 * kFdStep)) / (2 * kFdStep);
        if (rel_err(right, left) > kGradTol) {
          ++out.kinks;
          err = std::min(rel_err(analytic[i], right), rel_err(analytic[i], left));
        }
      }
      out.worst = std::max(out.worst, err);
    }
  }
  params.set_trainable(false);
  return out;
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const ArchSpec arch = tiny_arch();
  Autoencoder<double> ae(arch, 11);
  Discriminators<double> disc(arch, 12);
  const auto x = ag::constant(random_double({3, 4, 4, 3}, 5));
  std::array<ag::Var<double>, kNumRois> y;
  for (int i = 0; i < kNumRois; ++i) y[i] = ag::constant(random_double({3, 4, 4, 3}, 40 + i));
  const auto scheme = SliceScheme::default_scheme();

  std::mt19937_64 rng(3);
  const CropPlan smn_plan = CropPlan::draw(3, 4, arch.patch_size, 2, rng);
  const CropPlan smpn_plan = CropPlan::draw(kNumRois * 3, 4, arch.patch_size, 2, rng);
  auto smn = [&] { return smn_objective<double>(ae, disc, x, smn_plan).total; };
  auto smpn = [&] { return smpn_objective<double>(ae, disc, x, y, scheme, smpn_plan).total; };

  // discriminator side: its own loss on detached samples, as in a training step
  auto d_loss = [&](const GeneratorObjective<double>& obj, const CropPlan& plan) {
    const auto real = ag::constant(obj.real_images->value), fake = ag::constant(obj.fake_images->value);
    const auto style = ag::constant(obj.style_sources->value), swapped = ag::constant(obj.swapped->value);
    return [&disc, &plan, real, fake, style, swapped] {
      auto d_img = discriminator_gan_loss<double>(disc.image_logits(real), disc.image_logits(fake));
      auto refs = ag::crops(style, plan.references, plan.patch_size);
      auto cooc_real = disc.cooccurrence_logits(ag::crops(style, plan.real_targets, plan.patch_size), refs,
                                                plan.refs_per_patch);
      auto cooc_fake =
          disc.cooccurrence_logits(ag::crops(swapped, plan.targets, plan.patch_size), refs, plan.refs_per_patch);
      return ag::weighted_sum<double>({d_img, discriminator_gan_loss<double>(cooc_real, cooc_fake)}, {1.0, 1.0});
    };
  };
  const auto g1 = check_gradients(ae.params(), smn);
  const auto g2 = check_gradients(disc.params(), d_loss(smn_objective<double>(ae, disc, x, smn_plan), smn_plan));
  const auto g3 = check_gradients(ae.params(), smpn);
  const auto g4 =
      check_gradients(disc.params(), d_loss(smpn_objective<double>(ae, disc, x, y, scheme, smpn_plan), smpn_plan));
  const double e1 = g1.worst, e2 = g2.worst, e3 = g3.worst, e4 = g4.worst;
  const double worst = std::max({e1, e2, e3, e4});
  const int kinks = g1.kinks + g2.kinks + g3.kinks + g4.kinks;
  const double elapsed = seconds_since(t0);
  const std::size_t n_ae = ae.params().count(), n_d = disc.params().count();
  return {worst < kGradTol && elapsed < 60 && n_ae <= 1000 && n_d <= 1000,
          "max rel err " + fmt(worst) + " (smn objective " + fmt(e1) + ", smpn objective " + fmt(e3) +
              ", discriminator loss on smn/smpn samples " + fmt(e2) + "/" + fmt(e4) + "), " + std::to_string(kinks) +
              " entries straddling a kink checked one-sided, params " + std::to_string(n_ae) + "/" + std::to_string(n_d) + ", " +
              fmt(elapsed) + " s"};
}

Outcome loss_arithmetic() {
  bool ok = combine_components(1, 1, 1, 1).l_total == 2.5;
  ok &= combine_components(1, 0, 0, 0).l_total == 1.0;
  ok &= combine_components(0, 1, 0, 0).l_total == 0.5;
  ok &= combine_components(0, 0, 1, 0).l_total == 0.5;
  ok &= combine_components(0, 0, 0, 1).l_total == 0.5;

  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0, 3);
  double worst = 0;
  for (int i = 0; i < 500; ++i) {
    ImageTensor p({6, 6, 3}), t({6, 6, 3});
    for (auto& v : p.values()) v = static_cast<float>(n(rng));
    for (auto& v : t.values()) v = static_cast<float>(n(rng));
    const auto r = composite_loss(p, t, n(rng), n(rng), n(rng));
    const double expect = r.l_rec + 0.5 * r.l_gan_rec + 0.5 * r.l_gan_swap + 0.5 * r.l_cooccur;
    worst = std::max(worst, std::abs(r.l_total - expect) / std::max(1e-300, std::abs(expect)));

    std::map<RoiId, LossReport> per;
    double sum = 0;
    for (RoiId roi : kAllRois) {
      per[roi] = combine_components(std::abs(n(rng)), std::abs(n(rng)), std::abs(n(rng)), std::abs(n(rng)));
      sum += 0.2 * per[roi].l_total;
    }
    worst = std::max(worst, std::abs(overall_smpn_loss(per).l_overall - sum) / std::max(1e-300, sum));
  }
  for (RoiId roi : kAllRois) {
    std::map<RoiId, LossReport> one;
    for (RoiId r : kAllRois) one[r] = combine_components(r == roi ? 1 : 0, 0, 0, 0);
    ok &= std::abs(overall_smpn_loss(one).l_overall - 0.2) < 1e-15;
  }
  return {ok && worst < 1e-9, "coefficients (1, 0.5, 0.5, 0.5), weights 0.2 x 5; max rel err over 500 random reports " +
                                  fmt(worst)};
}

// ---- trained-model criteria ------------------------------------------------

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<double> jsonl_l_rec(const fs::path& path) {
  std::ifstream in(path);
  std::vector<double> out;
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line).at("l_rec").get<double>());
  return out;
}

double region_iou(const RoiMask& pred, const std::vector<bool>& gt) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    inter += pred.bits()[i] && gt[i];
    uni += pred.bits()[i] || gt[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct Models {
  Checkpoint smn, smpn;
  fs::path root;
};

Outcome toy_training(const std::string& cli, const fs::path& work, std::optional<Models>& models) {
  const fs::path data = work / "synthetic", ck = work / "checkpoints", log = work / "cli.log";
  fs::remove_all(data);
  fs::remove_all(ck);
  const auto t0 = std::chrono::steady_clock::now();
  if (run_cli(cli, "make-synthetic --out " + data.string() + " --count 200 --size 64 --seed 0", log) != 0)
    return {false, "make-synthetic failed, see " + log.string()};
  if (run_cli(cli, "train-smn --dataset " + data.string() + " --out " + (ck / "smn").string() + " --steps 2000 --seed 0 --log " +
                       (work / "smn.jsonl").string() + " --log-every 250",
              log) != 0)
    return {false, "train-smn failed, see " + log.string()};
  if (run_cli(cli, "train-smpn --dataset " + data.string() + " --init-checkpoint " + (ck / "smn").string() + " --out " +
                       (ck / "smpn").string() + " --steps 3000 --seed 0 --log " + (work / "smpn.jsonl").string() +
                       " --log-every 250",
              log) != 0)
    return {false, "train-smpn failed, see " + log.string()};
  const double elapsed = seconds_since(t0);

  models = Models{load_checkpoint(ck / "smn"), load_checkpoint(ck / "smpn"), ck};
  const auto records = load_dataset(data);
  const auto& scheme = models->smpn.manifest.model.slice_scheme;
  std::map<RoiId, double> per_roi;
  for (const auto& rec : records)
    for (RoiId roi : kAllRois)
      per_roi[roi] += region_iou(predict_roi_mask(models->smpn.autoencoder, rec.image, roi, scheme), rec.labels.region(roi));
  double mean_iou = 0;
  std::string rois;
  for (auto& [roi, v] : per_roi) {
    v /= static_cast<double>(records.size());
    mean_iou += v / kNumRois;
    rois += std::string(roi_name(roi)) + " " + fmt(v) + ", ";
  }
  const auto rec = jsonl_l_rec(work / "smn.jsonl");
  if (rec.size() != 2000) return {false, "smn log has " + std::to_string(rec.size()) + " lines"};
  double window = 0;
  for (std::size_t i = rec.size() - kRecWindow; i < rec.size(); ++i) window += rec[i] / kRecWindow;

  return {elapsed < kMaxTrainSeconds && mean_iou >= kMinMeanIou && window < kMaxWindowedRec,
          "wall " + fmt(elapsed) + " s (< " + fmt(kMaxTrainSeconds) + "), SMPN mean IoU " + fmt(mean_iou) + " (>= " +
              fmt(kMinMeanIou) + "; " + rois.substr(0, rois.size() - 2) + "), SMN l_rec over last " +
              std::to_string(kRecWindow) + " steps " + fmt(window) + " (< " + fmt(kMaxWindowedRec) + ")"};
}

// Fresh weights stand in when training was skipped.
Models untrained_models(const fs::path& work) {
  ModelConfig m;
  const ArchSpec arch = ArchSpec::from_config(m);
  Models out{{{kCheckpointVersion, m, Phase::smn, 0}, AutoencoderParams(arch, 1), DiscriminatorParams(arch, 2)},
             {{kCheckpointVersion, m, Phase::smpn, 0}, AutoencoderParams(arch, 3), DiscriminatorParams(arch, 4)},
             work / "untrained"};
  save_checkpoint(out.root / "smn", out.smn.autoencoder, out.smn.discriminators, out.smn.manifest);
  save_checkpoint(out.root / "smpn", out.smpn.autoencoder, out.smpn.discriminators, out.smpn.manifest);
  return out;
}

Outcome locality(const Models& models) {
  SynthConfig sc;
  sc.count = 20;
  sc.seed = 77;
  const auto records = synthesize_records(sc);
  const auto& scheme = models.smn.manifest.model.slice_scheme;
  std::mt19937_64 rng(5);
  double worst = 0;
  int bad_calls = 0, support = 0;
  std::map<RoiId, int> per_roi;
  for (int e = 0; e < 20; ++e) {
    const RoiId roi = kAllRois[e % kNumRois];
    ++per_roi[roi];
    const auto& x = records[e].image;
    const auto r = edit(models.smn.autoencoder, models.smpn.autoencoder, x, EditConfig{roi, 1.0, rng()}, scheme);
    if (r.passes.decoder_calls != 2) ++bad_calls;
    const int h = x.dim(0), w = x.dim(1);
    const auto bx = oracle_blur(to_double(x), h, w, 3);
    // a pixel is untouched by the matte when no mask pixel lies within two steps
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        bool reach = false;
        for (int i = -2; i <= 2 && !reach; ++i)
          for (int j = -2; j <= 2 && !reach; ++j) {
            const int yy = y + i, xj = xx + j;
            reach = yy >= 0 && yy < h && xj >= 0 && xj < w && r.mask.at(yy, xj);
          }
        if (reach) continue;
        ++support;
        for (int k = 0; k < 3; ++k) {
          const std::size_t idx = (static_cast<std::size_t>(y) * w + xx) * 3 + k;
          worst = std::max(worst, std::abs(r.edited[idx] - bx[idx]));
        }
      }
  }
  return {worst <= kLeakTol && bad_calls == 0,
          "20 edits over 5 ROIs, max leakage " + fmt(worst) + " over " + std::to_string(support) +
              " outside pixels (tol 1e-6), edits with decoder_calls != 2: " + std::to_string(bad_calls)};
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_params(const ParamSet<float>& a, const ParamSet<float>& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (const auto& [name, v] : a.entries()) {
    if (!b.contains(name)) return false;
    const auto& w = b.get(name)->value;
    if (v->value.shape() != w.shape()) return false;
    if (std::memcmp(v->value.data(), w.data(), v->value.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

Outcome determinism(const std::string& cli, const fs::path& work, const Models& models) {
  SynthConfig sc;
  sc.count = 1;
  sc.seed = 4242;
  const auto rec = synthesize_records(sc).front();
  const fs::path img = work / "det_input.png", log = work / "cli.log";
  write_png(img, to_raster(rec.image));
  const std::string args = "edit --checkpoint " + models.root.string() + " --image " + img.string() +
                           " --roi lips_mouth --mu 1.5 --seed 31337 --out ";
  if (run_cli(cli, args + (work / "det_a.png").string(), log) != 0 ||
      run_cli(cli, args + (work / "det_b.png").string(), log) != 0)
    return {false, "edit failed, see " + log.string()};
  const auto a = file_bytes(work / "det_a.png"), b = file_bytes(work / "det_b.png");
  const bool png_same = !a.empty() && a == b;

  bool round_trip = true;
  for (const auto* ck : {&models.smn, &models.smpn}) {
    const fs::path dir = work / ("roundtrip_" + phase_name(ck->manifest.phase));
    fs::remove_all(dir);
    save_checkpoint(dir, ck->autoencoder, ck->discriminators, ck->manifest);
    const auto back = load_checkpoint(dir);
    round_trip &= back.manifest == ck->manifest && same_params(back.autoencoder.params(), ck->autoencoder.params()) &&
                  same_params(back.discriminators.params(), ck->discriminators.params());
  }
  return {png_same && round_trip, std::string("two process edits ") + (png_same ? "byte-identical" : "DIFFER") + " (" +
                                      std::to_string(a.size()) + " bytes); checkpoint round trip " +
                                      (round_trip ? "bitwise" : "MISMATCH")};
}

Outcome latency(const Models& models) {
  SynthConfig sc;
  sc.count = 5;
  sc.seed = 9;
  std::vector<ImageTensor> images;
  for (auto& r : synthesize_records(sc)) images.push_back(r.image);
  const auto b = benchmark_edit(models.smn.autoencoder, models.smpn.autoencoder, images, 21,
                                models.smn.manifest.model.slice_scheme);
  return {b.median_seconds < kMaxMedianEdit,
          "median " + fmt(b.median_seconds * 1e3) + " ms over 21 edits at H=64 (< 500 ms)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cli, work = (fs::temp_directory_path() / "roiedit_acceptance").string();
  bool skip_training = false, strict = false;
  app.add_option("--cli", cli, "Path to the roiedit executable")->required();
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_flag("--skip-training", skip_training, "Use untrained weights and skip the toy training criterion");
  app.add_flag("--strict", strict, "Exit 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  report("matting_oracle", guarded(matting));
  report("slicing_algebra", guarded(slicing));
  report("shape_contract", guarded(shapes));
  report("gradient_correctness", guarded(gradients));
  report("loss_arithmetic", guarded(loss_arithmetic));

  std::optional<Models> models;
  if (skip_training) {
    std::cout << "SKIP toy_training: --skip-training given" << std::endl;
  } else {
    report("toy_training", guarded([&] { return toy_training(cli, work, models); }));
  }
  if (!models) models = untrained_models(work);

  report("locality", guarded([&] { return locality(*models); }));
  report("determinism", guarded([&] { return determinism(cli, work, *models); }));
  report("latency", guarded([&] { return latency(*models); }));

  std::cout << "acceptance finished: " << g_failures << " failing criteria" << std::endl;
  return strict && g_failures > 0 ? 1 : 0;
}
