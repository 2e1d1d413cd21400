#include "roiedit/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace roiedit {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  for (const auto& [roi, v] : per_roi_iou) j["per_roi_iou"][std::string(roi_name(roi))] = v;
  j["mean_iou"] = mean_iou;
  j["max_leakage"] = max_leakage;
  j["edits_per_second"] = edits_per_second;
  j["median_edit_seconds"] = median_edit_seconds;
  j["decoder_calls_per_edit"] = decoder_calls_per_edit;
  j["edit_macs"] = edit_macs;
  j["perceptual"] = perceptual;
  return j;
}

double iou(const RoiMask& pred, const RoiMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) throw ShapeError("iou: mask shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits().size(); ++i) {
    const bool a = pred.bits()[i], b = gt.bits()[i];
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

RoiMask ground_truth_mask(const LabelMap& labels, RoiId roi) {
  return RoiMask(labels.height(), labels.width(), labels.region(roi));
}

RoiMask matte_reach(const Tensor<float>& matte) {
  const Tensor<float> spread = blur(matte);
  std::vector<bool> bits(spread.size());
  for (std::size_t i = 0; i < spread.size(); ++i) bits[i] = spread[i] > 0.0f;
  return RoiMask(matte.dim(0), matte.dim(1), std::move(bits));
}

namespace {

double leakage_outside(const ImageTensor& x, const EditResult& result, const std::vector<bool>& excluded) {
  require_same_shape(x, result.edited, "locality_leakage");
  const ImageTensor base = blur(x);
  const int c = x.dim(2);
  double worst = 0;
  for (std::size_t p = 0; p < excluded.size(); ++p) {
    if (excluded[p]) continue;
    for (int k = 0; k < c; ++k) {
      worst = std::max(worst, std::abs(static_cast<double>(result.edited[p * c + k]) - base[p * c + k]));
    }
  }
  return worst;
}

}  // namespace

double locality_leakage(const ImageTensor& x, const EditResult& result) {
  return leakage_outside(x, result, matte_reach(result.matte).bits());
}

double locality_leakage_alpha_zero(const ImageTensor& x, const EditResult& result) {
  std::vector<bool> support(result.matte.size());
  for (std::size_t i = 0; i < support.size(); ++i) support[i] = result.matte[i] > 0.0f;
  return leakage_outside(x, result, support);
}

BenchmarkResult benchmark_edit(const AutoencoderParams& smn, const AutoencoderParams& smpn,
                               const std::vector<ImageTensor>& images, int n_trials, const SliceScheme& scheme,
                               double mu) {
  if (n_trials < 1) throw std::invalid_argument("benchmark needs at least one trial");
  if (images.empty()) throw std::invalid_argument("benchmark needs at least one image");
  using clock = std::chrono::steady_clock;
  BenchmarkResult out;
  (void)edit(smn, smpn, images[0], EditConfig{RoiId::hair, mu, 0}, scheme);
  for (int i = 0; i < n_trials; ++i) {
    const EditConfig cfg{kAllRois[static_cast<std::size_t>(i) % kNumRois], mu, static_cast<std::uint64_t>(i)};
    const auto t0 = clock::now();
    const EditResult r = edit(smn, smpn, images[static_cast<std::size_t>(i) % images.size()], cfg, scheme);
    out.trial_seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    out.decoder_calls_per_edit = std::max(out.decoder_calls_per_edit, r.passes.decoder_calls);
  }
  std::vector<double> sorted = out.trial_seconds;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  out.median_seconds = sorted[sorted.size() / 2];
  out.edits_per_second = out.median_seconds > 0 ? 1.0 / out.median_seconds : 0.0;
  return out;
}

EvalReport evaluate_masks(const MaskPredictor& predictor, const std::vector<DatasetRecord>& records) {
  if (records.empty()) throw std::invalid_argument("empty evaluation set");
  EvalReport report;
  for (RoiId roi : kAllRois) {
    double total = 0;
    for (const auto& rec : records) total += iou(predictor(rec.image, roi), ground_truth_mask(rec.labels, roi));
    report.per_roi_iou[roi] = total / static_cast<double>(records.size());
  }
  double s = 0;
  for (const auto& [roi, v] : report.per_roi_iou) s += v;
  report.mean_iou = s / static_cast<double>(report.per_roi_iou.size());
  return report;
}

EvalReport evaluate(const AutoencoderParams& smn, const AutoencoderParams& smpn, const std::vector<DatasetRecord>& records,
                    const SliceScheme& scheme, const EvalOptions& options) {
  EvalReport report = evaluate_masks(
      [&](const ImageTensor& x, RoiId roi) { return predict_roi_mask(smpn, x, roi, scheme); }, records);

  std::mt19937_64 rng(options.seed);
  std::vector<ImageTensor> originals, edited;
  for (int i = 0; i < options.locality_edits; ++i) {
    const auto& rec = records[rng() % records.size()];
    const EditConfig cfg{kAllRois[static_cast<std::size_t>(i) % kNumRois], options.mu, rng()};
    const EditResult r = edit(smn, smpn, rec.image, cfg, scheme);
    report.max_leakage = std::max(report.max_leakage, locality_leakage(rec.image, r));
    report.decoder_calls_per_edit = std::max(report.decoder_calls_per_edit, r.passes.decoder_calls);
    originals.push_back(rec.image);
    edited.push_back(r.edited);
  }
  for (const auto* metric : options.metrics) report.perceptual[metric->name()] = metric->score(originals, edited);

  std::vector<ImageTensor> images;
  for (const auto& rec : records) images.push_back(rec.image);
  const auto bench = benchmark_edit(smn, smpn, images, options.benchmark_trials, scheme, options.mu);
  report.edits_per_second = bench.edits_per_second;
  report.median_edit_seconds = bench.median_seconds;
  report.decoder_calls_per_edit = std::max(report.decoder_calls_per_edit, bench.decoder_calls_per_edit);
  report.edit_macs = estimate_edit_macs(smn.arch());
  return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report to " + path.string());
  out << report.to_json().dump(2) << "\n";
}

}  // namespace roiedit
