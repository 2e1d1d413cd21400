#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roiedit/data.hpp"
#include "roiedit/pipeline.hpp"

namespace roiedit {

struct EvalReport {
  std::map<RoiId, double> per_roi_iou;
  double mean_iou = 0;
  double max_leakage = 0;
  double edits_per_second = 0;
  double median_edit_seconds = 0;
  int decoder_calls_per_edit = 0;
  std::int64_t edit_macs = 0;
  std::map<std::string, double> perceptual;

  nlohmann::json to_json() const;
};

/// |pred & gt| / |pred | gt|, 1.0 when both are empty.
double iou(const RoiMask& pred, const RoiMask& gt);

RoiMask ground_truth_mask(const LabelMap& labels, RoiId roi);

/// Pixels the final blur can reach from the matte support, i.e. where blur(alpha) > 0.
RoiMask matte_reach(const Tensor<float>& matte);

/// Max over pixels outside matte_reach(result.matte) of |edited - blur(x)|, over channels.
double locality_leakage(const ImageTensor& x, const EditResult& result);

/// Same measure restricted to pixels with alpha == 0 only (includes the ring one
/// pixel outside the matte, which the final blur still touches).
double locality_leakage_alpha_zero(const ImageTensor& x, const EditResult& result);

struct BenchmarkResult {
  double edits_per_second = 0;
  double median_seconds = 0;
  int decoder_calls_per_edit = 0;
  std::vector<double> trial_seconds;
};

/// Median wall clock over n_trials edits (after one warm-up edit), cycling the
/// given images and ROIs.
BenchmarkResult benchmark_edit(const AutoencoderParams& smn, const AutoencoderParams& smpn,
                               const std::vector<ImageTensor>& images, int n_trials, const SliceScheme& scheme,
                               double mu = 1.0);

/// Plug-in point for perceptual image metrics; none ship with the library.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual std::string name() const = 0;
  virtual double score(const std::vector<ImageTensor>& reference, const std::vector<ImageTensor>& edited) const = 0;
};

using MaskPredictor = std::function<RoiMask(const ImageTensor&, RoiId)>;

/// Mask IoU aggregated per ROI over all records.
EvalReport evaluate_masks(const MaskPredictor& predictor, const std::vector<DatasetRecord>& records);

struct EvalOptions {
  int benchmark_trials = 11;
  int locality_edits = 20;
  std::uint64_t seed = 0;
  double mu = 1.0;
  std::vector<const PerceptualMetric*> metrics;
};

EvalReport evaluate(const AutoencoderParams& smn, const AutoencoderParams& smpn, const std::vector<DatasetRecord>& records,
                    const SliceScheme& scheme, const EvalOptions& options = {});

void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace roiedit
