#pragma once

#include <string>
#include <vector>

#include "globaltrack/data.hpp"
#include "globaltrack/geometry.hpp"
#include "globaltrack/tracker.hpp"

namespace gt {

struct EvalFrame {
  TrackRecord record;  // prediction
  Box groundtruth;     // meaningful when gt_present
  bool gt_present = false;
};

struct EvalSequence {
  std::string name;
  std::vector<EvalFrame> frames;
};

struct EvalRun {
  std::vector<EvalSequence> sequences;
};

struct CurveResult {
  std::vector<double> thresholds;  // strictly increasing
  std::vector<double> values;      // fractions in [0,1]
  double summary = 0.0;            // AUC or at-threshold scalar
};

struct PresenceMetrics {
  double tpr = 0.0;     // at the records' emitted present flags
  double tnr = 0.0;
  double gm = 0.0;      // sqrt(tpr * tnr) at that operating point
  double max_gm = 0.0;  // plain maximum over the score-threshold sweep
  bool tnr_defined = true;
};

// Pairs tracker output with a sequence's annotations; throws on length
// mismatch.
EvalSequence make_eval_sequence(const std::string& name, const std::vector<TrackRecord>& records,
                                const Sequence& sequence);

double center_distance(const Box& a, const Box& b);
// Offset normalized per-axis by the second box's width/height.
double normalized_center_distance(const Box& prediction, const Box& groundtruth);

// Per instance: best IoU among the top-k proposals. multi_threshold averages
// recall (IoU >= t, inclusive, the detection-benchmark convention) over
// t = (10 + i) * 0.05 for i in 0..9; otherwise the single threshold 0.5 is
// used. Throws when k < 1 or sizes mismatch.
double average_recall_at_k(const std::vector<std::vector<Prediction>>& proposal_lists,
                           const std::vector<Box>& groundtruths, int64_t k,
                           bool multi_threshold = true);

// 21 thresholds 0..1; value = fraction of present-groundtruth frames with
// iou strictly above t; summary = mean of the values.
CurveResult success_curve(const EvalRun& run);

// Pixel center distance; thresholds 0..50; value = fraction with distance
// <= t (inclusive); summary = value at report_threshold.
CurveResult precision_curve(const EvalRun& run, double report_threshold = 20.0);

// 51 thresholds over [0, 0.5] on the normalized distance; summary = AUC.
// Frames with a zero-size groundtruth are skipped.
CurveResult normalized_precision_curve(const EvalRun& run);

// Fraction of present-groundtruth frames with iou strictly above threshold.
double overlap_precision(const EvalRun& run, double threshold = 0.5);

// TPR counts present-labeled frames reported present and localized
// (iou > 0.5); TNR counts absent-labeled frames reported absent. MaxGM
// sweeps the score threshold.
PresenceMetrics presence_metrics(const EvalRun& run);

// Structured-text report; `metrics` filters from {"success", "precision",
// "norm_precision", "op", "presence"}; empty selects all.
std::string format_report(const EvalRun& run, const std::vector<std::string>& metrics = {});

}  // namespace gt
