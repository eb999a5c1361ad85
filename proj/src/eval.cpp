#include "globaltrack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gt {

namespace {

// Flattens the run to per-frame (iou, distance) observations on frames whose
// groundtruth is present.
struct FrameObs {
  double iou = 0;
  double distance = 0;
  double norm_distance = 0;
  bool norm_valid = true;
};

std::vector<FrameObs> present_frames(const EvalRun& run) {
  std::vector<FrameObs> obs;
  for (const auto& seq : run.sequences)
    for (const auto& f : seq.frames) {
      if (!f.gt_present) continue;
      FrameObs o;
      o.iou = f.record.box.valid() ? iou(f.record.box, f.groundtruth) : 0.0;
      o.distance = center_distance(f.record.box, f.groundtruth);
      const double gw = f.groundtruth.x2 - f.groundtruth.x1;
      const double gh = f.groundtruth.y2 - f.groundtruth.y1;
      if (gw <= 0 || gh <= 0)
        o.norm_valid = false;
      else
        o.norm_distance = normalized_center_distance(f.record.box, f.groundtruth);
      obs.push_back(o);
    }
  if (obs.empty()) throw std::invalid_argument("eval: no present-groundtruth frames");
  return obs;
}

}  // namespace

EvalSequence make_eval_sequence(const std::string& name, const std::vector<TrackRecord>& records,
                                const Sequence& sequence) {
  if (records.size() != sequence.annotations.size())
    throw std::invalid_argument("eval: result/groundtruth length mismatch in " + name);
  EvalSequence out;
  out.name = name;
  for (size_t i = 0; i < records.size(); ++i) {
    EvalFrame f;
    f.record = records[i];
    f.gt_present = sequence.annotations[i].present;
    if (f.gt_present) f.groundtruth = sequence.annotations[i].box;
    out.frames.push_back(f);
  }
  return out;
}

double center_distance(const Box& a, const Box& b) {
  const double dx = (a.x1 + a.x2) / 2 - (b.x1 + b.x2) / 2;
  const double dy = (a.y1 + a.y2) / 2 - (b.y1 + b.y2) / 2;
  return std::hypot(dx, dy);
}

double normalized_center_distance(const Box& prediction, const Box& groundtruth) {
  const double gw = groundtruth.x2 - groundtruth.x1;
  const double gh = groundtruth.y2 - groundtruth.y1;
  if (gw <= 0 || gh <= 0)
    throw std::invalid_argument("eval: zero-size groundtruth in normalized distance");
  const double dx = ((prediction.x1 + prediction.x2) - (groundtruth.x1 + groundtruth.x2)) / 2;
  const double dy = ((prediction.y1 + prediction.y2) - (groundtruth.y1 + groundtruth.y2)) / 2;
  return std::hypot(dx / gw, dy / gh);
}

double average_recall_at_k(const std::vector<std::vector<Prediction>>& proposal_lists,
                           const std::vector<Box>& groundtruths, int64_t k,
                           bool multi_threshold) {
  if (k < 1) throw std::invalid_argument("average_recall_at_k: k < 1");
  if (proposal_lists.size() != groundtruths.size() || proposal_lists.empty())
    throw std::invalid_argument("average_recall_at_k: list size mismatch");

  std::vector<double> best;
  for (size_t i = 0; i < proposal_lists.size(); ++i) {
    double b = 0;
    const size_t limit = std::min<size_t>(proposal_lists[i].size(), static_cast<size_t>(k));
    for (size_t j = 0; j < limit; ++j)
      b = std::max(b, iou(proposal_lists[i][j].box, groundtruths[i]));
    best.push_back(b);
  }

  // AR uses the detection-benchmark convention: inclusive >= at each
  // threshold, thresholds formed as (10 + i) * 0.05.
  std::vector<double> thresholds;
  if (multi_threshold)
    for (int i = 0; i < 10; ++i) thresholds.push_back((10 + i) * 0.05);
  else
    thresholds.push_back(0.5);

  double acc = 0;
  for (double t : thresholds)
    for (double b : best) acc += b >= t ? 1.0 : 0.0;
  return acc / (static_cast<double>(thresholds.size()) * static_cast<double>(best.size()));
}

CurveResult success_curve(const EvalRun& run) {
  const auto obs = present_frames(run);
  CurveResult curve;
  for (int i = 0; i <= 20; ++i) {
    const double t = i / 20.0;
    double hits = 0;
    for (const auto& o : obs) hits += o.iou > t ? 1.0 : 0.0;
    curve.thresholds.push_back(t);
    curve.values.push_back(hits / static_cast<double>(obs.size()));
    curve.summary += curve.values.back();
  }
  curve.summary /= static_cast<double>(curve.values.size());
  return curve;
}

CurveResult precision_curve(const EvalRun& run, double report_threshold) {
  const auto obs = present_frames(run);
  CurveResult curve;
  for (int i = 0; i <= 50; ++i) {
    const double t = static_cast<double>(i);
    double hits = 0;
    for (const auto& o : obs) hits += o.distance <= t ? 1.0 : 0.0;
    curve.thresholds.push_back(t);
    curve.values.push_back(hits / static_cast<double>(obs.size()));
  }
  double at_report = 0;
  for (const auto& o : obs) at_report += o.distance <= report_threshold ? 1.0 : 0.0;
  curve.summary = at_report / static_cast<double>(obs.size());
  return curve;
}

CurveResult normalized_precision_curve(const EvalRun& run) {
  auto obs = present_frames(run);
  obs.erase(std::remove_if(obs.begin(), obs.end(),
                           [](const FrameObs& o) { return !o.norm_valid; }),
            obs.end());
  if (obs.empty())
    throw std::invalid_argument("eval: no frames with positive-size groundtruth");
  CurveResult curve;
  for (int i = 0; i <= 50; ++i) {
    const double t = i / 100.0;
    double hits = 0;
    for (const auto& o : obs) hits += o.norm_distance <= t ? 1.0 : 0.0;
    curve.thresholds.push_back(t);
    curve.values.push_back(hits / static_cast<double>(obs.size()));
    curve.summary += curve.values.back();
  }
  curve.summary /= static_cast<double>(curve.values.size());
  return curve;
}

double overlap_precision(const EvalRun& run, double threshold) {
  const auto obs = present_frames(run);
  double hits = 0;
  for (const auto& o : obs) hits += o.iou > threshold ? 1.0 : 0.0;
  return hits / static_cast<double>(obs.size());
}

PresenceMetrics presence_metrics(const EvalRun& run) {
  struct Labeled {
    double score;
    bool gt_present;
    bool localized;      // iou > 0.5 against groundtruth
    bool reported_present;
  };
  std::vector<Labeled> frames;
  for (const auto& seq : run.sequences)
    for (const auto& f : seq.frames) {
      Labeled l;
      l.score = f.record.score;
      l.gt_present = f.gt_present;
      l.localized =
          f.gt_present && f.record.box.valid() && iou(f.record.box, f.groundtruth) > 0.5;
      l.reported_present = f.record.present;
      frames.push_back(l);
    }
  if (frames.empty()) throw std::invalid_argument("eval: empty run");

  double n_present = 0, n_absent = 0;
  for (const auto& f : frames) (f.gt_present ? n_present : n_absent) += 1;

  PresenceMetrics out;
  out.tnr_defined = n_absent > 0;

  // Operating point actually emitted by the tracker.
  double tp = 0, tn = 0;
  for (const auto& f : frames) {
    if (f.gt_present && f.reported_present && f.localized) tp += 1;
    if (!f.gt_present && !f.reported_present) tn += 1;
  }
  out.tpr = n_present > 0 ? tp / n_present : 0.0;
  out.tnr = out.tnr_defined ? tn / n_absent : 0.0;
  out.gm = std::sqrt(out.tpr * out.tnr);

  // Plain sweep over score thresholds (present = score > theta), including
  // a threshold above every score (always absent) and below (never absent).
  std::set<double> candidates{-1.0};
  for (const auto& f : frames) candidates.insert(f.score);
  for (double theta : candidates) {
    double stp = 0, stn = 0;
    for (const auto& f : frames) {
      const bool pred_present = f.score > theta;
      if (f.gt_present && pred_present && f.localized) stp += 1;
      if (!f.gt_present && !pred_present) stn += 1;
    }
    const double tpr = n_present > 0 ? stp / n_present : 0.0;
    const double tnr = out.tnr_defined ? stn / n_absent : 0.0;
    out.max_gm = std::max(out.max_gm, std::sqrt(tpr * tnr));
  }
  return out;
}

std::string format_report(const EvalRun& run, const std::vector<std::string>& metrics) {
  auto wants = [&metrics](const char* name) {
    return metrics.empty() || std::find(metrics.begin(), metrics.end(), name) != metrics.end();
  };
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "# globaltrack-report v1\n";

  auto emit = [&os, &wants](const EvalRun& scope, const std::string& section) {
    os << "[" << section << "]\n";
    if (wants("success")) {
      const CurveResult c = success_curve(scope);
      os << "success_auc=" << c.summary << "\n";
    }
    if (wants("precision")) os << "precision_20=" << precision_curve(scope).summary << "\n";
    if (wants("norm_precision"))
      os << "norm_precision_auc=" << normalized_precision_curve(scope).summary << "\n";
    if (wants("op")) os << "op_50=" << overlap_precision(scope) << "\n";
    if (wants("presence")) {
      const PresenceMetrics p = presence_metrics(scope);
      os << "tpr=" << p.tpr << "\n";
      if (p.tnr_defined) {
        os << "tnr=" << p.tnr << "\n";
        os << "gm=" << p.gm << "\n";
        os << "max_gm=" << p.max_gm << "\n";
      } else {
        os << "tnr=n/a\ngm=n/a\nmax_gm=n/a\n";
      }
    }
  };

  emit(run, "aggregate");
  if (run.sequences.size() > 1)
    for (const auto& seq : run.sequences) {
      EvalRun scope;
      scope.sequences.push_back(seq);
      emit(scope, "sequence " + seq.name);
    }

  if (wants("success")) {
    os << "[curve success]\n";
    const CurveResult c = success_curve(run);
    for (size_t i = 0; i < c.thresholds.size(); ++i)
      os << c.thresholds[i] << " " << c.values[i] << "\n";
  }
  if (wants("precision")) {
    os << "[curve precision]\n";
    const CurveResult c = precision_curve(run);
    for (size_t i = 0; i < c.thresholds.size(); ++i)
      os << c.thresholds[i] << " " << c.values[i] << "\n";
  }
  if (wants("norm_precision")) {
    os << "[curve norm_precision]\n";
    const CurveResult c = normalized_precision_curve(run);
    for (size_t i = 0; i < c.thresholds.size(); ++i)
      os << c.thresholds[i] << " " << c.values[i] << "\n";
  }
  return os.str();
}

}  // namespace gt
