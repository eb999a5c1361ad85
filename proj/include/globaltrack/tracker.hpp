#pragma once

#include <opencv2/core.hpp>

#include <string>
#include <vector>

#include "globaltrack/data.hpp"
#include "globaltrack/model.hpp"

namespace gt {

struct TrackerConfig {
  double tau = 0.84;  // presence threshold, strict >
  ProposalConfig proposals;
  ResizeSpec resize;
  NormalizeSpec normalize;

  void validate() const;  // tau must lie in [0,1]
};

struct TrackRecord {
  int64_t frame = 0;
  Box box;  // original image coordinates
  double score = 0.0;
  bool present = false;
};

/// Immutable per-sequence state: the query feature pooled once from the
/// first frame plus the config. Tracking mutates nothing.
class TrackerState {
 public:
  // Throws std::invalid_argument on a degenerate or out-of-bounds box.
  TrackerState(const GlobalTrackModel& model, const cv::Mat& first_frame, const Box& target,
               TrackerConfig config);

  // Full-image two-stage search; top-1 final prediction, present = score > tau.
  TrackRecord track_frame(const cv::Mat& frame, int64_t frame_index) const;

  const ad::Var& query_feature() const { return z_; }

 private:
  const GlobalTrackModel& model_;
  TrackerConfig config_;
  ad::Var z_;
};

// init on frame 0 (record echoes the box, score 1, present), then
// track_frame on each later frame.
std::vector<TrackRecord> track_sequence(const GlobalTrackModel& model,
                                        const std::vector<cv::Mat>& frames, const Box& init_box,
                                        const TrackerConfig& config);

// Same protocol reading frames from image files.
std::vector<TrackRecord> track_sequence_files(const GlobalTrackModel& model,
                                              const std::vector<std::string>& frame_paths,
                                              const Box& init_box, const TrackerConfig& config);

// Results file: "# globaltrack-results v1" header, then one
// "x,y,w,h,score,present" line per frame at 6 decimal places.
void write_results(const std::string& path, const std::vector<TrackRecord>& records);
std::vector<TrackRecord> read_results(const std::string& path);

}  // namespace gt
