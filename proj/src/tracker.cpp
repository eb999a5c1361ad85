#include "globaltrack/tracker.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gt {

namespace {
constexpr const char* kResultsHeader = "# globaltrack-results v1";
}

void TrackerConfig::validate() const {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("tracker: tau outside [0,1]");
}

TrackerState::TrackerState(const GlobalTrackModel& model, const cv::Mat& first_frame,
                           const Box& target, TrackerConfig config)
    : model_(model), config_(std::move(config)) {
  config_.validate();
  if (!target.valid()) throw std::invalid_argument("tracker: degenerate init box");
  if (target.x1 < 0 || target.y1 < 0 || target.x2 > first_frame.cols ||
      target.y2 > first_frame.rows)
    throw std::invalid_argument("tracker: init box outside image bounds");
  const ResizedImage prep = resize_normalize(first_frame, config_.resize, config_.normalize);
  const Box scaled{target.x1 * prep.scale, target.y1 * prep.scale, target.x2 * prep.scale,
                   target.y2 * prep.scale};
  z_ = model_.pool_query(model_.extract_features(prep.tensor), scaled, prep.width, prep.height);
}

TrackRecord TrackerState::track_frame(const cv::Mat& frame, int64_t frame_index) const {
  const ResizedImage prep = resize_normalize(frame, config_.resize, config_.normalize);
  const auto levels = model_.extract_features(prep.tensor);
  const RpnOutputs rpn = model_.rpn_forward(z_, levels);
  std::vector<Box> boxes;
  for (const auto& p : propose(rpn, prep.width, prep.height, config_.proposals))
    boxes.push_back(p.box);
  const auto predictions =
      model_.classify_and_refine(z_, levels, boxes, prep.width, prep.height);

  const Prediction& top = predictions.front();
  TrackRecord rec;
  rec.frame = frame_index;
  rec.box = Box{top.box.x1 / prep.scale, top.box.y1 / prep.scale, top.box.x2 / prep.scale,
                top.box.y2 / prep.scale};
  rec.score = top.score;
  rec.present = top.score > config_.tau;
  return rec;
}

std::vector<TrackRecord> track_sequence(const GlobalTrackModel& model,
                                        const std::vector<cv::Mat>& frames, const Box& init_box,
                                        const TrackerConfig& config) {
  if (frames.empty()) throw std::invalid_argument("track_sequence: no frames");
  TrackerState state(model, frames[0], init_box, config);
  std::vector<TrackRecord> records;
  records.push_back({0, init_box, 1.0, true});
  for (size_t t = 1; t < frames.size(); ++t)
    records.push_back(state.track_frame(frames[t], static_cast<int64_t>(t)));
  return records;
}

std::vector<TrackRecord> track_sequence_files(const GlobalTrackModel& model,
                                              const std::vector<std::string>& frame_paths,
                                              const Box& init_box, const TrackerConfig& config) {
  if (frame_paths.empty()) throw std::invalid_argument("track_sequence: no frames");
  TrackerState state(model, load_image(frame_paths[0]), init_box, config);
  std::vector<TrackRecord> records;
  records.push_back({0, init_box, 1.0, true});
  for (size_t t = 1; t < frame_paths.size(); ++t)
    records.push_back(state.track_frame(load_image(frame_paths[t]), static_cast<int64_t>(t)));
  return records;
}

void write_results(const std::string& path, const std::vector<TrackRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("results: cannot write " + path);
  os << kResultsHeader << "\n";
  for (const auto& r : records) {
    char line[160];
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f,%.6f,%d", r.box.x1, r.box.y1,
                  r.box.x2 - r.box.x1, r.box.y2 - r.box.y1, r.score, r.present ? 1 : 0);
    os << line << "\n";
  }
}

std::vector<TrackRecord> read_results(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("results: cannot open " + path);
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw std::runtime_error("results: bad header in " + path);
  std::vector<TrackRecord> records;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    double v[6];
    size_t start = 0;
    for (int i = 0; i < 6; ++i) {
      const size_t end = i < 5 ? line.find(',', start) : line.size();
      if (end == std::string::npos) throw std::runtime_error("results: malformed line in " + path);
      v[i] = std::stod(line.substr(start, end - start));
      start = end + 1;
    }
    TrackRecord r;
    r.frame = static_cast<int64_t>(records.size());
    r.box = Box::from_xywh(v[0], v[1], v[2], v[3]);
    r.score = v[4];
    r.present = v[5] != 0;
    records.push_back(r);
  }
  return records;
}

}  // namespace gt
