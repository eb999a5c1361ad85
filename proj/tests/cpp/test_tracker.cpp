#include <doctest.h>

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "globaltrack/tracker.hpp"

using namespace gt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.backbone = "desk";
  cfg.channels = 4;
  cfg.proj_channels = 4;
  cfg.roi_size = 3;
  cfg.stride = 8;
  cfg.rcnn_hidden = 8;
  cfg.anchors.scales = {8, 16};
  cfg.anchors.ratios = {1.0};
  cfg.anchors.stride = 8;
  return cfg;
}

TrackerConfig tiny_tracker_config() {
  TrackerConfig cfg;
  cfg.resize = {64, 48};
  cfg.proposals.max_proposals = 16;
  return cfg;
}

cv::Mat make_frame(int target_x, int target_y, uint64_t noise_seed = 0) {
  cv::Mat img(48, 64, CV_8UC3, cv::Scalar(40, 44, 40));
  std::mt19937_64 rng(noise_seed);
  for (int i = 0; i < 30; ++i) {
    const int x = static_cast<int>(rng() % 64), y = static_cast<int>(rng() % 48);
    img.at<cv::Vec3b>(y, x) = cv::Vec3b(80, 90, 70);
  }
  cv::rectangle(img, cv::Rect(target_x, target_y, 14, 12), cv::Scalar(230, 70, 60), cv::FILLED);
  return img;
}

bool same_record(const TrackRecord& a, const TrackRecord& b) {
  return a.box.x1 == b.box.x1 && a.box.y1 == b.box.y1 && a.box.x2 == b.box.x2 &&
         a.box.y2 == b.box.y2 && a.score == b.score && a.present == b.present;
}

}  // namespace

TEST_CASE("tracker initialization contract") {
  GlobalTrackModel model(tiny_model_config(), 6);
  const cv::Mat first = make_frame(10, 8);
  const Box target{10, 8, 24, 20};
  TrackerConfig cfg = tiny_tracker_config();

  SUBCASE("two inits from the same inputs cache identical query features") {
    TrackerState a(model, first, target, cfg);
    TrackerState b(model, first, target, cfg);
    REQUIRE(a.query_feature()->value.numel() == b.query_feature()->value.numel());
    for (int64_t i = 0; i < a.query_feature()->value.numel(); ++i)
      CHECK(a.query_feature()->value[i] == b.query_feature()->value[i]);
  }
  SUBCASE("invalid boxes rejected") {
    CHECK_THROWS_AS(TrackerState(model, first, Box{20, 8, 10, 20}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(TrackerState(model, first, Box{50, 8, 70, 20}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(TrackerState(model, first, Box{-2, 8, 10, 20}, cfg), std::invalid_argument);
  }
  SUBCASE("tau outside [0,1] rejected") {
    TrackerConfig bad = cfg;
    bad.tau = 1.5;
    CHECK_THROWS_AS(TrackerState(model, first, target, bad), std::invalid_argument);
  }
}

TEST_CASE("tracking protocol") {
  GlobalTrackModel model(tiny_model_config(), 6);
  const Box target{10, 8, 24, 20};
  TrackerConfig cfg = tiny_tracker_config();

  std::vector<cv::Mat> frames;
  const int xs[] = {10, 18, 30, 42, 26, 6};
  for (int t = 0; t < 6; ++t) frames.push_back(make_frame(xs[t], 8 + 2 * t, 100 + t));

  SUBCASE("sequence shape and first-record echo") {
    const uint64_t digest_before = model.params().value_digest();
    auto records = track_sequence(model, frames, target, cfg);
    REQUIRE(records.size() == frames.size());
    CHECK(records[0].box.x1 == target.x1);
    CHECK(records[0].box.x2 == target.x2);
    CHECK(records[0].score == 1.0);
    CHECK(records[0].present);
    for (size_t t = 0; t < records.size(); ++t) {
      CHECK(records[t].frame == static_cast<int64_t>(t));
      CHECK(records[t].box.valid());
      CHECK(records[t].score >= 0.0);
      CHECK(records[t].score <= 1.0);
      CHECK(records[t].present == (records[t].score > cfg.tau));
    }
    // Tracking never mutates parameters.
    CHECK(model.params().value_digest() == digest_before);

    SUBCASE("single-frame sequence") {
      auto one = track_sequence(model, {frames[0]}, target, cfg);
      REQUIRE(one.size() == 1);
      CHECK(one[0].box.x1 == target.x1);
    }
  }

  SUBCASE("statelessness: same frame twice, any processing order") {
    TrackerState state(model, frames[0], target, cfg);
    auto a = state.track_frame(frames[3], 3);
    auto b = state.track_frame(frames[3], 3);
    CHECK(same_record(a, b));

    std::vector<TrackRecord> sequential;
    for (int t = 1; t < 6; ++t) sequential.push_back(state.track_frame(frames[t], t));
    const int order[] = {4, 1, 5, 3, 2};
    for (int t : order)
      CHECK(same_record(state.track_frame(frames[t], t), sequential[static_cast<size_t>(t - 1)]));
  }

  SUBCASE("frame isolation: corrupting frame t changes only record t") {
    auto base = track_sequence(model, frames, target, cfg);
    std::vector<cv::Mat> corrupted = frames;
    corrupted[3] = cv::Mat(48, 64, CV_8UC3, cv::Scalar(0, 0, 0));
    auto after = track_sequence(model, corrupted, target, cfg);
    for (size_t t = 0; t < frames.size(); ++t)
      if (t != 3) CHECK(same_record(base[t], after[t]));
  }

  SUBCASE("presence threshold is strict") {
    TrackerState state(model, frames[0], target, cfg);
    auto rec = state.track_frame(frames[2], 2);
    TrackerConfig at_score = cfg;
    at_score.tau = rec.score;  // strict >: equality means absent
    TrackerState state2(model, frames[0], target, at_score);
    CHECK_FALSE(state2.track_frame(frames[2], 2).present);
  }
}

TEST_CASE("results file round trip") {
  const fs::path path = fs::temp_directory_path() / "gt_test_results.txt";
  std::vector<TrackRecord> records{
      {0, Box{10, 8, 24, 20}, 1.0, true},
      {1, Box{11.25, 9.5, 25.75, 21.125}, 0.875321, true},
      {2, Box{0, 0, 5, 5}, 0.12, false},
  };
  write_results(path.string(), records);

  SUBCASE("header and byte-stable formatting") {
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "# globaltrack-results v1");
    std::getline(is, line);
    CHECK(line == "10.000000,8.000000,14.000000,12.000000,1.000000,1");

    const fs::path again = fs::temp_directory_path() / "gt_test_results2.txt";
    write_results(again.string(), records);
    std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    fs::remove(again);
  }
  SUBCASE("read back") {
    auto loaded = read_results(path.string());
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[1].box.x1 == doctest::Approx(11.25));
    CHECK(loaded[1].score == doctest::Approx(0.875321));
    CHECK(loaded[1].present);
    CHECK_FALSE(loaded[2].present);
  }
  SUBCASE("bad header rejected") {
    const fs::path bad = fs::temp_directory_path() / "gt_test_results_bad.txt";
    std::ofstream(bad) << "no header\n1,1,1,1,0.5,1\n";
    CHECK_THROWS_AS(read_results(bad.string()), std::runtime_error);
    fs::remove(bad);
  }
  fs::remove(path);
}
