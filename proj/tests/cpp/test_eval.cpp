#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "globaltrack/eval.hpp"

using namespace gt;

namespace {

// Box with exactly the requested iou against [0,0,10,10] (shared corner,
// same height): iou = w/10 for w <= 10.
Box box_with_iou(double target_iou) {
  if (target_iou <= 0) return Box{50, 50, 60, 60};
  return Box{0, 0, 10 * target_iou, 10};
}

EvalRun run_from_ious(const std::vector<double>& ious) {
  EvalRun run;
  EvalSequence seq;
  seq.name = "s";
  for (size_t i = 0; i < ious.size(); ++i) {
    EvalFrame f;
    f.gt_present = true;
    f.groundtruth = Box{0, 0, 10, 10};
    f.record = {static_cast<int64_t>(i), box_with_iou(ious[i]), 0.9, true};
    seq.frames.push_back(f);
  }
  run.sequences.push_back(seq);
  return run;
}

Prediction pred(const Box& b, double score) {
  Prediction p;
  p.box = b;
  p.score = score;
  return p;
}

}  // namespace

TEST_CASE("center distances") {
  // Centers (0,0) and (3,4): Euclidean distance 5.
  CHECK(center_distance(Box{-1, -1, 1, 1}, Box{2, 3, 4, 5}) == doctest::Approx(5.0));
  CHECK(center_distance(Box{0, 0, 10, 10}, Box{0, 0, 10, 10}) == doctest::Approx(0.0));
  // Offset of half the groundtruth width in x only.
  CHECK(normalized_center_distance(Box{5, 0, 15, 10}, Box{0, 0, 10, 10}) ==
        doctest::Approx(0.5));
  CHECK_THROWS_AS(normalized_center_distance(Box{0, 0, 1, 1}, Box{0, 0, 0, 5}),
                  std::invalid_argument);
}

TEST_CASE("average recall at k") {
  const Box gt_box{0, 0, 10, 10};
  SUBCASE("perfect and empty extremes") {
    std::vector<std::vector<Prediction>> lists{{pred(gt_box, 1.0)}, {pred(gt_box, 0.9)}};
    CHECK(average_recall_at_k(lists, {gt_box, gt_box}, 1) == doctest::Approx(1.0));
    std::vector<std::vector<Prediction>> misses{{pred(Box{50, 50, 60, 60}, 1.0)}};
    CHECK(average_recall_at_k(misses, {gt_box}, 5) == doctest::Approx(0.0));
  }
  SUBCASE("matches a brute-force threshold enumeration, worked value 0.55") {
    // Best-in-top-k ious {0.6, 0.9}; independent double loop over the
    // inclusive multi-threshold criterion.
    std::vector<std::vector<Prediction>> lists{{pred(box_with_iou(0.6), 1.0)},
                                               {pred(box_with_iou(0.9), 1.0)}};
    const std::vector<Box> gts{gt_box, gt_box};
    double acc = 0;
    for (int i = 0; i < 10; ++i) {
      const double t = (10 + i) * 0.05;
      for (double b : {0.6, 0.9}) acc += b >= t ? 1 : 0;
    }
    const double oracle = acc / 20.0;
    CHECK(oracle == doctest::Approx(0.55).epsilon(1e-9));
    CHECK(average_recall_at_k(lists, gts, 1) == doctest::Approx(oracle));
  }
  SUBCASE("single-threshold mode") {
    std::vector<std::vector<Prediction>> lists{{pred(box_with_iou(0.6), 1.0)},
                                               {pred(box_with_iou(0.4), 1.0)}};
    CHECK(average_recall_at_k(lists, {gt_box, gt_box}, 1, false) == doctest::Approx(0.5));
    // iou exactly 0.5 passes the inclusive criterion
    std::vector<std::vector<Prediction>> half{{pred(box_with_iou(0.5), 1.0)}};
    CHECK(average_recall_at_k(half, {gt_box}, 1, false) == doctest::Approx(1.0));
  }
  SUBCASE("monotone in k") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<std::vector<Prediction>> lists(4);
    std::vector<Box> gts(4, gt_box);
    for (auto& l : lists)
      for (int j = 0; j < 6; ++j) l.push_back(pred(box_with_iou(u(rng)), 1.0 - 0.1 * j));
    double prev = 0;
    for (int64_t k = 1; k <= 6; ++k) {
      const double ar = average_recall_at_k(lists, gts, k);
      CHECK(ar >= prev - 1e-12);
      prev = ar;
    }
  }
  CHECK_THROWS_AS(average_recall_at_k({{pred(gt_box, 1)}}, {gt_box}, 0), std::invalid_argument);
}

TEST_CASE("success curve") {
  SUBCASE("all-perfect gives 20/21") {
    auto c = success_curve(run_from_ious({1.0, 1.0, 1.0}));
    CHECK(c.summary == doctest::Approx(20.0 / 21.0));
    CHECK(c.values.front() == doctest::Approx(1.0));
    CHECK(c.values.back() == doctest::Approx(0.0));  // strict > at t = 1
  }
  SUBCASE("all-miss gives 0") {
    CHECK(success_curve(run_from_ious({0.0, 0.0})).summary == doctest::Approx(0.0));
  }
  SUBCASE("worked example {0.4, 0.8} gives 12/21") {
    CHECK(success_curve(run_from_ious({0.4, 0.8})).summary == doctest::Approx(12.0 / 21.0));
  }
  SUBCASE("matches a brute-force double loop and is monotone") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> ious;
    for (int i = 0; i < 60; ++i) ious.push_back(u(rng));
    auto c = success_curve(run_from_ious(ious));
    double mean = 0;
    for (int i = 0; i <= 20; ++i) {
      double hits = 0;
      for (double v : ious) {
        const double actual = iou(box_with_iou(v), Box{0, 0, 10, 10});
        hits += actual > i / 20.0 ? 1 : 0;
      }
      CHECK(c.values[static_cast<size_t>(i)] == doctest::Approx(hits / 60.0));
      mean += hits / 60.0;
      if (i > 0) CHECK(c.values[static_cast<size_t>(i)] <= c.values[static_cast<size_t>(i) - 1]);
    }
    CHECK(c.summary == doctest::Approx(mean / 21.0));
  }
  SUBCASE("absent-groundtruth frames excluded") {
    EvalRun run = run_from_ious({1.0, 1.0});
    EvalFrame absent;
    absent.gt_present = false;
    absent.record = {2, Box{0, 0, 1, 1}, 0.1, false};
    run.sequences[0].frames.push_back(absent);
    CHECK(success_curve(run).summary == doctest::Approx(20.0 / 21.0));
  }
  CHECK_THROWS_AS(success_curve(EvalRun{}), std::invalid_argument);
}

TEST_CASE("precision curves") {
  SUBCASE("exact boxes give 1, boundary inclusive at 20 px") {
    CHECK(precision_curve(run_from_ious({1.0})).summary == doctest::Approx(1.0));
    EvalRun off;
    EvalSequence seq;
    EvalFrame f;
    f.gt_present = true;
    f.groundtruth = Box{0, 0, 10, 10};
    f.record = {0, Box{20, 0, 30, 10}, 0.9, true};  // center exactly 20 px off
    seq.frames.push_back(f);
    off.sequences.push_back(seq);
    CHECK(precision_curve(off, 20.0).summary == doctest::Approx(1.0));
    CHECK(precision_curve(off, 19.0).summary == doctest::Approx(0.0));
    // Curve is non-decreasing in the distance threshold.
    auto c = precision_curve(off);
    for (size_t i = 1; i < c.values.size(); ++i) CHECK(c.values[i] >= c.values[i - 1]);
  }
  SUBCASE("normalized curve: exactness, boundary and scale invariance") {
    CHECK(normalized_precision_curve(run_from_ious({1.0})).summary == doctest::Approx(1.0));

    EvalRun half;
    EvalSequence seq;
    EvalFrame f;
    f.gt_present = true;
    f.groundtruth = Box{0, 0, 10, 10};
    f.record = {0, Box{5, 0, 15, 10}, 0.9, true};  // normalized distance 0.5
    seq.frames.push_back(f);
    half.sequences.push_back(seq);
    auto c = normalized_precision_curve(half);
    CHECK(c.values.back() == doctest::Approx(1.0));  // inclusive at t = 0.5
    CHECK(c.values[49] == doctest::Approx(0.0));
    CHECK(c.summary == doctest::Approx(1.0 / 51.0));

    // Doubling all coordinates leaves the curve unchanged.
    EvalRun doubled = half;
    auto scale2 = [](Box& b) { b = Box{2 * b.x1, 2 * b.y1, 2 * b.x2, 2 * b.y2}; };
    scale2(doubled.sequences[0].frames[0].groundtruth);
    scale2(doubled.sequences[0].frames[0].record.box);
    auto c2 = normalized_precision_curve(doubled);
    for (size_t i = 0; i < c.values.size(); ++i) CHECK(c.values[i] == c2.values[i]);
  }
}

TEST_CASE("overlap precision") {
  CHECK(overlap_precision(run_from_ious({0.6, 0.6, 0.6})) == doctest::Approx(1.0));
  CHECK(overlap_precision(run_from_ious({0.4, 0.6})) == doctest::Approx(0.5));
  // Exactly 0.5 counts as failure under strict >.
  CHECK(overlap_precision(run_from_ious({0.5})) == doctest::Approx(0.0));
}

TEST_CASE("presence metrics") {
  auto frame = [](bool gt_present, double score, bool reported, double iou_val) {
    EvalFrame f;
    f.gt_present = gt_present;
    if (gt_present) f.groundtruth = Box{0, 0, 10, 10};
    f.record = {0, box_with_iou(iou_val), score, reported};
    return f;
  };

  SUBCASE("perfect tracker") {
    EvalRun run;
    EvalSequence seq;
    seq.frames = {frame(true, 0.95, true, 1.0), frame(true, 0.93, true, 0.9),
                  frame(false, 0.1, false, 0.0)};
    run.sequences.push_back(seq);
    auto m = presence_metrics(run);
    CHECK(m.tpr == doctest::Approx(1.0));
    CHECK(m.tnr == doctest::Approx(1.0));
    CHECK(m.gm == doctest::Approx(1.0));
    CHECK(m.max_gm == doctest::Approx(1.0));
  }
  SUBCASE("never-absent operating point has GM 0; sweep can do better") {
    EvalRun run;
    EvalSequence seq;
    // Reported present everywhere, but scores separate cleanly at 0.5.
    seq.frames = {frame(true, 0.9, true, 1.0), frame(false, 0.2, true, 0.0)};
    run.sequences.push_back(seq);
    auto m = presence_metrics(run);
    CHECK(m.tnr == doctest::Approx(0.0));
    CHECK(m.gm == doctest::Approx(0.0));
    CHECK(m.max_gm == doctest::Approx(1.0));
  }
  SUBCASE("worked counting example gives GM sqrt(0.375)") {
    EvalRun run;
    EvalSequence seq;
    seq.frames = {
        frame(true, 0.9, true, 1.0),  frame(true, 0.9, true, 0.8),
        frame(true, 0.9, true, 0.7),  frame(true, 0.9, true, 0.2),  // present, unlocalized
        frame(false, 0.9, true, 0.0), frame(false, 0.1, false, 0.0),
    };
    run.sequences.push_back(seq);
    auto m = presence_metrics(run);
    CHECK(m.tpr == doctest::Approx(0.75));
    CHECK(m.tnr == doctest::Approx(0.5));
    CHECK(m.gm == doctest::Approx(std::sqrt(0.375)));
    CHECK(m.max_gm >= m.gm - 1e-12);
  }
  SUBCASE("no absent frames leaves TNR undefined") {
    auto m = presence_metrics(run_from_ious({1.0, 0.9}));
    CHECK_FALSE(m.tnr_defined);
  }
}

TEST_CASE("metrics invariant to sequence ordering") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  EvalRun run;
  for (int s = 0; s < 3; ++s) {
    EvalSequence seq;
    seq.name = "seq" + std::to_string(s);
    for (int i = 0; i < 15; ++i) {
      EvalFrame f;
      f.gt_present = u(rng) > 0.2;
      if (f.gt_present) f.groundtruth = Box{0, 0, 10, 10};
      f.record = {i, box_with_iou(u(rng)), u(rng), u(rng) > 0.5};
      seq.frames.push_back(f);
    }
    run.sequences.push_back(seq);
  }
  EvalRun shuffled = run;
  std::swap(shuffled.sequences[0], shuffled.sequences[2]);
  CHECK(success_curve(run).summary == doctest::Approx(success_curve(shuffled).summary));
  CHECK(precision_curve(run).summary == doctest::Approx(precision_curve(shuffled).summary));
  CHECK(overlap_precision(run) == doctest::Approx(overlap_precision(shuffled)));
  CHECK(presence_metrics(run).max_gm == doctest::Approx(presence_metrics(shuffled).max_gm));
}

TEST_CASE("report formatting and filtering") {
  EvalRun run = run_from_ious({0.8, 0.6});
  const std::string full = format_report(run);
  CHECK(full.rfind("# globaltrack-report v1", 0) == 0);
  CHECK(full.find("success_auc=") != std::string::npos);
  CHECK(full.find("precision_20=") != std::string::npos);
  CHECK(full.find("op_50=") != std::string::npos);
  CHECK(full.find("[curve success]") != std::string::npos);
  CHECK(full.find("tnr=n/a") != std::string::npos);  // no absent frames in this run

  const std::string only_op = format_report(run, {"op"});
  CHECK(only_op.find("op_50=") != std::string::npos);
  CHECK(only_op.find("success_auc=") == std::string::npos);
  CHECK(only_op.find("[curve success]") == std::string::npos);
}

TEST_CASE("make_eval_sequence alignment") {
  Sequence seq;
  seq.name = "s";
  seq.frames = {"a.png", "b.png"};
  seq.annotations = {{Box{0, 0, 10, 10}, true}, {Box{}, false}};
  std::vector<TrackRecord> records{{0, Box{0, 0, 10, 10}, 1.0, true},
                                   {1, Box{1, 1, 5, 5}, 0.3, false}};
  auto es = make_eval_sequence("s", records, seq);
  CHECK(es.frames.size() == 2);
  CHECK(es.frames[0].gt_present);
  CHECK_FALSE(es.frames[1].gt_present);
  records.pop_back();
  CHECK_THROWS_AS(make_eval_sequence("s", records, seq), std::invalid_argument);
}
