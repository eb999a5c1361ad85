#pragma once

#include <opencv2/core.hpp>

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "globaltrack/geometry.hpp"
#include "globaltrack/tensor.hpp"

namespace gt {

/// Image resizing limits: uniform scale = min(max_long/long, max_short/short),
/// upscaling permitted; output edges never exceed the limits.
struct ResizeSpec {
  int64_t max_long = 1333;
  int64_t max_short = 800;
};

/// Per-channel (RGB) normalization constants applied after resizing.
struct NormalizeSpec {
  std::array<double, 3> mean{123.675, 116.28, 103.53};
  std::array<double, 3> stddev{58.395, 57.12, 57.375};
};

struct AugmentSpec {
  double flip_probability = 0.5;
  double brightness = 0.2;  // multiplicative factor drawn from [1-b, 1+b]
  double contrast = 0.2;
  double saturation = 0.2;
};

struct ResizedImage {
  Tensor tensor;  // [1, 3, H, W], RGB, normalized
  double scale = 1.0;
  int64_t width = 0, height = 0;  // output pixel dimensions
};

struct FrameAnnotation {
  Box box;
  bool present = false;
};

struct Sequence {
  std::string name;
  std::vector<std::string> frames;  // absolute or root-relative image paths
  std::vector<FrameAnnotation> annotations;
};

/// Directory-per-sequence layout: ordered image files plus groundtruth.txt
/// ("# globaltrack-sequence v1" header, one comma-separated x,y,w,h line per
/// frame, nan,nan,nan,nan when absent) and an optional absence.label file of
/// 0/1 lines (1 = absent) that overrides the nan encoding.
struct SequenceDataset {
  std::vector<Sequence> sequences;
  static SequenceDataset load(const std::string& root_dir);
};

struct ImageRecord {
  std::string path;
  std::vector<Box> instances;
};

/// Detection-style manifest: "# globaltrack-manifest v1" header, then one
/// whitespace-separated record per line: image path followed by one or more
/// comma-separated x,y,w,h boxes. Paths resolve relative to the manifest.
struct ImageDataset {
  std::vector<ImageRecord> images;
  static ImageDataset load(const std::string& manifest_path);
};

/// One mixture component: exactly one of the two dataset kinds.
struct MixtureEntry {
  const SequenceDataset* sequences = nullptr;
  const ImageDataset* images = nullptr;
  double probability = 0.0;
};

struct MixtureSpec {
  std::vector<MixtureEntry> entries;
  // Throws std::invalid_argument unless probabilities are positive, sum to 1
  // within 1e-9, and each entry names exactly one non-empty dataset.
  void validate() const;
};

struct InstancePair {
  Box query_box;   // in the query image
  Box search_box;  // groundtruth in the search image
};

/// A training sample: two raw (unnormalized) images and the M co-present
/// instances, query box paired with its search-frame groundtruth.
struct PairSample {
  cv::Mat query_image;
  cv::Mat search_image;
  std::vector<InstancePair> instances;
};

struct SyntheticSpec {
  int64_t num_sequences = 1;
  int64_t frames_per_sequence = 10;
  int64_t width = 96, height = 96;
  int64_t min_size = 18, max_size = 34;  // target box edge length range
  int64_t distractors = 2;
  std::vector<int64_t> teleport_frames;  // groundtruth jumps at these frames
  int64_t absence_start = -1;  // first absent frame, -1 for none
  int64_t absence_length = 0;
  uint64_t seed = 7;
};

struct SyntheticImageSpec {
  int64_t num_images = 8;
  int64_t width = 96, height = 96;
  int64_t instances_per_image = 2;
  int64_t min_size = 18, max_size = 34;
  uint64_t seed = 11;
};

cv::Mat load_image(const std::string& path);  // 8UC3, throws on failure

// Uniform resize to the spec limits plus RGB mean/std normalization.
ResizedImage resize_normalize(const cv::Mat& image, const ResizeSpec& resize,
                              const NormalizeSpec& normalize);

// Horizontal flip (probability flip_probability, boxes mirrored) followed by
// brightness/contrast/saturation jitter. Zero ranges leave the input intact.
std::pair<cv::Mat, std::vector<Box>> augment(const cv::Mat& image, const std::vector<Box>& boxes,
                                             const AugmentSpec& spec, std::mt19937_64& rng);

// Draws a mixture component index by probability; exposed separately so the
// sampling distribution can be exercised without image I/O.
size_t sample_mixture_index(const MixtureSpec& mixture, std::mt19937_64& rng);

// Sequence entry: two frames of one sequence with the target present in both
// (M = 1). Image entry: one image duplicated then independently augmented,
// M = instance count. Always returns M >= 1.
PairSample sample_pair(const MixtureSpec& mixture, const AugmentSpec& augment_spec,
                       std::mt19937_64& rng);

// Renders textured moving shapes into root_dir (PNG frames, groundtruth.txt,
// absence.label when an absence span is configured) and returns the loaded
// dataset. Deterministic under spec.seed.
SequenceDataset generate_synthetic(const SyntheticSpec& spec, const std::string& root_dir);

// Renders multi-instance still images plus a manifest into root_dir.
ImageDataset generate_synthetic_images(const SyntheticImageSpec& spec,
                                       const std::string& root_dir);

}  // namespace gt
