#include "globaltrack/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace gt {

namespace {

constexpr const char* kSequenceHeader = "# globaltrack-sequence v1";
constexpr const char* kAbsenceHeader = "# globaltrack-absence v1";
constexpr const char* kManifestHeader = "# globaltrack-manifest v1";

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<std::string> read_data_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("data: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

// Parses "x,y,w,h"; nan components mark an absent frame. std::stod is used
// because stream extraction does not accept the "nan" spelling.
FrameAnnotation parse_xywh(const std::string& line, const std::string& context) {
  double v[4];
  size_t start = 0;
  for (int i = 0; i < 4; ++i) {
    const size_t end = i < 3 ? line.find(',', start) : line.size();
    if (end == std::string::npos) throw std::runtime_error("data: malformed box in " + context);
    try {
      v[i] = std::stod(line.substr(start, end - start));
    } catch (const std::exception&) {
      throw std::runtime_error("data: malformed box in " + context);
    }
    start = end + 1;
  }
  FrameAnnotation a;
  if (std::isnan(v[0]) || std::isnan(v[1]) || std::isnan(v[2]) || std::isnan(v[3])) {
    a.present = false;
    return a;
  }
  a.box = Box::from_xywh(v[0], v[1], v[2], v[3]);
  a.present = true;
  return a;
}

std::string format_box(const Box& b) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%.2f,%.2f", b.x1, b.y1, b.x2 - b.x1, b.y2 - b.y1);
  return buf;
}

cv::Vec3b random_color(std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return cv::Vec3b(static_cast<uchar>(d(rng)), static_cast<uchar>(d(rng)),
                   static_cast<uchar>(d(rng)));
}

struct InstanceStyle {
  cv::Vec3b primary, secondary;
  int cell = 4;  // checker cell size in pixels
};

InstanceStyle random_style(std::mt19937_64& rng) {
  InstanceStyle s;
  s.primary = random_color(rng, 120, 255);
  s.secondary = random_color(rng, 0, 110);
  s.cell = 3 + static_cast<int>(rng() % 4);
  return s;
}

void render_instance(cv::Mat& canvas, const Box& box, const InstanceStyle& style) {
  const int x0 = static_cast<int>(std::lround(box.x1));
  const int y0 = static_cast<int>(std::lround(box.y1));
  const int x1 = static_cast<int>(std::lround(box.x2));
  const int y1 = static_cast<int>(std::lround(box.y2));
  for (int y = std::max(0, y0); y < std::min(canvas.rows, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(canvas.cols, x1); ++x) {
      const bool odd = (((x - x0) / style.cell) + ((y - y0) / style.cell)) % 2;
      canvas.at<cv::Vec3b>(y, x) = odd ? style.secondary : style.primary;
    }
}

cv::Mat render_background(int64_t width, int64_t height, std::mt19937_64& rng) {
  cv::Mat bg(static_cast<int>(height), static_cast<int>(width), CV_8UC3);
  const cv::Vec3b base = random_color(rng, 30, 90);
  std::uniform_real_distribution<double> g(-0.4, 0.4);
  const double gx = g(rng), gy = g(rng);
  for (int y = 0; y < bg.rows; ++y)
    for (int x = 0; x < bg.cols; ++x)
      for (int c = 0; c < 3; ++c)
        bg.at<cv::Vec3b>(y, x)[c] =
            cv::saturate_cast<uchar>(base[c] + gx * x + gy * y);
  // Sparse speckle so the background is not flat.
  std::uniform_int_distribution<int> px(0, bg.cols - 1), py(0, bg.rows - 1);
  const int dots = static_cast<int>(width * height / 200);
  for (int i = 0; i < dots; ++i)
    bg.at<cv::Vec3b>(py(rng), px(rng)) = random_color(rng, 0, 140);
  return bg;
}

Box random_box(int64_t image_w, int64_t image_h, double w, double h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(image_w) - w);
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(image_h) - h);
  const double x = ux(rng), y = uy(rng);
  return Box{x, y, x + w, y + h};
}

}  // namespace

cv::Mat load_image(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("data: cannot read image " + path);
  return img;
}

SequenceDataset SequenceDataset::load(const std::string& root_dir) {
  SequenceDataset ds;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "groundtruth.txt"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("data: no sequences under " + root_dir);

  for (const auto& dir : dirs) {
    Sequence seq;
    seq.name = dir.filename().string();
    std::vector<fs::path> frames;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && is_image_file(entry.path())) frames.push_back(entry.path());
    std::sort(frames.begin(), frames.end());
    for (const auto& f : frames) seq.frames.push_back(f.string());

    for (const auto& line : read_data_lines((dir / "groundtruth.txt").string()))
      seq.annotations.push_back(parse_xywh(line, seq.name));
    if (seq.annotations.size() != seq.frames.size())
      throw std::runtime_error("data: annotation/frame count mismatch in " + seq.name);

    const fs::path absence = dir / "absence.label";
    if (fs::exists(absence)) {
      const auto lines = read_data_lines(absence.string());
      if (lines.size() != seq.frames.size())
        throw std::runtime_error("data: absence.label length mismatch in " + seq.name);
      for (size_t i = 0; i < lines.size(); ++i)
        if (std::stoi(lines[i]) != 0) seq.annotations[i].present = false;
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

ImageDataset ImageDataset::load(const std::string& manifest_path) {
  ImageDataset ds;
  const fs::path base = fs::path(manifest_path).parent_path();
  for (const auto& line : read_data_lines(manifest_path)) {
    std::istringstream ss(line);
    ImageRecord rec;
    std::string token;
    if (!(ss >> token)) continue;
    fs::path p(token);
    rec.path = (p.is_absolute() ? p : base / p).string();
    while (ss >> token) {
      const FrameAnnotation a = parse_xywh(token, manifest_path);
      if (!a.present) throw std::runtime_error("data: nan box in manifest " + manifest_path);
      rec.instances.push_back(a.box);
    }
    if (rec.instances.empty())
      throw std::runtime_error("data: image record without instances in " + manifest_path);
    ds.images.push_back(std::move(rec));
  }
  if (ds.images.empty()) throw std::runtime_error("data: empty manifest " + manifest_path);
  return ds;
}

void MixtureSpec::validate() const {
  if (entries.empty()) throw std::invalid_argument("mixture: no entries");
  double sum = 0;
  for (const auto& e : entries) {
    if (e.probability <= 0) throw std::invalid_argument("mixture: non-positive probability");
    if ((e.sequences == nullptr) == (e.images == nullptr))
      throw std::invalid_argument("mixture: entry must name exactly one dataset");
    if (e.sequences && e.sequences->sequences.empty())
      throw std::invalid_argument("mixture: empty sequence dataset");
    if (e.images && e.images->images.empty())
      throw std::invalid_argument("mixture: empty image dataset");
    sum += e.probability;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture: probabilities must sum to 1");
}

ResizedImage resize_normalize(const cv::Mat& image, const ResizeSpec& resize,
                              const NormalizeSpec& normalize) {
  if (image.empty() || image.cols <= 0 || image.rows <= 0)
    throw std::invalid_argument("resize_normalize: empty image");
  const double long_edge = std::max(image.cols, image.rows);
  const double short_edge = std::min(image.cols, image.rows);
  const double scale = std::min(resize.max_long / long_edge, resize.max_short / short_edge);
  const int out_w = std::max(1, static_cast<int>(std::floor(image.cols * scale)));
  const int out_h = std::max(1, static_cast<int>(std::floor(image.rows * scale)));

  cv::Mat resized;
  if (out_w == image.cols && out_h == image.rows)
    resized = image;
  else
    cv::resize(image, resized, cv::Size(out_w, out_h), 0, 0, cv::INTER_LINEAR);

  ResizedImage out;
  out.scale = scale;
  out.width = out_w;
  out.height = out_h;
  out.tensor = Tensor::zeros({1, 3, out_h, out_w});
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const cv::Vec3b bgr = resized.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c)  // BGR on disk, RGB in the tensor
        out.tensor.at(0, c, y, x) =
            (static_cast<double>(bgr[2 - c]) - normalize.mean[static_cast<size_t>(c)]) /
            normalize.stddev[static_cast<size_t>(c)];
    }
  return out;
}

std::pair<cv::Mat, std::vector<Box>> augment(const cv::Mat& image, const std::vector<Box>& boxes,
                                             const AugmentSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  cv::Mat out = image;
  std::vector<Box> out_boxes = boxes;

  if (u01(rng) < spec.flip_probability) {
    cv::Mat flipped;
    cv::flip(out, flipped, 1);
    out = flipped;
    const double w = image.cols;
    for (auto& b : out_boxes) {
      const double x1 = w - b.x2, x2 = w - b.x1;
      b.x1 = x1;
      b.x2 = x2;
    }
  }

  auto factor = [&](double range) {
    if (range <= 0) return 1.0;
    std::uniform_real_distribution<double> f(1.0 - range, 1.0 + range);
    return f(rng);
  };
  const double fb = factor(spec.brightness);
  const double fc = factor(spec.contrast);
  const double fs = factor(spec.saturation);
  if (fb != 1.0 || fc != 1.0 || fs != 1.0) {
    cv::Mat work;
    out.convertTo(work, CV_64FC3);
    work *= fb;
    const cv::Scalar mean = cv::mean(work);
    const double gray_mean = (mean[0] + mean[1] + mean[2]) / 3.0;
    work = (work - cv::Scalar::all(gray_mean)) * fc + cv::Scalar::all(gray_mean);
    for (int y = 0; y < work.rows; ++y)
      for (int x = 0; x < work.cols; ++x) {
        cv::Vec3d& px = work.at<cv::Vec3d>(y, x);
        const double g = (px[0] + px[1] + px[2]) / 3.0;
        for (int c = 0; c < 3; ++c) px[c] = g + (px[c] - g) * fs;
      }
    work.convertTo(out, CV_8UC3);
  } else if (out.data == image.data) {
    out = image.clone();
  }
  return {out, out_boxes};
}

size_t sample_mixture_index(const MixtureSpec& mixture, std::mt19937_64& rng) {
  mixture.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double draw = u01(rng);
  double acc = 0;
  for (size_t i = 0; i < mixture.entries.size(); ++i) {
    acc += mixture.entries[i].probability;
    if (draw < acc) return i;
  }
  return mixture.entries.size() - 1;
}

PairSample sample_pair(const MixtureSpec& mixture, const AugmentSpec& augment_spec,
                       std::mt19937_64& rng) {
  const MixtureEntry& entry = mixture.entries[sample_mixture_index(mixture, rng)];
  PairSample sample;

  if (entry.images) {
    std::uniform_int_distribution<size_t> pick(0, entry.images->images.size() - 1);
    const ImageRecord& rec = entry.images->images[pick(rng)];
    const cv::Mat img = load_image(rec.path);
    auto [qi, qb] = augment(img, rec.instances, augment_spec, rng);
    auto [si, sb] = augment(img, rec.instances, augment_spec, rng);
    sample.query_image = qi;
    sample.search_image = si;
    for (size_t i = 0; i < rec.instances.size(); ++i)
      sample.instances.push_back({qb[i], sb[i]});
    return sample;
  }

  const auto& sequences = entry.sequences->sequences;
  std::uniform_int_distribution<size_t> pick(0, sequences.size() - 1);
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Sequence& seq = sequences[pick(rng)];
    std::vector<size_t> present;
    for (size_t i = 0; i < seq.annotations.size(); ++i)
      if (seq.annotations[i].present) present.push_back(i);
    if (present.size() < 2) continue;
    std::uniform_int_distribution<size_t> fpick(0, present.size() - 1);
    const size_t a = present[fpick(rng)];
    size_t b = a;
    while (b == a) b = present[fpick(rng)];

    auto [qi, qb] =
        augment(load_image(seq.frames[a]), {seq.annotations[a].box}, augment_spec, rng);
    auto [si, sb] =
        augment(load_image(seq.frames[b]), {seq.annotations[b].box}, augment_spec, rng);
    sample.query_image = qi;
    sample.search_image = si;
    sample.instances.push_back({qb[0], sb[0]});
    return sample;
  }
  throw std::runtime_error("sample_pair: no sequence with two co-present frames");
}

SequenceDataset generate_synthetic(const SyntheticSpec& spec, const std::string& root_dir) {
  if (spec.num_sequences < 1 || spec.frames_per_sequence < 1)
    throw std::invalid_argument("generate_synthetic: need at least one sequence and frame");
  std::mt19937_64 rng(spec.seed);
  fs::create_directories(root_dir);

  for (int64_t s = 0; s < spec.num_sequences; ++s) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%03d", static_cast<int>(s));
    const fs::path dir = fs::path(root_dir) / name;
    fs::create_directories(dir);

    const cv::Mat background = render_background(spec.width, spec.height, rng);
    std::uniform_int_distribution<int64_t> size_d(spec.min_size, spec.max_size);
    std::uniform_real_distribution<double> vel(-3.0, 3.0);

    struct Mover {
      InstanceStyle style;
      double w, h, x, y, vx, vy;
    };
    auto make_mover = [&] {
      Mover m;
      m.style = random_style(rng);
      m.w = static_cast<double>(size_d(rng));
      m.h = static_cast<double>(size_d(rng));
      const Box b = random_box(spec.width, spec.height, m.w, m.h, rng);
      m.x = b.x1;
      m.y = b.y1;
      m.vx = vel(rng);
      m.vy = vel(rng);
      return m;
    };
    Mover target = make_mover();
    std::vector<Mover> distractors;
    for (int64_t d = 0; d < spec.distractors; ++d) distractors.push_back(make_mover());

    auto step = [&](Mover& m) {
      m.x += m.vx;
      m.y += m.vy;
      if (m.x < 0) { m.x = 0; m.vx = std::abs(m.vx); }
      if (m.y < 0) { m.y = 0; m.vy = std::abs(m.vy); }
      if (m.x + m.w > spec.width) { m.x = spec.width - m.w; m.vx = -std::abs(m.vx); }
      if (m.y + m.h > spec.height) { m.y = spec.height - m.h; m.vy = -std::abs(m.vy); }
    };

    std::ofstream gt_file(dir / "groundtruth.txt");
    gt_file << kSequenceHeader << "\n";
    std::ofstream absence_file;
    const bool has_absence = spec.absence_length > 0 && spec.absence_start >= 0;
    if (has_absence) {
      absence_file.open(dir / "absence.label");
      absence_file << kAbsenceHeader << "\n";
    }

    for (int64_t f = 0; f < spec.frames_per_sequence; ++f) {
      if (f > 0) {
        step(target);
        for (auto& m : distractors) step(m);
      }
      if (std::find(spec.teleport_frames.begin(), spec.teleport_frames.end(), f) !=
          spec.teleport_frames.end()) {
        // Teleport: resample until the new box is disjoint from the old one.
        const Box old{target.x, target.y, target.x + target.w, target.y + target.h};
        for (int tries = 0; tries < 1000; ++tries) {
          const Box b = random_box(spec.width, spec.height, target.w, target.h, rng);
          if (iou(b, old) == 0.0) {
            target.x = b.x1;
            target.y = b.y1;
            break;
          }
        }
      }
      const bool absent =
          has_absence && f >= spec.absence_start && f < spec.absence_start + spec.absence_length;

      cv::Mat frame = background.clone();
      for (const auto& m : distractors)
        render_instance(frame, Box{m.x, m.y, m.x + m.w, m.y + m.h}, m.style);
      const Box tbox{target.x, target.y, target.x + target.w, target.y + target.h};
      if (!absent) render_instance(frame, tbox, target.style);

      char fname[32];
      std::snprintf(fname, sizeof(fname), "frame_%04d.png", static_cast<int>(f));
      if (!cv::imwrite((dir / fname).string(), frame))
        throw std::runtime_error("generate_synthetic: cannot write frame");
      gt_file << (absent ? std::string("nan,nan,nan,nan") : format_box(tbox)) << "\n";
      if (has_absence) absence_file << (absent ? 1 : 0) << "\n";
    }
  }
  return SequenceDataset::load(root_dir);
}

ImageDataset generate_synthetic_images(const SyntheticImageSpec& spec,
                                       const std::string& root_dir) {
  if (spec.num_images < 1 || spec.instances_per_image < 1)
    throw std::invalid_argument("generate_synthetic_images: need images and instances");
  std::mt19937_64 rng(spec.seed);
  fs::create_directories(root_dir);
  const fs::path manifest_path = fs::path(root_dir) / "manifest.txt";
  std::ofstream manifest(manifest_path);
  manifest << kManifestHeader << "\n";

  std::uniform_int_distribution<int64_t> size_d(spec.min_size, spec.max_size);
  for (int64_t i = 0; i < spec.num_images; ++i) {
    cv::Mat img = render_background(spec.width, spec.height, rng);
    std::vector<Box> boxes;
    for (int64_t k = 0; k < spec.instances_per_image; ++k) {
      const double w = static_cast<double>(size_d(rng));
      const double h = static_cast<double>(size_d(rng));
      Box b;
      bool placed = false;
      for (int tries = 0; tries < 500 && !placed; ++tries) {
        b = random_box(spec.width, spec.height, w, h, rng);
        placed = std::all_of(boxes.begin(), boxes.end(),
                             [&](const Box& o) { return iou(b, o) == 0.0; });
      }
      if (!placed)
        throw std::runtime_error("generate_synthetic_images: cannot place disjoint instances");
      render_instance(img, b, random_style(rng));
      boxes.push_back(b);
    }
    char fname[32];
    std::snprintf(fname, sizeof(fname), "img_%04d.png", static_cast<int>(i));
    if (!cv::imwrite((fs::path(root_dir) / fname).string(), img))
      throw std::runtime_error("generate_synthetic_images: cannot write image");
    manifest << fname;
    for (const auto& b : boxes) manifest << " " << format_box(b);
    manifest << "\n";
  }
  manifest.close();
  return ImageDataset::load(manifest_path.string());
}

}  // namespace gt
