// globaltrack CLI: train / track / eval / proposals.
//
// Exit codes: 0 success, 1 generic error, 2 missing dataset,
// 3 checkpoint/config mismatch, 4 evaluation input mismatch.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "globaltrack/checkpoint.hpp"
#include "globaltrack/config.hpp"
#include "globaltrack/eval.hpp"
#include "globaltrack/model.hpp"
#include "globaltrack/tracker.hpp"
#include "globaltrack/training.hpp"

namespace fs = std::filesystem;
using namespace gt;

namespace {

constexpr int kExitError = 1;
constexpr int kExitMissingData = 2;
constexpr int kExitCheckpointMismatch = 3;
constexpr int kExitEvalMismatch = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<uint64_t> seed;
};

AppConfig assemble_config(const CommonArgs& args, const std::string& echo = "") {
  AppConfig cfg = desk_config();
  if (!echo.empty()) {
    std::istringstream ss(echo);
    std::string line;
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      apply_override(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
  }
  if (!args.config_path.empty()) apply_config_file(cfg, args.config_path);
  for (const auto& kv : args.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override must be key=value: " + kv);
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) cfg.train.seed = *args.seed;
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "random seed (overrides train.seed)");
}

// Builds the mixture from config paths; the datasets must outlive the spec.
struct LoadedData {
  std::optional<SequenceDataset> sequences;
  std::optional<ImageDataset> images;
  MixtureSpec mixture;
};

// Fills `data` in place: the mixture holds pointers into data's own members.
void load_datasets(const AppConfig& cfg, LoadedData& data) {
  if (cfg.data_root.empty() && cfg.image_manifest.empty())
    throw std::invalid_argument("no dataset configured (data.root / data.image_manifest)");
  double seq_prob = 1.0 - cfg.image_probability;
  if (!cfg.data_root.empty()) {
    if (!fs::exists(cfg.data_root))
      throw std::invalid_argument("dataset path does not exist: " + cfg.data_root);
    data.sequences = SequenceDataset::load(cfg.data_root);
    data.mixture.entries.push_back({&*data.sequences, nullptr, seq_prob});
  } else {
    seq_prob = 0.0;
  }
  if (!cfg.image_manifest.empty()) {
    if (!fs::exists(cfg.image_manifest))
      throw std::invalid_argument("manifest does not exist: " + cfg.image_manifest);
    data.images = ImageDataset::load(cfg.image_manifest);
    data.mixture.entries.push_back({nullptr, &*data.images, 1.0 - seq_prob});
  }
  data.mixture.validate();
}

GlobalTrackModel load_model(const std::string& checkpoint, const CommonArgs& args,
                            AppConfig& cfg_out) {
  const std::string echo = CheckpointCodec::read_config_echo(checkpoint);
  cfg_out = assemble_config(args, echo);
  GlobalTrackModel model(cfg_out.model, 0);
  CheckpointCodec::load(checkpoint, model.params());  // throws on mismatch
  return model;
}

Box init_box_of(const Sequence& seq) {
  if (seq.annotations.empty() || !seq.annotations[0].present)
    throw std::invalid_argument("sequence " + seq.name + ": frame 0 has no groundtruth");
  return seq.annotations[0].box;
}

int cmd_train(const CommonArgs& args) {
  AppConfig cfg = assemble_config(args);
  LoadedData data;
  try {
    load_datasets(cfg, data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingData;
  }
  GlobalTrackModel model(cfg.model, cfg.train.seed);
  if (cfg.train.checkpoint_dir.empty()) cfg.train.checkpoint_dir = "checkpoints";
  if (cfg.train.metrics_path.empty())
    cfg.train.metrics_path = cfg.train.checkpoint_dir + "/metrics.log";
  fs::create_directories(cfg.train.checkpoint_dir);

  // Resume from the newest epoch checkpoint when present.
  int64_t start_epoch = 0;
  for (int64_t e = cfg.train.epochs; e >= 1; --e) {
    char name[32];
    std::snprintf(name, sizeof(name), "/epoch_%03d.ckpt", static_cast<int>(e));
    if (fs::exists(cfg.train.checkpoint_dir + name)) {
      CheckpointCodec::load(cfg.train.checkpoint_dir + name, model.params());
      start_epoch = e;
      std::cout << "resuming after epoch " << e << "\n";
      break;
    }
  }
  if (start_epoch >= cfg.train.epochs) {
    std::cout << "training already complete\n";
    return 0;
  }
  TrainConfig run_cfg = cfg.train;
  run_cfg.epochs = cfg.train.epochs - start_epoch;
  run_cfg.decay_epochs.clear();
  for (int64_t m : cfg.train.decay_epochs)
    if (m > start_epoch) run_cfg.decay_epochs.push_back(m - start_epoch);
  const TrainResult result = train(model, data.mixture, run_cfg, config_echo(cfg));
  std::cout << "trained " << result.step_losses.size() << " steps; final loss "
            << (result.step_losses.empty() ? 0.0 : result.step_losses.back()) << "\n";
  return 0;
}

int cmd_track(const CommonArgs& args, const std::string& checkpoint,
              const std::string& sequence_dir, const std::string& output,
              std::optional<double> tau) {
  AppConfig cfg;
  GlobalTrackModel model = [&] {
    try {
      return load_model(checkpoint, args, cfg);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      std::exit(kExitCheckpointMismatch);
    }
  }();
  if (tau) cfg.tracker.tau = *tau;

  // A directory holding groundtruth.txt is a single sequence; otherwise it is
  // a dataset root and one results file per sequence goes into `output`.
  const bool single = fs::exists(fs::path(sequence_dir) / "groundtruth.txt");
  const std::string parent =
      single ? fs::path(sequence_dir).parent_path().string() : sequence_dir;
  SequenceDataset ds = SequenceDataset::load(parent);

  if (single) {
    const std::string name = fs::path(sequence_dir).filename().string();
    for (const auto& seq : ds.sequences)
      if (seq.name == name) {
        const auto records =
            track_sequence_files(model, seq.frames, init_box_of(seq), cfg.tracker);
        write_results(output, records);
        std::cout << "wrote " << output << " (" << records.size() << " frames)\n";
        return 0;
      }
    std::cerr << "error: sequence " << name << " not found\n";
    return kExitError;
  }
  fs::create_directories(output);
  for (const auto& seq : ds.sequences) {
    const auto records = track_sequence_files(model, seq.frames, init_box_of(seq), cfg.tracker);
    const std::string path = (fs::path(output) / (seq.name + ".txt")).string();
    write_results(path, records);
    std::cout << "wrote " << path << " (" << records.size() << " frames)\n";
  }
  return 0;
}

int cmd_eval(const std::string& results_dir, const std::string& data_root,
             const std::string& metrics_csv, const std::string& report_path) {
  SequenceDataset ds = SequenceDataset::load(data_root);
  EvalRun run;
  std::vector<std::string> problems;
  for (const auto& seq : ds.sequences) {
    const fs::path results = fs::path(results_dir) / (seq.name + ".txt");
    if (!fs::exists(results)) {
      problems.push_back("missing results for sequence " + seq.name);
      continue;
    }
    try {
      run.sequences.push_back(make_eval_sequence(seq.name, read_results(results.string()), seq));
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }

  std::vector<std::string> metrics;
  if (!metrics_csv.empty()) {
    std::istringstream ss(metrics_csv);
    std::string m;
    while (std::getline(ss, m, ',')) metrics.push_back(m);
  }
  std::string report;
  if (!run.sequences.empty()) report = format_report(run, metrics);
  for (const auto& p : problems) report += "unmatched: " + p + "\n";
  if (report_path.empty())
    std::cout << report;
  else {
    std::ofstream(report_path) << report;
    std::cout << "wrote " << report_path << "\n";
  }
  if (run.sequences.empty() || !problems.empty()) {
    std::cerr << "error: " << (run.sequences.empty() ? "no evaluable sequences" : "unmatched sequences")
              << "\n";
    return kExitEvalMismatch;
  }
  return 0;
}

int cmd_proposals(const CommonArgs& args, const std::string& checkpoint,
                  const std::string& query_path, const std::string& box_csv,
                  const std::string& search_path, int64_t k) {
  AppConfig cfg;
  GlobalTrackModel model = [&] {
    try {
      return load_model(checkpoint, args, cfg);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      std::exit(kExitCheckpointMismatch);
    }
  }();
  double v[4];
  std::istringstream ss(box_csv);
  std::string item;
  for (int i = 0; i < 4; ++i) {
    if (!std::getline(ss, item, ',')) throw std::invalid_argument("--box must be x,y,w,h");
    v[i] = std::stod(item);
  }
  const Box query_box = Box::from_xywh(v[0], v[1], v[2], v[3]);

  const cv::Mat query_img = load_image(query_path);
  const cv::Mat search_img = load_image(search_path);
  const ResizedImage q = resize_normalize(query_img, cfg.tracker.resize, cfg.tracker.normalize);
  const ResizedImage s = resize_normalize(search_img, cfg.tracker.resize, cfg.tracker.normalize);
  const Box scaled{query_box.x1 * q.scale, query_box.y1 * q.scale, query_box.x2 * q.scale,
                   query_box.y2 * q.scale};
  const auto z = model.pool_query(model.extract_features(q.tensor), scaled, q.width, q.height);
  const auto levels = model.extract_features(s.tensor);
  ProposalConfig pc = cfg.tracker.proposals;
  pc.max_proposals = k;
  const auto proposals = propose(model.rpn_forward(z, levels), s.width, s.height, pc);

  std::cout << "# globaltrack-proposals v1\n";
  for (const auto& p : proposals) {
    const Box b{p.box.x1 / s.scale, p.box.y1 / s.scale, p.box.x2 / s.scale, p.box.y2 / s.scale};
    char line[160];
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f,%.6f", b.x1, b.y1, b.x2 - b.x1,
                  b.y2 - b.y1, p.score);
    std::cout << line << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"globaltrack: query-guided global instance-search tracking"};
  app.require_subcommand(1);
  {
    std::ostringstream footer;
    footer << "Config keys (flat key=value files, also usable with --set):\n";
    for (const auto& key : config_keys()) footer << "  " << key << "\n";
    app.footer(footer.str());
  }
  std::string device = "cpu";
  if (const char* env = std::getenv("GLOBALTRACK_DEVICE")) device = env;
  app.add_option("--device", device, "compute device (only 'cpu' is available)");

  CommonArgs train_args, track_args, prop_args;
  std::string checkpoint, sequence_dir, output = "results", query_path, box_csv, search_path;
  std::string results_dir, data_root, metrics_csv, report_path;
  std::optional<double> tau;
  int64_t workers = 1, topk = 10;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, train_args);

  CLI::App* track_cmd = app.add_subcommand("track", "run the tracker over sequences");
  add_common(track_cmd, track_args);
  track_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  track_cmd->add_option("--sequence", sequence_dir, "sequence dir or dataset root")->required();
  track_cmd->add_option("--output", output, "results file (single) or directory");
  track_cmd->add_option("--tau", tau, "presence threshold override");
  track_cmd->add_option("--workers", workers, "parallel sequence bound (serialized here)");

  CLI::App* eval_cmd = app.add_subcommand("eval", "score results against groundtruth");
  eval_cmd->add_option("--results", results_dir, "directory of per-sequence results files")
      ->required();
  eval_cmd->add_option("--data", data_root, "dataset root with groundtruth")->required();
  eval_cmd->add_option("--metrics", metrics_csv,
                       "comma list: success,precision,norm_precision,op,presence");
  eval_cmd->add_option("--output", report_path, "report file (default stdout)");
  eval_cmd->add_option("--workers", workers, "parallel sequence bound (serialized here)");

  std::string synth_root;
  SyntheticSpec synth_spec;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic sequence dataset");
  synth_cmd->add_option("--output", synth_root, "dataset root directory")->required();
  synth_cmd->add_option("--sequences", synth_spec.num_sequences, "sequence count");
  synth_cmd->add_option("--frames", synth_spec.frames_per_sequence, "frames per sequence");
  synth_cmd->add_option("--width", synth_spec.width, "image width");
  synth_cmd->add_option("--height", synth_spec.height, "image height");
  synth_cmd->add_option("--absence-start", synth_spec.absence_start, "first absent frame");
  synth_cmd->add_option("--absence-length", synth_spec.absence_length, "absent frame count");
  synth_cmd->add_option("--synth-seed", synth_spec.seed, "generator seed");

  CLI::App* prop_cmd = app.add_subcommand("proposals", "dump top-k first-stage proposals");
  add_common(prop_cmd, prop_args);
  prop_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  prop_cmd->add_option("--query", query_path, "query image")->required();
  prop_cmd->add_option("--box", box_csv, "query box x,y,w,h")->required();
  prop_cmd->add_option("--search", search_path, "search image")->required();
  prop_cmd->add_option("-k,--topk", topk, "proposal count");

  CLI11_PARSE(app, argc, argv);
  if (device != "cpu") {
    std::cerr << "error: unsupported device '" << device << "'\n";
    return kExitError;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (track_cmd->parsed()) return cmd_track(track_args, checkpoint, sequence_dir, output, tau);
    if (eval_cmd->parsed()) return cmd_eval(results_dir, data_root, metrics_csv, report_path);
    if (synth_cmd->parsed()) {
      const SequenceDataset ds = generate_synthetic(synth_spec, synth_root);
      std::cout << "generated " << ds.sequences.size() << " sequences under " << synth_root
                << "\n";
      return 0;
    }
    if (prop_cmd->parsed())
      return cmd_proposals(prop_args, checkpoint, query_path, box_csv, search_path, topk);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
