#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <memory>
#include <optional>

#include "globaltrack/checkpoint.hpp"
#include "globaltrack/config.hpp"
#include "globaltrack/eval.hpp"
#include "globaltrack/model.hpp"
#include "globaltrack/tracker.hpp"
#include "globaltrack/training.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace gt;

namespace {

AppConfig config_from_overrides(const std::vector<std::string>& overrides) {
  AppConfig cfg = desk_config();
  for (const auto& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override must be key=value: " + kv);
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

/// Owns config + model together so the python side sees one object.
struct ModelHandle {
  AppConfig config;
  std::unique_ptr<GlobalTrackModel> model;

  ModelHandle(const std::vector<std::string>& overrides, uint64_t seed)
      : config(config_from_overrides(overrides)),
        model(std::make_unique<GlobalTrackModel>(config.model, seed)) {}

  explicit ModelHandle(const std::string& checkpoint) {
    config = desk_config();
    std::istringstream echo(CheckpointCodec::read_config_echo(checkpoint));
    std::string line;
    while (std::getline(echo, line)) {
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      apply_override(config, line.substr(0, eq), line.substr(eq + 1));
    }
    model = std::make_unique<GlobalTrackModel>(config.model, 0);
    CheckpointCodec::load(checkpoint, model->params());
  }

  void save(const std::string& path) const {
    CheckpointCodec::save(path, model->params(), config_echo(config));
  }

  std::vector<py::dict> track(const std::vector<std::string>& frame_paths,
                              std::tuple<double, double, double, double> init_xywh,
                              std::optional<double> tau) const {
    TrackerConfig tc = config.tracker;
    if (tau) tc.tau = *tau;
    const Box init = Box::from_xywh(std::get<0>(init_xywh), std::get<1>(init_xywh),
                                    std::get<2>(init_xywh), std::get<3>(init_xywh));
    std::vector<py::dict> out;
    for (const auto& r : track_sequence_files(*model, frame_paths, init, tc)) {
      py::dict d;
      d["frame"] = r.frame;
      d["x"] = r.box.x1;
      d["y"] = r.box.y1;
      d["w"] = r.box.x2 - r.box.x1;
      d["h"] = r.box.y2 - r.box.y1;
      d["score"] = r.score;
      d["present"] = r.present;
      out.push_back(d);
    }
    return out;
  }

  std::vector<double> fit(const std::string& data_root) {
    SequenceDataset ds = SequenceDataset::load(data_root);
    MixtureSpec mixture;
    mixture.entries.push_back({&ds, nullptr, 1.0});
    return train(*model, mixture, config.train, config_echo(config)).step_losses;
  }

  uint64_t digest() const { return model->params().value_digest(); }
};

}  // namespace

PYBIND11_MODULE(_globaltrack, m) {
  m.doc() = "query-guided global instance-search tracker";

  py::class_<Box>(m, "Box")
      .def(py::init([](double x, double y, double w, double h) {
             return Box::from_xywh(x, y, w, h);
           }),
           py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"))
      .def_readonly("x1", &Box::x1)
      .def_readonly("y1", &Box::y1)
      .def_readonly("x2", &Box::x2)
      .def_readonly("y2", &Box::y2)
      .def("__repr__", [](const Box& b) {
        return "Box(x=" + std::to_string(b.x1) + ", y=" + std::to_string(b.y1) +
               ", w=" + std::to_string(b.x2 - b.x1) + ", h=" + std::to_string(b.y2 - b.y1) + ")";
      });

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("config_keys", &config_keys);

  m.def(
      "generate_synthetic",
      [](const std::string& root, int64_t sequences, int64_t frames, int64_t width,
         int64_t height, int64_t absence_start, int64_t absence_length, uint64_t seed) {
        SyntheticSpec spec;
        spec.num_sequences = sequences;
        spec.frames_per_sequence = frames;
        spec.width = width;
        spec.height = height;
        spec.absence_start = absence_start;
        spec.absence_length = absence_length;
        spec.seed = seed;
        const SequenceDataset ds = generate_synthetic(spec, root);
        return ds.sequences.size();
      },
      py::arg("root"), py::arg("sequences") = 1, py::arg("frames") = 10, py::arg("width") = 96,
      py::arg("height") = 96, py::arg("absence_start") = -1, py::arg("absence_length") = 0,
      py::arg("seed") = 7);

  m.def(
      "evaluate",
      [](const std::string& results_dir, const std::string& data_root,
         const std::vector<std::string>& metrics) {
        SequenceDataset ds = SequenceDataset::load(data_root);
        EvalRun run;
        for (const auto& seq : ds.sequences) {
          const fs::path results = fs::path(results_dir) / (seq.name + ".txt");
          if (!fs::exists(results))
            throw std::runtime_error("missing results for sequence " + seq.name);
          run.sequences.push_back(
              make_eval_sequence(seq.name, read_results(results.string()), seq));
        }
        return format_report(run, metrics);
      },
      py::arg("results_dir"), py::arg("data_root"),
      py::arg("metrics") = std::vector<std::string>{});

  py::class_<ModelHandle>(m, "Model")
      .def(py::init<const std::vector<std::string>&, uint64_t>(),
           py::arg("overrides") = std::vector<std::string>{}, py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return ModelHandle(path); },
                  py::arg("checkpoint"))
      .def("save", &ModelHandle::save, py::arg("path"))
      .def("track", &ModelHandle::track, py::arg("frame_paths"), py::arg("init_box"),
           py::arg("tau") = std::nullopt)
      .def("fit", &ModelHandle::fit, py::arg("data_root"))
      .def("digest", &ModelHandle::digest)
      .def_property_readonly("config",
                             [](const ModelHandle& h) { return config_echo(h.config); });

  m.def("write_results_file",
        [](const std::string& path, const std::vector<py::dict>& records) {
          std::vector<TrackRecord> rs;
          for (const auto& d : records) {
            TrackRecord r;
            r.frame = static_cast<int64_t>(rs.size());
            r.box = Box::from_xywh(d["x"].cast<double>(), d["y"].cast<double>(),
                                   d["w"].cast<double>(), d["h"].cast<double>());
            r.score = d["score"].cast<double>();
            r.present = d["present"].cast<bool>();
            rs.push_back(r);
          }
          write_results(path, rs);
        },
        py::arg("path"), py::arg("records"));
}
