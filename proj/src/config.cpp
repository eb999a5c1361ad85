#include "globaltrack/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace gt {

namespace {

double to_double(const std::string& v) {
  size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: bad number '" + v + "'");
  return d;
}

int64_t to_int(const std::string& v) {
  size_t used = 0;
  const int64_t i = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: bad integer '" + v + "'");
  return i;
}

bool to_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: bad boolean '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> to_list(const std::string& v, Parse parse) {
  std::vector<T> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse(item));
  if (out.empty()) throw std::invalid_argument("config: empty list '" + v + "'");
  return out;
}

template <typename T>
std::string from_list(const std::vector<T>& list) {
  std::ostringstream os;
  for (size_t i = 0; i < list.size(); ++i) {
    if (i) os << ",";
    os << list[i];
  }
  return os.str();
}

struct Key {
  std::string name;
  std::function<void(AppConfig&, const std::string&)> set;
  std::function<std::string(const AppConfig&)> get;
};

const std::vector<Key>& registry() {
  auto num = [](auto getter) {
    return [getter](const AppConfig& c) {
      std::ostringstream os;
      os << getter(c);
      return os.str();
    };
  };
  static const std::vector<Key> keys = {
      {"model.backbone", [](AppConfig& c, const std::string& v) { c.model.backbone = v; },
       [](const AppConfig& c) { return c.model.backbone; }},
      {"model.channels",  // paper's c
       [](AppConfig& c, const std::string& v) { c.model.channels = to_int(v); },
       num([](const AppConfig& c) { return c.model.channels; })},
      {"model.proj_channels",
       [](AppConfig& c, const std::string& v) { c.model.proj_channels = to_int(v); },
       num([](const AppConfig& c) { return c.model.proj_channels; })},
      {"model.roi_size",  // paper's k
       [](AppConfig& c, const std::string& v) { c.model.roi_size = to_int(v); },
       num([](const AppConfig& c) { return c.model.roi_size; })},
      {"model.stride",
       [](AppConfig& c, const std::string& v) {
         c.model.stride = to_int(v);
         c.model.anchors.stride = c.model.stride;
       },
       num([](const AppConfig& c) { return c.model.stride; })},
      {"model.pyramid", [](AppConfig& c, const std::string& v) { c.model.pyramid = to_bool(v); },
       num([](const AppConfig& c) { return c.model.pyramid ? 1 : 0; })},
      {"model.grouped_correlation",
       [](AppConfig& c, const std::string& v) { c.model.grouped_correlation = to_bool(v); },
       num([](const AppConfig& c) { return c.model.grouped_correlation ? 1 : 0; })},
      {"model.rcnn_hidden",
       [](AppConfig& c, const std::string& v) { c.model.rcnn_hidden = to_int(v); },
       num([](const AppConfig& c) { return c.model.rcnn_hidden; })},
      {"model.anchor_scales",
       [](AppConfig& c, const std::string& v) {
         c.model.anchors.scales = to_list<double>(v, to_double);
       },
       [](const AppConfig& c) { return from_list(c.model.anchors.scales); }},
      {"model.anchor_ratios",
       [](AppConfig& c, const std::string& v) {
         c.model.anchors.ratios = to_list<double>(v, to_double);
       },
       [](const AppConfig& c) { return from_list(c.model.anchors.ratios); }},

      {"train.batch_size",
       [](AppConfig& c, const std::string& v) { c.train.batch_size = to_int(v); },
       num([](const AppConfig& c) { return c.train.batch_size; })},
      {"train.momentum", [](AppConfig& c, const std::string& v) { c.train.momentum = to_double(v); },
       num([](const AppConfig& c) { return c.train.momentum; })},
      {"train.weight_decay",
       [](AppConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); },
       num([](const AppConfig& c) { return c.train.weight_decay; })},
      {"train.epochs", [](AppConfig& c, const std::string& v) { c.train.epochs = to_int(v); },
       num([](const AppConfig& c) { return c.train.epochs; })},
      {"train.iterations_per_epoch",
       [](AppConfig& c, const std::string& v) { c.train.iterations_per_epoch = to_int(v); },
       num([](const AppConfig& c) { return c.train.iterations_per_epoch; })},
      {"train.lr",
       [](AppConfig& c, const std::string& v) { c.train.learning_rate = to_double(v); },
       num([](const AppConfig& c) { return c.train.learning_rate; })},
      {"train.decay_factor",
       [](AppConfig& c, const std::string& v) { c.train.decay_factor = to_double(v); },
       num([](const AppConfig& c) { return c.train.decay_factor; })},
      {"train.decay_epochs",
       [](AppConfig& c, const std::string& v) {
         c.train.decay_epochs = to_list<int64_t>(v, to_int);
       },
       [](const AppConfig& c) { return from_list(c.train.decay_epochs); }},
      {"train.lambda",  // paper's lambda, shared by both stages
       [](AppConfig& c, const std::string& v) { c.train.lambda = to_double(v); },
       num([](const AppConfig& c) { return c.train.lambda; })},
      {"train.rpn_sample_count",
       [](AppConfig& c, const std::string& v) { c.train.rpn.sample_count = to_int(v); },
       num([](const AppConfig& c) { return c.train.rpn.sample_count; })},
      {"train.rpn_positive_fraction",
       [](AppConfig& c, const std::string& v) { c.train.rpn.positive_fraction = to_double(v); },
       num([](const AppConfig& c) { return c.train.rpn.positive_fraction; })},
      {"train.rcnn_sample_count",
       [](AppConfig& c, const std::string& v) { c.train.rcnn_sample.sample_count = to_int(v); },
       num([](const AppConfig& c) { return c.train.rcnn_sample.sample_count; })},
      {"train.rcnn_positive_fraction",
       [](AppConfig& c, const std::string& v) {
         c.train.rcnn_sample.positive_fraction = to_double(v);
       },
       num([](const AppConfig& c) { return c.train.rcnn_sample.positive_fraction; })},
      {"train.proposal_pre_nms",
       [](AppConfig& c, const std::string& v) { c.train.proposals.pre_nms_topk = to_int(v); },
       num([](const AppConfig& c) { return c.train.proposals.pre_nms_topk; })},
      {"train.proposal_nms_threshold",
       [](AppConfig& c, const std::string& v) {
         c.train.proposals.nms_threshold = to_double(v);
       },
       num([](const AppConfig& c) { return c.train.proposals.nms_threshold; })},
      {"train.proposal_max",
       [](AppConfig& c, const std::string& v) { c.train.proposals.max_proposals = to_int(v); },
       num([](const AppConfig& c) { return c.train.proposals.max_proposals; })},
      {"train.seed", [](AppConfig& c, const std::string& v) { c.train.seed = to_int(v); },
       num([](const AppConfig& c) { return c.train.seed; })},
      {"train.checkpoint_dir",
       [](AppConfig& c, const std::string& v) { c.train.checkpoint_dir = v; },
       [](const AppConfig& c) { return c.train.checkpoint_dir; }},
      {"train.metrics_path",
       [](AppConfig& c, const std::string& v) { c.train.metrics_path = v; },
       [](const AppConfig& c) { return c.train.metrics_path; }},

      {"resize.max_long",
       [](AppConfig& c, const std::string& v) {
         c.train.resize.max_long = to_int(v);
         c.tracker.resize.max_long = c.train.resize.max_long;
       },
       num([](const AppConfig& c) { return c.train.resize.max_long; })},
      {"resize.max_short",
       [](AppConfig& c, const std::string& v) {
         c.train.resize.max_short = to_int(v);
         c.tracker.resize.max_short = c.train.resize.max_short;
       },
       num([](const AppConfig& c) { return c.train.resize.max_short; })},

      {"augment.flip_probability",
       [](AppConfig& c, const std::string& v) { c.train.augment.flip_probability = to_double(v); },
       num([](const AppConfig& c) { return c.train.augment.flip_probability; })},
      {"augment.brightness",
       [](AppConfig& c, const std::string& v) { c.train.augment.brightness = to_double(v); },
       num([](const AppConfig& c) { return c.train.augment.brightness; })},
      {"augment.contrast",
       [](AppConfig& c, const std::string& v) { c.train.augment.contrast = to_double(v); },
       num([](const AppConfig& c) { return c.train.augment.contrast; })},
      {"augment.saturation",
       [](AppConfig& c, const std::string& v) { c.train.augment.saturation = to_double(v); },
       num([](const AppConfig& c) { return c.train.augment.saturation; })},

      {"tracker.tau",  // paper's tau
       [](AppConfig& c, const std::string& v) { c.tracker.tau = to_double(v); },
       num([](const AppConfig& c) { return c.tracker.tau; })},
      {"tracker.max_proposals",
       [](AppConfig& c, const std::string& v) {
         c.tracker.proposals.max_proposals = to_int(v);
       },
       num([](const AppConfig& c) { return c.tracker.proposals.max_proposals; })},

      {"data.root", [](AppConfig& c, const std::string& v) { c.data_root = v; },
       [](const AppConfig& c) { return c.data_root; }},
      {"data.image_manifest",
       [](AppConfig& c, const std::string& v) { c.image_manifest = v; },
       [](const AppConfig& c) { return c.image_manifest; }},
      {"data.image_probability",
       [](AppConfig& c, const std::string& v) { c.image_probability = to_double(v); },
       num([](const AppConfig& c) { return c.image_probability; })},
  };
  return keys;
}

}  // namespace

AppConfig desk_config() {
  AppConfig c;
  c.model.backbone = "desk";
  c.model.channels = 16;
  c.model.proj_channels = 16;
  c.model.roi_size = 3;
  c.model.stride = 8;
  c.model.rcnn_hidden = 32;
  c.model.anchors.scales = {16, 24, 36};
  c.model.anchors.ratios = {0.5, 1.0, 2.0};
  c.model.anchors.stride = 8;

  c.train.batch_size = 1;
  c.train.epochs = 4;
  c.train.iterations_per_epoch = 100;
  c.train.decay_epochs = {3};
  c.train.rpn.sample_count = 64;
  c.train.rcnn_sample.sample_count = 64;
  c.train.proposals.pre_nms_topk = 256;
  c.train.proposals.max_proposals = 64;
  c.train.resize = {128, 96};
  c.tracker.resize = c.train.resize;
  c.tracker.proposals.max_proposals = 64;
  return c;
}

void apply_override(AppConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : registry())
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  std::ostringstream os;
  os << "config: unknown key '" << key << "'; valid keys:";
  for (const auto& k : registry()) os << "\n  " << k.name;
  throw std::invalid_argument(os.str());
}

void apply_config_file(AppConfig& config, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t");
    line = line.substr(first, last - first + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: missing '=' at " + path + ":" +
                                  std::to_string(lineno));
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t'))
      value.erase(value.begin());
    apply_override(config, key, value);
  }
}

AppConfig parse_config_file(const std::string& path) {
  AppConfig config = desk_config();
  apply_config_file(config, path);
  return config;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> names;
  for (const auto& k : registry()) names.push_back(k.name);
  return names;
}

std::string config_echo(const AppConfig& config) {
  std::ostringstream os;
  for (const auto& k : registry()) os << k.name << "=" << k.get(config) << "\n";
  return os.str();
}

}  // namespace gt
