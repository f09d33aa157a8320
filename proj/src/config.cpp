#include "kwd/config.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <variant>

namespace kwd {

namespace {

// Shortest decimal that parses back to the same double.
std::string format_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

struct Field {
  const char* section;
  const char* key;
  std::variant<int*, double*, bool*, std::string*, std::uint64_t*> ref;
};

std::vector<Field> registry(Config& c) {
  return {
      {"numerics", "precision", &c.numerics.precision},
      {"augment", "crop", &c.augment.crop},
      {"augment", "hflip_p", &c.augment.hflip_p},
      {"augment", "blur_p", &c.augment.blur_p},
      {"augment", "blur_sigma_min", &c.augment.blur_sigma_min},
      {"augment", "blur_sigma_max", &c.augment.blur_sigma_max},
      {"augment", "jitter_p", &c.augment.jitter_p},
      {"augment", "jitter_strength", &c.augment.jitter_strength},
      {"augment", "hue_max", &c.augment.hue_max},
      {"augment", "grayscale_p", &c.augment.grayscale_p},
      {"augment", "rotation", &c.augment.rotation},
      {"augment", "rotation_includes_identity", &c.augment.rotation_includes_identity},
      {"model", "widths", &c.model.widths},
      {"model", "hidden_dim", &c.model.hidden_dim},
      {"model", "embed_dim", &c.model.embed_dim},
      {"model", "momentum", &c.model.momentum},
      {"contrast", "cld", &c.contrast.cld},
      {"contrast", "lambda", &c.contrast.lambda},
      {"contrast", "tau_q", &c.contrast.tau_q},
      {"contrast", "tau_g", &c.contrast.tau_g},
      {"contrast", "clusters", &c.contrast.clusters},
      {"contrast", "queue", &c.contrast.queue},
      {"contrast", "kmeans", &c.contrast.kmeans},
      {"contrast", "kmeans_iters", &c.contrast.kmeans_iters},
      {"data", "mosaics", &c.data.mosaics},
      {"data", "mosaic_size", &c.data.mosaic_size},
      {"data", "animals_min", &c.data.animals_min},
      {"data", "animals_max", &c.data.animals_max},
      {"data", "beneath_tree_p", &c.data.beneath_tree_p},
      {"data", "pre_patch", &c.data.pre_patch},
      {"data", "lt_bg_patch", &c.data.lt_bg_patch},
      {"data", "lt_fg_patch", &c.data.lt_fg_patch},
      {"data", "train_fg", &c.data.train_fg},
      {"data", "val_fg", &c.data.val_fg},
      {"data", "test_fg", &c.data.test_fg},
      {"data", "bg_per_fg", &c.data.bg_per_fg},
      {"data", "max_crops_per_animal", &c.data.max_crops_per_animal},
      {"train", "epochs", &c.train.epochs},
      {"train", "batch", &c.train.batch},
      {"train", "lr", &c.train.lr},
      {"train", "sgd_momentum", &c.train.sgd_momentum},
      {"train", "weight_decay", &c.train.weight_decay},
      {"train", "views", &c.train.views},
      {"train", "seed", &c.train.seed},
      {"eval", "probe_lr", &c.eval.probe_lr},
      {"eval", "probe_epochs", &c.eval.probe_epochs},
      {"eval", "probe_batch", &c.eval.probe_batch},
      {"eval", "ft_lr", &c.eval.ft_lr},
      {"eval", "ft_epochs", &c.eval.ft_epochs},
      {"eval", "ft_batch", &c.eval.ft_batch},
      {"eval", "sgd_momentum", &c.eval.sgd_momentum},
      {"eval", "weight_decay", &c.eval.weight_decay},
      {"eval", "input", &c.eval.input},
  };
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

void assign(const Field& f, const std::string& raw) {
  const std::string where = std::string(f.section) + "." + f.key;
  const std::string value = trim(raw);
  if (value.empty()) throw std::invalid_argument("config: empty value for " + where);
  try {
    if (auto pi = std::get_if<int*>(&f.ref)) {
      std::size_t pos = 0;
      const int v = std::stoi(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      **pi = v;
    } else if (auto pd = std::get_if<double*>(&f.ref)) {
      std::size_t pos = 0;
      const double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      **pd = v;
    } else if (auto pb = std::get_if<bool*>(&f.ref)) {
      if (value == "true")
        **pb = true;
      else if (value == "false")
        **pb = false;
      else
        throw std::invalid_argument("boolean");
    } else if (auto ps = std::get_if<std::string*>(&f.ref)) {
      **ps = value;
    } else if (auto pu = std::get_if<std::uint64_t*>(&f.ref)) {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      **pu = v;
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("config: cannot parse value '" + value + "' for " + where);
  }
}

std::string render(const Field& f) {
  if (auto pi = std::get_if<int*>(&f.ref)) return std::to_string(**pi);
  if (auto pd = std::get_if<double*>(&f.ref)) return format_double(**pd);
  if (auto pb = std::get_if<bool*>(&f.ref)) return **pb ? "true" : "false";
  if (auto ps = std::get_if<std::string*>(&f.ref)) return **ps;
  return std::to_string(**std::get_if<std::uint64_t*>(&f.ref));
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  auto fields = registry(cfg);
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config: malformed section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const Field& f : fields)
        if (section == f.section) known = true;
      if (!known) throw std::invalid_argument("config: unknown section '" + section + "'");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    if (section.empty()) throw std::invalid_argument("config: key '" + key + "' before any [section]");
    bool matched = false;
    for (const Field& f : fields)
      if (section == f.section && key == f.key) {
        assign(f, line.substr(eq + 1));
        matched = true;
        break;
      }
    if (!matched) throw std::invalid_argument("config: unknown key '" + section + "." + key + "'");
  }
  return cfg;
}

void Config::set(const std::string& dotted_key, const std::string& value) {
  const std::size_t dot = dotted_key.find('.');
  if (dot == std::string::npos)
    throw std::invalid_argument("config: --set expects section.key=value, got '" + dotted_key + "'");
  const std::string section = dotted_key.substr(0, dot);
  const std::string key = dotted_key.substr(dot + 1);
  auto fields = registry(*this);
  for (const Field& f : fields)
    if (section == f.section && key == f.key) {
      assign(f, value);
      return;
    }
  throw std::invalid_argument("config: unknown key '" + section + "." + key + "'");
}

std::string Config::serialize() const {
  Config& self = const_cast<Config&>(*this);
  auto fields = registry(self);
  std::string out;
  std::string section;
  for (const Field& f : fields) {
    if (section != f.section) {
      if (!out.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + render(f) + "\n";
  }
  return out;
}

void Config::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (numerics.precision != "f64")
    fail("numerics.precision '" + numerics.precision + "' is not supported, only f64 is implemented");
  if (augment.crop < 4) fail("augment.crop must be at least 4");
  auto prob = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) fail(std::string(name) + " must lie in [0,1]");
  };
  prob(augment.hflip_p, "augment.hflip_p");
  prob(augment.blur_p, "augment.blur_p");
  prob(augment.jitter_p, "augment.jitter_p");
  prob(augment.grayscale_p, "augment.grayscale_p");
  prob(data.beneath_tree_p, "data.beneath_tree_p");
  if (!(augment.blur_sigma_min > 0.0 && augment.blur_sigma_max >= augment.blur_sigma_min))
    fail("augment blur sigma range invalid");
  if (!(augment.jitter_strength >= 0.0 && augment.jitter_strength < 1.0))
    fail("augment.jitter_strength must lie in [0,1)");
  if (!(augment.hue_max >= 0.0 && augment.hue_max <= 0.5)) fail("augment.hue_max must lie in [0,0.5]");
  parse_widths(model.widths);
  if (model.hidden_dim < 1 || model.embed_dim < 1) fail("model head dimensions must be positive");
  if (!(model.momentum >= 0.0 && model.momentum <= 1.0)) fail("model.momentum must lie in [0,1]");
  if (!(contrast.lambda >= 0.0)) fail("contrast.lambda must be non-negative");
  if (!(contrast.tau_q > 0.0 && contrast.tau_g > 0.0)) fail("temperatures must be positive");
  if (contrast.clusters < 1) fail("contrast.clusters must be positive");
  if (contrast.queue < 1) fail("contrast.queue must be positive");
  if (contrast.kmeans != "spherical" && contrast.kmeans != "euclidean")
    fail("contrast.kmeans must be 'spherical' or 'euclidean'");
  if (contrast.kmeans_iters < 1) fail("contrast.kmeans_iters must be positive");
  if (data.mosaics < 3) fail("data.mosaics must be at least 3");
  if (data.mosaic_size < 32) fail("data.mosaic_size must be at least 32");
  if (data.animals_min < 0 || data.animals_max < data.animals_min)
    fail("data animal counts must satisfy 0 <= animals_min <= animals_max");
  if (data.pre_patch < augment.crop) fail("data.pre_patch must be at least augment.crop");
  if (data.pre_patch > data.mosaic_size || data.lt_bg_patch > data.mosaic_size ||
      data.lt_fg_patch > data.mosaic_size)
    fail("patch sizes must not exceed data.mosaic_size");
  if (data.lt_bg_patch < 1 || data.lt_fg_patch < 1) fail("patch sizes must be positive");
  if (data.train_fg < 1 || data.val_fg < 1 || data.test_fg < 1) fail("split targets must be positive");
  if (data.bg_per_fg < 1 || data.max_crops_per_animal < 1) fail("data ratios must be positive");
  if (train.epochs < 1 || train.batch < 1) fail("train.epochs and train.batch must be positive");
  if (contrast.cld && contrast.lambda != 0.0 && train.batch < contrast.clusters)
    fail("train.batch must be at least contrast.clusters when the group loss is active");
  if (!(train.lr >= 0.0)) fail("train.lr must be non-negative");
  if (!(train.sgd_momentum >= 0.0 && train.sgd_momentum < 1.0)) fail("train.sgd_momentum must lie in [0,1)");
  if (!(train.weight_decay >= 0.0)) fail("train.weight_decay must be non-negative");
  if (train.views != "controlled" && train.views != "independent")
    fail("train.views must be 'controlled' or 'independent'");
  if (train.views == "controlled" && !augment.rotation)
    fail("train.views=controlled requires augment.rotation=true");
  if (!(eval.probe_lr >= 0.0 && eval.ft_lr >= 0.0)) fail("eval learning rates must be non-negative");
  if (eval.probe_epochs < 1 || eval.ft_epochs < 1 || eval.probe_batch < 1 || eval.ft_batch < 1)
    fail("eval epochs and batch sizes must be positive");
  if (!(eval.sgd_momentum >= 0.0 && eval.sgd_momentum < 1.0)) fail("eval.sgd_momentum must lie in [0,1)");
  if (!(eval.weight_decay >= 0.0)) fail("eval.weight_decay must be non-negative");
  if (eval.input < 0) fail("eval.input must be non-negative");
}

void apply_preset(Config& cfg, const std::string& name) {
  if (name == "mcc0") {
    cfg.contrast.cld = false;
    cfg.contrast.lambda = 0.0;
    cfg.augment.rotation = false;
    cfg.train.views = "independent";
  } else if (name == "mcc1") {
    cfg.contrast.cld = true;
    cfg.contrast.lambda = 0.25;
    cfg.augment.rotation = false;
    cfg.train.views = "independent";
  } else if (name == "mcc2") {
    cfg.contrast.cld = true;
    cfg.contrast.lambda = 0.25;
    cfg.augment.rotation = true;
    cfg.train.views = "controlled";
  } else {
    throw std::invalid_argument("config: unknown preset '" + name + "', expected mcc0|mcc1|mcc2");
  }
}

std::vector<std::size_t> parse_widths(const std::string& widths) {
  std::vector<std::size_t> out;
  std::string cur;
  for (char ch : widths + ",") {
    if (ch == ',') {
      if (cur.empty()) throw std::invalid_argument("config: empty entry in model.widths '" + widths + "'");
      std::size_t pos = 0;
      int v = 0;
      try {
        v = std::stoi(cur, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != cur.size() || v < 1)
        throw std::invalid_argument("config: model.widths entry '" + cur + "' is not a positive integer");
      out.push_back(static_cast<std::size_t>(v));
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (out.empty()) throw std::invalid_argument("config: model.widths must list at least one width");
  return out;
}

AugPolicy aug_policy(const Config& cfg) {
  AugPolicy p;
  p.crop = cfg.augment.crop;
  p.base = true;
  p.color = true;
  p.rotation = cfg.augment.rotation;
  p.rotation_includes_identity = cfg.augment.rotation_includes_identity;
  p.hflip_p = cfg.augment.hflip_p;
  p.blur_p = cfg.augment.blur_p;
  p.blur_sigma_min = cfg.augment.blur_sigma_min;
  p.blur_sigma_max = cfg.augment.blur_sigma_max;
  p.jitter_p = cfg.augment.jitter_p;
  p.jitter_strength = cfg.augment.jitter_strength;
  p.hue_max = cfg.augment.hue_max;
  p.grayscale_p = cfg.augment.grayscale_p;
  return p;
}

LossConfig loss_config(const Config& cfg) {
  LossConfig lc;
  lc.tau_q = cfg.contrast.tau_q;
  lc.tau_g = cfg.contrast.tau_g;
  lc.lambda = cfg.contrast.lambda;
  lc.clusters = static_cast<std::size_t>(cfg.contrast.clusters);
  lc.kmeans_iters = static_cast<std::size_t>(cfg.contrast.kmeans_iters);
  lc.metric = cfg.contrast.kmeans == "euclidean" ? KmeansMetric::euclidean : KmeansMetric::spherical;
  lc.cld = cfg.contrast.cld;
  return lc;
}

ModelConfig model_config(const Config& cfg) {
  ModelConfig mc;
  mc.encoder.widths = parse_widths(cfg.model.widths);
  mc.hidden_dim = static_cast<std::size_t>(cfg.model.hidden_dim);
  mc.embed_dim = static_cast<std::size_t>(cfg.model.embed_dim);
  return mc;
}

MosaicSpec mosaic_spec(const Config& cfg) {
  MosaicSpec ms;
  ms.size = cfg.data.mosaic_size;
  ms.animals_min = cfg.data.animals_min;
  ms.animals_max = cfg.data.animals_max;
  ms.beneath_tree_p = cfg.data.beneath_tree_p;
  return ms;
}

LtParams lt_params(const Config& cfg) {
  LtParams lt;
  lt.bg_patch = cfg.data.lt_bg_patch;
  lt.fg_patch = cfg.data.lt_fg_patch;
  lt.train_fg = cfg.data.train_fg;
  lt.val_fg = cfg.data.val_fg;
  lt.test_fg = cfg.data.test_fg;
  lt.bg_per_fg = cfg.data.bg_per_fg;
  lt.max_crops_per_animal = cfg.data.max_crops_per_animal;
  return lt;
}

SgdConfig train_sgd(const Config& cfg) { return {cfg.train.sgd_momentum, cfg.train.weight_decay}; }
SgdConfig eval_sgd(const Config& cfg) { return {cfg.eval.sgd_momentum, cfg.eval.weight_decay}; }

}  // namespace kwd
