#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwd/augment.hpp"
#include "kwd/contrast.hpp"
#include "kwd/dataset.hpp"
#include "kwd/model.hpp"
#include "kwd/mosaic.hpp"
#include "kwd/optim.hpp"

namespace kwd {

// Flat `[section] key = value` configuration. Unknown sections or keys are
// rejected; serialization is canonical, so echo -> parse -> echo is a fixed
// point and equality can compare the serialized form.
struct Config {
  struct {
    std::string precision = "f64";
  } numerics;

  struct {
    int crop = 24;
    double hflip_p = 0.5;
    double blur_p = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double jitter_p = 0.8;
    double jitter_strength = 0.4;
    double hue_max = 0.1;
    double grayscale_p = 0.2;
    bool rotation = true;
    bool rotation_includes_identity = true;
  } augment;

  struct {
    std::string widths = "16,32,64";
    int hidden_dim = 128;
    int embed_dim = 32;
    double momentum = 0.999;
  } model;

  struct {
    bool cld = true;
    double lambda = 0.25;
    double tau_q = 0.2;
    double tau_g = 0.4;
    int clusters = 8;
    int queue = 512;
    std::string kmeans = "spherical";
    int kmeans_iters = 10;
  } contrast;

  struct {
    int mosaics = 72;
    int mosaic_size = 192;
    int animals_min = 0;
    int animals_max = 6;
    double beneath_tree_p = 0.3;
    int pre_patch = 64;
    int lt_bg_patch = 64;
    int lt_fg_patch = 48;
    int train_fg = 160;
    int val_fg = 40;
    int test_fg = 40;
    int bg_per_fg = 18;
    int max_crops_per_animal = 4;
  } data;

  struct {
    int epochs = 100;
    int batch = 64;
    double lr = 0.06;
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    std::string views = "controlled";
    std::uint64_t seed = 1;
  } train;

  struct {
    double probe_lr = 30.0;
    int probe_epochs = 100;
    int probe_batch = 64;
    double ft_lr = 0.01;
    int ft_epochs = 30;
    int ft_batch = 64;
    double sgd_momentum = 0.9;
    double weight_decay = 0.0;
    int input = 0;  // center-crop side for evaluation features; 0 = full patch
  } eval;

  static Config defaults() { return Config{}; }
  static Config parse(const std::string& text);

  void set(const std::string& dotted_key, const std::string& value);
  std::string serialize() const;
  // Range and cross-field checks; throws std::invalid_argument.
  void validate() const;

  bool operator==(const Config& o) const { return serialize() == o.serialize(); }
};

// Table 2 presets: mcc0 = momentum contrast only, mcc1 adds the group loss,
// mcc2 adds rotation with controlled view construction.
void apply_preset(Config& cfg, const std::string& name);

// Typed views used by the pipeline.
AugPolicy aug_policy(const Config& cfg);
LossConfig loss_config(const Config& cfg);
ModelConfig model_config(const Config& cfg);
MosaicSpec mosaic_spec(const Config& cfg);
LtParams lt_params(const Config& cfg);
SgdConfig train_sgd(const Config& cfg);
SgdConfig eval_sgd(const Config& cfg);
std::vector<std::size_t> parse_widths(const std::string& widths);

}  // namespace kwd
