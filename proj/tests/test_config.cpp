#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <stdexcept>
#include <string>
#include <vector>

#include "kwd/config.hpp"

using namespace kwd;

TEST_CASE("defaults validate and serialization is a fixed point") {
  const Config cfg = Config::defaults();
  CHECK_NOTHROW(cfg.validate());
  const std::string text = cfg.serialize();
  const Config back = Config::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back == cfg);
}

TEST_CASE("parse tolerates comments and rejects anything unknown") {
  const Config cfg = Config::parse(
      "# leading comment\n"
      "[train]\n"
      "epochs = 5   ; trailing comment\n"
      "\n"
      "  [model]  \n"
      "widths = 4, 8\n");
  CHECK(cfg.train.epochs == 5);
  CHECK(parse_widths(cfg.model.widths) == std::vector<std::size_t>{4, 8});
  CHECK(cfg.train.batch == 64);  // untouched keys keep defaults

  CHECK_THROWS_WITH_AS(Config::parse("[nope]\n"), doctest::Contains("unknown section"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(Config::parse("[train]\nnope = 1\n"), doctest::Contains("unknown key"),
                       std::invalid_argument);
  CHECK_THROWS_AS(Config::parse("epochs = 5\n"), std::invalid_argument);    // key before section
  CHECK_THROWS_AS(Config::parse("[train\n"), std::invalid_argument);        // malformed header
  CHECK_THROWS_AS(Config::parse("[train]\nepochs\n"), std::invalid_argument);
  CHECK_THROWS_AS(Config::parse("[train]\nepochs = five\n"), std::invalid_argument);
  CHECK_THROWS_AS(Config::parse("[train]\nepochs = 5x\n"), std::invalid_argument);
  CHECK_THROWS_AS(Config::parse("[contrast]\ncld = yes\n"), std::invalid_argument);
}

TEST_CASE("set covers every value kind") {
  Config cfg;
  cfg.set("train.epochs", "12");
  CHECK(cfg.train.epochs == 12);
  cfg.set("train.lr", "0.125");
  CHECK(cfg.train.lr == 0.125);
  cfg.set("contrast.cld", "false");
  CHECK_FALSE(cfg.contrast.cld);
  cfg.set("model.widths", "2,4,6");
  CHECK(cfg.model.widths == "2,4,6");
  cfg.set("train.seed", "18446744073709551615");
  CHECK(cfg.train.seed == 18446744073709551615ull);

  CHECK_THROWS_AS(cfg.set("train.nope", "1"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("nodot", "1"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("train.epochs", ""), std::invalid_argument);
}

TEST_CASE("validate rejects out-of-range settings") {
  auto broken = [](auto&& tweak) {
    Config cfg;
    tweak(cfg);
    return cfg;
  };
  auto rejects = [&](auto&& tweak, const char* fragment) {
    const Config cfg = broken(tweak);
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains(fragment), std::invalid_argument);
  };

  rejects([](Config& c) { c.numerics.precision = "f32"; }, "only f64");
  rejects([](Config& c) { c.augment.crop = 3; }, "augment.crop");
  rejects([](Config& c) { c.augment.hflip_p = 1.5; }, "hflip_p");
  rejects([](Config& c) { c.augment.blur_sigma_min = 0.0; }, "sigma");
  rejects([](Config& c) { c.augment.blur_sigma_max = 0.05; }, "sigma");
  rejects([](Config& c) { c.augment.jitter_strength = 1.0; }, "jitter_strength");
  rejects([](Config& c) { c.augment.hue_max = 0.6; }, "hue_max");
  rejects([](Config& c) { c.model.widths = "4,x"; }, "widths");
  rejects([](Config& c) { c.model.widths = "0"; }, "widths");
  rejects([](Config& c) { c.model.hidden_dim = 0; }, "head dimensions");
  rejects([](Config& c) { c.model.momentum = 1.5; }, "momentum");
  rejects([](Config& c) { c.contrast.lambda = -0.1; }, "lambda");
  rejects([](Config& c) { c.contrast.tau_q = 0.0; }, "temperatures");
  rejects([](Config& c) { c.contrast.clusters = 0; }, "clusters");
  rejects([](Config& c) { c.contrast.queue = 0; }, "queue");
  rejects([](Config& c) { c.contrast.kmeans = "manhattan"; }, "kmeans");
  rejects([](Config& c) { c.contrast.kmeans_iters = 0; }, "kmeans_iters");
  rejects([](Config& c) { c.data.mosaics = 2; }, "mosaics");
  rejects([](Config& c) { c.data.mosaic_size = 16; }, "mosaic_size");
  rejects([](Config& c) { c.data.animals_min = 7; }, "animals_min");
  rejects([](Config& c) { c.data.pre_patch = 10; }, "pre_patch");
  rejects([](Config& c) { c.data.lt_bg_patch = 400; }, "mosaic_size");
  rejects([](Config& c) { c.train.epochs = 0; }, "train.epochs");
  rejects([](Config& c) { c.train.batch = 4; }, "clusters");  // batch < clusters with group loss on
  rejects([](Config& c) { c.train.lr = -1.0; }, "train.lr");
  rejects([](Config& c) { c.train.sgd_momentum = 1.0; }, "sgd_momentum");
  rejects([](Config& c) { c.train.views = "mixed"; }, "views");
  rejects([](Config& c) { c.augment.rotation = false; }, "rotation");  // controlled views need it
  rejects([](Config& c) { c.eval.probe_lr = -1.0; }, "learning rates");
  rejects([](Config& c) { c.eval.input = -1; }, "input");

  // Small batches are fine once the group loss is off.
  Config cfg;
  cfg.contrast.cld = false;
  cfg.train.batch = 4;
  CHECK_NOTHROW(cfg.validate());
  cfg.contrast.cld = true;
  cfg.contrast.lambda = 0.0;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("presets configure the three training variants") {
  Config m0;
  apply_preset(m0, "mcc0");
  CHECK_FALSE(m0.contrast.cld);
  CHECK(m0.contrast.lambda == 0.0);
  CHECK_FALSE(m0.augment.rotation);
  CHECK(m0.train.views == "independent");
  CHECK_NOTHROW(m0.validate());

  Config m1;
  apply_preset(m1, "mcc1");
  CHECK(m1.contrast.cld);
  CHECK(m1.contrast.lambda == 0.25);
  CHECK_FALSE(m1.augment.rotation);
  CHECK(m1.train.views == "independent");
  CHECK_NOTHROW(m1.validate());

  Config m2;
  apply_preset(m2, "mcc2");
  CHECK(m2.contrast.cld);
  CHECK(m2.contrast.lambda == 0.25);
  CHECK(m2.augment.rotation);
  CHECK(m2.train.views == "controlled");
  CHECK_NOTHROW(m2.validate());

  CHECK_THROWS_AS(apply_preset(m2, "mcc3"), std::invalid_argument);
}

TEST_CASE("typed views mirror the raw settings") {
  Config cfg;
  cfg.model.widths = "8,16,32";
  cfg.model.hidden_dim = 20;
  cfg.model.embed_dim = 12;
  cfg.contrast.tau_q = 0.3;
  cfg.contrast.tau_g = 0.5;
  cfg.contrast.lambda = 0.7;
  cfg.contrast.clusters = 5;
  cfg.contrast.kmeans_iters = 7;
  cfg.contrast.kmeans = "euclidean";
  cfg.data.mosaic_size = 100;
  cfg.data.animals_min = 2;
  cfg.data.animals_max = 4;
  cfg.data.train_fg = 30;
  cfg.train.sgd_momentum = 0.8;
  cfg.train.weight_decay = 0.001;

  CHECK(parse_widths(cfg.model.widths) == std::vector<std::size_t>{8, 16, 32});

  const ModelConfig mc = model_config(cfg);
  CHECK(mc.encoder.widths == std::vector<std::size_t>{8, 16, 32});
  CHECK(mc.hidden_dim == 20);
  CHECK(mc.embed_dim == 12);

  const LossConfig lc = loss_config(cfg);
  CHECK(lc.tau_q == 0.3);
  CHECK(lc.tau_g == 0.5);
  CHECK(lc.lambda == 0.7);
  CHECK(lc.clusters == 5);
  CHECK(lc.kmeans_iters == 7);
  CHECK(lc.metric == KmeansMetric::euclidean);
  CHECK(lc.cld);

  const MosaicSpec ms = mosaic_spec(cfg);
  CHECK(ms.size == 100);
  CHECK(ms.animals_min == 2);
  CHECK(ms.animals_max == 4);

  const LtParams lt = lt_params(cfg);
  CHECK(lt.train_fg == 30);
  CHECK(lt.bg_per_fg == 18);
  CHECK(lt.fg_patch == 48);

  const SgdConfig ts = train_sgd(cfg);
  CHECK(ts.momentum == 0.8);
  CHECK(ts.weight_decay == 0.001);
  const SgdConfig es = eval_sgd(cfg);
  CHECK(es.momentum == 0.9);
  CHECK(es.weight_decay == 0.0);

  const AugPolicy ap = aug_policy(cfg);
  CHECK(ap.crop == cfg.augment.crop);
  CHECK(ap.rotation == cfg.augment.rotation);
  CHECK(ap.hue_max == cfg.augment.hue_max);
}
