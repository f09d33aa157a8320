#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kwd/augment.hpp"
#include "kwd/checkpoint.hpp"
#include "kwd/config.hpp"
#include "kwd/pipeline.hpp"
#include "kwd/rng.hpp"

using namespace kwd;

namespace {

Config tiny_config() {
  Config cfg;
  cfg.model.widths = "4,8";
  cfg.model.hidden_dim = 10;
  cfg.model.embed_dim = 6;
  cfg.augment.crop = 16;
  cfg.data.pre_patch = 24;
  cfg.train.epochs = 2;
  cfg.train.batch = 16;
  cfg.train.lr = 0.05;
  cfg.train.seed = 7;
  cfg.contrast.queue = 32;
  cfg.contrast.clusters = 4;
  cfg.validate();
  return cfg;
}

PatchSet noise_patches(std::size_t n, int side, std::uint64_t seed) {
  PatchSet ps;
  ps.patch = side;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Image im(side, side);
    for (double& v : im.px) v = rng.uniform();
    ps.patches.push_back(std::move(im));
    PatchRef r;
    r.split = "pre";
    r.path = "pre/p" + std::to_string(i) + ".ppm";
    ps.recs.push_back(r);
  }
  return ps;
}

std::filesystem::path scratch(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / "kwd-pipeline-tests";
  std::filesystem::create_directories(dir);
  return dir / leaf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool params_bitwise_equal(Model& a, Model& b) {
  auto pa = a.trainable_params();
  auto pb = b.trainable_params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].value->data.size() != pb[i].value->data.size()) return false;
    if (std::memcmp(pa[i].value->data.data(), pb[i].value->data.data(),
                    pa[i].value->data.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

// Black patches produce exactly-zero features (convolution biases start at
// zero), white ones do not, so a linear probe must separate them.
LabeledDataset separable_dataset(int per_class_train, int per_class_test, int side) {
  LabeledDataset ds;
  auto add = [&](int label, const std::string& split, int i) {
    const double v = label == 1 ? 1.0 : 0.0;
    ds.patches.push_back(Image::filled(side, side, v, v, v));
    PatchRef r;
    r.path = split + "/p" + std::to_string(label) + "_" + std::to_string(i) + ".ppm";
    r.label = label;
    r.split = split;
    ds.recs.push_back(r);
  };
  for (int i = 0; i < per_class_train; ++i) {
    add(0, "train", i);
    add(1, "train", i);
  }
  for (int i = 0; i < per_class_test; ++i) {
    add(0, "test", i);
    add(1, "test", i);
  }
  return ds;
}

}  // namespace

TEST_CASE("train state survives a save/load/save cycle byte-identically") {
  const Config cfg = tiny_config();
  const PatchSet data = noise_patches(64, 24, 100);
  TrainState st(cfg);
  std::ostringstream log;
  pretrain(st, data, 1, &log);

  const auto p1 = scratch("state_a.ckpt");
  const auto p2 = scratch("state_b.ckpt");
  save_train_state(st, p1.string());
  TrainState back = load_train_state(p1.string());
  save_train_state(back, p2.string());
  CHECK(slurp(p1) == slurp(p2));

  CHECK(back.epoch == st.epoch);
  CHECK(back.cfg == st.cfg);
  CHECK(params_bitwise_equal(back.model, st.model));
  REQUIRE(back.queue.size() == st.queue.size());
  const Tensor qa = st.queue.contents();
  const Tensor qb = back.queue.contents();
  CHECK(std::memcmp(qa.data.data(), qb.data.data(), qa.data.size() * sizeof(double)) == 0);

  // A checkpoint carrying an unrecognized parameter is rejected.
  Checkpoint ck = load_checkpoint_file(p1.string());
  ck.put_tensor("q/bogus.weight", Tensor({1}, {0.0}));
  const auto p3 = scratch("state_c.ckpt");
  save_checkpoint_file(p3.string(), ck);
  CHECK_THROWS_WITH_AS(load_train_state(p3.string()),
                       doctest::Contains("unknown parameter"), std::runtime_error);
}

TEST_CASE("pretraining is deterministic and logs recomposable losses") {
  const Config cfg = tiny_config();
  const PatchSet data = noise_patches(64, 24, 100);

  std::ostringstream log1, log2;
  TrainState a(cfg), b(cfg);
  const PretrainStats sa = pretrain(a, data, 2, &log1);
  pretrain(b, data, 2, &log2);
  CHECK(sa.batches_run == 8);  // 64/16 batches, 2 epochs
  CHECK(log1.str() == log2.str());
  CHECK(params_bitwise_equal(a.model, b.model));
  CHECK(a.queue.full());

  std::istringstream lines(log1.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::size_t epoch, batch;
    std::string st, s1, s2, sg1, sg2, slr;
    REQUIRE((ls >> epoch >> batch >> st >> s1 >> s2 >> sg1 >> sg2 >> slr));
    const double total = std::strtod(st.c_str(), nullptr);
    const double i1 = std::strtod(s1.c_str(), nullptr);
    const double i2 = std::strtod(s2.c_str(), nullptr);
    const double g1 = std::strtod(sg1.c_str(), nullptr);
    const double g2 = std::strtod(sg2.c_str(), nullptr);
    double recomposed = 0.5 * (i1 + i2);
    recomposed += cfg.contrast.lambda * (0.5 * (g1 + g2));
    CHECK(recomposed == total);  // %.17g round-trips doubles exactly
    CHECK(epoch == count / 4);
    CHECK(batch == count % 4);
    ++count;
  }
  CHECK(count == 8);

  std::ostringstream ignored;
  TrainState c(cfg);
  CHECK_THROWS_AS(pretrain(c, data, 3, &ignored), std::invalid_argument);
  PatchSet small = noise_patches(8, 24, 2);
  CHECK_THROWS_AS(pretrain(c, small, 1, &ignored), std::invalid_argument);
}

TEST_CASE("interrupted training resumes bit-exactly") {
  const Config cfg = tiny_config();
  const PatchSet data = noise_patches(64, 24, 100);

  TrainState straight(cfg);
  pretrain(straight, data, 2, nullptr);

  TrainState half(cfg);
  pretrain(half, data, 1, nullptr);
  const auto mid = scratch("mid.ckpt");
  save_train_state(half, mid.string());
  TrainState resumed = load_train_state(mid.string());
  pretrain(resumed, data, 2, nullptr);

  CHECK(params_bitwise_equal(straight.model, resumed.model));
  const auto pa = scratch("straight.ckpt");
  const auto pb = scratch("resumed.ckpt");
  save_train_state(straight, pa.string());
  save_train_state(resumed, pb.string());
  CHECK(slurp(pa) == slurp(pb));
}

TEST_CASE("disabling the group loss and zeroing its weight coincide") {
  const PatchSet data = noise_patches(64, 24, 100);
  Config on = tiny_config();
  on.contrast.cld = true;
  on.contrast.lambda = 0.0;
  Config off = tiny_config();
  off.contrast.cld = false;
  off.contrast.lambda = 0.25;

  std::ostringstream log_on, log_off;
  TrainState a(on), b(off);
  pretrain(a, data, 2, &log_on);
  pretrain(b, data, 2, &log_off);
  CHECK(log_on.str() == log_off.str());
  CHECK(params_bitwise_equal(a.model, b.model));

  std::istringstream lines(log_on.str());
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string epoch, batch, total, i1, i2, g1, g2;
    ls >> epoch >> batch >> total >> i1 >> i2 >> g1 >> g2;
    CHECK(g1 == "0");
    CHECK(g2 == "0");
  }
}

TEST_CASE("the contrastive loss decreases on structured data") {
  Config cfg = tiny_config();
  cfg.train.epochs = 6;
  const MosaicSpec spec = [] {
    MosaicSpec s;
    s.size = 96;
    s.animals_min = 1;
    s.animals_max = 3;
    return s;
  }();
  const std::vector<Mosaic> mosaics = generate_mosaics(spec, 4, 12);
  Rng rng(13);
  const PatchSet data = extract_pre(mosaics, 24, rng);  // 120 patches

  std::ostringstream log;
  TrainState st(cfg);
  pretrain(st, data, 6, &log);

  std::istringstream lines(log.str());
  std::string line;
  std::vector<double> totals;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::size_t e, b;
    double t;
    ls >> e >> b >> t;
    totals.push_back(t);
  }
  REQUIRE(totals.size() == 6 * (120 / 16));
  const std::size_t nb = 120 / 16;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < nb; ++i) {
    first += totals[i];
    last += totals[totals.size() - nb + i];
  }
  CHECK(last / nb < first / nb);
}

TEST_CASE("feature extraction honors the center-crop setting") {
  const Config cfg = tiny_config();
  Model model(model_config(cfg), 5);
  Rng rng(6);
  Image im(30, 30);
  for (double& v : im.px) v = rng.uniform();

  const Tensor full = backbone_features(model, {center_crop(im, 16)}, 0);
  const Tensor cropped = backbone_features(model, {im}, 16);
  REQUIRE(full.data.size() == cropped.data.size());
  CHECK(std::memcmp(full.data.data(), cropped.data.data(), full.data.size() * sizeof(double)) == 0);

  // Mixed sizes are grouped internally; order is preserved.
  Image im2(24, 24);
  for (double& v : im2.px) v = rng.uniform();
  const Tensor pair = backbone_features(model, {im, im2}, 16);
  const Tensor second = backbone_features(model, {im2}, 16);
  const std::size_t s = pair.shape[1];
  for (std::size_t j = 0; j < s; ++j) CHECK(pair.data[s + j] == second.data[j]);

  CHECK_THROWS_AS(backbone_features(model, {}, 0), std::invalid_argument);
}

TEST_CASE("a linear probe separates trivially separable data") {
  Config cfg = tiny_config();
  cfg.eval.probe_lr = 1.0;
  cfg.eval.probe_epochs = 100;
  cfg.eval.probe_batch = 8;
  cfg.eval.input = 0;
  const LabeledDataset ds = separable_dataset(10, 4, 24);
  Model model(model_config(cfg), 3);

  const ProbeResult res = linear_probe(model, ds, 1.0, cfg, 17);
  CHECK(res.train.accuracy == 1.0);
  CHECK(res.test.accuracy == 1.0);
  CHECK(res.clf_weight.shape[0] == 2);
  CHECK(res.clf_bias.shape[0] == 2);

  // Same seed, same result.
  Model model2(model_config(cfg), 3);
  const ProbeResult res2 = linear_probe(model2, ds, 1.0, cfg, 17);
  CHECK(res2.test.tp == res.test.tp);
  CHECK(res2.test.tn == res.test.tn);
  CHECK(std::memcmp(res2.clf_weight.data.data(), res.clf_weight.data.data(),
                    res.clf_weight.data.size() * sizeof(double)) == 0);

  // Single-class training data is rejected.
  LabeledDataset one_class = ds;
  for (auto& r : one_class.recs)
    if (r.split == "train") r.label = 1;
  CHECK_THROWS_AS(linear_probe(model, one_class, 1.0, cfg, 17), std::invalid_argument);
}

TEST_CASE("finetuning with zero learning rate leaves everything in place") {
  Config cfg = tiny_config();
  cfg.eval.ft_lr = 0.0;
  cfg.eval.ft_epochs = 2;
  cfg.eval.ft_batch = 8;
  const LabeledDataset ds = separable_dataset(6, 3, 24);

  Model model(model_config(cfg), 9);
  Model untouched(model_config(cfg), 9);
  const ProbeResult res = finetune(model, ds, 1.0, cfg, 23);
  CHECK(params_bitwise_equal(model, untouched));

  // The classifier never moved either, so its metrics match a fresh
  // He-initialized classifier evaluated directly.
  Linear clf("classifier", model.feature_dim(), 2);
  Rng rng = derive_rng(23, {tag("probe-init")});
  he_init(clf, rng);
  const Metrics direct = evaluate_classifier(untouched, clf.weight, clf.bias, ds, "test", cfg);
  CHECK(res.test.tp == direct.tp);
  CHECK(res.test.fp == direct.fp);
  CHECK(res.test.fn == direct.fn);
  CHECK(res.test.tn == direct.tn);
  CHECK(std::memcmp(res.clf_weight.data.data(), clf.weight.data.data(),
                    clf.weight.data.size() * sizeof(double)) == 0);
}

TEST_CASE("finetuning with a real learning rate separates the toy classes") {
  Config cfg = tiny_config();
  cfg.eval.ft_lr = 0.01;
  cfg.eval.ft_epochs = 10;
  cfg.eval.ft_batch = 8;
  const LabeledDataset ds = separable_dataset(6, 3, 24);
  Model model(model_config(cfg), 9);
  const ProbeResult res = finetune(model, ds, 1.0, cfg, 23);
  CHECK(res.train.accuracy == 1.0);
  CHECK(res.test.accuracy == 1.0);
}

TEST_CASE("a constant classifier predicts one class everywhere") {
  const Config cfg = tiny_config();
  Model model(model_config(cfg), 4);
  const LabeledDataset ds = separable_dataset(0, 5, 24);  // 5 fg + 5 bg test patches
  const std::size_t s = model.feature_dim();
  Tensor w({2, s});
  Tensor b({2}, {0.0, 1.0});
  const Metrics m = evaluate_classifier(model, w, b, ds, "test", cfg);
  CHECK(m.tp == 5);
  CHECK(m.fp == 5);
  CHECK(m.tn == 0);
  CHECK(m.fn == 0);
  CHECK(m.accuracy == 0.5);

  Tensor bad({3, s});
  CHECK_THROWS_AS(evaluate_classifier(model, bad, b, ds, "test", cfg), std::invalid_argument);
}

TEST_CASE("embedding export writes one labeled row per patch") {
  const Config cfg = tiny_config();
  Model model(model_config(cfg), 2);
  const LabeledDataset ds = separable_dataset(3, 2, 24);
  std::ostringstream out;
  export_embeddings(model, ds, cfg, out);

  std::istringstream lines(out.str());
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line == "#kwd-embeddings v1,dim=" + std::to_string(model.feature_dim()));
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    const auto c1 = line.find(',');
    REQUIRE(c1 != std::string::npos);
    const auto c2 = line.find(',', c1 + 1);
    REQUIRE(c2 != std::string::npos);
    CHECK(line.substr(0, c1) == ds.recs[rows].path);
    CHECK(line.substr(c1 + 1, c2 - c1 - 1) == std::to_string(ds.recs[rows].label));
    ++rows;
  }
  CHECK(rows == ds.recs.size());

  LabeledDataset empty;
  CHECK_THROWS_AS(export_embeddings(model, empty, cfg, out), std::invalid_argument);
}
