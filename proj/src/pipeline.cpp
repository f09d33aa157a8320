#include "kwd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "kwd/augment.hpp"

namespace kwd {

TrainState::TrainState(const Config& c)
    : cfg(c),
      model(model_config(c), c.train.seed),
      queue(static_cast<std::size_t>(c.contrast.queue), model_config(c).embed_dim),
      opt() {
  cfg.validate();
  opt = SgdState(model.trainable_params());
}

// ------------------------------------------------------------- checkpoint

void save_train_state(const TrainState& st, const std::string& path) {
  Checkpoint ck;
  ck.put_string("meta/config", st.cfg.serialize());
  ck.put_u64("meta/seed", st.cfg.train.seed);
  ck.put_u64("meta/epoch", st.epoch);

  TrainState& mut = const_cast<TrainState&>(st);
  for (const ParamView& p : mut.model.trainable_params()) ck.put_tensor("q/" + p.name, *p.value);
  for (const ParamView& p : mut.model.key_params()) ck.put_tensor("k/" + p.name, *p.value);
  {
    auto params = mut.model.trainable_params();
    for (std::size_t i = 0; i < params.size(); ++i) ck.put_tensor("v/" + params[i].name, mut.opt.velocity(i));
  }
  ck.put_f64_vector("queue/storage", st.queue.storage());
  ck.put_u64("queue/cursor", st.queue.cursor());
  ck.put_u64("queue/fill", st.queue.size());
  save_checkpoint_file(path, ck);
}

TrainState load_train_state(const std::string& path) {
  const Checkpoint ck = load_checkpoint_file(path);
  Config cfg = Config::parse(ck.get_string("meta/config"));
  TrainState st(cfg);
  st.epoch = static_cast<std::size_t>(ck.get_u64("meta/epoch"));

  std::vector<std::string> expected = {"meta/config", "meta/seed", "meta/epoch",
                                       "queue/storage", "queue/cursor", "queue/fill"};
  auto load_group = [&](const std::string& prefix, const std::vector<ParamView>& params) {
    for (const ParamView& p : params) {
      Tensor t = ck.get_tensor(prefix + p.name);
      if (t.shape != p.value->shape)
        throw std::runtime_error("checkpoint: shape mismatch for " + prefix + p.name);
      *p.value = std::move(t);
      expected.push_back(prefix + p.name);
    }
  };
  load_group("q/", st.model.trainable_params());
  load_group("k/", st.model.key_params());
  {
    auto params = st.model.trainable_params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = ck.get_tensor("v/" + params[i].name);
      if (t.shape != st.opt.velocity(i).shape)
        throw std::runtime_error("checkpoint: shape mismatch for v/" + params[i].name);
      st.opt.velocity(i) = std::move(t);
      expected.push_back("v/" + params[i].name);
    }
  }
  st.queue.restore(ck.get_f64_vector("queue/storage"), static_cast<std::size_t>(ck.get_u64("queue/cursor")),
                   static_cast<std::size_t>(ck.get_u64("queue/fill")));
  for (const CkptRecord& r : ck.records)
    if (std::find(expected.begin(), expected.end(), r.name) == expected.end())
      throw std::runtime_error("checkpoint: unknown parameter name '" + r.name + "'");
  return st;
}

// --------------------------------------------------------------- pretrain

namespace {

struct BatchViews {
  Tensor v1, v2, vplus;
};

BatchViews build_views(const PatchSet& data, const std::vector<std::size_t>& idxs, const Config& cfg,
                       std::size_t epoch) {
  const AugPolicy policy = aug_policy(cfg);
  const bool controlled = cfg.train.views == "controlled";
  std::vector<Image> i1, i2, ip;
  i1.reserve(idxs.size());
  i2.reserve(idxs.size());
  ip.reserve(idxs.size());
  for (std::size_t idx : idxs) {
    Rng rng = derive_rng(cfg.train.seed, {tag("views"), epoch, idx});
    ViewTriplet t = controlled ? make_controlled_views(data.patches[idx], policy, rng)
                               : make_independent_views(data.patches[idx], policy, rng);
    i1.push_back(std::move(t.v1));
    i2.push_back(std::move(t.v2));
    ip.push_back(std::move(t.vplus));
  }
  BatchViews out;
  out.v1 = batch_images(i1);
  out.v2 = batch_images(i2);
  out.vplus = batch_images(ip);
  return out;
}

void warmup_queue(TrainState& st, const PatchSet& data) {
  const Config& cfg = st.cfg;
  const AugPolicy policy = aug_policy(cfg);
  const std::size_t batch = static_cast<std::size_t>(cfg.train.batch);
  std::size_t i = 0;
  while (!st.queue.full() && i < data.patches.size()) {
    const std::size_t n = std::min(batch, data.patches.size() - i);
    std::vector<Image> views;
    views.reserve(n);
    for (std::size_t j = 0; j < n; ++j, ++i) {
      Rng rng = derive_rng(cfg.train.seed, {tag("warmup"), i});
      AugParams p = sample_params(rng, policy, data.patches[i].h, data.patches[i].w);
      views.push_back(apply(data.patches[i], p));
    }
    st.queue.push(st.model.encode_keys(batch_images(views)));
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(seed, {tag("order"), epoch});
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(order[i], order[j]);
  }
  return order;
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

PretrainStats pretrain(TrainState& st, const PatchSet& data, std::size_t until_epoch, std::ostream* loss_log) {
  const Config& cfg = st.cfg;
  cfg.validate();
  if (data.patches.empty()) throw std::invalid_argument("pretrain: empty patch set");
  if (data.patch < cfg.augment.crop)
    throw std::invalid_argument("pretrain: patch size " + std::to_string(data.patch) +
                                " smaller than augment.crop " + std::to_string(cfg.augment.crop));
  const std::size_t total_epochs = static_cast<std::size_t>(cfg.train.epochs);
  if (until_epoch > total_epochs)
    throw std::invalid_argument("pretrain: until_epoch " + std::to_string(until_epoch) +
                                " beyond configured train.epochs " + std::to_string(total_epochs));
  if (st.epoch > until_epoch) throw std::invalid_argument("pretrain: state is already past until_epoch");
  const std::size_t batch = static_cast<std::size_t>(cfg.train.batch);
  const std::size_t nb = data.patches.size() / batch;  // last partial batch dropped
  if (nb == 0)
    throw std::invalid_argument("pretrain: batch size " + std::to_string(batch) + " exceeds dataset of " +
                                std::to_string(data.patches.size()));
  const std::size_t total_steps = total_epochs * nb;
  const LossConfig lcfg = loss_config(cfg);
  const bool with_cld = lcfg.cld && lcfg.lambda != 0.0;
  const SgdConfig sgd = train_sgd(cfg);

  if (st.epoch == 0 && st.queue.size() == 0) warmup_queue(st, data);

  PretrainStats stats;
  auto trainables = st.model.trainable_params();
  for (std::size_t epoch = st.epoch; epoch < until_epoch; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(data.patches.size(), cfg.train.seed, epoch);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::vector<std::size_t> idxs(order.begin() + b * batch, order.begin() + (b + 1) * batch);
      const BatchViews views = build_views(data, idxs, cfg, epoch);

      Stack::Ctx ectx1, ectx2;
      const Tensor z1 = st.model.enc_q.forward(views.v1, ectx1);
      const Tensor z2 = st.model.enc_q.forward(views.v2, ectx2);
      Heads::Ctx hctx1, hctx2;
      st.model.heads_q.forward(z1, hctx1, with_cld);
      st.model.heads_q.forward(z2, hctx2, with_cld);
      const Tensor keys = st.model.encode_keys(views.vplus);

      Rng kmeans_rng = derive_rng(cfg.train.seed, {tag("kmeans"), epoch, b});
      const TotalLossResult tl = total_loss(hctx1.q, hctx2.q, keys, hctx1.g, hctx2.g, st.queue, lcfg, kmeans_rng);
      if (!std::isfinite(tl.total))
        throw std::runtime_error("pretrain: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(b));

      st.model.enc_q.zero_grads();
      st.model.heads_q.zero_grads();
      const Tensor dz1 = st.model.heads_q.backward(tl.grad_q1, tl.grad_g1, hctx1);
      const Tensor dz2 = st.model.heads_q.backward(tl.grad_q2, tl.grad_g2, hctx2);
      st.model.enc_q.backward(dz1, ectx1);
      st.model.enc_q.backward(dz2, ectx2);

      const double lr = cosine_lr(epoch * nb + b, total_steps, cfg.train.lr);
      st.opt.step(trainables, lr, sgd);
      st.model.momentum_step(cfg.model.momentum);
      st.queue.push(keys);

      if (loss_log)
        (*loss_log) << epoch << " " << b << " " << g17(tl.total) << " " << g17(tl.inst1) << " " << g17(tl.inst2)
                    << " " << g17(tl.grp1) << " " << g17(tl.grp2) << " " << g17(lr) << "\n";
      ++stats.batches_run;
      stats.last_total = tl.total;
    }
    st.epoch = epoch + 1;
  }
  return stats;
}

// ------------------------------------------------------------- evaluation

Tensor backbone_features(Model& model, const std::vector<Image>& patches, int center) {
  if (patches.empty()) throw std::invalid_argument("backbone_features: no patches");
  const std::size_t s = model.feature_dim();
  Tensor out({patches.size(), s});

  // Group indices by patch size so each group batches into one tensor.
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Image& im = patches[i];
    const int h = center > 0 ? center : im.h;
    const int w = center > 0 ? center : im.w;
    groups[{h, w}].push_back(i);
  }
  constexpr std::size_t kChunk = 256;
  for (const auto& [size, idxs] : groups) {
    for (std::size_t off = 0; off < idxs.size(); off += kChunk) {
      const std::size_t n = std::min(kChunk, idxs.size() - off);
      std::vector<Image> chunk;
      chunk.reserve(n);
      for (std::size_t j = 0; j < n; ++j) {
        const Image& im = patches[idxs[off + j]];
        chunk.push_back(center > 0 ? center_crop(im, center) : im);
      }
      Stack::Ctx ctx;
      const Tensor z = model.enc_q.forward(batch_images(chunk), ctx);
      for (std::size_t j = 0; j < n; ++j)
        std::copy_n(z.data.data() + j * s, s, out.data.data() + idxs[off + j] * s);
    }
  }
  return out;
}

double softmax_ce(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  ensure_rank(logits, 2, "softmax_ce");
  const std::size_t n = logits.shape[0], k = logits.shape[1];
  if (labels.size() != n) throw std::invalid_argument("softmax_ce: label count mismatch");
  if (dlogits) *dlogits = Tensor({n, k});
  double total = 0.0;
  const double invn = 1.0 / static_cast<double>(n);
  std::vector<double> p(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw std::invalid_argument("softmax_ce: label out of range");
    double mx = logits.at2(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at2(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(logits.at2(i, j) - mx);
      denom += p[j];
    }
    total += (std::log(denom) - (logits.at2(i, static_cast<std::size_t>(y)) - mx)) * invn;
    if (dlogits)
      for (std::size_t j = 0; j < k; ++j)
        dlogits->at2(i, j) = (p[j] / denom - (static_cast<std::size_t>(j) == static_cast<std::size_t>(y) ? 1.0 : 0.0)) * invn;
  }
  return total;
}

namespace {

std::vector<int> predict_rows(const Tensor& logits) {
  std::vector<int> preds(logits.shape[0]);
  for (std::size_t i = 0; i < logits.shape[0]; ++i) {
    int best = 0;
    for (std::size_t j = 1; j < logits.shape[1]; ++j)
      if (logits.at2(i, j) > logits.at2(i, best)) best = static_cast<int>(j);
    preds[i] = best;
  }
  return preds;
}

struct SplitData {
  std::vector<Image> patches;
  std::vector<int> labels;
};

SplitData gather_split(const LabeledDataset& ds, const std::string& split) {
  SplitData out;
  for (std::size_t i = 0; i < ds.recs.size(); ++i)
    if (ds.recs[i].split == split) {
      out.patches.push_back(ds.patches[i]);
      out.labels.push_back(ds.recs[i].label);
    }
  return out;
}

LabeledDataset maybe_subsample(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return ds;
  Rng rng = derive_rng(seed, {tag("subsample")});
  return subsample_labels(ds, fraction, rng);
}

void check_two_class(const std::vector<int>& labels, const char* what) {
  bool fg = false, bg = false;
  for (int l : labels) (l == 1 ? fg : bg) = true;
  if (!fg || !bg)
    throw std::invalid_argument(std::string(what) + ": training subset contains a single class");
}

Metrics eval_linear(const Tensor& feats, const std::vector<int>& labels, Linear& clf) {
  LayerCtx ctx;
  const Tensor logits = clf.forward(feats, ctx);
  return compute_metrics(predict_rows(logits), labels);
}

}  // namespace

ProbeResult linear_probe(Model& model, const LabeledDataset& ds, double fraction, const Config& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  const LabeledDataset sub = maybe_subsample(ds, fraction, seed);
  const SplitData train = gather_split(sub, "train");
  const SplitData test = gather_split(sub, "test");
  if (train.patches.empty() || test.patches.empty())
    throw std::invalid_argument("linear_probe: empty train or test split");
  check_two_class(train.labels, "linear_probe");

  const Tensor ftrain = backbone_features(model, train.patches, cfg.eval.input);
  const Tensor ftest = backbone_features(model, test.patches, cfg.eval.input);

  Linear clf("probe", model.feature_dim(), 2);
  {
    Rng rng = derive_rng(seed, {tag("probe-init")});
    he_init(clf, rng);
  }
  SgdState opt(clf.params());
  const SgdConfig sgd = eval_sgd(cfg);
  const std::size_t n = train.patches.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.eval.probe_batch), n);
  const std::size_t nb = (n + batch - 1) / batch;
  const std::size_t total = static_cast<std::size_t>(cfg.eval.probe_epochs) * nb;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.eval.probe_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = derive_rng(seed, {tag("probe-order"), static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = rng.below(i + 1);
      std::swap(order[i], order[j]);
    }
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      Tensor xb({hi - lo, model.feature_dim()});
      std::vector<int> yb(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        std::copy_n(ftrain.data.data() + order[i] * model.feature_dim(), model.feature_dim(),
                    xb.data.data() + (i - lo) * model.feature_dim());
        yb[i - lo] = train.labels[order[i]];
      }
      LayerCtx ctx;
      const Tensor logits = clf.forward(xb, ctx);
      Tensor dlogits;
      softmax_ce(logits, yb, &dlogits);
      clf.zero_grads();
      clf.backward(dlogits, ctx);
      opt.step(clf.params(), cosine_lr(step++, total, cfg.eval.probe_lr), sgd);
    }
  }

  ProbeResult res;
  res.train = eval_linear(ftrain, train.labels, clf);
  res.test = eval_linear(ftest, test.labels, clf);
  res.clf_weight = clf.weight;
  res.clf_bias = clf.bias;
  return res;
}

ProbeResult finetune(Model& model, const LabeledDataset& ds, double fraction, const Config& cfg,
                     std::uint64_t seed) {
  cfg.validate();
  const LabeledDataset sub = maybe_subsample(ds, fraction, seed);
  const SplitData train = gather_split(sub, "train");
  const SplitData test = gather_split(sub, "test");
  if (train.patches.empty() || test.patches.empty())
    throw std::invalid_argument("finetune: empty train or test split");
  check_two_class(train.labels, "finetune");

  Linear clf("classifier", model.feature_dim(), 2);
  {
    Rng rng = derive_rng(seed, {tag("probe-init")});
    he_init(clf, rng);
  }
  std::vector<ParamView> params = model.enc_q.params();
  for (auto& p : clf.params()) params.push_back(p);
  SgdState opt(params);
  const SgdConfig sgd = eval_sgd(cfg);

  const std::size_t n = train.patches.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.eval.ft_batch), n);
  const std::size_t nb = (n + batch - 1) / batch;
  const std::size_t total = static_cast<std::size_t>(cfg.eval.ft_epochs) * nb;
  const std::size_t s = model.feature_dim();
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.eval.ft_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = derive_rng(seed, {tag("ft-order"), static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = rng.below(i + 1);
      std::swap(order[i], order[j]);
    }
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      model.enc_q.zero_grads();
      clf.zero_grads();
      // Patch sizes may differ between classes, so the batch is processed in
      // same-size runs; gradients accumulate before the single step.
      std::map<std::pair<int, int>, std::vector<std::size_t>> runs;
      for (std::size_t i = lo; i < hi; ++i) {
        const Image& im = train.patches[order[i]];
        const int ch = cfg.eval.input > 0 ? cfg.eval.input : im.h;
        const int cw = cfg.eval.input > 0 ? cfg.eval.input : im.w;
        runs[{ch, cw}].push_back(order[i]);
      }
      const double invb = 1.0 / static_cast<double>(hi - lo);
      for (const auto& [size, idxs] : runs) {
        std::vector<Image> ims;
        std::vector<int> yb;
        ims.reserve(idxs.size());
        for (std::size_t idx : idxs) {
          const Image& im = train.patches[idx];
          ims.push_back(cfg.eval.input > 0 ? center_crop(im, cfg.eval.input) : im);
          yb.push_back(train.labels[idx]);
        }
        Stack::Ctx ectx;
        const Tensor z = model.enc_q.forward(batch_images(ims), ectx);
        LayerCtx cctx;
        const Tensor logits = clf.forward(z, cctx);
        Tensor dlogits;
        softmax_ce(logits, yb, &dlogits);
        // softmax_ce averages over the run; rescale to average over the batch.
        const double scale = static_cast<double>(idxs.size()) * invb;
        for (double& v : dlogits.data) v *= scale;
        const Tensor dz = clf.backward(dlogits, cctx);
        model.enc_q.backward(dz, ectx);
      }
      opt.step(params, cosine_lr(step++, total, cfg.eval.ft_lr), sgd);
    }
  }

  ProbeResult res;
  const Tensor ftrain = backbone_features(model, train.patches, cfg.eval.input);
  const Tensor ftest = backbone_features(model, test.patches, cfg.eval.input);
  res.train = eval_linear(ftrain, train.labels, clf);
  res.test = eval_linear(ftest, test.labels, clf);
  res.clf_weight = clf.weight;
  res.clf_bias = clf.bias;
  return res;
}

Metrics evaluate_classifier(Model& model, const Tensor& clf_weight, const Tensor& clf_bias,
                            const LabeledDataset& ds, const std::string& split, const Config& cfg) {
  const SplitData sd = gather_split(ds, split);
  if (sd.patches.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
  Linear clf("classifier", model.feature_dim(), 2);
  if (clf_weight.shape != clf.weight.shape || clf_bias.shape != clf.bias.shape)
    throw std::invalid_argument("evaluate: classifier shape does not match the encoder");
  clf.weight = clf_weight;
  clf.bias = clf_bias;
  const Tensor feats = backbone_features(model, sd.patches, cfg.eval.input);
  return eval_linear(feats, sd.labels, clf);
}

void export_embeddings(Model& model, const LabeledDataset& ds, const Config& cfg, std::ostream& out) {
  if (ds.recs.empty()) throw std::invalid_argument("export_embeddings: empty dataset");
  const Tensor feats = backbone_features(model, ds.patches, cfg.eval.input);
  const std::size_t s = model.feature_dim();
  out << "#kwd-embeddings v1,dim=" << s << "\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.recs.size(); ++i) {
    out << ds.recs[i].path << "," << ds.recs[i].label;
    for (std::size_t j = 0; j < s; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", feats.at2(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("export_embeddings: write failed");
}

}  // namespace kwd
