#include "kwd/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kwd/augment.hpp"
#include "kwd/checkpoint.hpp"
#include "kwd/config.hpp"
#include "kwd/contrast.hpp"
#include "kwd/dataset.hpp"
#include "kwd/layers.hpp"
#include "kwd/metrics.hpp"
#include "kwd/model.hpp"
#include "kwd/optim.hpp"
#include "kwd/pipeline.hpp"
#include "kwd/ppm.hpp"
#include "kwd/rng.hpp"
#include "kwd/tensor.hpp"

namespace kwd {

namespace {

constexpr std::uint64_t kSuiteSeed = 0x73656c66636865ull;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

Tensor randn(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

// Values on a shuffled grid with spacing 0.01, offset away from zero. Keeps
// max-pool winners and relu signs stable under the 1e-5 probes of the
// finite-difference harness.
Tensor spaced(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  const std::size_t n = t.data.size();
  std::vector<std::size_t> levels(n);
  std::iota(levels.begin(), levels.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(levels[i], levels[rng.below(i + 1)]);
  for (std::size_t i = 0; i < n; ++i)
    t.data[i] = (static_cast<double>(levels[i]) - static_cast<double>(n) / 2.0) * 0.01 + 0.005;
  return t;
}

Tensor random_unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    do {
      sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        t.at2(i, j) = rng.normal();
        sq += t.at2(i, j) * t.at2(i, j);
      }
    } while (sq < 1e-12);
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) t.at2(i, j) *= inv;
  }
  return t;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

// Deliberately naive cross-entropy (no max shift): an independent oracle for
// the stabilized softmax paths. Safe at the bounded logits used here.
double naive_ce(const std::vector<double>& logits, std::size_t target) {
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l);
  return -std::log(std::exp(logits[target]) / denom);
}

struct Var {
  Tensor value, grad;
  explicit Var(Tensor v) : value(std::move(v)), grad(value.shape) {}
  ParamView view(const std::string& name) { return ParamView{name, &value, &grad}; }
};

double layer_fd(Layer& layer, const Tensor& x0, Rng& rng) {
  LayerCtx probe;
  const Tensor y0 = layer.forward(x0, probe);
  Tensor r(y0.shape);
  for (double& v : r.data) v = rng.normal();

  Var xin(x0);
  std::vector<ParamView> params = layer.params();
  params.push_back(xin.view("input"));
  auto loss = [&](bool want_grad) {
    LayerCtx ctx;
    const Tensor y = layer.forward(xin.value, ctx);
    double L = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) L += r.data[i] * y.data[i];
    if (want_grad) {
      layer.zero_grads();
      xin.grad = layer.backward(r, ctx);
    }
    return L;
  };
  return finite_diff_check(loss, params, 1e-5);
}

bool jitter_equal(const std::optional<JitterParams>& a, const std::optional<JitterParams>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->brightness == b->brightness && a->contrast == b->contrast && a->saturation == b->saturation &&
         a->hue == b->hue && a->order == b->order;
}

bool params_equal(const AugParams& a, const AugParams& b) {
  return a.crop_top == b.crop_top && a.crop_left == b.crop_left && a.crop_size == b.crop_size &&
         a.hflip == b.hflip && a.blur_sigma == b.blur_sigma && jitter_equal(a.jitter, b.jitter) &&
         a.grayscale == b.grayscale && a.rotation_k == b.rotation_k;
}

bool images_equal(const Image& a, const Image& b) { return a.h == b.h && a.w == b.w && a.px == b.px; }

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.px.size(); ++i) m = std::max(m, std::fabs(a.px[i] - b.px[i]));
  return m;
}

}  // namespace

// ------------------------------------------------------------ loss oracles

CheckSuite check_infonce_oracle() {
  CheckSuite s{"infonce-oracle"};
  Rng rng = derive_rng(kSuiteSeed, {tag("infonce")});

  for (int it = 0; it < 100; ++it) {
    const std::size_t d = 4 + rng.below(13);
    const std::size_t m = 64;
    const double tau = rng.uniform(0.1, 1.0);
    const Tensor negs = random_unit_rows(rng, m, d);
    KeyQueue queue(m, d);
    queue.push(negs);
    const Tensor qk = random_unit_rows(rng, 2, d);
    std::vector<double> q(qk.data.begin(), qk.data.begin() + d);
    std::vector<double> kpos(qk.data.begin() + d, qk.data.end());

    const InfoNceResult got = infonce(q, kpos, queue, tau);
    std::vector<double> logits(m + 1);
    logits[0] = std::inner_product(q.begin(), q.end(), kpos.begin(), 0.0) / tau;
    for (std::size_t j = 0; j < m; ++j)
      logits[j + 1] =
          std::inner_product(q.begin(), q.end(), negs.data.data() + j * d, 0.0) / tau;
    const double want = naive_ce(logits, 0);
    s.expect(std::fabs(got.loss - want) <= 1e-9,
             "case " + std::to_string(it) + ": |" + fmt(got.loss) + " - " + fmt(want) + "| > 1e-9");
  }

  {
    // q = k+ = e0, two orthogonal negatives, tau = 1: -log(e/(e+2)).
    KeyQueue queue(2, 3);
    queue.push(Tensor({2, 3}, {0, 1, 0, 0, 0, 1}));
    const InfoNceResult r = infonce({1, 0, 0}, {1, 0, 0}, queue, 1.0);
    s.expect(std::fabs(r.loss - (-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)))) <= 1e-12,
             "closed form -log(e/(e+2)): got " + fmt(r.loss));
  }
  {
    // All similarities equal with 3 negatives: log(4) for any temperature.
    const double c = 0.3, sthat = std::sqrt(1.0 - c * c);
    Tensor negs({3, 3});
    for (std::size_t i = 0; i < 3; ++i) {
      negs.at2(i, 0) = c;
      negs.at2(i, 1) = sthat;
    }
    KeyQueue queue(3, 3);
    queue.push(negs);
    for (double tau : {0.2, 0.5, 1.0, 3.0}) {
      const InfoNceResult r = infonce({1, 0, 0}, {c, sthat, 0}, queue, tau);
      s.expect(std::fabs(r.loss - std::log(4.0)) <= 1e-12,
               "uniform softmax at tau=" + fmt(tau) + ": got " + fmt(r.loss));
    }
  }
  {
    bool threw = false;
    try {
      KeyQueue queue(2, 3);
      infonce({1, 0, 0}, {1, 0, 0}, queue, 1.0);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "empty queue must be an error");
  }
  return s;
}

CheckSuite check_cld_oracle() {
  CheckSuite s{"cld-oracle"};
  Rng rng = derive_rng(kSuiteSeed, {tag("cld")});

  for (int it = 0; it < 100; ++it) {
    const std::size_t n = 4 + rng.below(17);
    const std::size_t d = 3 + rng.below(6);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(n, 4));
    const double tau = rng.uniform(0.2, 1.0);
    const Tensor g_self = random_unit_rows(rng, n, d);
    const Tensor g_other = random_unit_rows(rng, n, d);
    Rng krng(rng.u64());
    const ClusterResult cl = local_kmeans(g_other, k, krng);
    const CldResult got = cld_batch(g_self, g_other, cl, tau, KmeansMetric::spherical);

    double want = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(k);
      for (std::size_t c = 0; c < k; ++c) {
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += g_self.at2(i, t) * cl.centroids.at2(c, t);
        logits[c] = dot / tau;
      }
      want += naive_ce(logits, static_cast<std::size_t>(cl.assignment[i]));
    }
    want /= static_cast<double>(n);
    s.expect(std::fabs(got.loss - want) <= 1e-9,
             "case " + std::to_string(it) + ": |" + fmt(got.loss) + " - " + fmt(want) + "| > 1e-9");
  }

  {
    // Embedding equals its assigned centroid, the other centroid orthogonal,
    // k=2, tau=1: -log(e/(e+1)) per sample.
    const Tensor g({2, 3}, {1, 0, 0, 0, 1, 0});
    Rng krng = derive_rng(kSuiteSeed, {tag("cld-closed")});
    const ClusterResult cl = local_kmeans(g, 2, krng);
    const CldResult r = cld_batch(g, g, cl, 1.0, KmeansMetric::spherical);
    s.expect(std::fabs(r.loss - (-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)))) <= 1e-12,
             "closed form -log(e/(e+1)): got " + fmt(r.loss));
  }
  {
    // k=1: softmax over a single centroid is certain, loss exactly zero.
    Rng lrng = derive_rng(kSuiteSeed, {tag("cld-k1")});
    const Tensor g = random_unit_rows(lrng, 5, 4);
    Rng krng(lrng.u64());
    const ClusterResult cl = local_kmeans(g, 1, krng);
    const CldResult r = cld_batch(g, g, cl, 0.4, KmeansMetric::spherical);
    s.expect(r.loss == 0.0, "k=1 loss must be exactly zero, got " + fmt(r.loss));
  }
  return s;
}

// --------------------------------------------------------------- gradients

CheckSuite check_gradients() {
  CheckSuite s{"gradient-suite"};
  const double tol = 1e-4;

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    {
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-conv"), seed});
      Conv2d conv("conv", 3, 4);
      he_init(conv, rng);
      const double err = layer_fd(conv, randn(rng, {2, 3, 5, 4}), rng);
      s.expect(err <= tol, "conv2d seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
    {
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-relu"), seed});
      Relu relu("relu");
      const double err = layer_fd(relu, spaced(rng, {2, 3, 4, 4}), rng);
      s.expect(err <= tol, "relu seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
    {
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-pool"), seed});
      MaxPool2 pool("pool");
      const double err = layer_fd(pool, spaced(rng, {2, 2, 6, 6}), rng);
      s.expect(err <= tol, "maxpool2 seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
    {
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-gap"), seed});
      GlobalAvgPool gap("gap");
      const double err = layer_fd(gap, randn(rng, {2, 3, 4, 5}), rng);
      s.expect(err <= tol, "gap seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
    {
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-linear"), seed});
      Linear lin("lin", 7, 3);
      he_init(lin, rng);
      const double err = layer_fd(lin, randn(rng, {4, 7}), rng);
      s.expect(err <= tol, "linear seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
    {
      // Projection normalisation y / ||y||.
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-norm"), seed});
      Var x(randn(rng, {4, 6}));
      Tensor r = randn(rng, {4, 6});
      auto loss = [&](bool want_grad) {
        Tensor norms;
        const Tensor q = l2_normalize_rows(x.value, &norms);
        double L = 0.0;
        for (std::size_t i = 0; i < q.data.size(); ++i) L += r.data[i] * q.data[i];
        if (want_grad) x.grad = l2_normalize_rows_backward(r, q, norms);
        return L;
      };
      std::vector<ParamView> params{x.view("x")};
      const double err = finite_diff_check(loss, params, 1e-5);
      s.expect(err <= tol, "l2-normalise seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
    {
      // InfoNCE through the normalisation, keys constant.
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-infonce"), seed});
      const std::size_t n = 3, d = 6;
      KeyQueue queue(8, d);
      queue.push(random_unit_rows(rng, 8, d));
      const Tensor kpos = random_unit_rows(rng, n, d);
      Var raw(randn(rng, {n, d}));
      auto loss = [&](bool want_grad) {
        Tensor norms;
        const Tensor q = l2_normalize_rows(raw.value, &norms);
        Tensor gq;
        const double L = infonce_batch(q, kpos, queue, 0.2, want_grad ? &gq : nullptr);
        if (want_grad) raw.grad = l2_normalize_rows_backward(gq, q, norms);
        return L;
      };
      std::vector<ParamView> params{raw.view("q_raw")};
      const double err = finite_diff_check(loss, params, 1e-5);
      s.expect(err <= tol, "infonce seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
    {
      // CLD with both branches live. Cluster membership is frozen at the
      // base point (assignments are constants of the loss); centroids are
      // re-derived from the perturbed embeddings through the shared
      // normalised-mean routine, exactly as the gradient assumes.
      Rng rng = derive_rng(kSuiteSeed, {tag("fd-cld"), seed});
      const std::size_t n = 6, d = 5, k = 2;
      Var raw1(randn(rng, {n, d}));
      Var raw2(randn(rng, {n, d}));
      Rng krng(rng.u64());
      const ClusterResult base = local_kmeans(l2_normalize_rows(raw2.value), k, krng);
      auto loss = [&](bool want_grad) {
        Tensor n1, n2;
        const Tensor g1 = l2_normalize_rows(raw1.value, &n1);
        const Tensor g2 = l2_normalize_rows(raw2.value, &n2);
        ClusterResult cl = base;
        recompute_centroids(cl, g2, KmeansMetric::spherical);
        const CldResult r = cld_batch(g1, g2, cl, 0.4, KmeansMetric::spherical);
        if (want_grad) {
          raw1.grad = l2_normalize_rows_backward(r.grad_self, g1, n1);
          raw2.grad = l2_normalize_rows_backward(r.grad_other, g2, n2);
        }
        return r.loss;
      };
      std::vector<ParamView> params{raw1.view("g1_raw"), raw2.view("g2_raw")};
      const double err = finite_diff_check(loss, params, 1e-5);
      s.expect(err <= tol, "cld seed " + std::to_string(seed) + ": rel err " + fmt(err));
    }
  }

  // Whole graph: encoder -> heads -> combined objective, two query branches
  // through one encoder, gradients accumulated across branches.
  for (std::uint64_t seed : {3u, 7u}) {
    Rng rng = derive_rng(kSuiteSeed, {tag("fd-full"), seed});
    ModelConfig mc;
    mc.encoder.widths = {4, 8};
    mc.hidden_dim = 10;
    mc.embed_dim = 6;
    Model model(mc, derive_seed(kSuiteSeed, {tag("fd-full-init"), seed}));
    const std::size_t n = 4, k = 2;
    const Tensor x1 = randn(rng, {n, 3, 12, 12});
    const Tensor x2 = randn(rng, {n, 3, 12, 12});
    KeyQueue queue(8, mc.embed_dim);
    queue.push(random_unit_rows(rng, 8, mc.embed_dim));
    const Tensor kpos = random_unit_rows(rng, n, mc.embed_dim);
    const double lambda = 0.25;

    ClusterResult base1, base2;
    {
      Stack::Ctx e1, e2;
      Heads::Ctx h1, h2;
      model.heads_q.forward(model.enc_q.forward(x1, e1), h1, true);
      model.heads_q.forward(model.enc_q.forward(x2, e2), h2, true);
      Rng k2(derive_seed(kSuiteSeed, {tag("fd-full-km"), seed, 2}));
      Rng k1(derive_seed(kSuiteSeed, {tag("fd-full-km"), seed, 1}));
      base2 = local_kmeans(h2.g, k, k2);
      base1 = local_kmeans(h1.g, k, k1);
    }
    auto loss = [&](bool want_grad) {
      Stack::Ctx e1, e2;
      Heads::Ctx h1, h2;
      model.heads_q.forward(model.enc_q.forward(x1, e1), h1, true);
      model.heads_q.forward(model.enc_q.forward(x2, e2), h2, true);
      Tensor dq1, dq2;
      const double lq1 = infonce_batch(h1.q, kpos, queue, 0.2, want_grad ? &dq1 : nullptr);
      const double lq2 = infonce_batch(h2.q, kpos, queue, 0.2, want_grad ? &dq2 : nullptr);
      ClusterResult c2 = base2, c1 = base1;
      recompute_centroids(c2, h2.g, KmeansMetric::spherical);
      recompute_centroids(c1, h1.g, KmeansMetric::spherical);
      const CldResult r1 = cld_batch(h1.g, h2.g, c2, 0.4, KmeansMetric::spherical);
      const CldResult r2 = cld_batch(h2.g, h1.g, c1, 0.4, KmeansMetric::spherical);
      const double L = 0.5 * (lq1 + lq2) + lambda * 0.5 * (r1.loss + r2.loss);
      if (want_grad) {
        model.enc_q.zero_grads();
        model.heads_q.zero_grads();
        for (double& v : dq1.data) v *= 0.5;
        for (double& v : dq2.data) v *= 0.5;
        Tensor gg1(h1.g.shape), gg2(h2.g.shape);
        for (std::size_t i = 0; i < gg1.data.size(); ++i) {
          gg1.data[i] = lambda * 0.5 * (r1.grad_self.data[i] + r2.grad_other.data[i]);
          gg2.data[i] = lambda * 0.5 * (r2.grad_self.data[i] + r1.grad_other.data[i]);
        }
        model.enc_q.backward(model.heads_q.backward(dq1, gg1, h1), e1);
        model.enc_q.backward(model.heads_q.backward(dq2, gg2, h2), e2);
      }
      return L;
    };
    const double err = finite_diff_check(loss, model.trainable_params(), 1e-5);
    s.expect(err <= tol, "full graph seed " + std::to_string(seed) + ": rel err " + fmt(err));
  }
  return s;
}

// ---------------------------------------------------------------- momentum

CheckSuite check_momentum_ema() {
  CheckSuite s{"momentum-ema"};
  {
    Tensor tk({1}), tq({1}), gk({1}), gq({1});
    tk.data[0] = 1.0;
    tq.data[0] = 0.0;
    std::vector<ParamView> target{{"p", &tk, &gk}}, source{{"p", &tq, &gq}};
    for (int i = 0; i < 1000; ++i) momentum_update(target, source, 0.999);
    const double want = std::pow(0.999, 1000.0);
    s.expect(std::fabs(tk.data[0] - want) <= 1e-12,
             "geometric decay: got " + fmt(tk.data[0]) + " want " + fmt(want));

    tk.data[0] = 0.75;
    tq.data[0] = -0.5;
    momentum_update(target, source, 1.0);
    s.expect(tk.data[0] == 0.75, "m=1 must leave the key parameter unchanged");
    momentum_update(target, source, 0.0);
    s.expect(tk.data[0] == -0.5, "m=0 must copy the query parameter exactly");
  }
  {
    ModelConfig mc;
    mc.encoder.widths = {2, 3};
    mc.hidden_dim = 4;
    mc.embed_dim = 2;
    Model model(mc, 5);
    auto key = model.key_params();
    auto src = model.query_momentum_sources();
    s.expect(key.size() == src.size(), "key/query parameter lists must align");
    bool init_equal = true;
    for (std::size_t i = 0; i < key.size(); ++i)
      if (!bits_equal(*key[i].value, *src[i].value)) init_equal = false;
    s.expect(init_equal, "key tower must start bit-identical to the query tower");

    std::vector<Tensor> old_key;
    for (auto& p : key) old_key.push_back(*p.value);
    for (auto& p : src)
      for (double& v : p.value->data) v += 0.25;
    model.momentum_step(0.999);
    bool ema_ok = true;
    for (std::size_t i = 0; i < key.size() && ema_ok; ++i)
      for (std::size_t j = 0; j < key[i].value->data.size(); ++j) {
        const double want = 0.999 * old_key[i].data[j] + (1.0 - 0.999) * src[i].value->data[j];
        if (key[i].value->data[j] != want) {
          ema_ok = false;
          break;
        }
      }
    s.expect(ema_ok, "model momentum step must follow m*k + (1-m)*q elementwise");
  }
  {
    Tensor a({2}), b({3}), g({2}), g3({3});
    std::vector<ParamView> target{{"p", &a, &g}}, source{{"p", &b, &g3}};
    bool threw = false;
    try {
      momentum_update(target, source, 0.5);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "mismatched shapes must be an architecture error");
  }
  return s;
}

// ------------------------------------------------------------------- queue

CheckSuite check_queue_fifo() {
  CheckSuite s{"queue-fifo"};
  Rng rng = derive_rng(kSuiteSeed, {tag("queue")});
  int violations = 0;
  for (int it = 0; it < 1000; ++it) {
    const std::size_t cap = 1 + rng.below(16);
    const std::size_t d = 1 + rng.below(4);
    KeyQueue q(cap, d);
    std::vector<std::vector<double>> stream;
    const std::size_t nb = 1 + rng.below(8);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t n = 1 + rng.below(cap);
      const Tensor keys = random_unit_rows(rng, n, d);
      q.push(keys);
      for (std::size_t i = 0; i < n; ++i)
        stream.emplace_back(keys.data.begin() + i * d, keys.data.begin() + (i + 1) * d);
    }
    const std::size_t want = std::min(cap, stream.size());
    bool ok = q.size() == want;
    const Tensor got = q.contents();
    ok = ok && got.shape[0] == want;
    for (std::size_t i = 0; ok && i < want; ++i) {
      const std::vector<double>& row = stream[stream.size() - want + i];
      for (std::size_t t = 0; t < d; ++t)
        if (got.at2(i, t) != row[t]) ok = false;
    }
    if (!ok) ++violations;
  }
  s.expect(violations == 0, std::to_string(violations) + " of 1000 replays diverged from the stream tail");

  {
    KeyQueue q(4, 2);
    q.push(random_unit_rows(rng, 3, 2));
    s.expect(q.size() == 3 && !q.full(), "push 3 into capacity 4: fill must be 3");
    q.push(random_unit_rows(rng, 3, 2));
    s.expect(q.size() == 4 && q.full(), "push 3 more: fill must saturate at 4");
  }
  {
    KeyQueue q(2, 3);
    bool threw = false;
    try {
      q.push(random_unit_rows(rng, 3, 3));
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "batch larger than capacity must be an error");
    threw = false;
    try {
      Tensor bad({1, 3}, {0.5, 0.5, 0.5});
      q.push(bad);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "non-unit key must be an error");
  }
  return s;
}

// ----------------------------------------------------------------- k-means

CheckSuite check_kmeans() {
  CheckSuite s{"kmeans-invariants"};
  Rng rng = derive_rng(kSuiteSeed, {tag("kmeans")});
  int bad_inertia = 0, bad_assign = 0, bad_norm = 0, bad_recompute = 0, bad_det = 0;
  for (int it = 0; it < 100; ++it) {
    const std::size_t k = 1 + rng.below(8);
    const std::size_t n = k + rng.below(33);
    const std::size_t d = 2 + rng.below(7);
    const Tensor g = random_unit_rows(rng, n, d);
    const std::uint64_t seed = rng.u64();
    Rng krng(seed);
    const ClusterResult cl = local_kmeans(g, k, krng);

    for (std::size_t i = 1; i < cl.inertia_trace.size(); ++i)
      if (cl.inertia_trace[i] > cl.inertia_trace[i - 1] + 1e-12) ++bad_inertia;

    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_dot = -2.0;
      for (std::size_t c = 0; c < k; ++c) {
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += g.at2(i, t) * cl.centroids.at2(c, t);
        if (dot > best_dot) {
          best_dot = dot;
          best = static_cast<int>(c);
        }
      }
      if (cl.assignment[i] != best) ++bad_assign;
    }

    for (std::size_t c = 0; c < k; ++c) {
      double sq = 0.0;
      for (std::size_t t = 0; t < d; ++t) sq += cl.centroids.at2(c, t) * cl.centroids.at2(c, t);
      if (std::fabs(std::sqrt(sq) - 1.0) > 1e-6) ++bad_norm;
    }

    ClusterResult re = cl;
    recompute_centroids(re, g, KmeansMetric::spherical);
    if (!bits_equal(re.centroids, cl.centroids)) ++bad_recompute;

    Rng krng2(seed);
    const ClusterResult cl2 = local_kmeans(g, k, krng2);
    if (!bits_equal(cl2.centroids, cl.centroids) || cl2.assignment != cl.assignment) ++bad_det;
  }
  s.expect(bad_inertia == 0, std::to_string(bad_inertia) + " inertia increases across iterations");
  s.expect(bad_assign == 0, std::to_string(bad_assign) + " assignments not nearest-centroid-consistent");
  s.expect(bad_norm == 0, std::to_string(bad_norm) + " centroids off the unit sphere beyond 1e-6");
  s.expect(bad_recompute == 0,
           std::to_string(bad_recompute) + " centroid sets not reproducible from members");
  s.expect(bad_det == 0, std::to_string(bad_det) + " runs not deterministic under a fixed seed");

  {
    // n = k: every point becomes its own centroid, inertia collapses.
    const Tensor g = random_unit_rows(rng, 5, 4);
    Rng krng(rng.u64());
    const ClusterResult cl = local_kmeans(g, 5, krng);
    s.expect(cl.inertia <= 1e-12, "saturated clustering inertia " + fmt(cl.inertia));
  }
  {
    // k = 1: the centroid is the normalised mean of all rows.
    const Tensor g = random_unit_rows(rng, 7, 3);
    Rng krng(rng.u64());
    const ClusterResult cl = local_kmeans(g, 1, krng);
    std::vector<double> mean(3, 0.0);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t t = 0; t < 3; ++t) mean[t] += g.at2(i, t) / 7.0;
    const double norm = std::sqrt(mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]);
    double diff = 0.0;
    for (std::size_t t = 0; t < 3; ++t) diff = std::max(diff, std::fabs(cl.centroids.at2(0, t) - mean[t] / norm));
    s.expect(diff <= 1e-12, "single-cluster centroid deviates from the normalised mean by " + fmt(diff));
  }
  {
    bool threw = false;
    try {
      Rng krng(1);
      local_kmeans(random_unit_rows(rng, 3, 4), 5, krng);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "batch smaller than k must be an error");
  }
  return s;
}

// ----------------------------------------------------------- view contract

CheckSuite check_controlled_views() {
  CheckSuite s{"controlled-views"};
  const AugPolicy policy = aug_policy(Config::defaults());
  Rng img_rng = derive_rng(kSuiteSeed, {tag("views-img")});
  int color_violations = 0, rot_same = 0, rot_differs = 0, shape_bad = 0, range_bad = 0;
  for (int it = 0; it < 1000; ++it) {
    const int h = 28 + static_cast<int>(img_rng.below(13));
    const int w = 28 + static_cast<int>(img_rng.below(13));
    Image im(h, w);
    for (double& v : im.px) v = img_rng.uniform();
    Rng rng = derive_rng(kSuiteSeed, {tag("views"), static_cast<std::uint64_t>(it)});
    const ViewTriplet t = make_controlled_views(im, policy, rng);

    if (!jitter_equal(t.p1.jitter, t.pplus.jitter) || t.p1.grayscale != t.pplus.grayscale) ++color_violations;
    if (t.p1.rotation_k == t.pplus.rotation_k) ++rot_same;
    if (t.p2.rotation_k != t.pplus.rotation_k) ++rot_differs;
    for (const Image* v : {&t.v1, &t.v2, &t.vplus}) {
      if (v->h != policy.crop || v->w != policy.crop) ++shape_bad;
      for (double px : v->px)
        if (!(px >= 0.0 && px <= 1.0)) {
          ++range_bad;
          break;
        }
    }
  }
  s.expect(color_violations == 0,
           std::to_string(color_violations) + " of 1000 triplets broke the shared-color contract");
  s.expect(rot_same == 0, std::to_string(rot_same) + " of 1000 triplets had p1 rotation equal to p+");
  s.expect(rot_differs == 0, std::to_string(rot_differs) + " of 1000 triplets had p2 rotation differ from p+");
  s.expect(shape_bad == 0, std::to_string(shape_bad) + " views with wrong crop size");
  s.expect(range_bad == 0, std::to_string(range_bad) + " views with pixels outside [0,1]");

  {
    Image im(30, 30);
    Rng rng = derive_rng(kSuiteSeed, {tag("views-det")});
    Rng rng2 = derive_rng(kSuiteSeed, {tag("views-det")});
    const ViewTriplet a = make_controlled_views(im, policy, rng);
    const ViewTriplet b = make_controlled_views(im, policy, rng2);
    s.expect(params_equal(a.p1, b.p1) && params_equal(a.p2, b.p2) && params_equal(a.pplus, b.pplus),
             "same seed must reproduce identical view parameters");
    s.expect(images_equal(a.v1, b.v1) && images_equal(a.v2, b.v2) && images_equal(a.vplus, b.vplus),
             "same seed must reproduce identical view pixels");
  }
  {
    AugPolicy norot = policy;
    norot.rotation = false;
    Image im(30, 30);
    Rng rng = derive_rng(kSuiteSeed, {tag("views-norot")});
    bool threw = false;
    try {
      make_controlled_views(im, norot, rng);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "controlled views without the rotation group must be an error");
    const ViewTriplet t = make_independent_views(im, norot, rng);
    s.expect(t.p1.rotation_k == 0 && t.p2.rotation_k == 0 && t.pplus.rotation_k == 0,
             "independent views with rotation off must not rotate");
  }
  return s;
}

// ----------------------------------------------------------------- augment

CheckSuite check_augment() {
  CheckSuite s{"augment-algebra"};
  Rng rng = derive_rng(kSuiteSeed, {tag("augment")});

  {
    // Every stochastic group off: the pipeline reduces to the crop alone,
    // but crop offsets are still sampled.
    AugPolicy off;
    off.crop = 5;
    off.base = off.color = off.rotation = false;
    Image im(9, 8);
    for (double& v : im.px) v = rng.uniform();
    bool reduce_ok = true, offsets_vary = false;
    int first_top = -1, first_left = -1;
    for (int it = 0; it < 100; ++it) {
      const AugParams p = sample_params(rng, off, im.h, im.w);
      if (p.hflip || p.blur_sigma || p.jitter || p.grayscale || p.rotation_k != 0) reduce_ok = false;
      if (!images_equal(apply(im, p), crop(im, p.crop_top, p.crop_left, 5))) reduce_ok = false;
      if (it == 0) {
        first_top = p.crop_top;
        first_left = p.crop_left;
      } else if (p.crop_top != first_top || p.crop_left != first_left) {
        offsets_vary = true;
      }
    }
    s.expect(reduce_ok, "groups-off sampling must reduce to the bare crop");
    s.expect(offsets_vary, "crop offsets must still be sampled with groups off");
  }
  {
    const AugPolicy policy = aug_policy(Config::defaults());
    int flips = 0;
    for (int it = 0; it < 10000; ++it) flips += sample_params(rng, policy, 32, 32).hflip ? 1 : 0;
    const double freq = flips / 10000.0;
    s.expect(freq >= 0.48 && freq <= 0.52, "hflip frequency " + fmt(freq) + " outside [0.48, 0.52]");
  }
  {
    Image im(2, 2);
    const double vals[4] = {0.1, 0.2, 0.3, 0.4};
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c)
        for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) = vals[r * 2 + c];
    const Image out = rotate(im, 1);
    const bool ok = out.at(0, 0, 0) == 0.2 && out.at(0, 1, 0) == 0.4 && out.at(1, 0, 0) == 0.1 &&
                    out.at(1, 1, 0) == 0.3;
    s.expect(ok, "quarter turn of [[1,2],[3,4]] must give [[2,4],[1,3]]");
  }
  {
    Image im(5, 7);
    for (double& v : im.px) v = rng.uniform();
    bool subgroup_ok = true;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        if (!images_equal(rotate(rotate(im, a), b), rotate(im, (a + b) % 4))) subgroup_ok = false;
    s.expect(subgroup_ok, "rotations must compose as the cyclic group C4");
    s.expect(images_equal(rotate(im, 0), im), "rotation k=0 must be the identity");
    s.expect(images_equal(hflip(hflip(im)), im), "hflip must be an involution");
  }
  {
    const Image im = Image::filled(9, 7, 0.3, 0.6, 0.2);
    const Image out = gaussian_blur(im, 1.7);
    double diff = max_abs_diff(im, out);
    s.expect(out.h == im.h && out.w == im.w && diff <= 1e-12,
             "blur of a constant image drifted by " + fmt(diff));
  }
  {
    Image im(6, 6);
    for (double& v : im.px) v = rng.uniform();
    JitterParams id;
    const double diff = max_abs_diff(color_jitter(im, id), im);
    s.expect(diff <= 1e-12, "identity jitter changed pixels by " + fmt(diff));

    JitterParams bad;
    bad.order = {0, 0, 1, 2};
    bool threw = false;
    try {
      color_jitter(im, bad);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "non-permutation jitter order must be an error");
  }
  {
    Image im(6, 6);
    for (double& v : im.px) v = rng.uniform();
    const Image g1 = to_grayscale(im);
    bool channels_equal = true;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c)
        if (g1.at(r, c, 0) != g1.at(r, c, 1) || g1.at(r, c, 1) != g1.at(r, c, 2)) channels_equal = false;
    s.expect(channels_equal, "grayscale must equalise the three channels");
    const double drift = max_abs_diff(to_grayscale(g1), g1);
    s.expect(drift <= 1e-12, "grayscale must be idempotent, drifted by " + fmt(drift));
  }
  {
    bool threw = false;
    try {
      crop(Image(4, 4), 2, 2, 4);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "out-of-bounds crop must be an error");
    threw = false;
    try {
      gaussian_blur(Image(4, 4), 0.0);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "non-positive blur sigma must be an error");
    threw = false;
    try {
      rotate(Image(4, 4), 4);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "rotation k outside {0..3} must be an error");
  }
  return s;
}

// ---------------------------------------------------------------- schedule

CheckSuite check_schedule() {
  CheckSuite s{"schedule-sgd"};
  {
    Tensor th({1}), g({1});
    th.data[0] = 1.0;
    g.data[0] = 2.0;
    std::vector<ParamView> params{{"theta", &th, &g}};
    SgdState opt(params);
    opt.step(params, 0.5, SgdConfig{0.0, 0.0});
    s.expect(th.data[0] == 0.0, "zero-momentum step: 1 - 0.5*2 must be exactly 0");
  }
  {
    // Two steps with momentum: v2 = mu*(mu*v0 + g1) + g2.
    Tensor th({1}), g({1});
    th.data[0] = 0.3;
    std::vector<ParamView> params{{"theta", &th, &g}};
    SgdState opt(params);
    const double mu = 0.9, lr = 0.1, g1 = 0.7, g2 = -0.4;
    g.data[0] = g1;
    opt.step(params, lr, SgdConfig{mu, 0.0});
    g.data[0] = g2;
    opt.step(params, lr, SgdConfig{mu, 0.0});
    const double v1 = mu * 0.0 + g1;
    const double v2 = mu * v1 + g2;
    const double want = (0.3 - lr * v1) - lr * v2;
    s.expect(th.data[0] == want && opt.velocity(0).data[0] == v2,
             "momentum recurrence must match the closed form bitwise");
  }
  {
    // Weight decay folds into the gradient before the velocity update.
    Tensor th({1}), g({1});
    th.data[0] = 2.0;
    g.data[0] = 0.0;
    std::vector<ParamView> params{{"theta", &th, &g}};
    SgdState opt(params);
    opt.step(params, 1.0, SgdConfig{0.0, 0.1});
    const double want = 2.0 - 1.0 * (0.1 * 2.0);
    s.expect(th.data[0] == want, "weight decay step must equal theta - lr*wd*theta");
  }
  {
    Tensor th({1}), g({1});
    g.data[0] = std::nan("");
    std::vector<ParamView> params{{"theta", &th, &g}};
    SgdState opt(params);
    bool threw = false;
    try {
      opt.step(params, 0.1, SgdConfig{0.9, 0.0});
    } catch (const std::runtime_error&) {
      threw = true;
    }
    s.expect(threw, "non-finite gradient must abort the step");
  }
  {
    const double lr0 = 0.06;
    s.expect(cosine_lr(0, 100, lr0) == lr0, "cosine schedule must start at lr0");
    s.expect(std::fabs(cosine_lr(100, 100, lr0)) <= 1e-12, "cosine schedule must end at 0");
    s.expect(std::fabs(cosine_lr(50, 100, lr0) - 0.5 * lr0) <= 1e-12, "cosine midpoint must be lr0/2");
    bool monotone = true;
    for (std::size_t t = 1; t <= 200; ++t)
      if (cosine_lr(t, 200, lr0) > cosine_lr(t - 1, 200, lr0)) monotone = false;
    s.expect(monotone, "cosine schedule must be non-increasing");
    bool threw = false;
    try {
      cosine_lr(101, 100, lr0);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "steps beyond the schedule horizon must be an error");
  }
  {
    Var th(Tensor({1}));
    th.value.data[0] = 3.0;
    auto loss = [&](bool want_grad) {
      const double t = th.value.data[0];
      if (want_grad) th.grad.data[0] = 2.0 * t;
      return t * t;
    };
    std::vector<ParamView> params{th.view("theta")};
    const double err = finite_diff_check(loss, params, 1e-5);
    s.expect(err <= 1e-8, "theta^2 at 3: finite-difference rel err " + fmt(err));
  }
  return s;
}

// ----------------------------------------------------------------- metrics

CheckSuite check_metrics() {
  CheckSuite s{"metrics"};
  {
    std::vector<int> preds, labels;
    for (int i = 0; i < 3; ++i) {
      preds.push_back(1);
      labels.push_back(1);
    }  // TP
    preds.push_back(1);
    labels.push_back(0);  // FP
    for (int i = 0; i < 2; ++i) {
      preds.push_back(0);
      labels.push_back(1);
    }  // FN
    for (int i = 0; i < 4; ++i) {
      preds.push_back(0);
      labels.push_back(0);
    }  // TN
    const Metrics m = compute_metrics(preds, labels);
    s.expect(m.tp == 3 && m.fp == 1 && m.fn == 2 && m.tn == 4, "confusion counts must be 3/1/2/4");
    s.expect(m.accuracy == 0.7, "accuracy must be 0.7, got " + fmt(m.accuracy));
    s.expect(m.precision && *m.precision == 0.75, "precision must be 0.75");
    s.expect(m.recall && *m.recall == 0.6, "recall must be 0.6");
  }
  {
    const Metrics m = compute_metrics({1, 0, 1}, {1, 0, 1});
    s.expect(m.accuracy == 1.0 && m.precision && *m.precision == 1.0 && m.recall && *m.recall == 1.0,
             "all-correct metrics must be 1/1/1");
  }
  {
    const Metrics m = compute_metrics({0, 0, 0}, {1, 0, 1});
    s.expect(!m.precision.has_value(), "precision must be absent when nothing is predicted positive");
    s.expect(m.recall && *m.recall == 0.0, "recall must be 0 with only missed positives");
    const Metrics m2 = compute_metrics({0, 1, 0}, {0, 0, 0});
    s.expect(!m2.recall.has_value(), "recall must be absent without any positive labels");
  }
  {
    Rng rng = derive_rng(kSuiteSeed, {tag("metrics")});
    int mismatches = 0;
    for (int it = 0; it < 1000; ++it) {
      const std::size_t n = 1 + rng.below(50);
      std::vector<int> preds(n), labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        preds[i] = static_cast<int>(rng.below(2));
        labels[i] = static_cast<int>(rng.below(2));
      }
      const Metrics m = compute_metrics(preds, labels);
      std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (preds[i] == 1 && labels[i] == 1) ++tp;
        if (preds[i] == 1 && labels[i] == 0) ++fp;
        if (preds[i] == 0 && labels[i] == 1) ++fn;
        if (preds[i] == 0 && labels[i] == 0) ++tn;
      }
      bool ok = m.tp == tp && m.fp == fp && m.fn == fn && m.tn == tn;
      ok = ok && m.accuracy == static_cast<double>(tp + tn) / static_cast<double>(n);
      ok = ok && m.precision.has_value() == (tp + fp > 0) && m.recall.has_value() == (tp + fn > 0);
      if (m.precision) ok = ok && *m.precision == static_cast<double>(tp) / static_cast<double>(tp + fp);
      if (m.recall) ok = ok && *m.recall == static_cast<double>(tp) / static_cast<double>(tp + fn);
      if (!ok) ++mismatches;
    }
    s.expect(mismatches == 0, std::to_string(mismatches) + " of 1000 recounts disagreed");
  }
  {
    bool threw = false;
    try {
      compute_metrics({}, {});
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "empty input must be an error");
    threw = false;
    try {
      compute_metrics({0, 2}, {0, 1});
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    s.expect(threw, "non-binary predictions must be an error");
  }
  return s;
}

// ------------------------------------------------------------ file formats

CheckSuite check_formats(const std::string& scratch_dir) {
  CheckSuite s{"file-formats"};
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(scratch_dir) / "kwd-format-checks";
  fs::create_directories(dir);
  Rng rng = derive_rng(kSuiteSeed, {tag("formats")});

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  {
    Image im(7, 5);
    for (double& v : im.px) v = rng.uniform(-0.2, 1.2);  // clamps exercise the writer
    const fs::path a = dir / "a.ppm", b = dir / "b.ppm";
    write_image(a.string(), im);
    const Image back = read_image(a.string());
    write_image(b.string(), back);
    s.expect(slurp(a) == slurp(b), "ppm write-read-write must be byte-identical");
  }
  {
    std::ostringstream ss;
    write_ppm(ss, Image::filled(1, 1, 1.0, 1.0, 1.0));
    s.expect(ss.str() == std::string("P6\n1 1\n255\n") + "\xff\xff\xff", "1x1 white pixel file bytes");
  }
  {
    Image ramp(1, 256);
    for (int c = 0; c < 256; ++c)
      for (int ch = 0; ch < 3; ++ch) ramp.at(0, c, ch) = c / 255.0;
    std::ostringstream ss;
    write_ppm(ss, ramp);
    const std::string file = ss.str();
    const std::string header = "P6\n256 1\n255\n";
    bool ok = file.size() == header.size() + 768 && file.compare(0, header.size(), header) == 0;
    for (int c = 0; ok && c < 256; ++c)
      for (int ch = 0; ch < 3; ++ch)
        if (static_cast<unsigned char>(file[header.size() + 3 * c + ch]) != c) ok = false;
    std::istringstream in(file);
    const Image back = read_ppm(in);
    std::ostringstream ss2;
    write_ppm(ss2, back);
    s.expect(ok && ss2.str() == file, "8-bit ramp must survive the float round-trip exactly");
  }
  {
    s.expect(quantize_byte(0.0) == 0 && quantize_byte(1.0) == 255 && quantize_byte(0.5) == 128 &&
                 quantize_byte(-0.3) == 0 && quantize_byte(1.7) == 255 && quantize_byte(1.0 / 255.0) == 1,
             "quantisation spot values");
  }
  {
    auto expect_bad = [&](const std::string& text, const std::string& what) {
      std::istringstream in(text);
      bool threw = false;
      try {
        read_ppm(in);
      } catch (const std::exception&) {
        threw = true;
      }
      s.expect(threw, what);
    };
    expect_bad("P5\n1 1\n255\nxxx", "wrong magic must be an error");
    expect_bad("P6\n1 1\n254\nxxx", "maxval other than 255 must be an error");
    expect_bad("P6\n2 2\n255\nxy", "truncated payload must be an error");
    std::istringstream in("P6\n# a comment\n1 1\n255\nxyz");
    const Image im = read_ppm(in);
    s.expect(im.h == 1 && im.w == 1, "header comments must be skipped");
  }

  {
    std::vector<PatchRef> recs;
    for (int i = 0; i < 5; ++i) {
      PatchRef r;
      r.path = "train/p" + std::to_string(100000 + i).substr(1) + ".ppm";
      r.label = i % 2;
      r.split = i < 3 ? "train" : "val";
      r.mosaic_id = 7 * i;
      r.x = 3 * i;
      r.y = 40 - i;
      recs.push_back(r);
    }
    std::ostringstream ss;
    write_manifest(ss, recs);
    std::istringstream in(ss.str());
    const std::vector<PatchRef> back = read_manifest(in);
    bool ok = back.size() == recs.size();
    for (std::size_t i = 0; ok && i < recs.size(); ++i)
      ok = back[i].path == recs[i].path && back[i].label == recs[i].label && back[i].split == recs[i].split &&
           back[i].mosaic_id == recs[i].mosaic_id && back[i].x == recs[i].x && back[i].y == recs[i].y;
    std::ostringstream ss2;
    write_manifest(ss2, back);
    s.expect(ok && ss2.str() == ss.str(), "manifest round-trip must be field- and byte-exact");

    std::istringstream bad("#other v9\nx 0 train 0 0 0\n");
    bool threw = false;
    try {
      read_manifest(bad);
    } catch (const std::exception&) {
      threw = true;
    }
    s.expect(threw, "manifest with a wrong header must be an error");
  }

  {
    Checkpoint ck;
    ck.put_tensor("enc/w", randn(rng, {3, 2, 3, 3}));
    ck.put_u64("meta/epoch", 17);
    ck.put_string("meta/config", "[train]\nepochs = 3\n");
    ck.put_f64_vector("queue/storage", {0.5, -1.25, 3.0});
    const fs::path a = dir / "a.ckpt", b = dir / "b.ckpt";
    save_checkpoint_file(a.string(), ck);
    const Checkpoint back = load_checkpoint_file(a.string());
    save_checkpoint_file(b.string(), back);
    s.expect(slurp(a) == slurp(b), "checkpoint save-load-save must be byte-identical");
    s.expect(bits_equal(back.get_tensor("enc/w"), ck.get_tensor("enc/w")) && back.get_u64("meta/epoch") == 17 &&
                 back.get_string("meta/config") == ck.get_string("meta/config"),
             "checkpoint fields must round-trip bit-exactly");

    std::string bytes = slurp(a);
    bytes[bytes.size() / 2] ^= 0x01;
    const fs::path c = dir / "c.ckpt";
    std::ofstream(c, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    bool threw = false;
    std::string msg;
    try {
      load_checkpoint_file(c.string());
    } catch (const std::exception& e) {
      threw = true;
      msg = e.what();
    }
    s.expect(threw && msg.find("checksum") != std::string::npos,
             "corrupted payload must fail the checksum, got: " + msg);

    const fs::path t = dir / "t.ckpt";
    std::ofstream(t, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
    threw = false;
    try {
      load_checkpoint_file(t.string());
    } catch (const std::exception&) {
      threw = true;
    }
    s.expect(threw, "truncated checkpoint must be an error");

    threw = false;
    try {
      ck.get_tensor("no/such");
    } catch (const std::exception&) {
      threw = true;
    }
    s.expect(threw, "unknown record name must be an error");
  }

  {
    ModelConfig mc;
    mc.encoder.widths = {2, 3};
    mc.hidden_dim = 4;
    mc.embed_dim = 2;
    Model model(mc, 11);
    LabeledDataset ds;
    for (int i = 0; i < 3; ++i) {
      Image im(8, 8);
      for (double& v : im.px) v = rng.uniform();
      ds.patches.push_back(im);
      PatchRef r;
      r.path = "test/p" + std::to_string(i) + ".ppm";
      r.label = i % 2;
      r.split = "test";
      ds.recs.push_back(r);
    }
    const Config cfg = Config::defaults();
    std::ostringstream e1, e2;
    export_embeddings(model, ds, cfg, e1);
    export_embeddings(model, ds, cfg, e2);
    s.expect(e1.str() == e2.str(), "re-export must be byte-identical");
    std::istringstream in(e1.str());
    std::string line;
    std::getline(in, line);
    s.expect(line == "#kwd-embeddings v1,dim=" + std::to_string(model.feature_dim()),
             "embedding header mismatch: " + line);
    const Tensor feats = backbone_features(model, ds.patches, cfg.eval.input);
    std::size_t rows = 0;
    bool parse_ok = true;
    while (std::getline(in, line)) {
      std::vector<std::string> fields;
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (fields.size() != 2 + model.feature_dim()) parse_ok = false;
      if (parse_ok && (fields[0] != ds.recs[rows].path || std::stoi(fields[1]) != ds.recs[rows].label))
        parse_ok = false;
      for (std::size_t j = 0; parse_ok && j < model.feature_dim(); ++j)
        if (std::strtod(fields[2 + j].c_str(), nullptr) != feats.at2(rows, j)) parse_ok = false;
      ++rows;
    }
    s.expect(rows == ds.recs.size(), "embedding export must have one line per patch plus the header");
    s.expect(parse_ok, "parsed embedding vectors must equal the in-memory features bit-exactly");
  }

  return s;
}

std::vector<CheckSuite> run_all_checks(const std::string& scratch_dir) {
  std::vector<CheckSuite> suites;
  suites.push_back(check_infonce_oracle());
  suites.push_back(check_cld_oracle());
  suites.push_back(check_gradients());
  suites.push_back(check_momentum_ema());
  suites.push_back(check_queue_fifo());
  suites.push_back(check_kmeans());
  suites.push_back(check_controlled_views());
  suites.push_back(check_augment());
  suites.push_back(check_schedule());
  suites.push_back(check_metrics());
  suites.push_back(check_formats(scratch_dir));
  return suites;
}

}  // namespace kwd
