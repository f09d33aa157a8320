#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "kwd/model.hpp"
#include "kwd/rng.hpp"

using namespace kwd;

namespace {

Tensor randn(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

// Independent re-implementation of the whole query path with plain loops,
// reading the weights straight off the model.
std::vector<double> forward_by_hand(const Model& m, const Tensor& x0) {
  Tensor x = x0;
  const Stack& enc = m.enc_q;
  for (std::size_t li = 0; li < enc.size(); ++li) {
    const Layer& layer = enc.layer(li);
    if (layer.kind() == "conv2d") {
      const auto& conv = dynamic_cast<const Conv2d&>(layer);
      const std::size_t ci = x.shape[1], h = x.shape[2], w = x.shape[3];
      Tensor y({1, conv.out_ch(), h, w});
      for (std::size_t oc = 0; oc < conv.out_ch(); ++oc)
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c) {
            double acc = conv.bias.data[oc];
            for (std::size_t ic = 0; ic < ci; ++ic)
              for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                  const int rr = static_cast<int>(r) + dr, cc = static_cast<int>(c) + dc;
                  if (rr < 0 || cc < 0 || rr >= static_cast<int>(h) || cc >= static_cast<int>(w)) continue;
                  acc += conv.weight.at4(oc, ic, static_cast<std::size_t>(dr + 1), static_cast<std::size_t>(dc + 1)) *
                         x.at4(0, ic, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
                }
            y.at4(0, oc, r, c) = acc;
          }
      x = std::move(y);
    } else if (layer.kind() == "relu") {
      for (double& v : x.data) v = v > 0.0 ? v : 0.0;
    } else if (layer.kind() == "maxpool2") {
      const std::size_t ch = x.shape[1], h = x.shape[2] / 2, w = x.shape[3] / 2;
      Tensor y({1, ch, h, w});
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t cc = 0; cc < w; ++cc) {
            double best = x.at4(0, c, 2 * r, 2 * cc);
            best = std::max(best, x.at4(0, c, 2 * r, 2 * cc + 1));
            best = std::max(best, x.at4(0, c, 2 * r + 1, 2 * cc));
            best = std::max(best, x.at4(0, c, 2 * r + 1, 2 * cc + 1));
            y.at4(0, c, r, cc) = best;
          }
      x = std::move(y);
    } else {  // gap
      const std::size_t ch = x.shape[1], hw = x.shape[2] * x.shape[3];
      Tensor y({1, ch});
      for (std::size_t c = 0; c < ch; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x.data[c * hw + i];
        y.data[c] = s / static_cast<double>(hw);
      }
      x = std::move(y);
    }
  }
  auto lin = [](const Linear& l, const std::vector<double>& in) {
    std::vector<double> out(l.out_dim());
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      double acc = l.bias.data[o];
      for (std::size_t i = 0; i < l.in_dim(); ++i) acc += l.weight.at2(o, i) * in[i];
      out[o] = acc;
    }
    return out;
  };
  std::vector<double> h = lin(m.heads_q.hidden, x.data);
  for (double& v : h) v = v > 0.0 ? v : 0.0;
  std::vector<double> q = lin(m.heads_q.inst, h);
  double sq = 0.0;
  for (double v : q) sq += v * v;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& v : q) v *= inv;
  return q;
}

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.encoder.widths = {2, 3};
  mc.hidden_dim = 5;
  mc.embed_dim = 4;
  return mc;
}

}  // namespace

TEST_CASE("encoder output dimension follows the widths") {
  EncoderConfig ec;
  ec.widths = {4, 8, 16};
  Rng rng(1);
  Stack enc = make_encoder(ec, rng);
  Stack::Ctx ctx;
  const Tensor y = enc.forward(randn(rng, {2, 3, 24, 24}), ctx);
  CHECK(y.shape == std::vector<std::size_t>{2, 16});
}

TEST_CASE("row normalization produces unit rows and a tangent gradient") {
  Rng rng(2);
  const Tensor x = randn(rng, {3, 5});
  Tensor norms;
  const Tensor q = l2_normalize_rows(x, &norms);
  for (std::size_t i = 0; i < 3; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 5; ++j) sq += q.at2(i, j) * q.at2(i, j);
    CHECK(std::fabs(std::sqrt(sq) - 1.0) <= 1e-12);
  }
  const Tensor g = randn(rng, {3, 5});
  const Tensor dx = l2_normalize_rows_backward(g, q, norms);
  for (std::size_t i = 0; i < 3; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < 5; ++j) dot += dx.at2(i, j) * q.at2(i, j);
    CHECK(std::fabs(dot) <= 1e-12);  // gradient lives in the tangent space
  }
  Tensor z({1, 2});
  CHECK_THROWS_AS(l2_normalize_rows(z, nullptr), std::runtime_error);
}

TEST_CASE("heads emit unit-norm projections") {
  Rng rng(3);
  Model model(tiny_config(), 7);
  const Tensor z = randn(rng, {4, 3});
  Heads::Ctx ctx;
  model.heads_q.forward(z, ctx, true);
  CHECK(ctx.q.shape == std::vector<std::size_t>{4, 4});
  CHECK(ctx.g.shape == std::vector<std::size_t>{4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    double sq = 0.0, sg = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      sq += ctx.q.at2(i, j) * ctx.q.at2(i, j);
      sg += ctx.g.at2(i, j) * ctx.g.at2(i, j);
    }
    CHECK(std::fabs(std::sqrt(sq) - 1.0) <= 1e-12);
    CHECK(std::fabs(std::sqrt(sg) - 1.0) <= 1e-12);
  }
  Heads::Ctx no_grp;
  model.heads_q.forward(z, no_grp, false);
  CHECK(bits_equal(no_grp.q, ctx.q));
}

TEST_CASE("query path matches an independent re-implementation") {
  Model model(tiny_config(), 11);
  Rng rng(4);
  const Tensor x = randn(rng, {1, 3, 8, 8});
  Stack::Ctx ectx;
  Heads::Ctx hctx;
  model.heads_q.forward(model.enc_q.forward(x, ectx), hctx, false);
  const std::vector<double> want = forward_by_hand(model, x);
  REQUIRE(hctx.q.data.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::fabs(hctx.q.data[i] - want[i]) <= 1e-12);
}

TEST_CASE("key tower starts as a bitwise copy and tracks momentum") {
  Model model(tiny_config(), 5);
  Rng rng(6);
  const Tensor x = randn(rng, {2, 3, 8, 8});

  // At initialization the key path equals the query instance path.
  Stack::Ctx ectx;
  Heads::Ctx hctx;
  model.heads_q.forward(model.enc_q.forward(x, ectx), hctx, false);
  CHECK(bits_equal(model.encode_keys(x), hctx.q));

  // The group head has no key twin: momentum pairs exclude it.
  auto key = model.key_params();
  auto src = model.query_momentum_sources();
  REQUIRE(key.size() == src.size());
  for (const auto& p : src) CHECK(p.name.find("grp") == std::string::npos);

  // After a query perturbation the EMA follows elementwise.
  std::vector<Tensor> before;
  for (auto& p : key) before.push_back(*p.value);
  for (auto& p : model.trainable_params())
    for (double& v : p.value->data) v += 0.125;
  model.momentum_step(0.9);
  for (std::size_t i = 0; i < key.size(); ++i)
    for (std::size_t j = 0; j < key[i].value->data.size(); ++j)
      CHECK(key[i].value->data[j] == 0.9 * before[i].data[j] + (1.0 - 0.9) * src[i].value->data[j]);
}

TEST_CASE("project_instance equals the instance branch") {
  Model model(tiny_config(), 9);
  Rng rng(7);
  const Tensor z = randn(rng, {3, 3});
  Heads::Ctx ctx;
  model.heads_q.forward(z, ctx, false);
  CHECK(bits_equal(project_instance(model.heads_q, z), ctx.q));
}

TEST_CASE("batch_images packs HWC into NCHW") {
  Image a(2, 2), b(2, 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        a.at(r, c, ch) = 100 * ch + 10 * r + c;
        b.at(r, c, ch) = -(100 * ch + 10 * r + c);
      }
  const Tensor t = batch_images({a, b});
  REQUIRE(t.shape == std::vector<std::size_t>{2, 3, 2, 2});
  CHECK(t.at4(0, 0, 0, 0) == 0.0);
  CHECK(t.at4(0, 1, 0, 1) == 101.0);
  CHECK(t.at4(0, 2, 1, 0) == 210.0);
  CHECK(t.at4(1, 2, 1, 1) == -211.0);
}

TEST_CASE("model seeds are reproducible and distinct") {
  Model a(tiny_config(), 3), b(tiny_config(), 3), c(tiny_config(), 4);
  auto pa = a.trainable_params(), pb = b.trainable_params(), pc = c.trainable_params();
  bool same = true, differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bits_equal(*pa[i].value, *pb[i].value)) same = false;
    if (!bits_equal(*pa[i].value, *pc[i].value)) differs = true;
  }
  CHECK(same);
  CHECK(differs);
}
