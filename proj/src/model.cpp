#include "kwd/model.hpp"

#include <cmath>
#include <stdexcept>

namespace kwd {

Stack make_encoder(const EncoderConfig& cfg, Rng& rng) {
  if (cfg.widths.empty()) throw std::invalid_argument("encoder: widths must be non-empty");
  Stack s;
  std::size_t in_ch = cfg.in_ch;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    auto conv = std::make_unique<Conv2d>("conv" + idx, in_ch, cfg.widths[i]);
    he_init(*conv, rng);
    s.add(std::move(conv));
    s.add(std::make_unique<Relu>("relu" + idx));
    s.add(std::make_unique<MaxPool2>("pool" + idx));
    in_ch = cfg.widths[i];
  }
  s.add(std::make_unique<GlobalAvgPool>("gap"));
  return s;
}

Tensor l2_normalize_rows(const Tensor& y, Tensor* norms_out) {
  ensure_rank(y, 2, "l2_normalize");
  Tensor q = y;
  Tensor norms({y.shape[0]});
  for (std::size_t i = 0; i < y.shape[0]; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < y.shape[1]; ++j) s += y.at2(i, j) * y.at2(i, j);
    const double n = std::sqrt(s);
    if (n == 0.0) throw std::runtime_error("l2_normalize: zero-norm row " + std::to_string(i));
    if (!std::isfinite(n)) throw std::runtime_error("l2_normalize: non-finite norm in row " + std::to_string(i));
    norms.data[i] = n;
    for (std::size_t j = 0; j < y.shape[1]; ++j) q.at2(i, j) /= n;
  }
  if (norms_out) *norms_out = std::move(norms);
  return q;
}

Tensor l2_normalize_rows_backward(const Tensor& grad_q, const Tensor& q, const Tensor& norms) {
  if (!grad_q.same_shape(q)) throw std::invalid_argument("l2_normalize backward: shape mismatch");
  Tensor dy = grad_q;
  for (std::size_t i = 0; i < q.shape[0]; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < q.shape[1]; ++j) dot += q.at2(i, j) * grad_q.at2(i, j);
    const double inv = 1.0 / norms.data[i];
    for (std::size_t j = 0; j < q.shape[1]; ++j) dy.at2(i, j) = (grad_q.at2(i, j) - dot * q.at2(i, j)) * inv;
  }
  return dy;
}

Heads::Heads(const HeadsConfig& cfg)
    : hidden("head_hidden", cfg.feature_dim, cfg.hidden_dim),
      act("head_relu"),
      inst("head_inst", cfg.hidden_dim, cfg.embed_dim),
      grp("head_grp", cfg.hidden_dim, cfg.embed_dim) {}

void Heads::forward(const Tensor& z, Ctx& ctx, bool with_group) {
  Tensor a = hidden.forward(z, ctx.hidden);
  Tensor h = act.forward(a, ctx.act);
  Tensor yi = inst.forward(h, ctx.inst);
  ctx.q = l2_normalize_rows(yi, &ctx.q_norms);
  ctx.with_group = with_group;
  if (with_group) {
    Tensor yg = grp.forward(h, ctx.grp);
    ctx.g = l2_normalize_rows(yg, &ctx.g_norms);
  }
}

Tensor Heads::backward(const Tensor& grad_q, const Tensor& grad_g, Ctx& ctx) {
  Tensor dyi = l2_normalize_rows_backward(grad_q, ctx.q, ctx.q_norms);
  Tensor dh = inst.backward(dyi, ctx.inst);
  if (ctx.with_group) {
    Tensor dyg = l2_normalize_rows_backward(grad_g, ctx.g, ctx.g_norms);
    Tensor dh_g = grp.backward(dyg, ctx.grp);
    for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dh_g.data[i];
  }
  Tensor da = act.backward(dh, ctx.act);
  return hidden.backward(da, ctx.hidden);
}

std::vector<ParamView> Heads::params() {
  std::vector<ParamView> out;
  for (auto& p : hidden.params()) out.push_back(p);
  for (auto& p : inst.params()) out.push_back(p);
  for (auto& p : grp.params()) out.push_back(p);
  return out;
}

std::vector<ParamView> Heads::momentum_params() {
  std::vector<ParamView> out;
  for (auto& p : hidden.params()) out.push_back(p);
  for (auto& p : inst.params()) out.push_back(p);
  return out;
}

void Heads::zero_grads() {
  hidden.zero_grads();
  inst.zero_grads();
  grp.zero_grads();
}

Tensor project_instance(Heads& heads, const Tensor& z) {
  Heads::Ctx ctx;
  heads.forward(z, ctx, false);
  return ctx.q;
}

void momentum_update(const std::vector<ParamView>& target, const std::vector<ParamView>& source, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("momentum_update: m must lie in [0,1]");
  if (target.size() != source.size())
    throw std::invalid_argument("momentum_update: architecture mismatch, " + std::to_string(target.size()) +
                                " vs " + std::to_string(source.size()) + " parameters");
  for (std::size_t i = 0; i < target.size(); ++i) {
    Tensor& t = *target[i].value;
    const Tensor& s = *source[i].value;
    if (t.shape != s.shape)
      throw std::invalid_argument("momentum_update: shape mismatch at " + target[i].name + " vs " +
                                  source[i].name);
    for (std::size_t j = 0; j < t.data.size(); ++j) t.data[j] = m * t.data[j] + (1.0 - m) * s.data[j];
  }
}

static ModelConfig validated(ModelConfig cfg) {
  if (cfg.hidden_dim == 0 || cfg.embed_dim == 0)
    throw std::invalid_argument("model: head dimensions must be positive");
  return cfg;
}

Model::Model(const ModelConfig& c, std::uint64_t seed)
    : enc_q(),
      heads_q(HeadsConfig{validated(c).encoder.widths.back(), c.hidden_dim, c.embed_dim}),
      enc_k(),
      k_hidden("key_hidden", c.encoder.widths.back(), c.hidden_dim),
      k_act("key_relu"),
      k_inst("key_inst", c.hidden_dim, c.embed_dim),
      cfg(c) {
  Rng enc_rng = derive_rng(seed, {tag("init"), tag("encoder")});
  enc_q = make_encoder(cfg.encoder, enc_rng);
  Rng head_rng = derive_rng(seed, {tag("init"), tag("heads")});
  he_init(heads_q.hidden, head_rng);
  he_init(heads_q.inst, head_rng);
  he_init(heads_q.grp, head_rng);
  copy_query_to_key();
}

void Model::copy_query_to_key() {
  enc_k = enc_q;
  k_hidden.weight = heads_q.hidden.weight;
  k_hidden.bias = heads_q.hidden.bias;
  k_inst.weight = heads_q.inst.weight;
  k_inst.bias = heads_q.inst.bias;
}

std::vector<ParamView> Model::trainable_params() {
  std::vector<ParamView> out = enc_q.params();
  for (auto& p : heads_q.params()) out.push_back(p);
  return out;
}

std::vector<ParamView> Model::key_params() {
  std::vector<ParamView> out = enc_k.params();
  for (auto& p : k_hidden.params()) out.push_back(p);
  for (auto& p : k_inst.params()) out.push_back(p);
  return out;
}

std::vector<ParamView> Model::query_momentum_sources() {
  std::vector<ParamView> out = enc_q.params();
  for (auto& p : heads_q.momentum_params()) out.push_back(p);
  return out;
}

void Model::momentum_step(double m) { momentum_update(key_params(), query_momentum_sources(), m); }

Tensor Model::encode_keys(const Tensor& x) {
  Stack::Ctx ectx;
  Tensor z = enc_k.forward(x, ectx);
  LayerCtx c1, c2, c3;
  Tensor a = k_hidden.forward(z, c1);
  Tensor h = k_act.forward(a, c2);
  Tensor y = k_inst.forward(h, c3);
  return l2_normalize_rows(y);
}

Tensor batch_images(const std::vector<const Image*>& ims) {
  if (ims.empty()) throw std::invalid_argument("batch_images: empty batch");
  const int h = ims[0]->h, w = ims[0]->w;
  Tensor x({ims.size(), 3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t n = 0; n < ims.size(); ++n) {
    const Image& im = *ims[n];
    if (im.h != h || im.w != w) throw std::invalid_argument("batch_images: mixed image sizes in batch");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int ch = 0; ch < 3; ++ch) x.at4(n, ch, r, c) = im.at(r, c, ch);
  }
  return x;
}

Tensor batch_images(const std::vector<Image>& ims) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(ims.size());
  for (const Image& im : ims) ptrs.push_back(&im);
  return batch_images(ptrs);
}

}  // namespace kwd
