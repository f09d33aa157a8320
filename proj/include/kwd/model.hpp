#pragma once

#include <cstdint>
#include <vector>

#include "kwd/image.hpp"
#include "kwd/layers.hpp"

namespace kwd {

struct EncoderConfig {
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t in_ch = 3;
};

// Blocks of [conv3x3 -> relu -> maxpool2], one per width, then global average
// pooling. Feature dimension equals the last width.
Stack make_encoder(const EncoderConfig& cfg, Rng& rng);

struct HeadsConfig {
  std::size_t feature_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t embed_dim = 32;
};

// Exact row-wise L2 normalisation. Rows with zero norm raise an error.
// norms_out (optional) receives the pre-normalisation row norms.
Tensor l2_normalize_rows(const Tensor& y, Tensor* norms_out = nullptr);
// Backward through y/||y||: dY = (dQ - (q . dQ) q) / ||y|| per row.
Tensor l2_normalize_rows_backward(const Tensor& grad_q, const Tensor& q, const Tensor& norms);

// Two-layer projection MLP with a shared hidden layer and separate final
// layers for the instance and group embeddings. Outputs are unit rows.
struct Heads {
  Linear hidden;
  Relu act;
  Linear inst;
  Linear grp;

  Heads(const HeadsConfig& cfg);

  struct Ctx {
    LayerCtx hidden, act, inst, grp;
    Tensor q, g;            // normalised outputs
    Tensor q_norms, g_norms;
    bool with_group = false;
  };

  // Forward both branches (group branch optional). Returns nothing; results
  // live in ctx.q / ctx.g.
  void forward(const Tensor& z, Ctx& ctx, bool with_group);
  // Backward from gradients on the normalised embeddings; returns grad wrt z.
  // grad_g is ignored when the forward ran without the group branch.
  Tensor backward(const Tensor& grad_q, const Tensor& grad_g, Ctx& ctx);

  std::vector<ParamView> params();           // hidden + inst + grp
  std::vector<ParamView> momentum_params();  // hidden + inst only
  void zero_grads();
};

// Single-branch convenience used by export and tests.
Tensor project_instance(Heads& heads, const Tensor& z);

// target <- m*target + (1-m)*source, elementwise over matching parameters.
// Counts, names and shapes must line up exactly.
void momentum_update(const std::vector<ParamView>& target, const std::vector<ParamView>& source, double m);

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t hidden_dim = 128;
  std::size_t embed_dim = 32;
};

// Query tower plus its momentum twin. The key tower tracks the encoder, the
// shared hidden layer and the instance head; the group head has no twin.
struct Model {
  Stack enc_q;
  Heads heads_q;
  Stack enc_k;
  Linear k_hidden;
  Relu k_act;
  Linear k_inst;
  ModelConfig cfg;

  Model(const ModelConfig& cfg, std::uint64_t seed);

  std::size_t feature_dim() const { return cfg.encoder.widths.back(); }
  std::size_t embed_dim() const { return cfg.embed_dim; }

  std::vector<ParamView> trainable_params();  // enc_q + all heads
  std::vector<ParamView> key_params();        // enc_k + k_hidden + k_inst
  std::vector<ParamView> query_momentum_sources();

  void momentum_step(double m);
  // Sync key tower from the query tower (used at init and after load).
  void copy_query_to_key();

  // Forward the key tower on a batch (no gradients kept): unit-row keys.
  Tensor encode_keys(const Tensor& x);
};

// Convert images (HWC interleaved) to a NCHW batch tensor.
Tensor batch_images(const std::vector<const Image*>& ims);
Tensor batch_images(const std::vector<Image>& ims);

}  // namespace kwd
