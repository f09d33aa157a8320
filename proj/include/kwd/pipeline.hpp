#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "kwd/checkpoint.hpp"
#include "kwd/config.hpp"
#include "kwd/dataset.hpp"
#include "kwd/metrics.hpp"
#include "kwd/model.hpp"

namespace kwd {

// Complete training state: everything needed to stop and resume bit-exactly.
// Randomness is stateless (streams derived from the seed plus epoch/sample
// indices), so the stored seed fully captures the generator state.
struct TrainState {
  Config cfg;
  Model model;
  KeyQueue queue;
  SgdState opt;
  std::size_t epoch = 0;  // completed epochs

  explicit TrainState(const Config& cfg);
};

void save_train_state(const TrainState& st, const std::string& path);
TrainState load_train_state(const std::string& path);

// Runs epochs [st.epoch, until_epoch). The cosine schedule always spans
// cfg.train.epochs, so interrupted-and-resumed training matches an
// uninterrupted run exactly. The queue is pre-filled with one warm-up pass
// of key encodings before the first gradient step. Loss log lines:
// `epoch batch L_total L_q1 L_q2 L_g1 L_g2 lr`.
struct PretrainStats {
  std::size_t batches_run = 0;
  double last_total = 0.0;
};
PretrainStats pretrain(TrainState& st, const PatchSet& data, std::size_t until_epoch, std::ostream* loss_log);

// Frozen global-average-pooling features of the query encoder, no heads.
// center > 0 center-crops each patch first. Patches may have mixed sizes.
Tensor backbone_features(Model& model, const std::vector<Image>& patches, int center = 0);

struct ProbeResult {
  Metrics test;
  Metrics train;
  Tensor clf_weight;  // [2, s]
  Tensor clf_bias;    // [2]
};

// Linear classifier on frozen features (mode=frozen of the evaluation
// protocol). fraction subsamples train labels, class-stratified.
ProbeResult linear_probe(Model& model, const LabeledDataset& ds, double fraction, const Config& cfg,
                         std::uint64_t seed);

// End-to-end: encoder and classifier both train. Modifies `model`.
ProbeResult finetune(Model& model, const LabeledDataset& ds, double fraction, const Config& cfg,
                     std::uint64_t seed);

// Evaluate a stored classifier on one split.
Metrics evaluate_classifier(Model& model, const Tensor& clf_weight, const Tensor& clf_bias,
                            const LabeledDataset& ds, const std::string& split, const Config& cfg);

// One line per patch `<id>,<label>,<f1>,...`, header `#kwd-embeddings v1,dim=<s>`.
void export_embeddings(Model& model, const LabeledDataset& ds, const Config& cfg, std::ostream& out);

// Mean softmax cross-entropy over rows; dlogits (optional) gets the gradient.
double softmax_ce(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits);

}  // namespace kwd
