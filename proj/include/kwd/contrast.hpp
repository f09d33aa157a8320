#pragma once

#include <cstddef>
#include <vector>

#include "kwd/rng.hpp"
#include "kwd/tensor.hpp"

namespace kwd {

// Fixed-capacity FIFO ring of unit-norm key embeddings. Pushing a batch
// overwrites the oldest entries once the queue is full.
class KeyQueue {
 public:
  KeyQueue(std::size_t capacity, std::size_t dim);

  void push(const Tensor& keys);  // [n, dim], n <= capacity
  std::size_t size() const { return fill_; }
  std::size_t capacity() const { return cap_; }
  std::size_t dim() const { return dim_; }
  bool full() const { return fill_ == cap_; }

  // Entries in age order, oldest first: [size, dim].
  Tensor contents() const;

  // Raw ring state for checkpointing.
  const std::vector<double>& storage() const { return storage_; }
  std::size_t cursor() const { return cursor_; }
  void restore(std::vector<double> storage, std::size_t cursor, std::size_t fill);

 private:
  std::size_t cap_, dim_;
  std::size_t cursor_ = 0;  // next write slot
  std::size_t fill_ = 0;
  std::vector<double> storage_;  // cap * dim
};

// InfoNCE for one query against its positive key and the queue as negatives.
struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> grad_q;  // dL/dq
};
InfoNceResult infonce(const std::vector<double>& q, const std::vector<double>& k_pos, const KeyQueue& negatives,
                      double tau);
// Batch mean over rows; if grad_q is non-null it receives dL/dQ (already
// divided by the batch size).
double infonce_batch(const Tensor& q, const Tensor& k_pos, const KeyQueue& negatives, double tau, Tensor* grad_q);

enum class KmeansMetric { spherical, euclidean };

struct ClusterResult {
  Tensor centroids;                       // [k, dim]
  std::vector<int> assignment;            // per input row, consistent with centroids
  double inertia = 0.0;                   // sum of (1 - g.c) over rows (spherical)
  std::vector<std::vector<int>> members;  // rows whose mean produced each centroid
  std::vector<double> inertia_trace;      // one entry per assignment pass
};

// Local spherical k-means on unit rows: init from k distinct rows, assignment
// by maximal dot product (ties to the lowest centroid index), centroid update
// by normalised mean, empty clusters reseeded with the globally farthest row.
// Runs at most max_iters assignment passes or until assignments are stable.
ClusterResult local_kmeans(const Tensor& g, std::size_t k, Rng& rng, KmeansMetric metric = KmeansMetric::spherical,
                           std::size_t max_iters = 10);

// Rebuild `clusters.centroids` from `clusters.members` and the rows of `g`.
// Centroids are a pure function of their member sets, so this reproduces the
// stored values bit for bit; used to re-evaluate centroids under perturbed
// embeddings (e.g. in gradient checks) with the member sets held fixed.
void recompute_centroids(ClusterResult& clusters, const Tensor& g, KmeansMetric metric);

// Cross-level discrimination: softmax cross-entropy of one branch's group
// embeddings against the other branch's centroids, target = the counterpart
// sample's cluster. Gradients flow both into `g_self` and, through the
// normalised-mean recomputation of the centroids, into `g_other`.
struct CldResult {
  double loss = 0.0;
  Tensor grad_self;   // [n, dim]
  Tensor grad_other;  // [n, dim]
};
CldResult cld_batch(const Tensor& g_self, const Tensor& g_other, const ClusterResult& clusters_other, double tau,
                    KmeansMetric metric);

struct LossConfig {
  double tau_q = 0.2;
  double tau_g = 0.4;
  double lambda = 0.25;
  std::size_t clusters = 8;
  std::size_t kmeans_iters = 10;
  KmeansMetric metric = KmeansMetric::spherical;
  bool cld = true;
};

// Symmetric total objective:
//   L = 1/2 (L_q1 + L_q2) + lambda * 1/2 (L_g1 + L_g2).
// With cld disabled or lambda == 0 the group terms are skipped entirely and
// reported as exact zeros, so the instance path is bit-identical to plain
// momentum-contrast training.
struct TotalLossResult {
  double total = 0.0;
  double inst1 = 0.0, inst2 = 0.0;
  double grp1 = 0.0, grp2 = 0.0;
  Tensor grad_q1, grad_q2;
  Tensor grad_g1, grad_g2;
};
TotalLossResult total_loss(const Tensor& q1, const Tensor& q2, const Tensor& k_pos, const Tensor& g1,
                           const Tensor& g2, const KeyQueue& queue, const LossConfig& cfg, Rng& kmeans_rng);

}  // namespace kwd
