#include "kwd/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kwd {

KeyQueue::KeyQueue(std::size_t capacity, std::size_t dim) : cap_(capacity), dim_(dim) {
  if (capacity == 0 || dim == 0) throw std::invalid_argument("queue: capacity and dim must be positive");
  storage_.assign(cap_ * dim_, 0.0);
}

void KeyQueue::push(const Tensor& keys) {
  ensure_rank(keys, 2, "queue push");
  if (keys.shape[1] != dim_)
    throw std::invalid_argument("queue: key dim " + std::to_string(keys.shape[1]) + " does not match queue dim " +
                                std::to_string(dim_));
  const std::size_t n = keys.shape[0];
  if (n == 0) throw std::invalid_argument("queue: empty push");
  if (n > cap_)
    throw std::invalid_argument("queue: batch of " + std::to_string(n) + " exceeds capacity " +
                                std::to_string(cap_));
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t t = 0; t < dim_; ++t) sq += keys.at2(i, t) * keys.at2(i, t);
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
      throw std::invalid_argument("queue: key row " + std::to_string(i) + " is not unit-norm");
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(keys.data.data() + i * dim_, dim_, storage_.data() + cursor_ * dim_);
    cursor_ = (cursor_ + 1) % cap_;
    if (fill_ < cap_) ++fill_;
  }
}

Tensor KeyQueue::contents() const {
  Tensor out({fill_, dim_});
  // Oldest entry: at cursor_ when full, else at slot 0.
  const std::size_t start = full() ? cursor_ : 0;
  for (std::size_t i = 0; i < fill_; ++i) {
    const std::size_t slot = (start + i) % cap_;
    std::copy_n(storage_.data() + slot * dim_, dim_, out.data.data() + i * dim_);
  }
  return out;
}

void KeyQueue::restore(std::vector<double> storage, std::size_t cursor, std::size_t fill) {
  if (storage.size() != cap_ * dim_) throw std::invalid_argument("queue: restore storage size mismatch");
  if (cursor >= cap_ || fill > cap_) throw std::invalid_argument("queue: restore cursor/fill out of range");
  storage_ = std::move(storage);
  cursor_ = cursor;
  fill_ = fill;
}

// ---------------------------------------------------------------- InfoNCE

InfoNceResult infonce(const std::vector<double>& q, const std::vector<double>& k_pos, const KeyQueue& negatives,
                      double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("infonce: temperature must be positive");
  if (q.size() != k_pos.size() || q.size() != negatives.dim())
    throw std::invalid_argument("infonce: dimension mismatch");
  if (negatives.size() == 0) throw std::invalid_argument("infonce: negative queue is empty");

  const std::size_t d = q.size();
  const std::size_t m = negatives.size();
  const Tensor negs = negatives.contents();

  // Logit 0 is the positive, logits 1..m the queue entries.
  std::vector<double> logits(m + 1);
  logits[0] = std::inner_product(q.begin(), q.end(), k_pos.begin(), 0.0) / tau;
  for (std::size_t j = 0; j < m; ++j) {
    const double* kj = negs.data.data() + j * d;
    logits[j + 1] = std::inner_product(q.begin(), q.end(), kj, 0.0) / tau;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - mx);

  InfoNceResult res;
  res.loss = std::log(denom) - (logits[0] - mx);
  res.grad_q.assign(d, 0.0);
  for (std::size_t j = 0; j <= m; ++j) {
    const double p = std::exp(logits[j] - mx) / denom;
    const double coef = (j == 0 ? p - 1.0 : p) / tau;
    const double* kj = (j == 0) ? k_pos.data() : negs.data.data() + (j - 1) * d;
    for (std::size_t t = 0; t < d; ++t) res.grad_q[t] += coef * kj[t];
  }
  return res;
}

double infonce_batch(const Tensor& q, const Tensor& k_pos, const KeyQueue& negatives, double tau, Tensor* grad_q) {
  ensure_rank(q, 2, "infonce");
  if (!q.same_shape(k_pos)) throw std::invalid_argument("infonce: query/key shape mismatch");
  const std::size_t n = q.shape[0], d = q.shape[1];
  if (n == 0) throw std::invalid_argument("infonce: empty batch");
  if (grad_q) *grad_q = Tensor({n, d});
  double total = 0.0;
  std::vector<double> qi(d), ki(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(q.data.data() + i * d, d, qi.data());
    std::copy_n(k_pos.data.data() + i * d, d, ki.data());
    InfoNceResult r = infonce(qi, ki, negatives, tau);
    total += r.loss;
    if (grad_q)
      for (std::size_t t = 0; t < d; ++t) grad_q->at2(i, t) = r.grad_q[t] / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------- k-means

// Centroid from its producing rows: normalised mean (spherical) or plain
// mean (euclidean). Centroids are always recomputed through this one routine
// so they can be reproduced bit-for-bit from `members`.
static void centroid_from_members(const Tensor& g, const std::vector<int>& members, KmeansMetric metric,
                                  double* out, std::size_t d) {
  std::fill_n(out, d, 0.0);
  for (int idx : members)
    for (std::size_t t = 0; t < d; ++t) out[t] += g.at2(static_cast<std::size_t>(idx), t);
  const double inv = 1.0 / static_cast<double>(members.size());
  for (std::size_t t = 0; t < d; ++t) out[t] *= inv;
  if (metric == KmeansMetric::spherical) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += out[t] * out[t];
    const double norm = std::sqrt(s);
    if (norm == 0.0) throw std::runtime_error("kmeans: zero-norm centroid mean");
    for (std::size_t t = 0; t < d; ++t) out[t] /= norm;
  }
}

static double point_score(const Tensor& g, std::size_t i, const double* c, std::size_t d, KmeansMetric metric) {
  if (metric == KmeansMetric::spherical) {
    double dot = 0.0;
    for (std::size_t t = 0; t < d; ++t) dot += g.at2(i, t) * c[t];
    return dot;  // higher is closer
  }
  double dist = 0.0;
  for (std::size_t t = 0; t < d; ++t) {
    const double diff = g.at2(i, t) - c[t];
    dist += diff * diff;
  }
  return -dist;  // higher is closer
}

ClusterResult local_kmeans(const Tensor& g, std::size_t k, Rng& rng, KmeansMetric metric, std::size_t max_iters) {
  ensure_rank(g, 2, "kmeans");
  const std::size_t n = g.shape[0], d = g.shape[1];
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (n < k)
    throw std::invalid_argument("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) +
                                " clusters");
  if (max_iters == 0) throw std::invalid_argument("kmeans: max_iters must be positive");

  ClusterResult res;
  res.centroids = Tensor({k, d});
  res.members.assign(k, {});

  // Init: k distinct rows chosen by a partial Fisher-Yates shuffle.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
    res.members[i] = {static_cast<int>(idx[i])};
  }
  for (std::size_t c = 0; c < k; ++c)
    centroid_from_members(g, res.members[c], metric, res.centroids.data.data() + c * d, d);

  std::vector<int> prev;
  res.assignment.assign(n, 0);
  for (std::size_t pass = 0; pass < max_iters; ++pass) {
    // Assign, ties to the lowest centroid index.
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_score = point_score(g, i, res.centroids.data.data(), d, metric);
      for (std::size_t c = 1; c < k; ++c) {
        const double s = point_score(g, i, res.centroids.data.data() + c * d, d, metric);
        if (s > best_score) {
          best_score = s;
          best = static_cast<int>(c);
        }
      }
      res.assignment[i] = best;
      inertia += (metric == KmeansMetric::spherical) ? 1.0 - best_score : -best_score;
    }
    res.inertia_trace.push_back(inertia);
    res.inertia = inertia;
    if (res.assignment == prev) break;
    prev = res.assignment;
    if (pass + 1 == max_iters) break;  // keep centroids consistent with the last assignment

    // Update producing sets; empty clusters take the globally farthest row.
    std::vector<std::vector<int>> fresh(k);
    for (std::size_t i = 0; i < n; ++i) fresh[res.assignment[i]].push_back(static_cast<int>(i));
    std::vector<bool> used(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (!fresh[c].empty()) {
        res.members[c] = std::move(fresh[c]);
        continue;
      }
      int far = -1;
      double far_score = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (used[i]) continue;
        const double s =
            point_score(g, i, res.centroids.data.data() + res.assignment[i] * d, d, metric);
        if (far < 0 || s < far_score) {
          far = static_cast<int>(i);
          far_score = s;
        }
      }
      if (far < 0) throw std::runtime_error("kmeans: cannot reseed empty cluster");
      used[far] = true;
      res.members[c] = {far};
    }
    for (std::size_t c = 0; c < k; ++c)
      centroid_from_members(g, res.members[c], metric, res.centroids.data.data() + c * d, d);
  }
  return res;
}

void recompute_centroids(ClusterResult& clusters, const Tensor& g, KmeansMetric metric) {
  ensure_rank(g, 2, "kmeans");
  const std::size_t k = clusters.centroids.shape[0], d = clusters.centroids.shape[1];
  if (clusters.members.size() != k) throw std::invalid_argument("kmeans: members/centroid count mismatch");
  if (g.shape[1] != d) throw std::invalid_argument("kmeans: embedding dim mismatch");
  for (std::size_t c = 0; c < k; ++c) {
    if (clusters.members[c].empty()) throw std::invalid_argument("kmeans: centroid without producing members");
    centroid_from_members(g, clusters.members[c], metric, clusters.centroids.data.data() + c * d, d);
  }
}

// -------------------------------------------------------------------- CLD

CldResult cld_batch(const Tensor& g_self, const Tensor& g_other, const ClusterResult& clusters_other, double tau,
                    KmeansMetric metric) {
  if (!(tau > 0.0)) throw std::invalid_argument("cld: temperature must be positive");
  ensure_rank(g_self, 2, "cld");
  const std::size_t n = g_self.shape[0], d = g_self.shape[1];
  if (!g_self.same_shape(g_other)) throw std::invalid_argument("cld: branch shapes differ");
  if (clusters_other.assignment.size() != n)
    throw std::invalid_argument("cld: assignment size does not match batch");
  const std::size_t k = clusters_other.centroids.shape[0];
  if (clusters_other.centroids.shape[1] != d) throw std::invalid_argument("cld: centroid dim mismatch");

  CldResult res;
  res.grad_self = Tensor({n, d});
  res.grad_other = Tensor({n, d});
  Tensor dcent({k, d});

  std::vector<double> logits(k), probs(k);
  const double invn = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int target = clusters_other.assignment[i];
    if (target < 0 || static_cast<std::size_t>(target) >= k)
      throw std::invalid_argument("cld: target cluster out of range");
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += g_self.at2(i, t) * clusters_other.centroids.at2(c, t);
      logits[c] = dot / tau;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      probs[c] = std::exp(logits[c] - mx);
      denom += probs[c];
    }
    for (std::size_t c = 0; c < k; ++c) probs[c] /= denom;
    res.loss += (std::log(denom) - (logits[target] - mx)) * invn;

    for (std::size_t c = 0; c < k; ++c) {
      const double dl = (probs[c] - (static_cast<int>(c) == target ? 1.0 : 0.0)) * invn / tau;
      for (std::size_t t = 0; t < d; ++t) {
        res.grad_self.at2(i, t) += dl * clusters_other.centroids.at2(c, t);
        dcent.at2(c, t) += dl * g_self.at2(i, t);
      }
    }
  }

  // Push centroid gradients back to the rows that produced them. Each
  // centroid is mean-then-normalise of its members, so backprop through the
  // normalisation first (spherical only), then share the mean gradient.
  std::vector<double> mean(d);
  for (std::size_t c = 0; c < k; ++c) {
    const std::vector<int>& mem = clusters_other.members[c];
    if (mem.empty()) throw std::invalid_argument("cld: centroid without producing members");
    std::vector<double> dmean(d);
    if (metric == KmeansMetric::spherical) {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int idx : mem)
        for (std::size_t t = 0; t < d; ++t) mean[t] += g_other.at2(static_cast<std::size_t>(idx), t);
      double norm = 0.0;
      const double invm = 1.0 / static_cast<double>(mem.size());
      for (std::size_t t = 0; t < d; ++t) {
        mean[t] *= invm;
        norm += mean[t] * mean[t];
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) throw std::runtime_error("cld: zero-norm centroid mean");
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += clusters_other.centroids.at2(c, t) * dcent.at2(c, t);
      for (std::size_t t = 0; t < d; ++t)
        dmean[t] = (dcent.at2(c, t) - dot * clusters_other.centroids.at2(c, t)) / norm;
    } else {
      for (std::size_t t = 0; t < d; ++t) dmean[t] = dcent.at2(c, t);
    }
    const double share = 1.0 / static_cast<double>(mem.size());
    for (int idx : mem)
      for (std::size_t t = 0; t < d; ++t)
        res.grad_other.at2(static_cast<std::size_t>(idx), t) += dmean[t] * share;
  }
  return res;
}

// ------------------------------------------------------------- total loss

TotalLossResult total_loss(const Tensor& q1, const Tensor& q2, const Tensor& k_pos, const Tensor& g1,
                           const Tensor& g2, const KeyQueue& queue, const LossConfig& cfg, Rng& kmeans_rng) {
  TotalLossResult res;
  Tensor dq1, dq2;
  res.inst1 = infonce_batch(q1, k_pos, queue, cfg.tau_q, &dq1);
  res.inst2 = infonce_batch(q2, k_pos, queue, cfg.tau_q, &dq2);
  for (double& v : dq1.data) v *= 0.5;
  for (double& v : dq2.data) v *= 0.5;
  res.grad_q1 = std::move(dq1);
  res.grad_q2 = std::move(dq2);
  res.total = 0.5 * (res.inst1 + res.inst2);

  const bool with_cld = cfg.cld && cfg.lambda != 0.0;
  if (with_cld) {
    if (g1.rank() != 2 || !g1.same_shape(g2) || g1.shape[0] != q1.shape[0])
      throw std::invalid_argument("total_loss: group embeddings missing or mis-shaped");
    // Two independent clustering streams, drawn in a fixed order.
    Rng rng2(kmeans_rng.u64());
    Rng rng1(kmeans_rng.u64());
    const ClusterResult c2 = local_kmeans(g2, cfg.clusters, rng2, cfg.metric, cfg.kmeans_iters);
    const ClusterResult c1 = local_kmeans(g1, cfg.clusters, rng1, cfg.metric, cfg.kmeans_iters);
    const CldResult r1 = cld_batch(g1, g2, c2, cfg.tau_g, cfg.metric);  // branch 1 vs clusters of 2
    const CldResult r2 = cld_batch(g2, g1, c1, cfg.tau_g, cfg.metric);
    res.grp1 = r1.loss;
    res.grp2 = r2.loss;
    const double w = cfg.lambda * 0.5;
    res.grad_g1 = Tensor({g1.shape[0], g1.shape[1]});
    res.grad_g2 = Tensor({g2.shape[0], g2.shape[1]});
    for (std::size_t i = 0; i < res.grad_g1.data.size(); ++i) {
      res.grad_g1.data[i] = w * (r1.grad_self.data[i] + r2.grad_other.data[i]);
      res.grad_g2.data[i] = w * (r2.grad_self.data[i] + r1.grad_other.data[i]);
    }
    res.total += cfg.lambda * (0.5 * (res.grp1 + res.grp2));
  } else {
    res.grad_g1 = Tensor({g1.rank() == 2 ? g1.shape[0] : 0, g1.rank() == 2 ? g1.shape[1] : 0});
    res.grad_g2 = res.grad_g1;
  }
  return res;
}

}  // namespace kwd
