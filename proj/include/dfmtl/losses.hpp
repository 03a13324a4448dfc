#pragma once

// Label-informed contrastive and cross-entropy losses with analytic
// gradients. Everything here is a pure function over Eigen dense types.

#include "dfmtl/types.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace dfmtl {

enum class Stream { binary, multiclass };

/// Contrastive temperature; always strictly positive.
template <typename Scalar>
class Temperature {
 public:
  explicit Temperature(Scalar tau) : tau_(tau) {
    require(tau > Scalar(0) && std::isfinite(static_cast<double>(tau)),
            "temperature must be positive and finite");
  }
  Scalar value() const { return tau_; }

 private:
  Scalar tau_;
};

/// Indices into the queue: same-label slots and their complement.
struct PoolIndex {
  std::vector<int> positives;
  std::vector<int> negatives;
};

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar dot_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
  require(a.size() == b.size(), "dot_similarity: dimension mismatch");
  return a.reshaped().dot(b.reshaped());
}

inline int collapse_to_binary(int multi_label) { return multi_label > 0 ? 1 : 0; }

inline PoolIndex build_pools(int anchor_multi_label, std::span<const int> queue_multi_labels,
                             Stream stream) {
  auto key = [stream](int label) {
    return stream == Stream::binary ? collapse_to_binary(label) : label;
  };
  const int anchor = key(anchor_multi_label);
  PoolIndex pools;
  for (int slot = 0; slot < static_cast<int>(queue_multi_labels.size()); ++slot) {
    if (key(queue_multi_labels[slot]) == anchor)
      pools.positives.push_back(slot);
    else
      pools.negatives.push_back(slot);
  }
  return pools;
}

template <typename Scalar>
struct InfoNceResult {
  Scalar loss = Scalar(0);
  Vec<Scalar> grad;  // d loss / d anchor
  bool skipped = false;
};

/// Multi-instance Info-NCE for one anchor against a queue of keys (one key
/// per column). Keys are constants; only the anchor gradient is returned.
/// An empty positive pool yields a skipped result with zero loss.
template <typename Scalar>
InfoNceResult<Scalar> multi_instance_info_nce(const Eigen::Ref<const Vec<Scalar>>& anchor,
                                              const Eigen::Ref<const Mat<Scalar>>& keys,
                                              const PoolIndex& pools, Temperature<Scalar> tau) {
  require(keys.rows() == anchor.size(), "info_nce: key/anchor dimension mismatch");
  InfoNceResult<Scalar> out;
  out.grad = Vec<Scalar>::Zero(anchor.size());
  if (pools.positives.empty()) {
    out.skipped = true;
    return out;
  }
  const Scalar inv_tau = Scalar(1) / tau.value();

  // Stable log-sum-exp over both pools.
  auto logits = [&](const std::vector<int>& idx) {
    Vec<Scalar> s(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      require(idx[j] >= 0 && idx[j] < keys.cols(), "info_nce: pool index out of range");
      s[static_cast<Eigen::Index>(j)] = keys.col(idx[j]).dot(anchor) * inv_tau;
    }
    return s;
  };
  const Vec<Scalar> pos = logits(pools.positives);
  const Vec<Scalar> neg = logits(pools.negatives);
  // Each log-sum-exp gets its own shift so a negative pool that dominates
  // by hundreds of nats cannot underflow the positive sum.
  const Scalar pos_shift = pos.maxCoeff();
  const Scalar shift = neg.size() > 0 ? std::max(pos_shift, neg.maxCoeff()) : pos_shift;
  const Vec<Scalar> pos_own = (pos.array() - pos_shift).exp().matrix();
  const Vec<Scalar> pos_w = (pos.array() - shift).exp().matrix();
  const Vec<Scalar> neg_w = (neg.array() - shift).exp().matrix();
  const Scalar all_sum = pos_w.sum() + neg_w.sum();
  const Scalar lse_all = shift + std::log(all_sum);
  const Scalar lse_pos = pos_shift + std::log(pos_own.sum());

  // -log(pos/all) = LSE(all) - LSE(pos); clamp the rounding residue at 0.
  out.loss = std::max(Scalar(0), lse_all - lse_pos);
  if (neg.size() == 0) out.loss = Scalar(0);

  // grad = (1/tau) * (E_all[z] - E_pos[z])
  const Scalar pos_total = pos_own.sum();
  for (std::size_t j = 0; j < pools.positives.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    out.grad += (pos_w[i] / all_sum - pos_own[i] / pos_total) * keys.col(pools.positives[j]);
  }
  for (std::size_t j = 0; j < pools.negatives.size(); ++j)
    out.grad += (neg_w[static_cast<Eigen::Index>(j)] / all_sum) * keys.col(pools.negatives[j]);
  out.grad *= inv_tau;
  return out;
}

template <typename Scalar>
struct BatchContrastResult {
  Scalar loss = Scalar(0);
  Mat<Scalar> grad;  // d loss / d anchors, same shape as the anchor matrix
  int used = 0;
  int skipped = 0;
};

/// Mean Info-NCE over the anchors (columns) whose positive pool is nonempty.
template <typename Scalar>
BatchContrastResult<Scalar> batch_contrastive_loss(const Eigen::Ref<const Mat<Scalar>>& anchors,
                                                   std::span<const int> anchor_multi_labels,
                                                   const Eigen::Ref<const Mat<Scalar>>& keys,
                                                   std::span<const int> key_multi_labels,
                                                   Stream stream, Temperature<Scalar> tau) {
  require(anchors.cols() == static_cast<Eigen::Index>(anchor_multi_labels.size()),
          "batch_contrastive_loss: one label per anchor");
  require(keys.cols() == static_cast<Eigen::Index>(key_multi_labels.size()),
          "batch_contrastive_loss: one label per key");
  BatchContrastResult<Scalar> out;
  out.grad = Mat<Scalar>::Zero(anchors.rows(), anchors.cols());
  if (keys.cols() == 0) {
    out.skipped = static_cast<int>(anchors.cols());
    spdlog::warn("contrastive loss: key queue is empty, batch skipped");
    return out;
  }
  for (Eigen::Index i = 0; i < anchors.cols(); ++i) {
    const auto pools = build_pools(anchor_multi_labels[i], key_multi_labels, stream);
    auto r = multi_instance_info_nce<Scalar>(anchors.col(i), keys, pools, tau);
    if (r.skipped) {
      ++out.skipped;
      continue;
    }
    ++out.used;
    out.loss += r.loss;
    out.grad.col(i) = r.grad;
  }
  if (out.used == 0) {
    spdlog::warn("contrastive loss: every anchor had an empty positive pool");
    return out;
  }
  out.loss /= Scalar(out.used);
  out.grad /= Scalar(out.used);
  return out;
}

template <typename Scalar>
struct CrossEntropyResult {
  Scalar loss = Scalar(0);
  Vec<Scalar> grad;  // d loss / d logits
};

template <typename Scalar>
Vec<Scalar> softmax(const Eigen::Ref<const Vec<Scalar>>& logits) {
  Vec<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

template <typename Scalar>
CrossEntropyResult<Scalar> cross_entropy(const Eigen::Ref<const Vec<Scalar>>& logits, int target) {
  require(target >= 0 && target < logits.size(), "cross_entropy: target out of range");
  const Scalar shift = logits.maxCoeff();
  const Scalar lse = shift + std::log((logits.array() - shift).exp().sum());
  CrossEntropyResult<Scalar> out;
  out.loss = lse - logits[target];
  out.grad = (logits.array() - lse).exp().matrix();
  out.grad[target] -= Scalar(1);
  return out;
}

template <typename Scalar>
struct BatchCrossEntropyResult {
  Scalar loss = Scalar(0);
  Mat<Scalar> grad;  // classes x batch
};

/// Mean cross-entropy over the columns of a logits matrix.
template <typename Scalar>
BatchCrossEntropyResult<Scalar> batch_cross_entropy(const Eigen::Ref<const Mat<Scalar>>& logits,
                                                    std::span<const int> targets) {
  require(logits.cols() == static_cast<Eigen::Index>(targets.size()),
          "batch_cross_entropy: one target per column");
  BatchCrossEntropyResult<Scalar> out;
  out.grad = Mat<Scalar>::Zero(logits.rows(), logits.cols());
  if (logits.cols() == 0) return out;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    auto r = cross_entropy<Scalar>(logits.col(i), targets[i]);
    out.loss += r.loss;
    out.grad.col(i) = r.grad;
  }
  const Scalar n = Scalar(logits.cols());
  out.loss /= n;
  out.grad /= n;
  return out;
}

/// Column-wise L2 normalisation and its backward pass.
template <typename Scalar>
Mat<Scalar> l2_normalize_columns(const Eigen::Ref<const Mat<Scalar>>& v) {
  Mat<Scalar> z = v;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const Scalar n = z.col(j).norm();
    z.col(j) /= std::max(n, std::numeric_limits<Scalar>::min());
  }
  return z;
}

template <typename Scalar>
Mat<Scalar> l2_normalize_backward(const Eigen::Ref<const Mat<Scalar>>& v,
                                  const Eigen::Ref<const Mat<Scalar>>& dz) {
  Mat<Scalar> dv(v.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const Scalar n = std::max(v.col(j).norm(), std::numeric_limits<Scalar>::min());
    const Vec<Scalar> z = v.col(j) / n;
    dv.col(j) = (dz.col(j) - z * z.dot(dz.col(j))) / n;
  }
  return dv;
}

}  // namespace dfmtl
