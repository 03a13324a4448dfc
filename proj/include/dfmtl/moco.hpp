#pragma once

// Momentum-contrast state: the EMA rule for the key path and the labelled
// FIFO queue of key embeddings.

#include "dfmtl/losses.hpp"
#include "dfmtl/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace dfmtl {

/// key <- m * key + (1 - m) * main, elementwise.
template <typename DerivedK, typename DerivedM>
void ema_update(Eigen::MatrixBase<DerivedK>& key, const Eigen::MatrixBase<DerivedM>& main,
                typename DerivedK::Scalar momentum) {
  using Scalar = typename DerivedK::Scalar;
  require(key.size() == main.size(), "ema_update: parameter length mismatch");
  require(momentum >= Scalar(0) && momentum <= Scalar(1), "ema_update: momentum outside [0,1]");
  key = momentum * key + (Scalar(1) - momentum) * main;
}

template <typename Scalar>
struct EmaPair {
  Vec<Scalar> main_params;
  Vec<Scalar> key_params;
  Scalar momentum = Scalar(0.999);

  void update() { ema_update(key_params, main_params, momentum); }
};

/// Fixed-capacity FIFO of (key embedding, multi-class label). Stored keys
/// are plain values; nothing here carries gradient state.
template <typename Scalar>
class KeyQueue {
 public:
  KeyQueue(Eigen::Index dim, Eigen::Index capacity)
      : slots_(Mat<Scalar>::Zero(dim, capacity)), labels_(static_cast<std::size_t>(capacity), 0) {
    require(dim > 0, "KeyQueue: dimension must be positive");
    require(capacity > 0, "KeyQueue: capacity must be positive");
  }

  Eigen::Index dim() const { return slots_.rows(); }
  Eigen::Index capacity() const { return slots_.cols(); }
  Eigen::Index size() const { return size_; }
  bool empty() const { return size_ == 0; }

  void push(const Eigen::Ref<const Vec<Scalar>>& key, int multi_label) {
    require(key.size() == dim(), "KeyQueue::push: key dimension mismatch");
    slots_.col(head_) = key;
    labels_[static_cast<std::size_t>(head_)] = multi_label;
    head_ = (head_ + 1) % capacity();
    if (size_ < capacity()) ++size_;
  }

  /// Enqueue the columns of `keys` in order.
  void enqueue(const Eigen::Ref<const Mat<Scalar>>& keys, std::span<const int> multi_labels) {
    require(keys.cols() == static_cast<Eigen::Index>(multi_labels.size()),
            "KeyQueue::enqueue: one label per key");
    for (Eigen::Index j = 0; j < keys.cols(); ++j) push(keys.col(j), multi_labels[j]);
  }

  /// Keys in insertion order, oldest first (dim x size).
  Mat<Scalar> keys() const {
    Mat<Scalar> out(dim(), size_);
    for (Eigen::Index i = 0; i < size_; ++i) out.col(i) = slots_.col(physical(i));
    return out;
  }

  /// Labels aligned index-for-index with keys().
  std::vector<int> snapshot_labels() const {
    std::vector<int> out(static_cast<std::size_t>(size_));
    for (Eigen::Index i = 0; i < size_; ++i)
      out[static_cast<std::size_t>(i)] = labels_[static_cast<std::size_t>(physical(i))];
    return out;
  }

  void clear() {
    size_ = 0;
    head_ = 0;
  }

 private:
  Eigen::Index physical(Eigen::Index logical) const {
    const Eigen::Index oldest = size_ < capacity() ? 0 : head_;
    return (oldest + logical) % capacity();
  }

  Mat<Scalar> slots_;
  std::vector<int> labels_;
  Eigen::Index head_ = 0;
  Eigen::Index size_ = 0;
};

template <typename Scalar>
BatchContrastResult<Scalar> batch_contrastive_loss(const Eigen::Ref<const Mat<Scalar>>& anchors,
                                                   std::span<const int> anchor_multi_labels,
                                                   const KeyQueue<Scalar>& queue, Stream stream,
                                                   Temperature<Scalar> tau) {
  const Mat<Scalar> keys = queue.keys();
  const std::vector<int> labels = queue.snapshot_labels();
  return batch_contrastive_loss<Scalar>(anchors, anchor_multi_labels, keys, labels, stream, tau);
}

}  // namespace dfmtl
