#pragma once

// Minimal differentiable layers over Eigen dense matrices.
//
// Layers are stateless descriptors: parameters live in a flat vector owned
// by the caller and each layer knows its slot(s) inside it. That keeps the
// EMA copy of a network a plain vector of the same layout.
//
// Activation layout: rows = channels/features, columns = samples (dense
// layers) or sample-major blocks of spatio-temporal positions (conv layers).

#include "dfmtl/types.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace dfmtl::nn {

struct ParamSlot {
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index size() const { return rows * cols; }
};

class ParamLayout {
 public:
  ParamSlot add(Eigen::Index rows, Eigen::Index cols) {
    ParamSlot s{next_, rows, cols};
    next_ += rows * cols;
    return s;
  }
  Eigen::Index size() const { return next_; }

 private:
  Eigen::Index next_ = 0;
};

template <typename Scalar>
Eigen::Map<Mat<Scalar>> view(Vec<Scalar>& flat, const ParamSlot& s) {
  return {flat.data() + s.offset, s.rows, s.cols};
}

template <typename Scalar>
Eigen::Map<const Mat<Scalar>> view(const Vec<Scalar>& flat, const ParamSlot& s) {
  return {flat.data() + s.offset, s.rows, s.cols};
}

using Rng = std::mt19937_64;

template <typename Scalar>
void fill_normal(Eigen::Map<Mat<Scalar>> m, Scalar stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
Mat<Scalar> relu(const Mat<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
Mat<Scalar> relu_backward(const Mat<Scalar>& y, const Mat<Scalar>& dy) {
  return (y.array() > Scalar(0)).select(dy.array(), Scalar(0)).matrix();
}

/// y = W x + b
template <typename Scalar>
class Linear {
 public:
  Linear(ParamLayout& layout, Eigen::Index in, Eigen::Index out)
      : weight_(layout.add(out, in)), bias_(layout.add(out, 1)) {}

  Eigen::Index in_features() const { return weight_.cols; }
  Eigen::Index out_features() const { return weight_.rows; }

  void init(Vec<Scalar>& params, Rng& rng) const {
    fill_normal<Scalar>(view(params, weight_), std::sqrt(Scalar(2) / Scalar(in_features())), rng);
    view(params, bias_).setZero();
  }

  Mat<Scalar> forward(const Vec<Scalar>& params, const Mat<Scalar>& x) const {
    require(x.rows() == in_features(), "Linear: input feature mismatch");
    Mat<Scalar> y = view(params, weight_) * x;
    y.colwise() += view(params, bias_).col(0);
    return y;
  }

  /// Accumulates parameter gradients into `grad`; returns d loss / d x.
  Mat<Scalar> backward(const Vec<Scalar>& params, const Mat<Scalar>& x, const Mat<Scalar>& dy,
                       Vec<Scalar>& grad) const {
    view(grad, weight_).noalias() += dy * x.transpose();
    view(grad, bias_).col(0) += dy.rowwise().sum();
    return view(params, weight_).transpose() * dy;
  }

 private:
  ParamSlot weight_;
  ParamSlot bias_;
};

/// Stack of affine layers with ReLU between them (none after the last).
template <typename Scalar>
class Mlp {
 public:
  struct Trace {
    std::vector<Mat<Scalar>> inputs;  // input to each affine layer
    Mat<Scalar> output;
  };

  Mlp() = default;

  /// widths = {in, hidden..., out}
  Mlp(ParamLayout& layout, const std::vector<Eigen::Index>& widths) {
    require(widths.size() >= 2, "Mlp: need at least input and output width");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers_.emplace_back(layout, widths[i], widths[i + 1]);
  }

  std::size_t affine_layers() const { return layers_.size(); }
  Eigen::Index in_features() const { return layers_.front().in_features(); }
  Eigen::Index out_features() const { return layers_.back().out_features(); }

  void init(Vec<Scalar>& params, Rng& rng) const {
    for (const auto& l : layers_) l.init(params, rng);
  }

  Trace forward(const Vec<Scalar>& params, const Mat<Scalar>& x) const {
    Trace t;
    Mat<Scalar> a = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      t.inputs.push_back(a);
      a = layers_[i].forward(params, a);
      if (i + 1 < layers_.size()) a = relu(a);
    }
    t.output = std::move(a);
    return t;
  }

  Mat<Scalar> backward(const Vec<Scalar>& params, const Trace& t, const Mat<Scalar>& dy,
                       Vec<Scalar>& grad) const {
    Mat<Scalar> d = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      d = layers_[i].backward(params, t.inputs[i], d, grad);
      // Input to layer i was relu(previous pre-activation) for i > 0.
      if (i > 0) d = relu_backward<Scalar>(t.inputs[i], d);
    }
    return d;
  }

 private:
  std::vector<Linear<Scalar>> layers_;
};

struct VolumeShape {
  Eigen::Index frames = 0;
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  Eigen::Index positions() const { return frames * height * width; }
  bool operator==(const VolumeShape&) const = default;
};

/// 3x3x3 convolution, stride 2 in every axis, zero padding 1, via im2col.
/// Column rows are ordered (kernel offset, input channel).
template <typename Scalar>
class Conv3d {
 public:
  static constexpr Eigen::Index kKernel = 3;
  static constexpr Eigen::Index kTaps = kKernel * kKernel * kKernel;
  static constexpr Eigen::Index kStride = 2;
  static constexpr Eigen::Index kPad = 1;

  Conv3d(ParamLayout& layout, Eigen::Index in_channels, Eigen::Index out_channels, VolumeShape in)
      : cin_(in_channels),
        in_(in),
        out_{downsample(in.frames), downsample(in.height), downsample(in.width)},
        weight_(layout.add(out_channels, kTaps * in_channels)),
        bias_(layout.add(out_channels, 1)) {}

  static Eigen::Index downsample(Eigen::Index n) { return (n + 2 * kPad - kKernel) / kStride + 1; }

  Eigen::Index in_channels() const { return cin_; }
  Eigen::Index out_channels() const { return weight_.rows; }
  const VolumeShape& input_shape() const { return in_; }
  const VolumeShape& output_shape() const { return out_; }

  void init(Vec<Scalar>& params, Rng& rng) const {
    fill_normal<Scalar>(view(params, weight_), std::sqrt(Scalar(2) / Scalar(kTaps * cin_)), rng);
    view(params, bias_).setZero();
  }

  Mat<Scalar> im2col(const Mat<Scalar>& x, Eigen::Index batch) const {
    require(x.rows() == cin_ && x.cols() == batch * in_.positions(), "Conv3d: input shape mismatch");
    const Eigen::Index pin = in_.positions();
    Mat<Scalar> cols = Mat<Scalar>::Zero(kTaps * cin_, batch * out_.positions());
    for (Eigen::Index b = 0; b < batch; ++b)
      for_each_tap(b, [&](Eigen::Index col, Eigen::Index tap, Eigen::Index src) {
        cols.col(col).segment(tap * cin_, cin_) = x.col(b * pin + src);
      });
    return cols;
  }

  Mat<Scalar> forward_cols(const Vec<Scalar>& params, const Mat<Scalar>& cols) const {
    Mat<Scalar> y = view(params, weight_) * cols;
    y.colwise() += view(params, bias_).col(0);
    return y;
  }

  /// Accumulates parameter gradients; returns d loss / d input when
  /// `want_input_grad` is set, an empty matrix otherwise.
  Mat<Scalar> backward(const Vec<Scalar>& params, const Mat<Scalar>& cols, const Mat<Scalar>& dy,
                       Eigen::Index batch, Vec<Scalar>& grad, bool want_input_grad) const {
    view(grad, weight_).noalias() += dy * cols.transpose();
    view(grad, bias_).col(0) += dy.rowwise().sum();
    if (!want_input_grad) return {};
    const Mat<Scalar> dcols = view(params, weight_).transpose() * dy;
    const Eigen::Index pin = in_.positions();
    Mat<Scalar> dx = Mat<Scalar>::Zero(cin_, batch * pin);
    for (Eigen::Index b = 0; b < batch; ++b)
      for_each_tap(b, [&](Eigen::Index col, Eigen::Index tap, Eigen::Index src) {
        dx.col(b * pin + src) += dcols.col(col).segment(tap * cin_, cin_);
      });
    return dx;
  }

 private:
  // Visits every in-bounds (output column, tap, input position) triple of sample b.
  template <typename F>
  void for_each_tap(Eigen::Index b, F&& f) const {
    const Eigen::Index pout = out_.positions();
    for (Eigen::Index ot = 0; ot < out_.frames; ++ot)
      for (Eigen::Index oy = 0; oy < out_.height; ++oy)
        for (Eigen::Index ox = 0; ox < out_.width; ++ox) {
          const Eigen::Index col = b * pout + (ot * out_.height + oy) * out_.width + ox;
          for (Eigen::Index kt = 0; kt < kKernel; ++kt) {
            const Eigen::Index it = ot * kStride - kPad + kt;
            if (it < 0 || it >= in_.frames) continue;
            for (Eigen::Index ky = 0; ky < kKernel; ++ky) {
              const Eigen::Index iy = oy * kStride - kPad + ky;
              if (iy < 0 || iy >= in_.height) continue;
              for (Eigen::Index kx = 0; kx < kKernel; ++kx) {
                const Eigen::Index ix = ox * kStride - kPad + kx;
                if (ix < 0 || ix >= in_.width) continue;
                const Eigen::Index tap = (kt * kKernel + ky) * kKernel + kx;
                f(col, tap, (it * in_.height + iy) * in_.width + ix);
              }
            }
          }
        }
  }

  Eigen::Index cin_;
  VolumeShape in_;
  VolumeShape out_;
  ParamSlot weight_;
  ParamSlot bias_;
};

/// Per-sample normalisation over all channels and positions (one group),
/// followed by a per-channel affine transform.
template <typename Scalar>
class GroupNorm {
 public:
  struct Cache {
    Mat<Scalar> normalized;
    Vec<Scalar> inv_std;  // one per sample
  };

  GroupNorm(ParamLayout& layout, Eigen::Index channels)
      : gamma_(layout.add(channels, 1)), beta_(layout.add(channels, 1)) {}

  void init(Vec<Scalar>& params) const {
    view(params, gamma_).setOnes();
    view(params, beta_).setZero();
  }

  Mat<Scalar> forward(const Vec<Scalar>& params, const Mat<Scalar>& x, Eigen::Index batch,
                      Cache& cache) const {
    const Eigen::Index p = x.cols() / batch;
    cache.normalized.resize(x.rows(), x.cols());
    cache.inv_std.resize(batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto xb = x.middleCols(b * p, p);
      const Scalar mean = xb.mean();
      const Scalar var = (xb.array() - mean).square().mean();
      const Scalar inv = Scalar(1) / std::sqrt(var + kEps);
      cache.inv_std[b] = inv;
      cache.normalized.middleCols(b * p, p) = ((xb.array() - mean) * inv).matrix();
    }
    Mat<Scalar> y = cache.normalized.array().colwise() * view(params, gamma_).col(0).array();
    y.colwise() += view(params, beta_).col(0);
    return y;
  }

  Mat<Scalar> backward(const Vec<Scalar>& params, const Cache& cache, const Mat<Scalar>& dy,
                       Eigen::Index batch, Vec<Scalar>& grad) const {
    const auto& xhat = cache.normalized;
    view(grad, gamma_).col(0) += (dy.array() * xhat.array()).rowwise().sum().matrix();
    view(grad, beta_).col(0) += dy.rowwise().sum();
    const Mat<Scalar> dxhat = dy.array().colwise() * view(params, gamma_).col(0).array();
    const Eigen::Index p = dy.cols() / batch;
    const Scalar n = Scalar(dy.rows() * p);
    Mat<Scalar> dx(dy.rows(), dy.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto g = dxhat.middleCols(b * p, p).array();
      const auto h = xhat.middleCols(b * p, p).array();
      const Scalar sum_g = g.sum();
      const Scalar sum_gh = (g * h).sum();
      dx.middleCols(b * p, p) = ((cache.inv_std[b] / n) * (n * g - sum_g - h * sum_gh)).matrix();
    }
    return dx;
  }

 private:
  static constexpr Scalar kEps = Scalar(1e-5);
  ParamSlot gamma_;
  ParamSlot beta_;
};

/// Small 3D-conv video encoder: blocks of conv(3x3x3, stride 2) + norm +
/// ReLU, then global average pooling to one embedding per clip.
template <typename Scalar>
class Tiny3dConv {
 public:
  struct Trace {
    Eigen::Index batch = 0;
    std::vector<Mat<Scalar>> cols;  // im2col of each block input
    std::vector<typename GroupNorm<Scalar>::Cache> norms;
    std::vector<Mat<Scalar>> activations;  // post-ReLU output of each block
  };

  Tiny3dConv() = default;

  Tiny3dConv(ParamLayout& layout, VolumeShape input, const std::vector<Eigen::Index>& channels)
      : input_(input) {
    require(!channels.empty(), "Tiny3dConv: need at least one block");
    require(input.positions() > 0, "Tiny3dConv: empty input volume");
    Eigen::Index cin = 3;
    VolumeShape shape = input;
    for (auto cout : channels) {
      convs_.emplace_back(layout, cin, cout, shape);
      norms_.emplace_back(layout, cout);
      shape = convs_.back().output_shape();
      cin = cout;
    }
  }

  const VolumeShape& input_shape() const { return input_; }
  Eigen::Index embedding_dim() const { return convs_.back().out_channels(); }
  std::size_t blocks() const { return convs_.size(); }

  void init(Vec<Scalar>& params, Rng& rng) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].init(params, rng);
      norms_[i].init(params);
    }
  }

  /// clips: 3 x (batch * positions). Returns embedding_dim x batch.
  Mat<Scalar> forward(const Vec<Scalar>& params, const Mat<Scalar>& clips, Eigen::Index batch,
                      Trace* trace) const {
    require(clips.rows() == 3 && clips.cols() == batch * input_.positions(),
            "Tiny3dConv: clip batch does not match the encoder input shape");
    Mat<Scalar> a = clips;
    if (trace) {
      *trace = Trace{};
      trace->batch = batch;
    }
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      Mat<Scalar> cols = convs_[i].im2col(a, batch);
      typename GroupNorm<Scalar>::Cache cache;
      a = relu(norms_[i].forward(params, convs_[i].forward_cols(params, cols), batch, cache));
      if (trace) {
        trace->cols.push_back(std::move(cols));
        trace->norms.push_back(std::move(cache));
        trace->activations.push_back(a);
      }
    }
    return pool(a, batch);
  }

  /// Accumulates encoder parameter gradients from d loss / d embedding.
  void backward(const Vec<Scalar>& params, const Trace& trace, const Mat<Scalar>& d_embedding,
                Vec<Scalar>& grad) const {
    const Eigen::Index batch = trace.batch;
    const Eigen::Index p = convs_.back().output_shape().positions();
    Mat<Scalar> d(d_embedding.rows(), batch * p);
    for (Eigen::Index b = 0; b < batch; ++b)
      d.middleCols(b * p, p) = (d_embedding.col(b) / Scalar(p)).replicate(1, p);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      d = relu_backward<Scalar>(trace.activations[i], d);
      d = norms_[i].backward(params, trace.norms[i], d, batch, grad);
      d = convs_[i].backward(params, trace.cols[i], d, batch, grad, i > 0);
    }
  }

 private:
  Mat<Scalar> pool(const Mat<Scalar>& a, Eigen::Index batch) const {
    const Eigen::Index p = a.cols() / batch;
    Mat<Scalar> h(a.rows(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) h.col(b) = a.middleCols(b * p, p).rowwise().mean();
    return h;
  }

  VolumeShape input_;
  std::vector<Conv3d<Scalar>> convs_;
  std::vector<GroupNorm<Scalar>> norms_;
};

}  // namespace dfmtl::nn
