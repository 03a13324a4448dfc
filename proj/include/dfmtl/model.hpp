#pragma once

// Shared encoder, per-stream heads and the regime routing table.

#include "dfmtl/nn.hpp"
#include "dfmtl/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dfmtl {

enum class Regime { BinCe, BinCon, BinCeCon, BinCeMultiCe, BinConMultiCon };
enum class InitSource { random, checkpoint };

std::string to_string(Regime r);
std::string display_name(Regime r);  // "Binary CE + Multi CE", ...
Regime parse_regime(const std::string& id);
std::string to_string(InitSource s);
InitSource parse_init_source(const std::string& id);
const std::vector<Regime>& all_regimes();

/// Which losses reach the shared encoder, and whether a detached binary
/// classifier is trained alongside to monitor accuracy.
struct RoutingPlan {
  bool bin_ce_to_encoder = false;
  bool multi_ce_to_encoder = false;
  bool bin_con_to_encoder = false;
  bool multi_con_to_encoder = false;
  bool monitor_binary_classifier = false;

  bool any_contrastive() const { return bin_con_to_encoder || multi_con_to_encoder; }
  bool operator==(const RoutingPlan&) const = default;
};

RoutingPlan regime_to_plan(Regime regime);

struct LossWeights {
  Real bin_ce = 1.0;
  Real multi_ce = 1.0;
  Real bin_con = 1.0;
  Real multi_con = 1.0;
};

struct LossTerms {
  Real bin_ce = 0.0;
  Real multi_ce = 0.0;
  Real bin_con = 0.0;
  Real multi_con = 0.0;
};

/// Weighted sum of the encoder-directed losses. A monitor classifier's CE
/// is not part of it.
Real total_loss(const RoutingPlan& plan, const LossTerms& losses, const LossWeights& weights = {});

struct EncoderSpec {
  std::string architecture = "tiny3dconv";  // or "external-checkpoint"
  nn::VolumeShape input{16, 32, 32};
  std::vector<Eigen::Index> channels{16, 32, 64, 128};
  std::string checkpoint;  // weights file for external-checkpoint

  Eigen::Index embedding_dim() const { return channels.back(); }
};

struct ModelSpec {
  EncoderSpec encoder;
  Regime regime = Regime::BinCe;
  int multi_classes = 2;  // originals + n training techniques
  Eigen::Index projection_dim = 128;
};

/// Parameter vectors, one per component. Components absent from a regime
/// stay empty.
struct Weights {
  VecR encoder;
  VecR binary_classifier;
  VecR multi_classifier;
  VecR binary_projection;
  VecR multi_projection;
};

/// Parameters of the momentum (key) path.
struct KeyWeights {
  VecR encoder;
  VecR binary_projection;
  VecR multi_projection;
};

struct ForwardResult {
  Eigen::Index batch = 0;
  MatR embedding;                         // D x B
  MatR binary_logits;                     // 2 x B
  std::optional<MatR> multi_logits;       // (n+1) x B
  std::optional<MatR> binary_projection;  // unit columns
  std::optional<MatR> multi_projection;   // unit columns

  nn::Tiny3dConv<Real>::Trace encoder_trace;
  nn::Mlp<Real>::Trace binary_classifier_trace;
  std::optional<nn::Mlp<Real>::Trace> multi_classifier_trace;
  std::optional<nn::Mlp<Real>::Trace> binary_projection_trace;
  std::optional<nn::Mlp<Real>::Trace> multi_projection_trace;
};

/// Loss gradients w.r.t. head outputs. Empty matrices mean "no gradient".
struct HeadGradients {
  MatR binary_logits;
  MatR multi_logits;
  MatR binary_projection;  // w.r.t. the normalised projection
  MatR multi_projection;
};

struct Gradients {
  VecR encoder;
  VecR binary_classifier;
  VecR multi_classifier;
  VecR binary_projection;
  VecR multi_projection;
  MatR d_embedding;
};

struct KeyOutputs {
  std::optional<MatR> binary;
  std::optional<MatR> multi;
};

class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const RoutingPlan& plan() const { return plan_; }
  const nn::Tiny3dConv<Real>& encoder() const { return encoder_; }
  const nn::Mlp<Real>& binary_classifier() const { return binary_classifier_; }
  const std::optional<nn::Mlp<Real>>& multi_classifier() const { return multi_classifier_; }
  const std::optional<nn::Mlp<Real>>& binary_projection() const { return binary_projection_; }
  const std::optional<nn::Mlp<Real>>& multi_projection() const { return multi_projection_; }

  Weights init(std::uint64_t seed) const;
  Weights zero_like() const;
  KeyWeights key_weights_from(const Weights& w) const;

  /// clips: 3 x (batch * T*H*W), sample-major.
  ForwardResult forward(const Weights& w, const MatR& clips, Eigen::Index batch) const;

  /// Parameter gradients for the given head gradients. The binary
  /// classifier's gradient only reaches the encoder when the plan routes it.
  Gradients backward(const Weights& w, const ForwardResult& fwd, const HeadGradients& g) const;

  /// Momentum-path projections (normalised), no traces kept.
  KeyOutputs key_forward(const KeyWeights& w, const MatR& clips, Eigen::Index batch) const;

  /// Fake/real probabilities, batch x 2 (column 1 = manipulated). Uses the
  /// encoder and the binary classifier only.
  MatR inference_predict(const Weights& w, const MatR& clips, Eigen::Index batch) const;

 private:
  ModelSpec spec_;
  RoutingPlan plan_;
  nn::ParamLayout encoder_layout_, binary_classifier_layout_, multi_classifier_layout_,
      binary_projection_layout_, multi_projection_layout_;
  nn::Tiny3dConv<Real> encoder_;
  nn::Mlp<Real> binary_classifier_;
  std::optional<nn::Mlp<Real>> multi_classifier_;
  std::optional<nn::Mlp<Real>> binary_projection_;
  std::optional<nn::Mlp<Real>> multi_projection_;
};

}  // namespace dfmtl
