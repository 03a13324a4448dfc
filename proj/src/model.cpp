#include "dfmtl/model.hpp"

#include "dfmtl/losses.hpp"

namespace dfmtl {

namespace {

struct RegimeInfo {
  Regime regime;
  const char* id;
  const char* display;
};

constexpr RegimeInfo kRegimes[] = {
    {Regime::BinCe, "BIN_CE", "Binary CE"},
    {Regime::BinCon, "BIN_CON", "Binary Contrastive"},
    {Regime::BinCeCon, "BIN_CE_CON", "Binary CE + Contrastive"},
    {Regime::BinCeMultiCe, "BIN_CE_MULTI_CE", "Binary CE + Multi CE"},
    {Regime::BinConMultiCon, "BIN_CON_MULTI_CON", "Binary Contrastive + Multi Contrastive"},
};

const RegimeInfo& info(Regime r) {
  for (const auto& i : kRegimes)
    if (i.regime == r) return i;
  throw ConfigError("unknown regime");
}

std::vector<Eigen::Index> classifier_widths(Eigen::Index d, Eigen::Index classes) {
  return {d, std::max<Eigen::Index>(d / 2, 1), std::max<Eigen::Index>(d / 4, 1), classes};
}

}  // namespace

std::string to_string(Regime r) { return info(r).id; }
std::string display_name(Regime r) { return info(r).display; }

Regime parse_regime(const std::string& id) {
  for (const auto& i : kRegimes)
    if (id == i.id) return i.regime;
  throw ConfigError("unknown regime '" + id + "'");
}

const std::vector<Regime>& all_regimes() {
  static const std::vector<Regime> v{Regime::BinCe, Regime::BinCon, Regime::BinCeCon,
                                     Regime::BinCeMultiCe, Regime::BinConMultiCon};
  return v;
}

std::string to_string(InitSource s) { return s == InitSource::random ? "random" : "checkpoint"; }

InitSource parse_init_source(const std::string& id) {
  if (id == "random") return InitSource::random;
  if (id == "checkpoint") return InitSource::checkpoint;
  throw ConfigError("unknown init source '" + id + "'");
}

RoutingPlan regime_to_plan(Regime regime) {
  RoutingPlan p;
  switch (regime) {
    case Regime::BinCe:
      p.bin_ce_to_encoder = true;
      break;
    case Regime::BinCon:
      p.bin_con_to_encoder = true;
      p.monitor_binary_classifier = true;
      break;
    case Regime::BinCeCon:
      p.bin_ce_to_encoder = true;
      p.bin_con_to_encoder = true;
      break;
    case Regime::BinCeMultiCe:
      p.bin_ce_to_encoder = true;
      p.multi_ce_to_encoder = true;
      break;
    case Regime::BinConMultiCon:
      p.bin_con_to_encoder = true;
      p.multi_con_to_encoder = true;
      p.monitor_binary_classifier = true;
      break;
    default:
      throw ConfigError("unknown regime");
  }
  return p;
}

Real total_loss(const RoutingPlan& plan, const LossTerms& l, const LossWeights& w) {
  Real sum = 0.0;
  if (plan.bin_ce_to_encoder) sum += w.bin_ce * l.bin_ce;
  if (plan.multi_ce_to_encoder) sum += w.multi_ce * l.multi_ce;
  if (plan.bin_con_to_encoder) sum += w.bin_con * l.bin_con;
  if (plan.multi_con_to_encoder) sum += w.multi_con * l.multi_con;
  return sum;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)), plan_(regime_to_plan(spec_.regime)) {
  require(spec_.encoder.architecture == "tiny3dconv" ||
              spec_.encoder.architecture == "external-checkpoint",
          "unknown encoder architecture '" + spec_.encoder.architecture + "'");
  encoder_ = nn::Tiny3dConv<Real>(encoder_layout_, spec_.encoder.input, spec_.encoder.channels);
  const Eigen::Index d = encoder_.embedding_dim();
  binary_classifier_ = nn::Mlp<Real>(binary_classifier_layout_, classifier_widths(d, 2));
  if (plan_.multi_ce_to_encoder) {
    require(spec_.multi_classes >= 2, "multi-class stream needs at least two classes");
    multi_classifier_.emplace(multi_classifier_layout_, classifier_widths(d, spec_.multi_classes));
  }
  if (plan_.bin_con_to_encoder)
    binary_projection_.emplace(binary_projection_layout_,
                               std::vector<Eigen::Index>{d, d, spec_.projection_dim});
  if (plan_.multi_con_to_encoder)
    multi_projection_.emplace(multi_projection_layout_,
                              std::vector<Eigen::Index>{d, d, spec_.projection_dim});
}

Weights Model::zero_like() const {
  Weights w;
  w.encoder = VecR::Zero(encoder_layout_.size());
  w.binary_classifier = VecR::Zero(binary_classifier_layout_.size());
  w.multi_classifier = VecR::Zero(multi_classifier_layout_.size());
  w.binary_projection = VecR::Zero(binary_projection_layout_.size());
  w.multi_projection = VecR::Zero(multi_projection_layout_.size());
  return w;
}

Weights Model::init(std::uint64_t seed) const {
  Weights w = zero_like();
  nn::Rng rng(seed);
  encoder_.init(w.encoder, rng);
  binary_classifier_.init(w.binary_classifier, rng);
  if (multi_classifier_) multi_classifier_->init(w.multi_classifier, rng);
  if (binary_projection_) binary_projection_->init(w.binary_projection, rng);
  if (multi_projection_) multi_projection_->init(w.multi_projection, rng);
  return w;
}

KeyWeights Model::key_weights_from(const Weights& w) const {
  return {w.encoder, w.binary_projection, w.multi_projection};
}

ForwardResult Model::forward(const Weights& w, const MatR& clips, Eigen::Index batch) const {
  ForwardResult out;
  out.batch = batch;
  out.embedding = encoder_.forward(w.encoder, clips, batch, &out.encoder_trace);
  out.binary_classifier_trace = binary_classifier_.forward(w.binary_classifier, out.embedding);
  out.binary_logits = out.binary_classifier_trace.output;
  if (multi_classifier_) {
    out.multi_classifier_trace = multi_classifier_->forward(w.multi_classifier, out.embedding);
    out.multi_logits = out.multi_classifier_trace->output;
  }
  if (binary_projection_) {
    out.binary_projection_trace = binary_projection_->forward(w.binary_projection, out.embedding);
    out.binary_projection = l2_normalize_columns<Real>(out.binary_projection_trace->output);
  }
  if (multi_projection_) {
    out.multi_projection_trace = multi_projection_->forward(w.multi_projection, out.embedding);
    out.multi_projection = l2_normalize_columns<Real>(out.multi_projection_trace->output);
  }
  return out;
}

Gradients Model::backward(const Weights& w, const ForwardResult& fwd, const HeadGradients& g) const {
  Gradients out;
  const Weights z = zero_like();
  out.encoder = z.encoder;
  out.binary_classifier = z.binary_classifier;
  out.multi_classifier = z.multi_classifier;
  out.binary_projection = z.binary_projection;
  out.multi_projection = z.multi_projection;
  out.d_embedding = MatR::Zero(fwd.embedding.rows(), fwd.embedding.cols());

  if (g.binary_logits.size() > 0) {
    MatR d = binary_classifier_.backward(w.binary_classifier, fwd.binary_classifier_trace,
                                         g.binary_logits, out.binary_classifier);
    if (plan_.bin_ce_to_encoder) out.d_embedding += d;
  }
  if (g.multi_logits.size() > 0 && multi_classifier_ && plan_.multi_ce_to_encoder) {
    out.d_embedding += multi_classifier_->backward(w.multi_classifier, *fwd.multi_classifier_trace,
                                                   g.multi_logits, out.multi_classifier);
  }
  if (g.binary_projection.size() > 0 && binary_projection_ && plan_.bin_con_to_encoder) {
    const MatR dv = l2_normalize_backward<Real>(fwd.binary_projection_trace->output, g.binary_projection);
    out.d_embedding += binary_projection_->backward(w.binary_projection, *fwd.binary_projection_trace,
                                                    dv, out.binary_projection);
  }
  if (g.multi_projection.size() > 0 && multi_projection_ && plan_.multi_con_to_encoder) {
    const MatR dv = l2_normalize_backward<Real>(fwd.multi_projection_trace->output, g.multi_projection);
    out.d_embedding += multi_projection_->backward(w.multi_projection, *fwd.multi_projection_trace,
                                                   dv, out.multi_projection);
  }
  encoder_.backward(w.encoder, fwd.encoder_trace, out.d_embedding, out.encoder);
  return out;
}

KeyOutputs Model::key_forward(const KeyWeights& w, const MatR& clips, Eigen::Index batch) const {
  KeyOutputs out;
  if (!plan_.any_contrastive()) return out;
  const MatR h = encoder_.forward(w.encoder, clips, batch, nullptr);
  if (binary_projection_)
    out.binary = l2_normalize_columns<Real>(binary_projection_->forward(w.binary_projection, h).output);
  if (multi_projection_)
    out.multi = l2_normalize_columns<Real>(multi_projection_->forward(w.multi_projection, h).output);
  return out;
}

MatR Model::inference_predict(const Weights& w, const MatR& clips, Eigen::Index batch) const {
  const MatR h = encoder_.forward(w.encoder, clips, batch, nullptr);
  const MatR logits = binary_classifier_.forward(w.binary_classifier, h).output;
  MatR probs(batch, 2);
  for (Eigen::Index b = 0; b < batch; ++b) probs.row(b) = softmax<Real>(logits.col(b)).transpose();
  return probs;
}

}  // namespace dfmtl
