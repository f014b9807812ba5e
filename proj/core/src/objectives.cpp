#include "lgdg/objectives.hpp"

#include <cmath>
#include <limits>

namespace lgdg {

void LossWeights::validate() const {
  for (double w : {sem, viz, img, recon}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

void ClassBalance::validate() const {
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    const double p = positive_rate[c];
    if (!(p > 0 && p < 1)) {
      throw DomainError("positive rate of criterion C" + std::to_string(c + 1) +
                        " must lie in (0,1), got " + std::to_string(p));
    }
  }
}

ClassBalance ClassBalance::from_labels(std::span<const Labels> labels) {
  if (labels.empty()) throw DomainError("class balance needs at least one label");
  ClassBalance b;
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    std::size_t pos = 0;
    for (const Labels& y : labels) pos += y[c] ? 1 : 0;
    b.positive_rate[c] = static_cast<double>(pos) / static_cast<double>(labels.size());
  }
  b.validate();
  return b;
}

Tensor balanced_bce(const Tensor& logits, const Labels& y, const ClassBalance& balance) {
  balance.validate();
  if (logits.numel() != kNumCriteria) {
    throw ShapeError("balanced_bce expects 3 logits, got " + shape_str(logits.shape()));
  }
  std::vector<double> weight(kNumCriteria), target(kNumCriteria);
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    const double p = balance.positive_rate[c];
    target[c] = y[c] ? 1.0 : 0.0;
    weight[c] = (y[c] ? 1.0 / p : 1.0 / (1.0 - p)) / static_cast<double>(kNumCriteria);
  }
  const Shape shape = logits.shape();
  // BCE with logits: softplus(l) − y·l.
  const Tensor bce = sub(softplus(logits), mul(logits, Tensor::from(shape, std::move(target))));
  return sum(mul(bce, Tensor::from(shape, std::move(weight))));
}

DisentanglementTerms disentanglement_loss(const LatentGraph& graph, const Labels& y,
                                          const LossWeights& weights, const GnnHead& head,
                                          const ClassBalance& balance, Rng& rng) {
  const LatentGraph g_sem = mask(graph, kKeepSemantic, rng);
  const LatentGraph g_viz = mask(graph, kKeepVisual, rng);
  const LatentGraph g_img = mask(graph, kKeepImage, rng);

  DisentanglementTerms t;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  t.sem = t.viz = t.img = nan;
  auto branch = [&](const LatentGraph& g, double lambda, double& value) {
    if (lambda == 0.0) return;
    const Tensor l = balanced_bce(head.classify(g), y, balance);
    value = l.item();
    const Tensor weighted = scale(l, lambda);
    t.total = t.total.defined() ? add(t.total, weighted) : weighted;
  };
  branch(g_sem, weights.sem, t.sem);
  branch(g_viz, weights.viz, t.viz);
  branch(g_img, weights.img, t.img);
  if (!t.total.defined()) t.total = Tensor::scalar(0.0);
  return t;
}

Tensor reconstruction_loss(const Tensor& reconstruction, const Tensor& target) {
  if (reconstruction.shape() != target.shape()) {
    throw ShapeError("reconstruction " + shape_str(reconstruction.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const Tensor d = sub(reconstruction, target);
  return mean(mul(d, d));
}

LgLossTerms lgdg_total_loss(std::span<const Sample> batch, const LgModel& model,
                            const LossWeights& weights, const MaskingConfig& masking,
                            const ClassBalance& balance, Rng& augment, Rng& disentangle) {
  if (batch.empty()) throw DomainError("empty batch");
  weights.validate();
  const bool use_recon = weights.recon > 0 && model.recon().has_value();
  LgLossTerms out;
  Tensor total;
  for (const Sample& s : batch) {
    const LatentGraph g = model.encode(s);
    const Tensor cvs = balanced_bce(model.classify(mask(g, masking.cvs, augment)), s.labels, balance);
    const DisentanglementTerms dis =
        disentanglement_loss(g, s.labels, weights, model.head(), balance, disentangle);
    Tensor sample_loss = add(cvs, dis.total);
    out.cvs += cvs.item();
    out.dis += dis.total.item();
    if (use_recon) {
      const LatentGraph g_r = mask(g, masking.recon, augment);
      const Tensor bg = backgroundize(s.image, s.detections, s.width, s.height, augment);
      const Tensor rec = reconstruction_loss(model.recon()->reconstruct(g_r, bg), s.image);
      out.recon += rec.item();
      sample_loss = add(sample_loss, scale(rec, weights.recon));
    }
    total = total.defined() ? add(total, sample_loss) : sample_loss;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.total = scale(total, inv);
  out.cvs *= inv;
  out.dis *= inv;
  out.recon *= inv;
  return out;
}

}  // namespace lgdg
