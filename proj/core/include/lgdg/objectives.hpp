#pragma once

// Losses: inverse-frequency-balanced BCE, the disentanglement loss over
// single-category graphs, reconstruction MSE, and the combined objective.

#include <array>
#include <span>

#include "lgdg/latent_graph.hpp"
#include "lgdg/models.hpp"

namespace lgdg {

struct LossWeights {
  double sem = 1.0;
  double viz = 0.3;
  double img = 0.3;
  double recon = 0.5;

  void validate() const;  // ConfigError on negative weights
};

struct ClassBalance {
  std::array<double, kNumCriteria> positive_rate{0.5, 0.5, 0.5};

  // Throws DomainError unless every rate lies strictly inside (0,1).
  void validate() const;
  static ClassBalance from_labels(std::span<const Labels> labels);
};

// Mean over criteria of w_c·BCE(σ(logit_c), y_c), w_c = 1/p_c for positives
// and 1/(1−p_c) for negatives. `logits` is 1×3.
Tensor balanced_bce(const Tensor& logits, const Labels& y, const ClassBalance& balance);

// Graphs keeping exactly one category.
inline constexpr CategorySet kKeepSemantic{FeatureCategory::GraphVisual,
                                           FeatureCategory::BackboneImage};
inline constexpr CategorySet kKeepVisual{FeatureCategory::GraphSemantic,
                                         FeatureCategory::BackboneImage};
inline constexpr CategorySet kKeepImage{FeatureCategory::GraphVisual,
                                        FeatureCategory::GraphSemantic};

struct DisentanglementTerms {
  Tensor total;
  // Branch losses before weighting; NaN for branches skipped at zero weight.
  double sem = 0, viz = 0, img = 0;
};

// λ_sem·L(ŷ_sem) + λ_viz·L(ŷ_viz) + λ_img·L(ŷ_img). All three masks are drawn
// on every call (fixed order sem, viz, img) so the stream advances the same
// way whatever the weights; branches with zero weight are not evaluated.
DisentanglementTerms disentanglement_loss(const LatentGraph& graph, const Labels& y,
                                          const LossWeights& weights, const GnnHead& head,
                                          const ClassBalance& balance, Rng& rng);

// Mean squared error over all elements.
Tensor reconstruction_loss(const Tensor& reconstruction, const Tensor& target);

// Masking applied by the latent-graph objective.
struct MaskingConfig {
  CategorySet cvs;    // Ĝ_CVS, at training and evaluation
  CategorySet recon;  // Ĝ_R
};

struct LgLossTerms {
  Tensor total;
  double cvs = 0, dis = 0, recon = 0;
};

// Per sample: L_CVS(φ(mask(G, cvs))) + L_DIS(G) + λ_recon·MSE(φ_R(mask(G, recon)), I),
// averaged over the batch. Streams: `augment` drives the CVS/recon masks and
// the backgroundizing noise, `disentangle` the three L_DIS masks. Weights at
// zero skip their term.
LgLossTerms lgdg_total_loss(std::span<const Sample> batch, const LgModel& model,
                            const LossWeights& weights, const MaskingConfig& masking,
                            const ClassBalance& balance, Rng& augment, Rng& disentangle);

}  // namespace lgdg
