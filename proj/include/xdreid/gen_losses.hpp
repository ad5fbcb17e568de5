#pragma once

#include <vector>

#include "xdreid/nets.hpp"
#include "xdreid/tensor.hpp"

namespace xdreid {

// Discriminator scores are clamped to [kScoreClamp, 1-kScoreClamp] inside logs.
inline constexpr double kScoreClamp = 1e-6;

/// Named values of every term in the total objective, plus the weighted total.
/// Discriminator-side losses are tracked alongside for the log.
struct LossReport {
    long long iteration = 0;
    double cyc = 0.0;
    double id_s1 = 0.0;
    double id_t1 = 0.0;
    double id_s2 = 0.0;
    double id_t2 = 0.0;
    double adv_img = 0.0;
    double adv_dom = 0.0;
    double total = 0.0;
    double d_img_loss = 0.0;
    double d_dom_loss = 0.0;
};

/// One round of cross-domain generation: swap codes to synthesize, re-encode
/// the syntheses, swap back to reconstruct the originals. Built once per step
/// and shared by the cycle, identification and adversarial losses.
struct CrossGen {
    AppearanceOut app_s, app_t;          // encodings of the real pair
    Tensor tau_s, tau_t;
    Tensor synth_t;                      // G^t(nu_s, tau_t): target-domain image, source appearance
    Tensor synth_s;                      // G^s(nu_t, tau_s): source-domain image, target appearance
    AppearanceOut app_synth_t;           // E_app of synth_t (source identity carrier)
    AppearanceOut app_synth_s;           // E_app of synth_s (target identity carrier)
    Tensor recon_s;                      // G^s(E_app(synth_t), E_str^s(synth_s))
    Tensor recon_t;                      // G^t(E_app(synth_s), E_str^t(synth_t))
};

CrossGen cross_generate(const Tensor& x_s, const Tensor& x_t, const Networks& nets);

/// Sum of the two mean-L1 reconstruction terms over the full two-hop path.
Tensor cycle_loss(const CrossGen& gen, const Tensor& x_s, const Tensor& x_t);
Tensor cycle_loss(const Tensor& x_s, const Tensor& x_t, const Networks& nets);

/// Mean negative log probability of the true source label on real images.
Tensor id_loss_source(const Tensor& x_s, const std::vector<int>& y_s, const Networks& nets);
/// Same loss on a synthesized image that carries the source appearance code.
Tensor id_loss_source_synth(const Tensor& x_synth, const std::vector<int>& y_s, const Networks& nets);
/// Shared core over a precomputed embedding.
Tensor id_loss_on_embedding(const Tensor& embedding, const std::vector<int>& labels,
                            const Networks& nets, Domain head);

/// -[E log D(real) + E log(1 - D(fake))], patch scores averaged per scale and
/// uniformly across scales. Called once per (real, fake) pair; both domains'
/// pairs go through the one shared image discriminator.
Tensor adv_image_loss_D(const Tensor& x_real, const Tensor& x_synth, const Networks& nets);
/// Non-saturating generator side: -E log D(fake).
Tensor adv_image_loss_G(const Tensor& x_synth, const Networks& nets);

// Patch-map reductions shared with the domain-adversarial losses.
Tensor mean_log_score(const std::vector<Tensor>& maps);
Tensor mean_log_one_minus_score(const std::vector<Tensor>& maps);

}  // namespace xdreid
