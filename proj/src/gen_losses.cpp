#include "xdreid/gen_losses.hpp"

namespace xdreid {

CrossGen cross_generate(const Tensor& x_s, const Tensor& x_t, const Networks& nets) {
    CrossGen g;
    g.app_s = nets.encode_appearance(x_s);
    g.app_t = nets.encode_appearance(x_t);
    g.tau_s = nets.encode_structure(x_s, Domain::Source);
    g.tau_t = nets.encode_structure(x_t, Domain::Target);

    g.synth_t = nets.decode(g.app_s.code, g.tau_t, Domain::Target);
    g.synth_s = nets.decode(g.app_t.code, g.tau_s, Domain::Source);

    g.app_synth_t = nets.encode_appearance(g.synth_t);
    g.app_synth_s = nets.encode_appearance(g.synth_s);
    auto tau_from_synth_s = nets.encode_structure(g.synth_s, Domain::Source);
    auto tau_from_synth_t = nets.encode_structure(g.synth_t, Domain::Target);

    g.recon_s = nets.decode(g.app_synth_t.code, tau_from_synth_s, Domain::Source);
    g.recon_t = nets.decode(g.app_synth_s.code, tau_from_synth_t, Domain::Target);
    return g;
}

Tensor cycle_loss(const CrossGen& gen, const Tensor& x_s, const Tensor& x_t) {
    auto term_s = mean(abs(sub(x_s, gen.recon_s)));
    auto term_t = mean(abs(sub(x_t, gen.recon_t)));
    return add(term_s, term_t);
}

Tensor cycle_loss(const Tensor& x_s, const Tensor& x_t, const Networks& nets) {
    return cycle_loss(cross_generate(x_s, x_t, nets), x_s, x_t);
}

Tensor id_loss_on_embedding(const Tensor& embedding, const std::vector<int>& labels,
                            const Networks& nets, Domain head) {
    return cross_entropy(nets.identity_logits(embedding, head), labels);
}

Tensor id_loss_source(const Tensor& x_s, const std::vector<int>& y_s, const Networks& nets) {
    return id_loss_on_embedding(nets.encode_appearance(x_s).embedding, y_s, nets, Domain::Source);
}

Tensor id_loss_source_synth(const Tensor& x_synth, const std::vector<int>& y_s,
                            const Networks& nets) {
    return id_loss_on_embedding(nets.encode_appearance(x_synth).embedding, y_s, nets,
                                Domain::Source);
}

Tensor mean_log_score(const std::vector<Tensor>& maps) {
    if (maps.empty()) throw ArgumentError("mean_log_score: no score maps");
    Tensor acc;
    for (const auto& m : maps) {
        auto term = mean(log(clamp(m, kScoreClamp, 1.0 - kScoreClamp)));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(maps.size()));
}

Tensor mean_log_one_minus_score(const std::vector<Tensor>& maps) {
    if (maps.empty()) throw ArgumentError("mean_log_one_minus_score: no score maps");
    Tensor acc;
    for (const auto& m : maps) {
        auto flipped = add_scalar(scale(m, -1.0), 1.0);
        auto term = mean(log(clamp(flipped, kScoreClamp, 1.0 - kScoreClamp)));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(maps.size()));
}

Tensor adv_image_loss_D(const Tensor& x_real, const Tensor& x_synth, const Networks& nets) {
    auto real_score = mean_log_score(nets.discriminate_image(x_real));
    auto fake_score = mean_log_one_minus_score(nets.discriminate_image(x_synth));
    return scale(add(real_score, fake_score), -1.0);
}

Tensor adv_image_loss_G(const Tensor& x_synth, const Networks& nets) {
    return scale(mean_log_score(nets.discriminate_image(x_synth)), -1.0);
}

}  // namespace xdreid
