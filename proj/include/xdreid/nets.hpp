#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xdreid/common.hpp"
#include "xdreid/tensor.hpp"

namespace xdreid {

/// Architecture scalars. Desk defaults give the appearance code nu in
/// 64x4x1, the structure code tau in 16x(H/4)x(W/4) and a 64-dim re-id
/// embedding at 32x16 images; the full-scale references are 2048x4x1,
/// 128x64x32 and 1024.
struct NetConfig {
    int image_h = 32;
    int image_w = 16;
    int base_width = 16;          // width of the first encoder/discriminator stage
    int app_channels = 64;        // A_c
    int app_pool_w = 2;           // horizontal max-pool collapsing the last stage to A_w
    int structure_channels = 16;  // S_c
    int n_res_blocks = 2;
    int embed_dim = 64;           // E
    int num_source_classes = 0;   // K_s
    int num_target_classes = 0;   // current pseudo-class count, 0 = no pseudo-labels yet
    int disc_scales = 2;
    int dom_hidden1 = 64;
    int dom_hidden2 = 32;
    int dom_hidden3 = 16;
    double leaky_slope = 0.2;
    std::uint64_t seed = 1;

    int app_h() const { return image_h / 8; }
    int app_w() const { return image_w / 8 / app_pool_w; }
    int structure_h() const { return image_h / 4; }
    int structure_w() const { return image_w / 4; }
    int app_flat() const { return app_channels * app_h() * app_w(); }

    void validate() const;
};

using ParamList = std::vector<std::pair<std::string, Tensor>>;

namespace layers {

struct Conv {
    Tensor w, b;
    int stride = 1, pad = 1;
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct Dense {
    Tensor w, b;
    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

Conv make_conv(int ci, int co, int k, int stride, int pad, std::mt19937_64& rng);
Dense make_dense(int d, int m, std::mt19937_64& rng);

}  // namespace layers

struct AppearanceOut {
    Tensor code;       // N x A_c x A_h x A_w
    Tensor embedding;  // N x E, pre-normalization (feeds the classifier heads)
    /// Row-wise L2-normalized copy of the embedding, detached; used for all
    /// distance computations.
    std::vector<std::vector<double>> normalized;
};

/// The five networks plus identity classifier heads. The appearance encoder,
/// image discriminator and domain discriminator are shared across domains;
/// structure encoders and decoders are domain-private.
class Networks {
public:
    explicit Networks(const NetConfig& cfg);

    AppearanceOut encode_appearance(const Tensor& images) const;
    Tensor encode_structure(const Tensor& images, Domain domain) const;
    Tensor decode(const Tensor& app_code, const Tensor& structure_code, Domain domain) const;
    /// One sigmoid patch-score map per scale.
    std::vector<Tensor> discriminate_image(const Tensor& images) const;
    /// N x 1 sigmoid probability of source membership.
    Tensor discriminate_domain(const Tensor& app_code) const;
    Tensor classify_identity(const Tensor& embedding, Domain head) const;
    /// Identity logits (pre-softmax); what the losses consume.
    Tensor identity_logits(const Tensor& embedding, Domain head) const;

    bool has_target_head() const { return cfg_.num_target_classes > 0; }
    /// Reinitializes the target classifier with k_new outputs. Everything
    /// else is untouched.
    void rebuild_target_head(int k_new);
    int target_head_generation() const { return target_head_generation_; }
    void set_target_head_generation(int g) { target_head_generation_ = g; }

    const NetConfig& config() const { return cfg_; }

    // Parameter groups. appearance_params also carries the classifier heads
    // (they sit on top of the embedding and train with it).
    ParamList appearance_params() const;
    ParamList structure_params(Domain d) const;
    ParamList decoder_params(Domain d) const;
    ParamList image_disc_params() const;
    ParamList domain_disc_params() const;
    ParamList generator_group() const;      // E_app + heads + E_str^{s,t} + G^{s,t}
    ParamList discriminator_group() const;  // D_img + D_dom
    ParamList all_params() const;

private:
    struct StructureEncoder {
        layers::Conv c1, c2, c3, c4;
        std::vector<layers::Conv> res;  // two convs per residual block
    };
    struct Decoder {
        layers::Dense mlp1, mlp2;       // nu -> AdaIN scales and biases
        std::vector<layers::Conv> res;  // two AdaIN convs per residual block
        layers::Conv up1, up2, post, out;
    };
    struct ScaleDisc {
        layers::Conv c1, c2, c3;
    };

    Tensor run_structure(const StructureEncoder& enc, const Tensor& images) const;
    Tensor run_decoder(const Decoder& dec, const Tensor& app_code, const Tensor& structure_code) const;

    NetConfig cfg_;
    // shared appearance encoder
    layers::Conv app_c1_, app_c2_, app_c3_, app_c4_;
    layers::Dense app_head_;
    StructureEncoder str_s_, str_t_;
    Decoder dec_s_, dec_t_;
    std::vector<ScaleDisc> d_img_;
    layers::Dense dom_fc1_, dom_fc2_, dom_fc3_, dom_fc4_;
    layers::Dense src_head_, tgt_head_;
    int target_head_generation_ = 0;
};

/// Unit-norm rows copied out of an N x E tensor (no graph link).
std::vector<std::vector<double>> l2_normalized_rows(const Tensor& m);

}  // namespace xdreid
