#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xdreid/common.hpp"
#include "xdreid/tensor.hpp"

namespace xdreid {

// Target identity indices live in their own range so the two domains' class
// spaces are disjoint by construction.
inline constexpr int kTargetIdOffset = 1'000'000;

using Rgb = std::array<double, 3>;

/// Appearance factor: what the person looks like.
struct IdentitySpec {
    Rgb torso{};
    Rgb legs{};
    double head_tone = 0.0;
    int index = -1;
};

/// Structure factor: where and how the figure stands, and what is behind it.
struct StructureSpec {
    int offset_x = 0;
    int offset_y = 0;
    double body_scale = 1.0;
    double pose_angle = 0.0;  // leg spread in [-1, 1]
    int background_pattern = 0;
    int camera = 0;
};

/// Per-domain rendering style; the two defaults are deliberately far apart in
/// palette, camera color response and noise so the domain gap is real. The
/// color response is a full 3x3 mixing matrix (rows = output channels), so
/// the target domain rotates hue rather than just dimming pixels; it stays
/// invertible, so identity information survives the shift.
struct DomainStyle {
    std::vector<Rgb> background_palette;
    std::array<Rgb, 3> color_matrix = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
    Rgb color_bias = {0.0, 0.0, 0.0};
    double noise_level = 0.0;
    /// How far each camera's color response strays from the domain matrix
    /// (0 = identical cameras, 1 = full per-camera channel rotation). Cheap
    /// cross-camera matching breaks down as this grows.
    double camera_spread = 0.0;
};

DomainStyle default_style(Domain d);

struct ImageSample {
    std::vector<double> pixels;  // 3 x H x W row-major, values in [-1, 1]
    int image_h = 0;
    int image_w = 0;
    int id = -1;                 // target ids are ground truth for evaluation only
    int camera = 0;
    Domain domain = Domain::Source;
    bool is_query = false;
    std::string name;
    // generating factors, kept for ground-truth composites
    IdentitySpec identity;
    StructureSpec structure;
    std::uint64_t render_seed = 0;
};

struct RenderLayers {
    std::vector<double> pre_style;     // figure over background, before illumination/noise
    std::vector<std::uint8_t> foreground;  // 1 where the figure covers the pixel
};

/// Deterministic blocky-humanoid renderer. Pixels come back quantized to the
/// 16-bit storage grid so in-memory and on-disk datasets are bit-identical.
std::vector<double> render(const IdentitySpec& id, const StructureSpec& st, const DomainStyle& dom,
                           std::uint64_t seed, int h, int w, RenderLayers* layers = nullptr);

struct Dataset {
    Domain domain = Domain::Source;
    int image_h = 0;
    int image_w = 0;
    int n_cams = 0;
    std::vector<ImageSample> samples;
};

/// n_ids * n_per_id samples; identity fixed per id, structure resampled per
/// image, cameras round-robin. Target sets get a 1:3 query/gallery split.
Dataset sample_dataset(Domain domain, int n_ids, int n_per_id, int n_cams, std::uint64_t seed,
                       int image_h = 32, int image_w = 16);

/// The ideal swap output: id_from's appearance rendered with st_from's
/// structure under the given domain's style (noise keyed by st_from).
std::vector<double> ground_truth_composite(const ImageSample& id_from, const ImageSample& st_from,
                                           Domain dom);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Stacks samples[indices] into an N x 3 x H x W tensor.
Tensor batch_tensor(const Dataset& ds, const std::vector<int>& indices);

}  // namespace xdreid
