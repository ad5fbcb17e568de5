#include "xdreid/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace xdreid {

namespace {

constexpr int kBackgroundPatterns = 4;
constexpr int kStripe = 4;
// per-camera brightness tilt, a mild camera signature
constexpr double kCameraGainStep = 0.03;

double quantize16(double v) {
    v = std::min(1.0, std::max(-1.0, v));
    const long q = std::lround((v + 1.0) * 0.5 * 65535.0);
    return static_cast<double>(q) / 65535.0 * 2.0 - 1.0;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Rect {
    int y0, y1, x0, x1;  // half-open
    bool inside(int h, int w) const { return y0 >= 0 && x0 >= 0 && y1 <= h && x1 <= w && y0 < y1 && x0 < x1; }
};

void fill(std::vector<double>& img, int h, int w, const Rect& r, const Rgb& color,
          std::vector<std::uint8_t>* mask) {
    const size_t plane = static_cast<size_t>(h) * w;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) {
            const size_t p = static_cast<size_t>(y) * w + x;
            for (int c = 0; c < 3; ++c) img[c * plane + p] = color[static_cast<size_t>(c)];
            if (mask) (*mask)[p] = 1;
        }
}

struct FigureGeometry {
    Rect head, torso, leg_l, leg_r;
};

FigureGeometry figure_geometry(const StructureSpec& st, int h, int w) {
    const int fig_h = std::max(8, static_cast<int>(std::lround(0.75 * h * st.body_scale)));
    const int fig_w = std::max(4, static_cast<int>(std::lround(0.50 * w * st.body_scale)));
    const int head_h = fig_h / 5;
    const int torso_h = 2 * fig_h / 5;
    const int leg_h = fig_h - head_h - torso_h;
    const int top = (h - fig_h) / 2 + st.offset_y;
    const int cx = w / 2 + st.offset_x;
    const int lean = static_cast<int>(std::lround(st.pose_angle * fig_w / 4.0));
    const int leg_w = std::max(1, fig_w / 3);

    FigureGeometry g;
    const int head_w = std::max(2, fig_w / 2);
    g.head = {top, top + head_h, cx - head_w / 2, cx - head_w / 2 + head_w};
    g.torso = {top + head_h, top + head_h + torso_h, cx - fig_w / 2, cx - fig_w / 2 + fig_w};
    const int leg_top = top + head_h + torso_h;
    g.leg_l = {leg_top, leg_top + leg_h, cx - fig_w / 2 - lean, cx - fig_w / 2 - lean + leg_w};
    g.leg_r = {leg_top, leg_top + leg_h, cx + fig_w / 2 - leg_w + lean, cx + fig_w / 2 + lean};
    return g;
}

void paint_background(std::vector<double>& img, int h, int w, int pattern,
                      const std::vector<Rgb>& palette) {
    const size_t plane = static_cast<size_t>(h) * w;
    auto color_at = [&](int y, int x) -> const Rgb& {
        switch (pattern % kBackgroundPatterns) {
            case 0: return palette[0];
            case 1: return palette[(y / kStripe) % 2 == 0 ? 0 : 1];
            case 2: return palette[(x / kStripe) % 2 == 0 ? 1 : 2];
            default: return palette[((y / kStripe) + (x / kStripe)) % 2 == 0 ? 2 : 0];
        }
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Rgb& c = color_at(y, x);
            const size_t p = static_cast<size_t>(y) * w + x;
            for (int ch = 0; ch < 3; ++ch) img[ch * plane + p] = c[static_cast<size_t>(ch)];
        }
}

}  // namespace

DomainStyle default_style(Domain d) {
    DomainStyle s;
    if (d == Domain::Source) {
        // cool palette, near-identical cameras, clean
        s.background_palette = {{{-0.75, -0.70, -0.45}}, {{-0.45, -0.40, -0.10}}, {{-0.15, -0.20, 0.25}}};
        s.noise_level = 0.02;
        s.camera_spread = 0.05;
    } else {
        // warm palette, rotated color response, heterogeneous cameras, noisier
        s.background_palette = {{{0.55, 0.35, 0.05}}, {{0.20, 0.05, -0.25}}, {{0.85, 0.70, 0.40}}};
        s.color_matrix = {{{0.15, 0.15, 0.60}, {0.55, 0.25, 0.10}, {0.10, 0.65, 0.15}}};
        s.color_bias = {-0.10, -0.05, -0.15};
        s.noise_level = 0.05;
        s.camera_spread = 0.55;
    }
    return s;
}

namespace {

// Fixed per-camera mixing patterns; a camera's response is the domain matrix
// blended toward its pattern by camera_spread.
const std::array<std::array<Rgb, 3>, 4> kCameraPatterns = {{
    {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}},  // neutral
    {{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}}},  // cycle r<-g<-b
    {{{0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}},  // cycle r<-b<-g
    {{{0.2, 0.4, 0.4}, {0.4, 0.2, 0.4}, {0.4, 0.4, 0.2}}},  // desaturating mix
}};

std::array<Rgb, 3> camera_color_matrix(const DomainStyle& dom, int camera) {
    const auto& pat = kCameraPatterns[static_cast<size_t>(camera) % kCameraPatterns.size()];
    const double s = dom.camera_spread;
    std::array<Rgb, 3> cam{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            cam[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                (1.0 - s) * (i == j ? 1.0 : 0.0) + s * pat[static_cast<size_t>(i)][static_cast<size_t>(j)];
    // effective response = domain matrix applied after the camera mix
    std::array<Rgb, 3> out{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                out[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
                    dom.color_matrix[static_cast<size_t>(i)][static_cast<size_t>(k)] *
                    cam[static_cast<size_t>(k)][static_cast<size_t>(j)];
    return out;
}

}  // namespace

std::vector<double> render(const IdentitySpec& id, const StructureSpec& st, const DomainStyle& dom,
                           std::uint64_t seed, int h, int w, RenderLayers* layers) {
    if (h <= 0 || w <= 0) throw ArgumentError("render: image dims must be positive");
    if (dom.background_palette.size() < 3)
        throw ArgumentError("render: style needs at least 3 background colors");
    auto geo = figure_geometry(st, h, w);
    for (const Rect* r : {&geo.head, &geo.torso, &geo.leg_l, &geo.leg_r})
        if (!r->inside(h, w)) throw ArgumentError("render: figure does not fit inside the frame");

    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> img(3 * plane, 0.0);
    std::vector<std::uint8_t> mask(plane, 0);

    paint_background(img, h, w, st.background_pattern, dom.background_palette);
    const Rgb head_color = {id.head_tone, id.head_tone, id.head_tone};
    fill(img, h, w, geo.torso, id.torso, &mask);
    fill(img, h, w, geo.leg_l, id.legs, &mask);
    fill(img, h, w, geo.leg_r, id.legs, &mask);
    fill(img, h, w, geo.head, head_color, &mask);

    if (layers) {
        layers->pre_style = img;
        layers->foreground = mask;
    }

    const double cam_gain = 1.0 - kCameraGainStep * st.camera;
    const auto matrix = camera_color_matrix(dom, st.camera);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-dom.noise_level, dom.noise_level);
    for (size_t p = 0; p < plane; ++p) {
        const double r = img[p], g = img[plane + p], b = img[2 * plane + p];
        for (int c = 0; c < 3; ++c) {
            const auto& row = matrix[static_cast<size_t>(c)];
            double v = (row[0] * r + row[1] * g + row[2] * b) * cam_gain +
                       dom.color_bias[static_cast<size_t>(c)];
            if (dom.noise_level > 0) v += noise(rng);
            img[static_cast<size_t>(c) * plane + p] = quantize16(v);
        }
    }
    return img;
}

namespace {

// Identity colors with a floor on pairwise separation so identities stay
// distinguishable; the floor relaxes if the palette gets crowded.
std::vector<Rgb> identity_palette(int count, std::mt19937_64& rng) {
    std::vector<Rgb> colors;
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    double min_dist = 0.5;
    int stale = 0;
    while (static_cast<int>(colors.size()) < count) {
        Rgb c = {u(rng), u(rng), u(rng)};
        bool ok = true;
        for (const auto& e : colors) {
            const double d2 = (c[0] - e[0]) * (c[0] - e[0]) + (c[1] - e[1]) * (c[1] - e[1]) +
                              (c[2] - e[2]) * (c[2] - e[2]);
            if (d2 < min_dist * min_dist) {
                ok = false;
                break;
            }
        }
        if (ok) {
            colors.push_back(c);
            stale = 0;
        } else if (++stale > 200) {
            min_dist *= 0.9;
            stale = 0;
        }
    }
    return colors;
}

}  // namespace

Dataset sample_dataset(Domain domain, int n_ids, int n_per_id, int n_cams, std::uint64_t seed,
                       int image_h, int image_w) {
    if (n_ids <= 0 || n_per_id <= 0 || n_cams <= 0)
        throw ArgumentError("sample_dataset: counts must be positive");
    Dataset ds;
    ds.domain = domain;
    ds.image_h = image_h;
    ds.image_w = image_w;
    ds.n_cams = n_cams;
    ds.samples.reserve(static_cast<size_t>(n_ids) * n_per_id);

    const std::uint64_t domain_salt = domain == Domain::Source ? 0x5u : 0xau;
    std::mt19937_64 rng(splitmix64(seed ^ (domain_salt << 56)));
    auto palette = identity_palette(2 * n_ids, rng);
    std::uniform_real_distribution<double> tone(-0.2, 0.9);
    std::uniform_real_distribution<double> scale_d(0.85, 1.15);
    std::uniform_real_distribution<double> pose_d(-1.0, 1.0);
    std::uniform_int_distribution<int> pattern_d(0, kBackgroundPatterns - 1);

    const DomainStyle style = default_style(domain);
    const char tag = domain == Domain::Source ? 's' : 't';
    const int id_base = domain == Domain::Source ? 0 : kTargetIdOffset;

    for (int i = 0; i < n_ids; ++i) {
        IdentitySpec id;
        id.torso = palette[static_cast<size_t>(2 * i)];
        id.legs = palette[static_cast<size_t>(2 * i + 1)];
        id.head_tone = tone(rng);
        id.index = id_base + i;
        for (int j = 0; j < n_per_id; ++j) {
            StructureSpec st;
            st.body_scale = scale_d(rng);
            st.pose_angle = pose_d(rng);
            st.background_pattern = pattern_d(rng);
            st.camera = j % n_cams;
            // conservative in-frame offset bounds for the sampled scale
            const int fig_h = std::max(8, static_cast<int>(std::lround(0.75 * image_h * st.body_scale)));
            const int fig_w = std::max(4, static_cast<int>(std::lround(0.50 * image_w * st.body_scale)));
            const int max_dy = std::max(0, (image_h - fig_h) / 2 - 1);
            const int max_dx = std::max(0, (image_w - fig_w) / 2 - fig_w / 4 - 2);
            st.offset_y = std::uniform_int_distribution<int>(-max_dy, max_dy)(rng);
            st.offset_x = std::uniform_int_distribution<int>(-max_dx, max_dx)(rng);

            ImageSample sample;
            sample.image_h = image_h;
            sample.image_w = image_w;
            sample.identity = id;
            sample.structure = st;
            sample.render_seed = splitmix64(seed ^ (domain_salt << 56) ^
                                            (static_cast<std::uint64_t>(i) << 20) ^
                                            static_cast<std::uint64_t>(j));
            sample.pixels = render(id, st, style, sample.render_seed, image_h, image_w);
            sample.id = id.index;
            sample.camera = st.camera;
            sample.domain = domain;
            sample.is_query = domain == Domain::Target && (j % 4 == 0);
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%c%04d_c%d_%03d", tag, i, st.camera, j);
            sample.name = buf;
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

std::vector<double> ground_truth_composite(const ImageSample& id_from, const ImageSample& st_from,
                                           Domain dom) {
    if (id_from.pixels.empty() || st_from.pixels.empty())
        throw ArgumentError("ground_truth_composite: empty samples");
    if (id_from.identity.index < 0)
        throw StateError("ground_truth_composite: samples loaded from disk carry no generating factors");
    return render(id_from.identity, st_from.structure, default_style(dom), st_from.render_seed,
                  st_from.image_h, st_from.image_w);
}

Tensor batch_tensor(const Dataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) throw ArgumentError("batch_tensor: empty index list");
    const int n = static_cast<int>(indices.size());
    const size_t per = static_cast<size_t>(3) * ds.image_h * ds.image_w;
    std::vector<double> data(per * n);
    for (int i = 0; i < n; ++i) {
        const auto& s = ds.samples.at(static_cast<size_t>(indices[static_cast<size_t>(i)]));
        std::copy(s.pixels.begin(), s.pixels.end(), data.begin() + static_cast<size_t>(i) * per);
    }
    return Tensor::from_data({n, 3, ds.image_h, ds.image_w}, std::move(data));
}

// --- on-disk format: manifest.tsv + 16-bit PPM per sample ---

namespace {

void write_ppm(const std::string& path, const std::vector<double>& pixels, int h, int w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path);
    f << "P6\n" << w << " " << h << "\n65535\n";
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) {
            const double v = pixels[c * plane + p];
            const long q = std::lround((std::min(1.0, std::max(-1.0, v)) + 1.0) * 0.5 * 65535.0);
            f.put(static_cast<char>((q >> 8) & 0xff));
            f.put(static_cast<char>(q & 0xff));
        }
}

std::vector<double> read_ppm(const std::string& path, int& h, int& w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot read " + path);
    std::string magic;
    int maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 65535 || h <= 0 || w <= 0)
        throw FormatError("unsupported image header in " + path);
    f.get();  // single whitespace after maxval
    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> pixels(3 * plane);
    std::vector<unsigned char> raw(plane * 6);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(f.gcount()) != raw.size()) throw FormatError("truncated image " + path);
    for (size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) {
            const unsigned hi = raw[p * 6 + static_cast<size_t>(c) * 2];
            const unsigned lo = raw[p * 6 + static_cast<size_t>(c) * 2 + 1];
            pixels[static_cast<size_t>(c) * plane + p] =
                static_cast<double>((hi << 8) | lo) / 65535.0 * 2.0 - 1.0;
        }
    return pixels;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream m(fs::path(dir) / "manifest.tsv");
    if (!m) throw FormatError("cannot write manifest in " + dir);
    m << "# xdreid dataset v1 domain=" << domain_name(ds.domain) << " h=" << ds.image_h
      << " w=" << ds.image_w << " cams=" << ds.n_cams << "\n";
    for (const auto& s : ds.samples) {
        const std::string file = s.name + ".ppm";
        m << file << "\t" << s.id << "\t" << s.camera << "\t" << domain_name(s.domain) << "\t"
          << (s.domain == Domain::Target ? (s.is_query ? "query" : "gallery") : "train") << "\n";
        write_ppm((fs::path(dir) / file).string(), s.pixels, ds.image_h, ds.image_w);
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream m(fs::path(dir) / "manifest.tsv");
    if (!m) throw FormatError("no manifest.tsv in " + dir);
    Dataset ds;
    std::string line;
    if (!std::getline(m, line) || line.rfind("# xdreid dataset v1", 0) != 0)
        throw FormatError("unrecognized manifest header in " + dir);
    {
        std::istringstream hs(line);
        std::string tok;
        while (hs >> tok) {
            if (tok.rfind("domain=", 0) == 0)
                ds.domain = tok.substr(7) == "source" ? Domain::Source : Domain::Target;
            else if (tok.rfind("h=", 0) == 0)
                ds.image_h = std::stoi(tok.substr(2));
            else if (tok.rfind("w=", 0) == 0)
                ds.image_w = std::stoi(tok.substr(2));
            else if (tok.rfind("cams=", 0) == 0)
                ds.n_cams = std::stoi(tok.substr(5));
        }
    }
    if (ds.image_h <= 0 || ds.image_w <= 0) throw FormatError("manifest header missing image dims");
    while (std::getline(m, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string file, domain, split;
        ImageSample s;
        if (!(ls >> file >> s.id >> s.camera >> domain >> split))
            throw FormatError("bad manifest row: " + line);
        s.domain = domain == "source" ? Domain::Source : Domain::Target;
        s.is_query = split == "query";
        s.name = file.substr(0, file.rfind('.'));
        int h = 0, w = 0;
        s.pixels = read_ppm((fs::path(dir) / file).string(), h, w);
        if (h != ds.image_h || w != ds.image_w) throw FormatError("image dims disagree with manifest");
        s.image_h = h;
        s.image_w = w;
        s.identity.index = -1;  // generating factors are not stored on disk
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace xdreid
