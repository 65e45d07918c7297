#include "fwn/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include "fwn/io.hpp"
#include "fwn/rng.hpp"
#include "fwn/tps.hpp"

namespace fwn {

namespace {

constexpr double kTau = 6.283185307179586;

// ---- procedural texture -----------------------------------------------------

std::uint64_t hash3(std::int64_t x, std::int64_t y, std::uint64_t seed) {
    std::uint64_t h = seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^
                      (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL);
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ULL;
    h = (h ^ (h >> 27)) * 0x94D049BB133111EBULL;
    return h ^ (h >> 31);
}

double lattice_value(std::int64_t x, std::int64_t y, std::uint64_t seed) {
    return static_cast<double>(hash3(x, y, seed) >> 11) * 0x1.0p-53;
}

// Continuous value noise in [0,1], smoothstep-interpolated.
double value_noise(double x, double y, std::uint64_t seed) {
    const double fx = std::floor(x), fy = std::floor(y);
    const std::int64_t ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    double tx = x - fx, ty = y - fy;
    tx = tx * tx * (3.0 - 2.0 * tx);
    ty = ty * ty * (3.0 - 2.0 * ty);
    const double v00 = lattice_value(ix, iy, seed);
    const double v10 = lattice_value(ix + 1, iy, seed);
    const double v01 = lattice_value(ix, iy + 1, seed);
    const double v11 = lattice_value(ix + 1, iy + 1, seed);
    return (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 + (1 - tx) * ty * v01 + tx * ty * v11;
}

struct SpriteGeometry {
    double ellipse_cx, ellipse_cy, ellipse_rx, ellipse_ry;  // tops
    double rect_x0, rect_x1, rect_y0, rect_y1;              // bottoms
};

SpriteGeometry geometry(int size) {
    const double s = size / 64.0;
    SpriteGeometry g;
    g.ellipse_cx = 32.0 * s;
    g.ellipse_cy = 21.0 * s;
    g.ellipse_rx = 13.0 * s;
    g.ellipse_ry = 9.0 * s;
    g.rect_x0 = 20.0 * s;
    g.rect_x1 = 44.0 * s;
    g.rect_y0 = 31.0 * s;
    g.rect_y1 = 53.0 * s;
    return g;
}

int class_at(const SpriteGeometry& g, double x, double y) {
    const double ex = (x - g.ellipse_cx) / g.ellipse_rx;
    const double ey = (y - g.ellipse_cy) / g.ellipse_ry;
    if (ex * ex + ey * ey <= 1.0) return 1;
    if (x >= g.rect_x0 && x <= g.rect_x1 && y >= g.rect_y0 && y <= g.rect_y1) return 2;
    return 0;
}

// Stripe periods are kept well above 2 px so bilinear transport of the
// rendered frames stays within the documented tolerance.
void appearance(const SpriteGeometry& g, std::uint64_t seed, double x, double y, double rgb[3]) {
    switch (class_at(g, x, y)) {
        case 1: {
            const double wobble = value_noise(x / 7.0, y / 7.0, seed ^ 0xA1);
            const double s = 0.5 + 0.5 * std::sin(kTau * y / 7.5 + 3.0 * wobble);
            const double n = value_noise(x / 5.0, y / 5.0, seed ^ 0xA2);
            rgb[0] = 0.30 + 0.55 * s;
            rgb[1] = 0.15 + 0.25 * n;
            rgb[2] = 0.20 + 0.30 * (1.0 - s);
            break;
        }
        case 2: {
            const double wobble = value_noise(x / 7.0, y / 7.0, seed ^ 0xB1);
            const double s = 0.5 + 0.5 * std::sin(kTau * x / 7.0 + 3.0 * wobble);
            const double n = value_noise(x / 5.0, y / 5.0, seed ^ 0xB2);
            rgb[0] = 0.12 + 0.20 * (1.0 - s);
            rgb[1] = 0.20 + 0.35 * s + 0.1 * n;
            rgb[2] = 0.35 + 0.50 * s;
            break;
        }
        default: {
            const double n = value_noise(x / 6.0, y / 6.0, seed ^ 0xC1);
            rgb[0] = 0.10 + 0.16 * n;
            rgb[1] = 0.12 + 0.16 * n;
            rgb[2] = 0.14 + 0.16 * n;
            break;
        }
    }
}

// ---- motion scripts ---------------------------------------------------------

struct Oscillation {
    double amp, period, phase;
    // Zero at t = 0.
    double at(int t) const { return amp * (std::sin(kTau * t / period + phase) - std::sin(phase)); }
};

Oscillation make_osc(Rng& rng, double amp) {
    return Oscillation{amp * rng.uniform(0.6, 1.0), rng.uniform(7.0, 15.0), rng.uniform(0.0, kTau)};
}

class MotionScript {
  public:
    virtual ~MotionScript() = default;
    // Position in frame t-l of the point at x in frame t (l <= t). l == t
    // gives the exemplar position.
    virtual Vec2 to_earlier(int t, int lag, Vec2 x) const = 0;
};

class AffineScript final : public MotionScript {
  public:
    AffineScript(const SpriteScene& scene, Rng rng)
        : center_(scene.size / 2.0), vx_(scene.velocity_x), vy_(scene.velocity_y) {
        angle_ = make_osc(rng, scene.rotate_amp);
        scale_ = make_osc(rng, scene.scale_amp);
        tx_ = make_osc(rng, scene.translate_amp);
        ty_ = make_osc(rng, scene.translate_amp);
    }

    Vec2 to_earlier(int t, int lag, Vec2 x) const override {
        const Vec2 exemplar = backward(t, x);
        if (lag == t) return exemplar;
        return forward(t - lag, exemplar);
    }

  private:
    // Forward pose: rotate+scale about the canvas center, then translate.
    // The constant drift enters negatively so backward sampling advances by
    // +velocity per frame.
    Vec2 forward(int t, Vec2 q) const {
        const double a = angle_.at(t), s = 1.0 + scale_.at(t);
        const double ca = std::cos(a), sa = std::sin(a);
        const double rx = q.x - center_, ry = q.y - center_;
        return Vec2{s * (ca * rx - sa * ry) + center_ + tx_.at(t) - t * vx_,
                    s * (sa * rx + ca * ry) + center_ + ty_.at(t) - t * vy_};
    }
    Vec2 backward(int t, Vec2 p) const {
        const double a = angle_.at(t), s = 1.0 + scale_.at(t);
        const double ca = std::cos(a), sa = std::sin(a);
        const double rx = (p.x - center_ - tx_.at(t) + t * vx_) / s;
        const double ry = (p.y - center_ - ty_.at(t) + t * vy_) / s;
        return Vec2{ca * rx + sa * ry + center_, -sa * rx + ca * ry + center_};
    }

    double center_;
    double vx_, vy_;
    Oscillation angle_, scale_, tx_, ty_;
};

class TpsScript final : public MotionScript {
  public:
    TpsScript(const SpriteScene& scene, int frames, Rng rng) : size_(scene.size) {
        // Per-control-point bounded trajectories; each step interpolates the
        // increment between consecutive trajectory samples.
        std::array<Oscillation, kTpsPoints> ox, oy;
        Oscillation gx = make_osc(rng, scene.translate_amp * 2.0 / (scene.size - 1));
        Oscillation gy = make_osc(rng, scene.translate_amp * 2.0 / (scene.size - 1));
        for (int k = 0; k < kTpsPoints; ++k) {
            ox[k] = make_osc(rng, scene.tps_amp);
            oy[k] = make_osc(rng, scene.tps_amp);
        }
        const double vx_norm = scene.velocity_x * 2.0 / (scene.size - 1);
        const double vy_norm = scene.velocity_y * 2.0 / (scene.size - 1);
        const TpsPoints lattice = tps_lattice();
        steps_.reserve(std::max(0, frames - 1));
        for (int t = 1; t < frames; ++t) {
            TpsPoints theta = lattice;
            for (int k = 0; k < kTpsPoints; ++k) {
                theta[k].x += (ox[k].at(t) - ox[k].at(t - 1)) + (gx.at(t) - gx.at(t - 1)) + vx_norm;
                theta[k].y += (oy[k].at(t) - oy[k].at(t - 1)) + (gy.at(t) - gy.at(t - 1)) + vy_norm;
            }
            steps_.push_back(fit_tps(lattice, theta));
        }
    }

    Vec2 to_earlier(int t, int lag, Vec2 x) const override {
        Vec2 p = x;
        const double half = (size_ - 1) / 2.0;
        for (int tau = t; tau > t - lag; --tau) {
            const Vec2 m = tps_apply(steps_[tau - 1], p.x / half - 1.0, p.y / half - 1.0);
            p = Vec2{(m.x + 1.0) * half, (m.y + 1.0) * half};
        }
        return p;
    }

  private:
    int size_;
    std::vector<TpsTransform> steps_;
};

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

// Optimizer-proof float32 rounding (GCC's vectorizer can otherwise elide the
// narrow->widen pair).
double to_float32(double v) {
    volatile float f = static_cast<float>(v);
    return f;
}

}  // namespace

ImageTensor clothing_foreground(const ImageTensor& image, const SemanticLayout& layout) {
    if (image.height != layout.height || image.width != layout.width)
        throw ContractError("clothing_foreground: shape mismatch");
    ImageTensor out = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (layout.at(x, y) == 0)
                for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = 0.0;
    return out;
}

Dataset generate(const SpriteScene& scene, int frames) {
    if (frames < 1) throw ContractError("generate: need at least one frame");
    if (scene.size < 16) throw ContractError("generate: canvas too small");

    Rng root(scene.seed);
    const SpriteGeometry geo = geometry(scene.size);
    std::unique_ptr<MotionScript> script;
    if (scene.motion == MotionKind::kAffine)
        script = std::make_unique<AffineScript>(scene, root.split("motion"));
    else
        script = std::make_unique<TpsScript>(scene, frames, root.split("motion"));

    const int S = scene.size;
    const std::uint64_t tex_seed = root.split("texture").next_u64();

    Dataset ds;
    ds.scene = scene;
    ds.width = S;
    ds.height = S;
    ds.num_classes = 3;

    // Exemplar layout grid; NN transport of it defines every frame's layout.
    SemanticLayout layout0(S, S, 3);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) layout0.at(x, y) = static_cast<std::uint8_t>(class_at(geo, x, y));

    for (int t = 0; t < frames; ++t) {
        FrameData fd{ImageTensor(S, S, 3), SemanticLayout(S, S, 3), FlowField(S, S), {}};
        bool has_tops = false, has_bottoms = false;
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                const Vec2 e = script->to_earlier(t, t, Vec2{static_cast<double>(x), static_cast<double>(y)});
                // Quantize to float32 so .flo files reproduce generation exactly.
                const double fx = to_float32(e.x - x);
                const double fy = to_float32(e.y - y);
                fd.flow_to_exemplar.set(x, y, fx, fy);
                const double sx = x + fx, sy = y + fy;
                double rgb[3];
                appearance(geo, tex_seed, sx, sy, rgb);
                for (int c = 0; c < 3; ++c) fd.image.at(x, y, c) = rgb[c];
                const int rx = round_half_up(sx), ry = round_half_up(sy);
                std::uint8_t cls = 0;
                if (rx >= 0 && rx < S && ry >= 0 && ry < S) cls = layout0.at(rx, ry);
                fd.layout.at(x, y) = cls;
                has_tops |= cls == 1;
                has_bottoms |= cls == 2;
            }
        }
        if (!has_tops || !has_bottoms)
            throw GenerationError("generate: sprite left the canvas at frame " + std::to_string(t));
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                if (fd.layout.at(x, y) != 0 && (x < 2 || x >= S - 2 || y < 2 || y >= S - 2))
                    throw GenerationError("generate: sprite margin violated at frame " + std::to_string(t));

        for (int lag : {1, 3, 9}) {
            if (t - lag < 0) continue;
            FlowField u(S, S);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const Vec2 p =
                        script->to_earlier(t, lag, Vec2{static_cast<double>(x), static_cast<double>(y)});
                    u.set(x, y, to_float32(p.x - x), to_float32(p.y - y));
                }
            fd.lag_flows.emplace(lag, std::move(u));
        }
        ds.frames.push_back(std::move(fd));
    }
    return ds;
}

namespace {

std::string frame_name(const char* prefix, int t, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%04d.%s", prefix, t, ext);
    return buf;
}

}  // namespace

void export_dataset(const Dataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "frames");
    fs::create_directories(fs::path(dir) / "layouts");
    fs::create_directories(fs::path(dir) / "flows");

    nlohmann::json files;
    files["frames"] = nlohmann::json::array();
    files["layouts"] = nlohmann::json::array();
    files["exemplar_flows"] = nlohmann::json::array();
    files["lag_flows"] = nlohmann::json::array();

    for (int t = 0; t < static_cast<int>(dataset.frames.size()); ++t) {
        const FrameData& fd = dataset.frames[t];
        const std::string frame = "frames/" + frame_name("", t, "png");
        const std::string layout = "layouts/" + frame_name("", t, "pgm");
        const std::string exflow = "flows/" + frame_name("exemplar_", t, "flo");
        write_image(fd.image, (fs::path(dir) / frame).string());
        write_layout(fd.layout, (fs::path(dir) / layout).string());
        write_flo(fd.flow_to_exemplar, (fs::path(dir) / exflow).string());
        files["frames"].push_back(frame);
        files["layouts"].push_back(layout);
        files["exemplar_flows"].push_back(exflow);
        for (const auto& [lag, flow] : fd.lag_flows) {
            const std::string name =
                "flows/" + frame_name(("lag" + std::to_string(lag) + "_").c_str(), t, "flo");
            write_flo(flow, (fs::path(dir) / name).string());
            files["lag_flows"].push_back({{"lag", lag}, {"t", t}, {"path", name}});
        }
    }

    nlohmann::json manifest{{"width", dataset.width},
                            {"height", dataset.height},
                            {"frames", dataset.frames.size()},
                            {"num_classes", dataset.num_classes},
                            {"seed", dataset.scene.seed},
                            {"motion", dataset.scene.motion == MotionKind::kAffine ? "affine" : "tps"},
                            {"files", files}};
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("export_dataset: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Dataset import_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("import_dataset: missing manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(in);

    Dataset ds;
    ds.width = manifest.at("width").get<int>();
    ds.height = manifest.at("height").get<int>();
    ds.num_classes = manifest.at("num_classes").get<int>();
    ds.scene.seed = manifest.at("seed").get<std::uint64_t>();
    ds.scene.size = ds.width;
    ds.scene.motion =
        manifest.at("motion").get<std::string>() == "tps" ? MotionKind::kTps : MotionKind::kAffine;

    const auto& files = manifest.at("files");
    const std::size_t n = manifest.at("frames").get<std::size_t>();
    ds.frames.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        ds.frames[t].image = read_image((fs::path(dir) / files.at("frames").at(t).get<std::string>()).string());
        ds.frames[t].layout = read_layout(
            (fs::path(dir) / files.at("layouts").at(t).get<std::string>()).string(), ds.num_classes);
        ds.frames[t].flow_to_exemplar =
            read_flo((fs::path(dir) / files.at("exemplar_flows").at(t).get<std::string>()).string());
    }
    for (const auto& entry : files.at("lag_flows")) {
        const int lag = entry.at("lag").get<int>();
        const int t = entry.at("t").get<int>();
        ds.frames.at(t).lag_flows.emplace(
            lag, read_flo((fs::path(dir) / entry.at("path").get<std::string>()).string()));
    }
    return ds;
}

}  // namespace fwn
