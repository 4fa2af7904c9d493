#pragma once

// Dense TV-L1 optical flow (duality-based primal-dual scheme, coarse-to-fine
// with warping) plus the flow-channel normalization used by the temporal
// stream and the PFLW flow file format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "avr/binary_io.hpp"
#include "avr/error.hpp"

namespace avr {

/// Row-major single-channel image.
template <typename T>
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Plane() = default;
    Plane(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    std::size_t size() const { return data.size(); }
    T& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    /// Clamp-to-edge access.
    const T& clamped(int x, int y) const {
        return (*this)(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
    }

    bool same_shape(int w, int h) const { return width == w && height == h; }

    bool operator==(const Plane&) const = default;
};

/// Intensities in [0,1].
using GrayImage = Plane<float>;

/// Normalized flow channel, values in [0,1].
using ChannelImage = Plane<double>;

struct RgbImage {
    Plane<float> r, g, b;
};

/// Per-pixel displacement from one frame to the next, in pixels.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> u;  // horizontal
    std::vector<float> v;  // vertical

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h), u(static_cast<std::size_t>(w) * h, 0.f), v(static_cast<std::size_t>(w) * h, 0.f) {}

    std::size_t size() const { return u.size(); }

    bool operator==(const FlowField&) const = default;
};

struct TvL1Params {
    double lambda = 0.15;   // data-attachment weight
    double theta = 0.3;     // coupling between primal flow and auxiliary field
    double tau = 0.25;      // dual step
    int n_scales = 5;
    double zoom = 0.5;      // inter-level scale factor
    int n_warps = 5;
    int max_iters = 300;    // inner iterations per warp
    double stop_eps = 0.01; // stop when RMS flow update drops below this

    void validate() const {
        if (!(lambda > 0) || !(theta > 0) || !(tau > 0) || !(stop_eps > 0))
            throw Error(ErrorKind::config, "TV-L1 lambda, theta, tau and stop_eps must be positive");
        if (tau > 0.25) throw Error(ErrorKind::config, "TV-L1 tau must be <= 0.25 for stability");
        if (!(zoom > 0 && zoom < 1)) throw Error(ErrorKind::config, "TV-L1 zoom must be in (0,1)");
        if (n_scales < 1 || n_warps < 1 || max_iters < 1)
            throw Error(ErrorKind::config, "TV-L1 n_scales, n_warps and max_iters must be >= 1");
    }

    bool operator==(const TvL1Params&) const = default;
};

inline GrayImage to_gray(const RgbImage& rgb) {
    const auto w = rgb.r.width, h = rgb.r.height;
    if (!rgb.g.same_shape(w, h) || !rgb.b.same_shape(w, h) || rgb.r.size() != static_cast<std::size_t>(w) * h ||
        rgb.g.size() != rgb.r.size() || rgb.b.size() != rgb.r.size())
        throw Error(ErrorKind::shape, "RGB planes differ in shape");
    GrayImage out(w, h);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = 0.299f * rgb.r.data[i] + 0.587f * rgb.g.data[i] + 0.114f * rgb.b.data[i];
    return out;
}

namespace flow_detail {

using Grid = Plane<double>;

inline double sample_bilinear(const Grid& img, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double ax = x - x0, ay = y - y0;
    const double top = (1 - ax) * img(x0, y0) + ax * img(x1, y0);
    const double bottom = (1 - ax) * img(x0, y1) + ax * img(x1, y1);
    return (1 - ay) * top + ay * bottom;
}

inline Grid warp(const Grid& img, const Grid& u, const Grid& v) {
    Grid out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out(x, y) = sample_bilinear(img, x + u(x, y), y + v(x, y));
    return out;
}

inline void centered_gradient(const Grid& img, Grid& gx, Grid& gy) {
    gx = Grid(img.width, img.height);
    gy = Grid(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            gx(x, y) = 0.5 * (img.clamped(x + 1, y) - img.clamped(x - 1, y));
            gy(x, y) = 0.5 * (img.clamped(x, y + 1) - img.clamped(x, y - 1));
        }
}

// Forward differences with Neumann boundary (zero at the last column/row).
inline void forward_gradient(const Grid& f, Grid& fx, Grid& fy) {
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            fx(x, y) = x + 1 < f.width ? f(x + 1, y) - f(x, y) : 0.0;
            fy(x, y) = y + 1 < f.height ? f(x, y + 1) - f(x, y) : 0.0;
        }
}

// Negative adjoint of forward_gradient.
inline void divergence(const Grid& p1, const Grid& p2, Grid& div) {
    const int w = p1.width, h = p1.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double dx, dy;
            if (w == 1) dx = 0;
            else if (x == 0) dx = p1(x, y);
            else if (x == w - 1) dx = -p1(x - 1, y);
            else dx = p1(x, y) - p1(x - 1, y);
            if (h == 1) dy = 0;
            else if (y == 0) dy = p2(x, y);
            else if (y == h - 1) dy = -p2(x, y - 1);
            else dy = p2(x, y) - p2(x, y - 1);
            div(x, y) = dx + dy;
        }
}

inline void median3x3(Grid& f) {
    const Grid src = f;
    std::array<double, 9> window{};
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) window[k++] = src.clamped(x + dx, y + dy);
            std::nth_element(window.begin(), window.begin() + 4, window.end());
            f(x, y) = window[4];
        }
}

// Separable [1 4 6 4 1]/16 blur, clamp-to-edge.
inline Grid gaussian5(const Grid& img) {
    static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    Grid tmp(img.width, img.height), out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0;
            for (int i = -2; i <= 2; ++i) s += k[i + 2] * img.clamped(x + i, y);
            tmp(x, y) = s;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0;
            for (int i = -2; i <= 2; ++i) s += k[i + 2] * tmp.clamped(x, y + i);
            out(x, y) = s;
        }
    return out;
}

// Pixel-center aligned bilinear resize.
inline Grid resize_bilinear(const Grid& img, int w, int h) {
    Grid out(w, h);
    const double sx = static_cast<double>(img.width) / w, sy = static_cast<double>(img.height) / h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(x, y) = sample_bilinear(img, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
    return out;
}

inline int scaled_size(int n, double zoom) { return std::max(1, static_cast<int>(n * zoom + 0.5)); }

inline Grid to_grid(const GrayImage& img, double scale) {
    Grid g(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) g.data[i] = scale * img.data[i];
    return g;
}

// E(u) = sum |grad u1| + |grad u2| + lambda * |I1(x + u) - I0(x)|
inline double energy(const Grid& I0, const Grid& I1, const Grid& u1, const Grid& u2, double lambda) {
    Grid u1x(u1.width, u1.height), u1y(u1.width, u1.height), u2x(u1.width, u1.height), u2y(u1.width, u1.height);
    forward_gradient(u1, u1x, u1y);
    forward_gradient(u2, u2x, u2y);
    const Grid warped = warp(I1, u1, u2);
    double e = 0;
    for (std::size_t i = 0; i < I0.size(); ++i)
        e += std::hypot(u1x.data[i], u1y.data[i]) + std::hypot(u2x.data[i], u2y.data[i]) +
             lambda * std::abs(warped.data[i] - I0.data[i]);
    return e;
}

// Intensities are processed on a 0..255 scale so the default lambda has the
// same meaning as in the 8-bit reference implementations.
inline constexpr double kIntensityScale = 255.0;
inline constexpr double kGradIsZero = 1e-10;

struct ScaleTrace {
    std::vector<double> energies;  // after each warp
};

// Primal-dual iterations at one pyramid level; u1/u2 are refined in place.
inline ScaleTrace solve_level(const Grid& I0, const Grid& I1, Grid& u1, Grid& u2, const TvL1Params& prm,
                              bool trace_energy) {
    const int w = I0.width, h = I0.height;
    const std::size_t n = I0.size();
    const double l_t = prm.lambda * prm.theta;
    const double taut = prm.tau / prm.theta;

    Grid I1x, I1y;
    centered_gradient(I1, I1x, I1y);
    Grid p11(w, h), p12(w, h), p21(w, h), p22(w, h);
    Grid v1(w, h), v2(w, h), div1(w, h), div2(w, h), u1x(w, h), u1y(w, h), u2x(w, h), u2y(w, h);
    Grid grad(w, h), rho_c(w, h), I1wx_m(w, h), I1wy_m(w, h);

    ScaleTrace trace;
    Grid prev_u1 = u1, prev_u2 = u2;
    double e_prev = energy(I0, I1, u1, u2, prm.lambda);
    for (int warp_i = 0; warp_i < prm.n_warps; ++warp_i) {
        const Grid I1w = warp(I1, u1, u2);
        const Grid I1wx = warp(I1x, u1, u2);
        const Grid I1wy = warp(I1y, u1, u2);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto i = static_cast<std::size_t>(y) * w + x;
                const double tx = x + u1.data[i], ty = y + u2.data[i];
                if (tx < 0 || tx > w - 1 || ty < 0 || ty > h - 1) {
                    // Clamped samples carry no usable gradient.
                    I1wx_m.data[i] = I1wy_m.data[i] = grad.data[i] = rho_c.data[i] = 0;
                    continue;
                }
                I1wx_m.data[i] = I1wx.data[i];
                I1wy_m.data[i] = I1wy.data[i];
                grad.data[i] = I1wx.data[i] * I1wx.data[i] + I1wy.data[i] * I1wy.data[i];
                rho_c.data[i] = I1w.data[i] - I1wx.data[i] * u1.data[i] - I1wy.data[i] * u2.data[i] - I0.data[i];
            }

        double error = INFINITY;
        for (int iter = 0; iter < prm.max_iters && error > prm.stop_eps * prm.stop_eps; ++iter) {
            // Pointwise thresholding of the linearized data term.
            for (std::size_t i = 0; i < n; ++i) {
                const double rho = rho_c.data[i] + I1wx_m.data[i] * u1.data[i] + I1wy_m.data[i] * u2.data[i];
                double d1 = 0, d2 = 0;
                if (rho < -l_t * grad.data[i]) {
                    d1 = l_t * I1wx_m.data[i];
                    d2 = l_t * I1wy_m.data[i];
                } else if (rho > l_t * grad.data[i]) {
                    d1 = -l_t * I1wx_m.data[i];
                    d2 = -l_t * I1wy_m.data[i];
                } else if (grad.data[i] >= kGradIsZero) {
                    const double fi = -rho / grad.data[i];
                    d1 = fi * I1wx_m.data[i];
                    d2 = fi * I1wy_m.data[i];
                }
                v1.data[i] = u1.data[i] + d1;
                v2.data[i] = u2.data[i] + d2;
            }

            divergence(p11, p12, div1);
            divergence(p21, p22, div2);

            error = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = u1.data[i], b = u2.data[i];
                u1.data[i] = v1.data[i] + prm.theta * div1.data[i];
                u2.data[i] = v2.data[i] + prm.theta * div2.data[i];
                error += (u1.data[i] - a) * (u1.data[i] - a) + (u2.data[i] - b) * (u2.data[i] - b);
            }
            error /= static_cast<double>(n);

            // Projected dual ascent.
            forward_gradient(u1, u1x, u1y);
            forward_gradient(u2, u2x, u2y);
            for (std::size_t i = 0; i < n; ++i) {
                const double ng1 = 1.0 + taut * std::hypot(u1x.data[i], u1y.data[i]);
                const double ng2 = 1.0 + taut * std::hypot(u2x.data[i], u2y.data[i]);
                p11.data[i] = (p11.data[i] + taut * u1x.data[i]) / ng1;
                p12.data[i] = (p12.data[i] + taut * u1y.data[i]) / ng1;
                p21.data[i] = (p21.data[i] + taut * u2x.data[i]) / ng2;
                p22.data[i] = (p22.data[i] + taut * u2y.data[i]) / ng2;
            }
        }

        median3x3(u1);
        median3x3(u2);

        // Safeguard: a warp may not raise the (non-linearized) energy. Backtrack
        // toward the previous flow, or keep it if no step helps.
        double e_new = energy(I0, I1, u1, u2, prm.lambda);
        if (e_new > e_prev) {
            bool accepted = false;
            for (double t = 0.5; t >= 0.125 && !accepted; t *= 0.5) {
                Grid c1 = prev_u1, c2 = prev_u2;
                for (std::size_t i = 0; i < n; ++i) {
                    c1.data[i] += t * (u1.data[i] - prev_u1.data[i]);
                    c2.data[i] += t * (u2.data[i] - prev_u2.data[i]);
                }
                const double e_c = energy(I0, I1, c1, c2, prm.lambda);
                if (e_c <= e_prev) {
                    u1 = std::move(c1);
                    u2 = std::move(c2);
                    e_new = e_c;
                    accepted = true;
                }
            }
            if (!accepted) {
                u1 = prev_u1;
                u2 = prev_u2;
                e_new = e_prev;
            }
        }
        e_prev = e_new;
        prev_u1 = u1;
        prev_u2 = u2;
        if (trace_energy) trace.energies.push_back(e_new);
    }
    return trace;
}

inline bool is_constant(const GrayImage& img) {
    if (img.data.empty()) return true;
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    return *lo == *hi;
}

}  // namespace flow_detail

/// Samples `img` at (x + u, y + v) with bilinear interpolation; coordinates
/// outside the image clamp to the nearest border pixel.
inline GrayImage warp_bilinear(const GrayImage& img, const FlowField& flow) {
    if (!img.same_shape(flow.width, flow.height) || flow.u.size() != img.size() || flow.v.size() != img.size())
        throw Error(ErrorKind::shape, "image and flow shapes differ");
    const auto grid = flow_detail::to_grid(img, 1.0);
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto i = static_cast<std::size_t>(y) * img.width + x;
            out.data[i] = static_cast<float>(flow_detail::sample_bilinear(grid, x + flow.u[i], y + flow.v[i]));
        }
    return out;
}

struct FlowResult {
    FlowField flow;
    bool low_confidence = false;  // set when both frames carry no texture
    int scales_used = 0;
    std::vector<double> finest_energies;  // TV-L1 energy after each warp at full resolution
};

/// Full TV-L1 estimate from `prev` to `next`: next(x + flow(x)) ~ prev(x).
inline FlowResult tvl1_flow_detailed(const GrayImage& prev, const GrayImage& next, const TvL1Params& params) {
    using namespace flow_detail;
    params.validate();
    if (!prev.same_shape(next.width, next.height) || prev.size() != next.size() ||
        prev.size() != static_cast<std::size_t>(prev.width) * prev.height || prev.size() == 0)
        throw Error(ErrorKind::shape, "frame shapes differ or are empty");

    FlowResult result;
    result.flow = FlowField(prev.width, prev.height);
    if (is_constant(prev) && is_constant(next)) {
        result.low_confidence = true;
        return result;
    }

    // Drop levels whose smaller side would fall below 16 px.
    std::vector<int> ws{prev.width}, hs{prev.height};
    for (int s = 1; s < params.n_scales; ++s) {
        const int w = scaled_size(ws.back(), params.zoom), h = scaled_size(hs.back(), params.zoom);
        if (std::min(w, h) < 16) break;
        ws.push_back(w);
        hs.push_back(h);
    }
    const int levels = static_cast<int>(ws.size());
    result.scales_used = levels;

    std::vector<Grid> I0s{to_grid(prev, kIntensityScale)}, I1s{to_grid(next, kIntensityScale)};
    for (int s = 1; s < levels; ++s) {
        I0s.push_back(resize_bilinear(gaussian5(I0s.back()), ws[s], hs[s]));
        I1s.push_back(resize_bilinear(gaussian5(I1s.back()), ws[s], hs[s]));
    }

    Grid u1(ws.back(), hs.back()), u2(ws.back(), hs.back());
    for (int s = levels - 1; s >= 0; --s) {
        auto trace = solve_level(I0s[s], I1s[s], u1, u2, params, s == 0);
        if (s == 0) {
            result.finest_energies = std::move(trace.energies);
            break;
        }
        const double fx = static_cast<double>(ws[s - 1]) / ws[s], fy = static_cast<double>(hs[s - 1]) / hs[s];
        u1 = resize_bilinear(u1, ws[s - 1], hs[s - 1]);
        u2 = resize_bilinear(u2, ws[s - 1], hs[s - 1]);
        for (auto& x : u1.data) x *= fx;
        for (auto& x : u2.data) x *= fy;
    }

    for (std::size_t i = 0; i < u1.size(); ++i) {
        result.flow.u[i] = static_cast<float>(u1.data[i]);
        result.flow.v[i] = static_cast<float>(u2.data[i]);
    }
    return result;
}

inline FlowField tvl1_flow(const GrayImage& prev, const GrayImage& next, const TvL1Params& params = {}) {
    return tvl1_flow_detailed(prev, next, params).flow;
}

/// TV-L1 energy of `flow` on a frame pair, on the internal 0..255 scale.
inline double tvl1_energy(const GrayImage& prev, const GrayImage& next, const FlowField& flow, double lambda) {
    using namespace flow_detail;
    Grid u1(flow.width, flow.height), u2(flow.width, flow.height);
    for (std::size_t i = 0; i < flow.size(); ++i) {
        u1.data[i] = flow.u[i];
        u2.data[i] = flow.v[i];
    }
    return energy(to_grid(prev, kIntensityScale), to_grid(next, kIntensityScale), u1, u2, lambda);
}

// ---------------------------------------------------------------------------
// Normalization

struct FlowChannels {
    ChannelImage horizontal;
    ChannelImage vertical;
};

/// Clamps each component to [-max_disp, max_disp] and maps it affinely onto
/// [0,1] (zero motion -> 0.5).
inline FlowChannels normalize_flow(const FlowField& flow, double max_disp) {
    if (!(max_disp > 0)) throw Error(ErrorKind::domain, "max_disp must be positive");
    FlowChannels out{ChannelImage(flow.width, flow.height), ChannelImage(flow.width, flow.height)};
    for (std::size_t i = 0; i < flow.size(); ++i) {
        const double u = flow.u[i], v = flow.v[i];
        if (!std::isfinite(u) || !std::isfinite(v)) {
            const auto x = i % static_cast<std::size_t>(flow.width), y = i / static_cast<std::size_t>(flow.width);
            throw Error(ErrorKind::numeric,
                        "non-finite flow at pixel (" + std::to_string(x) + ", " + std::to_string(y) + ")");
        }
        out.horizontal.data[i] = (std::clamp(u, -max_disp, max_disp) + max_disp) / (2 * max_disp);
        out.vertical.data[i] = (std::clamp(v, -max_disp, max_disp) + max_disp) / (2 * max_disp);
    }
    return out;
}

/// Inverse of normalize_flow inside the clamp range.
inline FlowField denormalize_flow(const FlowChannels& ch, double max_disp) {
    if (!ch.vertical.same_shape(ch.horizontal.width, ch.horizontal.height))
        throw Error(ErrorKind::shape, "flow channels differ in shape");
    FlowField out(ch.horizontal.width, ch.horizontal.height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.u[i] = static_cast<float>(ch.horizontal.data[i] * 2 * max_disp - max_disp);
        out.v[i] = static_cast<float>(ch.vertical.data[i] * 2 * max_disp - max_disp);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PFLW: "PFLW", u32 width, u32 height, float32 u-plane, float32 v-plane (LE).

inline Bytes encode_flow_file(const FlowField& flow) {
    ByteWriter w;
    w.magic("PFLW");
    w.u32(static_cast<std::uint32_t>(flow.width));
    w.u32(static_cast<std::uint32_t>(flow.height));
    for (float x : flow.u) w.f32(x);
    for (float x : flow.v) w.f32(x);
    return std::move(w).bytes();
}

inline FlowField decode_flow_file(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("PFLW");
    const auto w = r.u32(), h = r.u32();
    const std::uint64_t n = std::uint64_t{w} * h;
    if (w == 0 || h == 0 || r.remaining() != n * 8) throw Error(ErrorKind::parse, "PFLW payload size mismatch");
    FlowField flow(static_cast<int>(w), static_cast<int>(h));
    for (auto& x : flow.u) x = r.f32();
    for (auto& x : flow.v) x = r.f32();
    return flow;
}

}  // namespace avr
