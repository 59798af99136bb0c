/********************************************************************************
* Copyright 2026 The hycaps Authors
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*    http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
********************************************************************************/

#include "hycaps/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "hycaps/rng.hpp"

namespace hycaps {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Colour = std::array<double, 3>;

struct Point
{
    double x;
    double y;
};

struct Prim
{
    enum class Kind
    {
        ellipse,  // centre, radii, angle
        ring,     // centre, outer radius rx, inner radius ry
        polygon,  // even-odd fill of pts
        segment,  // round-capped stroke from a to b with half width w
    };
    Kind kind = Kind::ellipse;
    Point c{0, 0};
    double rx = 0, ry = 0, angle = 0;
    std::vector<Point> pts;
    Point a{0, 0}, b{0, 0};
    double w = 0;

    bool contains(double x, double y) const
    {
        switch (kind) {
        case Kind::ellipse: {
            const double dx = x - c.x;
            const double dy = y - c.y;
            const double cs = std::cos(angle);
            const double sn = std::sin(angle);
            const double u = (cs * dx + sn * dy) / rx;
            const double v = (-sn * dx + cs * dy) / ry;
            return u * u + v * v <= 1.0;
        }
        case Kind::ring: {
            const double d2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
            return d2 <= rx * rx && d2 >= ry * ry;
        }
        case Kind::polygon: {
            bool inside = false;
            for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
                const auto& p = pts[i];
                const auto& q = pts[j];
                if ((p.y > y) != (q.y > y) && x < (q.x - p.x) * (y - p.y) / (q.y - p.y) + p.x) {
                    inside = !inside;
                }
            }
            return inside;
        }
        case Kind::segment: {
            const double vx = b.x - a.x;
            const double vy = b.y - a.y;
            const double len2 = vx * vx + vy * vy;
            double t = len2 > 0 ? ((x - a.x) * vx + (y - a.y) * vy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double dx = x - (a.x + t * vx);
            const double dy = y - (a.y + t * vy);
            return dx * dx + dy * dy <= w * w;
        }
        }
        return false;
    }
};

Prim ellipse(double cx, double cy, double rx, double ry, double angle = 0.0)
{
    Prim p;
    p.kind = Prim::Kind::ellipse;
    p.c = {cx, cy};
    p.rx = rx;
    p.ry = ry;
    p.angle = angle;
    return p;
}

Prim disk(double cx, double cy, double r) { return ellipse(cx, cy, r, r); }

Prim ring(double cx, double cy, double outer, double inner)
{
    Prim p;
    p.kind = Prim::Kind::ring;
    p.c = {cx, cy};
    p.rx = outer;
    p.ry = inner;
    return p;
}

Prim polygon(std::vector<Point> pts)
{
    Prim p;
    p.kind = Prim::Kind::polygon;
    p.pts = std::move(pts);
    return p;
}

Prim rect(double cx, double cy, double hw, double hh)
{
    return polygon({{cx - hw, cy - hh}, {cx + hw, cy - hh}, {cx + hw, cy + hh}, {cx - hw, cy + hh}});
}

Prim regular(std::size_t n, double r, double phase = -kPi / 2)
{
    std::vector<Point> pts;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = phase + 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
        pts.push_back({r * std::cos(t), r * std::sin(t)});
    }
    return polygon(std::move(pts));
}

Prim star(std::size_t points, double outer, double inner)
{
    std::vector<Point> pts;
    for (std::size_t i = 0; i < 2 * points; ++i) {
        const double r = i % 2 == 0 ? outer : inner;
        const double t = -kPi / 2 + kPi * static_cast<double>(i) / static_cast<double>(points);
        pts.push_back({r * std::cos(t), r * std::sin(t)});
    }
    return polygon(std::move(pts));
}

Prim segment(double x0, double y0, double x1, double y1, double w)
{
    Prim p;
    p.kind = Prim::Kind::segment;
    p.a = {x0, y0};
    p.b = {x1, y1};
    p.w = w;
    return p;
}

enum class Slot
{
    primary,
    secondary,
    hole,
};

struct Part
{
    Prim prim;
    Slot slot;
};

// Object geometry in a [-1,1] frame, y pointing down. `j` jitters proportions
// so instances of a class are not congruent.
std::vector<Part> shape_parts(std::size_t label, Rng& rng)
{
    auto j = [&](double v) { return v * rng.uniform(0.9, 1.1); };
    switch (label) {
    case 0: return {{disk(0, 0, j(0.8)), Slot::primary}};
    case 1: return {{rect(0, 0, j(0.7), j(0.7)), Slot::primary}};
    case 2: return {{regular(3, j(0.95)), Slot::primary}};
    case 3: return {{regular(5, j(0.85)), Slot::primary}};
    case 4: return {{regular(6, j(0.85)), Slot::primary}};
    case 5: return {{star(5, j(0.95), j(0.42)), Slot::primary}};
    case 6: {
        const double arm = j(0.85);
        const double t = j(0.25);
        return {{rect(0, 0, arm, t), Slot::primary}, {rect(0, 0, t, arm), Slot::primary}};
    }
    case 7: return {{ring(0, 0, j(0.85), j(0.5)), Slot::primary}};
    case 8: return {{disk(0, 0, j(0.8)), Slot::primary}, {disk(j(0.38), -0.1, j(0.68)), Slot::hole}};
    default: break;
    }
    throw std::out_of_range("shape label out of range");
}

std::vector<Part> waste_parts(std::size_t label, Rng& rng)
{
    auto j = [&](double v) { return v * rng.uniform(0.9, 1.1); };
    std::vector<Part> out;
    auto add = [&](Prim p, Slot s) { out.push_back({std::move(p), s}); };
    switch (label) {
    case 0: {  // syringe
        const double hh = j(0.14);
        add(rect(0.0, 0, j(0.5), hh), Slot::primary);
        add(rect(-0.68, 0, 0.18, hh * 0.35), Slot::secondary);
        add(rect(-0.88, 0, 0.04, hh * 1.6), Slot::secondary);
        add(segment(0.5, 0, j(0.95), 0, 0.025), Slot::secondary);
        for (int k = 0; k < 4; ++k) {
            const double x = -0.3 + 0.2 * k;
            add(segment(x, -hh, x, -hh * 0.3, 0.02), Slot::secondary);
        }
        break;
    }
    case 1: {  // glove
        add(ellipse(0, 0.3, j(0.42), j(0.45)), Slot::primary);
        const double fw = j(0.085);
        const double xs[] = {-0.3, -0.1, 0.1, 0.3};
        const double tips[] = {-0.7, -0.85, -0.82, -0.62};
        for (int k = 0; k < 4; ++k) {
            add(segment(xs[k], 0.1, xs[k] * 1.1, j(tips[k]), fw), Slot::primary);
        }
        add(segment(-0.35, 0.35, j(-0.78), j(-0.05), fw * 1.1), Slot::primary);
        add(rect(0, 0.8, 0.36, 0.08), Slot::secondary);
        break;
    }
    case 2: {  // mask
        const double hw = j(0.55);
        const double hh = j(0.35);
        add(ring(-hw - 0.12, 0, 0.24, 0.18), Slot::secondary);
        add(ring(hw + 0.12, 0, 0.24, 0.18), Slot::secondary);
        add(rect(0, 0, hw, hh), Slot::primary);
        add(ellipse(0, -hh, hw, 0.1), Slot::primary);
        add(ellipse(0, hh, hw, 0.1), Slot::primary);
        for (int k = -1; k <= 1; ++k) {
            add(segment(-hw * 0.9, k * hh * 0.45, hw * 0.9, k * hh * 0.45, 0.03), Slot::secondary);
        }
        break;
    }
    case 3: {  // medicines blister
        const double hw = j(0.72);
        const double hh = j(0.5);
        add(rect(0, 0, hw, hh), Slot::primary);
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 4; ++c) {
                add(disk(-hw * 0.72 + c * hw * 0.48, -hh * 0.45 + r * hh * 0.9, 0.13), Slot::secondary);
            }
        }
        break;
    }
    case 4: {  // plastic bottle
        const double hw = j(0.3);
        add(rect(0, 0.2, hw, j(0.62)), Slot::primary);
        add(polygon({{-hw, -0.38}, {hw, -0.38}, {0.12, -0.62}, {-0.12, -0.62}}), Slot::primary);
        add(rect(0, -0.7, 0.12, 0.1), Slot::primary);
        add(rect(0, -0.84, 0.15, 0.07), Slot::secondary);
        add(rect(0, 0.25, hw, j(0.16)), Slot::secondary);
        break;
    }
    case 5: {  // paper sheet
        const double hw = j(0.55);
        const double hh = j(0.75);
        add(polygon({{-hw, -hh}, {hw - 0.25, -hh}, {hw, -hh + 0.25}, {hw, hh}, {-hw, hh}}), Slot::primary);
        add(polygon({{hw - 0.25, -hh}, {hw - 0.25, -hh + 0.25}, {hw, -hh + 0.25}}), Slot::secondary);
        for (int k = 0; k < 6; ++k) {
            const double y = -hh + 0.4 + k * (2 * hh - 0.6) / 5.0;
            add(segment(-hw + 0.12, y, hw - 0.12 - (k == 5 ? 0.3 : 0.0), y, 0.025), Slot::secondary);
        }
        break;
    }
    case 6: {  // metal can
        const double hw = j(0.4);
        const double hh = j(0.6);
        add(rect(0, 0, hw, hh), Slot::primary);
        add(ellipse(0, hh, hw, 0.12), Slot::primary);
        add(ellipse(0, -hh, hw, 0.12), Slot::secondary);
        add(ring(0.1, -hh, 0.08, 0.04), Slot::primary);
        add(segment(-hw, -hh * 0.55, hw, -hh * 0.55, 0.03), Slot::secondary);
        add(segment(-hw, hh * 0.55, hw, hh * 0.55, 0.03), Slot::secondary);
        break;
    }
    case 7: {  // wine glass
        const double r = j(0.45);
        add(ellipse(0, -0.35, r, j(0.42)), Slot::primary);
        add(rect(0, -0.62, r + 0.02, 0.27), Slot::hole);
        add(segment(-r, -0.35, r, -0.35, 0.03), Slot::secondary);
        add(segment(0, 0.0, 0, 0.68, 0.05), Slot::primary);
        add(ellipse(0, 0.72, j(0.35), 0.08), Slot::primary);
        break;
    }
    case 8: {  // organic: banana with a leaf
        add(disk(-0.1, 0, j(0.7)), Slot::primary);
        add(disk(0.18, -0.2, j(0.66)), Slot::hole);
        add(ellipse(0.45, 0.4, j(0.32), j(0.14), 0.7), Slot::secondary);
        add(segment(0.28, 0.22, 0.62, 0.58, 0.02), Slot::primary);
        break;
    }
    default: throw std::out_of_range("waste label out of range");
    }
    return out;
}

double colour_distance(const Colour& a, const Colour& b)
{
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Colour random_colour(Rng& rng, double lo, double hi)
{
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Backgrounds are dark and objects bright, so edge polarity is fixed while hue varies freely.
Colour background_colour(Rng& rng) { return random_colour(rng, 0, 90); }

Colour object_colour(Rng& rng, const Colour& against, double min_distance)
{
    Colour c = random_colour(rng, 150, 255);
    for (int tries = 0; tries < 32 && colour_distance(c, against) < min_distance; ++tries) {
        c = random_colour(rng, 150, 255);
    }
    return c;
}

// Canvas-to-local similarity transform.
struct Pose
{
    double cs = 1, sn = 0, inv_scale = 1, tx = 0, ty = 0;

    Point local(double u, double v) const
    {
        const double dx = u - tx;
        const double dy = v - ty;
        return {(cs * dx + sn * dy) * inv_scale, (-sn * dx + cs * dy) * inv_scale};
    }
};

struct Layer
{
    Pose pose;
    std::vector<Part> parts;
    Colour primary, secondary;
};

}  // namespace

std::string to_string(SyntheticTask task) { return task == SyntheticTask::shapes ? "shapes" : "waste"; }

SyntheticTask parse_synthetic_task(const std::string& text)
{
    if (text == "shapes") {
        return SyntheticTask::shapes;
    }
    if (text == "waste") {
        return SyntheticTask::waste;
    }
    throw std::invalid_argument("unknown synthetic task '" + text + "' (expected shapes or waste)");
}

const std::vector<std::string>& synthetic_class_names(SyntheticTask task)
{
    static const std::vector<std::string> shapes = {"disk",  "square", "triangle", "pentagon", "hexagon",
                                                    "star",  "cross",  "ring",     "crescent"};
    return task == SyntheticTask::shapes ? shapes : waste_class_names();
}

Image render_synthetic(const SyntheticSpec& spec, std::size_t label, std::uint64_t seed)
{
    if (spec.image_size == 0) {
        throw std::invalid_argument("synthetic image size must be positive");
    }
    Rng rng(seed);
    const Colour background = background_colour(rng);

    std::vector<Layer> layers;
    const auto distractors = spec.max_distractors ? rng.below(spec.max_distractors + 1) : 0;
    for (std::uint64_t d = 0; d < distractors; ++d) {
        Layer l;
        l.pose.tx = rng.uniform(-0.9, 0.9);
        l.pose.ty = rng.uniform(-0.9, 0.9);
        const double th = rng.uniform(0, 2 * kPi);
        l.pose.cs = std::cos(th);
        l.pose.sn = std::sin(th);
        l.pose.inv_scale = 1.0 / rng.uniform(0.08, 0.22);
        l.parts = {{rng.bernoulli(0.5) ? disk(0, 0, 1.0) : segment(-1.0, 0, 1.0, 0, 0.25), Slot::primary}};
        l.primary = object_colour(rng, background, 0.0);
        layers.push_back(std::move(l));
    }

    Layer obj;
    const double th = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * kPi / 180.0;
    obj.pose.cs = std::cos(th);
    obj.pose.sn = std::sin(th);
    obj.pose.inv_scale = 1.0 / rng.uniform(spec.min_scale, spec.max_scale);
    obj.pose.tx = rng.uniform(-spec.max_shift, spec.max_shift);
    obj.pose.ty = rng.uniform(-spec.max_shift, spec.max_shift);
    obj.primary = object_colour(rng, background, 0.0);
    obj.secondary = object_colour(rng, obj.primary, 70.0);
    obj.parts = spec.task == SyntheticTask::shapes ? shape_parts(label, rng) : waste_parts(label, rng);
    layers.push_back(std::move(obj));

    const auto n = spec.image_size;
    const double half = static_cast<double>(n) / 2.0;
    Image img(n, n);
    constexpr double offsets[2] = {0.25, 0.75};
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            Colour acc{0, 0, 0};
            for (double oy : offsets) {
                for (double ox : offsets) {
                    const double u = (static_cast<double>(x) + ox - half) / half;
                    const double v = (static_cast<double>(y) + oy - half) / half;
                    Colour c = background;
                    for (const auto& layer : layers) {
                        const auto p = layer.pose.local(u, v);
                        for (const auto& part : layer.parts) {
                            if (part.prim.contains(p.x, p.y)) {
                                c = part.slot == Slot::primary     ? layer.primary
                                    : part.slot == Slot::secondary ? layer.secondary
                                                                   : background;
                            }
                        }
                    }
                    for (std::size_t k = 0; k < 3; ++k) {
                        acc[k] += 0.25 * c[k];
                    }
                }
            }
            for (std::size_t k = 0; k < 3; ++k) {
                const double noisy = acc[k] + spec.noise_std * rng.normal();
                img.at(y, x, k) = static_cast<std::uint8_t>(std::clamp(std::lround(noisy), 0L, 255L));
            }
        }
    }
    return img;
}

std::vector<Sample> generate_samples(const SyntheticSpec& spec, std::size_t per_class, std::uint64_t seed)
{
    const auto& names = synthetic_class_names(spec.task);
    std::vector<Sample> out;
    out.reserve(names.size() * per_class);
    for (std::size_t c = 0; c < names.size(); ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            Sample s;
            s.label = c;
            s.source_id = fmt::format("{}/{}_{:04d}", names[c], names[c], i);
            s.image = render_synthetic(spec, c, Rng::derive(seed, c * 1'000'003 + i).next_u64());
            out.push_back(std::move(s));
        }
    }
    return out;
}

void write_synthetic_tree(const std::filesystem::path& root, const SyntheticSpec& spec, std::size_t per_class,
                          std::uint64_t seed)
{
    const auto& names = synthetic_class_names(spec.task);
    for (const auto& name : names) {
        std::filesystem::create_directories(root / name);
    }
    for (const auto& s : generate_samples(spec, per_class, seed)) {
        save_image(root / (s.source_id + ".png"), s.image);
    }
}

}  // namespace hycaps
