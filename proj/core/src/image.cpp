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

#include "hycaps/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace hycaps {

namespace {

std::uint8_t clamp_u8(double v)
{
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Bilinear sample at continuous source coordinates; outside the image the
// sample is black (used by the affine warps).
void sample_black(const Image& img, double y, double x, std::uint8_t out[3])
{
    const double fy = std::floor(y);
    const double fx = std::floor(x);
    const auto y0 = static_cast<long>(fy);
    const auto x0 = static_cast<long>(fx);
    const double wy = y - fy;
    const double wx = x - fx;
    const long h = static_cast<long>(img.height);
    const long w = static_cast<long>(img.width);
    for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
                const long yy = y0 + dy;
                const long xx = x0 + dx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
                    continue;
                }
                const double weight = (dy ? wy : 1.0 - wy) * (dx ? wx : 1.0 - wx);
                acc += weight * img.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
            }
        }
        out[c] = clamp_u8(acc);
    }
}

}  // namespace

Image load_image(const std::filesystem::path& path)
{
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw ImageError("cannot decode image " + path.string());
    }
    Image img(static_cast<std::size_t>(bgr.rows), static_cast<std::size_t>(bgr.cols));
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), static_cast<std::size_t>(c)) =
                    row[x][2 - c];
            }
        }
    }
    return img;
}

void save_image(const std::filesystem::path& path, const Image& image)
{
    if (image.empty()) {
        throw ImageError("cannot save an empty image to " + path.string());
    }
    cv::Mat bgr(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
    for (int y = 0; y < bgr.rows; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            for (int c = 0; c < 3; ++c) {
                row[x][2 - c] =
                    image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), static_cast<std::size_t>(c));
            }
        }
    }
    if (!cv::imwrite(path.string(), bgr)) {
        throw ImageError("cannot write image " + path.string());
    }
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width)
{
    if (image.empty() || height == 0 || width == 0) {
        throw ImageError("resize of an empty image");
    }
    if (height == image.height && width == image.width) {
        return image;
    }
    Image out(height, width);
    const double sy = static_cast<double>(image.height) / static_cast<double>(height);
    const double sx = static_cast<double>(image.width) / static_cast<double>(width);
    const double max_y = static_cast<double>(image.height - 1);
    const double max_x = static_cast<double>(image.width - 1);
    for (std::size_t y = 0; y < height; ++y) {
        const double src_y = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
        const auto y0 = static_cast<std::size_t>(src_y);
        const auto y1 = std::min(y0 + 1, image.height - 1);
        const double wy = src_y - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double src_x = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
            const auto x0 = static_cast<std::size_t>(src_x);
            const auto x1 = std::min(x0 + 1, image.width - 1);
            const double wx = src_x - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1.0 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
                const double bottom = (1.0 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
                out.at(y, x, c) = clamp_u8((1.0 - wy) * top + wy * bottom);
            }
        }
    }
    return out;
}

PadResizeGeometry pad_resize_geometry(std::size_t height, std::size_t width, std::size_t target)
{
    if (height == 0 || width == 0) {
        throw ImageError("pad_resize of an empty image");
    }
    if (target == 0) {
        throw ImageError("pad_resize target must be positive");
    }
    const double scale = static_cast<double>(target) / static_cast<double>(std::max(height, width));
    auto fit = [&](std::size_t extent) {
        auto v = static_cast<std::size_t>(std::lround(static_cast<double>(extent) * scale));
        return std::clamp<std::size_t>(v, 1, target);
    };
    PadResizeGeometry g{fit(height), fit(width), 0, 0};
    g.top = (target - g.scaled_height) / 2;
    g.left = (target - g.scaled_width) / 2;
    return g;
}

Image pad_resize(const Image& image, std::size_t target)
{
    const auto g = pad_resize_geometry(image.height, image.width, target);
    const Image scaled = resize_bilinear(image, g.scaled_height, g.scaled_width);
    Image out(target, target);
    for (std::size_t y = 0; y < g.scaled_height; ++y) {
        std::copy_n(scaled.pixels.begin() + static_cast<std::ptrdiff_t>(y * g.scaled_width * 3),
                    g.scaled_width * 3,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(((y + g.top) * target + g.left) * 3));
    }
    return out;
}

Image rotate(const Image& image, double degrees)
{
    if (image.empty()) {
        throw ImageError("rotate of an empty image");
    }
    Image out(image.height, image.width);
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad);
    const double sn = std::sin(rad);
    const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
    std::uint8_t px[3];
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            // inverse map output -> source
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double sx = cs * dx + sn * dy + cx;
            const double sy = -sn * dx + cs * dy + cy;
            sample_black(image, sy, sx, px);
            for (std::size_t c = 0; c < 3; ++c) {
                out.at(y, x, c) = px[c];
            }
        }
    }
    return out;
}

Image rescale(const Image& image, double factor)
{
    if (image.empty()) {
        throw ImageError("rescale of an empty image");
    }
    if (!(factor > 0.0)) {
        throw ImageError("rescale factor must be positive");
    }
    Image out(image.height, image.width);
    const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
    std::uint8_t px[3];
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            const double sy = (static_cast<double>(y) - cy) / factor + cy;
            const double sx = (static_cast<double>(x) - cx) / factor + cx;
            sample_black(image, sy, sx, px);
            for (std::size_t c = 0; c < 3; ++c) {
                out.at(y, x, c) = px[c];
            }
        }
    }
    return out;
}

}  // namespace hycaps
