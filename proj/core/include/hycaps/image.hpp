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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace hycaps {

class ImageError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// 8-bit RGB image, row-major HWC.
struct Image
{
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}

    bool empty() const { return height == 0 || width == 0; }
    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const
    {
        return pixels[(y * width + x) * 3 + c];
    }
    bool operator==(const Image&) const = default;
};

// Decodes PNG/JPEG (anything OpenCV reads) into RGB.
Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& image);

// Bilinear resampling with half-pixel centres.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

/**
 * Aspect-preserving letterbox to target x target: scale = target / max(H, W),
 * the scaled image is centred and every other pixel is exactly black.
 */
Image pad_resize(const Image& image, std::size_t target = 224);

struct PadResizeGeometry
{
    std::size_t scaled_height;
    std::size_t scaled_width;
    std::size_t top;
    std::size_t left;
};
PadResizeGeometry pad_resize_geometry(std::size_t height, std::size_t width, std::size_t target);

// Rotation about the centre on the same canvas; uncovered pixels are black.
Image rotate(const Image& image, double degrees);
// Zoom about the centre on the same canvas (crops when factor > 1).
Image rescale(const Image& image, double factor);

}  // namespace hycaps
