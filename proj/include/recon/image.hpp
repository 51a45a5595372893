#pragma once

#include <cstddef>
#include <vector>

namespace recon {

// Row-major interleaved float image, values nominally in [0,1].
struct Image {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

}  // namespace recon
