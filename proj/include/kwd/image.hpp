#pragma once

#include <cstddef>
#include <vector>

namespace kwd {

// RGB image, row-major, channels interleaved, values in [0,1].
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> px;  // h*w*3

  Image() = default;
  Image(int height, int width) : h(height), w(width), px(static_cast<std::size_t>(height) * width * 3, 0.0) {}

  double& at(int r, int c, int ch) { return px[(static_cast<std::size_t>(r) * w + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return px[(static_cast<std::size_t>(r) * w + c) * 3 + ch]; }

  static Image filled(int h, int w, double r, double g, double b) {
    Image im(h, w);
    for (std::size_t i = 0; i < im.px.size(); i += 3) {
      im.px[i] = r;
      im.px[i + 1] = g;
      im.px[i + 2] = b;
    }
    return im;
  }
};

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace kwd
