#pragma once

#include <array>
#include <optional>

#include "kwd/image.hpp"
#include "kwd/rng.hpp"

namespace kwd {

// Color jitter factors plus the order the four sub-operations run in
// (0 brightness, 1 contrast, 2 saturation, 3 hue).
struct JitterParams {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
  std::array<int, 4> order{0, 1, 2, 3};
};

// Fully materialised augmentation: applying the same AugParams to the same
// image always yields the same pixels.
struct AugParams {
  int crop_top = 0;
  int crop_left = 0;
  int crop_size = 0;
  bool hflip = false;
  std::optional<double> blur_sigma;
  std::optional<JitterParams> jitter;
  bool grayscale = false;
  int rotation_k = 0;  // quarter turns counter-clockwise
};

// Which augmentation groups are active and their sampling ranges.
struct AugPolicy {
  int crop = 24;
  bool base = true;   // horizontal flip + Gaussian blur
  bool color = true;  // color jitter + grayscale
  bool rotation = true;
  bool rotation_includes_identity = true;
  double hflip_p = 0.5;
  double blur_p = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double jitter_p = 0.8;
  double jitter_strength = 0.4;  // factors ~ U[1-s, 1+s]
  double hue_max = 0.1;
  double grayscale_p = 0.2;
};

struct ViewTriplet {
  Image v1, v2, vplus;
  AugParams p1, p2, pplus;
};

AugParams sample_params(Rng& rng, const AugPolicy& policy, int src_h, int src_w);
Image apply(const Image& im, const AugParams& p);

// Controlled triplet: p1 shares color with p+ but differs in rotation;
// p2 shares rotation with p+ and has independent color.
ViewTriplet make_controlled_views(const Image& im, const AugPolicy& policy, Rng& rng);
// Three fully independent draws (ablation mode).
ViewTriplet make_independent_views(const Image& im, const AugPolicy& policy, Rng& rng);

// Individual transforms, exposed for tests.
Image crop(const Image& im, int top, int left, int size);
Image center_crop(const Image& im, int size);
Image hflip(const Image& im);
Image color_jitter(const Image& im, const JitterParams& jp);
Image to_grayscale(const Image& im);
Image gaussian_blur(const Image& im, double sigma);
Image rotate90(const Image& im);  // one quarter turn counter-clockwise
Image rotate(const Image& im, int k);

}  // namespace kwd
