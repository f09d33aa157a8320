#include "kwd/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kwd {

static double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

Image crop(const Image& im, int top, int left, int size) {
  if (size <= 0) throw std::invalid_argument("crop: size must be positive");
  if (top < 0 || left < 0 || top + size > im.h || left + size > im.w)
    throw std::invalid_argument("crop: window " + std::to_string(size) + "x" + std::to_string(size) + " at (" +
                                std::to_string(top) + "," + std::to_string(left) + ") outside " +
                                std::to_string(im.h) + "x" + std::to_string(im.w) + " image");
  Image out(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = im.at(top + r, left + c, ch);
  return out;
}

Image center_crop(const Image& im, int size) {
  if (im.h < size || im.w < size)
    throw std::invalid_argument("center_crop: image " + std::to_string(im.h) + "x" + std::to_string(im.w) +
                                " smaller than crop " + std::to_string(size));
  return crop(im, (im.h - size) / 2, (im.w - size) / 2, size);
}

Image hflip(const Image& im) {
  Image out(im.h, im.w);
  for (int r = 0; r < im.h; ++r)
    for (int c = 0; c < im.w; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = im.at(r, im.w - 1 - c, ch);
  return out;
}

Image to_grayscale(const Image& im) {
  Image out(im.h, im.w);
  for (std::size_t i = 0; i < im.px.size(); i += 3) {
    const double g = luminance(im.px[i], im.px[i + 1], im.px[i + 2]);
    out.px[i] = out.px[i + 1] = out.px[i + 2] = g;
  }
  return out;
}

static void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double maxc = std::max({r, g, b});
  const double minc = std::min({r, g, b});
  v = maxc;
  const double d = maxc - minc;
  s = maxc == 0.0 ? 0.0 : d / maxc;
  if (d == 0.0) {
    h = 0.0;
  } else if (maxc == r) {
    h = ((g - b) / d) / 6.0;
  } else if (maxc == g) {
    h = (2.0 + (b - r) / d) / 6.0;
  } else {
    h = (4.0 + (r - g) / d) / 6.0;
  }
  if (h < 0.0) h += 1.0;
}

static void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = h * 6.0;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

Image color_jitter(const Image& im, const JitterParams& jp) {
  {
    std::array<bool, 4> seen{false, false, false, false};
    for (int o : jp.order) {
      if (o < 0 || o > 3 || seen[o]) throw std::invalid_argument("color_jitter: order must permute {0,1,2,3}");
      seen[o] = true;
    }
  }
  Image out = im;
  for (int op : jp.order) {
    switch (op) {
      case 0:  // brightness: scale
        if (jp.brightness == 1.0) break;
        for (double& v : out.px) v = clamp01(v * jp.brightness);
        break;
      case 1: {  // contrast: blend toward the mean luminance of the current image
        if (jp.contrast == 1.0) break;
        double m = 0.0;
        for (std::size_t i = 0; i < out.px.size(); i += 3) m += luminance(out.px[i], out.px[i + 1], out.px[i + 2]);
        m /= static_cast<double>(out.px.size() / 3);
        for (double& v : out.px) v = clamp01(m + jp.contrast * (v - m));
        break;
      }
      case 2:  // saturation: blend toward the per-pixel gray value
        if (jp.saturation == 1.0) break;
        for (std::size_t i = 0; i < out.px.size(); i += 3) {
          const double g = luminance(out.px[i], out.px[i + 1], out.px[i + 2]);
          for (int ch = 0; ch < 3; ++ch) out.px[i + ch] = clamp01(g + jp.saturation * (out.px[i + ch] - g));
        }
        break;
      default:  // hue: rotate in HSV space, wrap around
        if (jp.hue == 0.0) break;
        for (std::size_t i = 0; i < out.px.size(); i += 3) {
          double h, s, v;
          rgb_to_hsv(out.px[i], out.px[i + 1], out.px[i + 2], h, s, v);
          h += jp.hue;
          h -= std::floor(h);
          double r, g, b;
          hsv_to_rgb(h, s, v, r, g, b);
          out.px[i] = clamp01(r);
          out.px[i + 1] = clamp01(g);
          out.px[i + 2] = clamp01(b);
        }
        break;
    }
  }
  return out;
}

Image gaussian_blur(const Image& im, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-static_cast<double>(i) * i / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  // Horizontal pass, then vertical; out-of-range taps clamp to the edge pixel.
  Image tmp(im.h, im.w);
  for (int r = 0; r < im.h; ++r)
    for (int c = 0; c < im.w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int cc = std::clamp(c + i, 0, im.w - 1);
          acc += kernel[i + radius] * im.at(r, cc, ch);
        }
        tmp.at(r, c, ch) = acc;
      }
  Image out(im.h, im.w);
  for (int r = 0; r < im.h; ++r)
    for (int c = 0; c < im.w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int rr = std::clamp(r + i, 0, im.h - 1);
          acc += kernel[i + radius] * tmp.at(rr, c, ch);
        }
        out.at(r, c, ch) = clamp01(acc);
      }
  return out;
}

Image rotate90(const Image& im) {
  // Quarter turn counter-clockwise: source (r,c) lands at (w-1-c, r).
  Image out(im.w, im.h);
  for (int r = 0; r < im.h; ++r)
    for (int c = 0; c < im.w; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(im.w - 1 - c, r, ch) = im.at(r, c, ch);
  return out;
}

Image rotate(const Image& im, int k) {
  if (k < 0 || k > 3) throw std::invalid_argument("rotate: k must be in {0,1,2,3}");
  Image out = im;
  for (int i = 0; i < k; ++i) out = rotate90(out);
  return out;
}

static int draw_rotation(Rng& rng, const AugPolicy& policy) {
  return policy.rotation_includes_identity ? rng.uniform_int(0, 3) : rng.uniform_int(1, 3);
}

// Draw order is fixed: crop offsets, base (flip, blur gate, sigma), color
// (jitter gate, factors, sub-op order, grayscale), rotation. Changing this
// order changes every downstream stream, so treat it as part of the format.
AugParams sample_params(Rng& rng, const AugPolicy& policy, int src_h, int src_w) {
  if (policy.crop <= 0) throw std::invalid_argument("sample_params: crop size must be positive");
  if (src_h < policy.crop || src_w < policy.crop)
    throw std::invalid_argument("sample_params: source " + std::to_string(src_h) + "x" + std::to_string(src_w) +
                                " smaller than crop " + std::to_string(policy.crop));
  AugParams p;
  p.crop_size = policy.crop;
  p.crop_top = rng.uniform_int(0, src_h - policy.crop);
  p.crop_left = rng.uniform_int(0, src_w - policy.crop);
  if (policy.base) {
    p.hflip = rng.bernoulli(policy.hflip_p);
    if (rng.bernoulli(policy.blur_p)) p.blur_sigma = rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max);
  }
  if (policy.color) {
    if (rng.bernoulli(policy.jitter_p)) {
      JitterParams jp;
      jp.brightness = rng.uniform(1.0 - policy.jitter_strength, 1.0 + policy.jitter_strength);
      jp.contrast = rng.uniform(1.0 - policy.jitter_strength, 1.0 + policy.jitter_strength);
      jp.saturation = rng.uniform(1.0 - policy.jitter_strength, 1.0 + policy.jitter_strength);
      jp.hue = rng.uniform(-policy.hue_max, policy.hue_max);
      for (int i = 3; i > 0; --i) std::swap(jp.order[i], jp.order[rng.uniform_int(0, i)]);
      p.jitter = jp;
    }
    p.grayscale = rng.bernoulli(policy.grayscale_p);
  }
  if (policy.rotation) p.rotation_k = draw_rotation(rng, policy);
  return p;
}

Image apply(const Image& im, const AugParams& p) {
  Image out = crop(im, p.crop_top, p.crop_left, p.crop_size);
  if (p.hflip) out = hflip(out);
  if (p.jitter) out = color_jitter(out, *p.jitter);
  if (p.grayscale) out = to_grayscale(out);
  if (p.blur_sigma) out = gaussian_blur(out, *p.blur_sigma);
  if (p.rotation_k) out = rotate(out, p.rotation_k);
  return out;
}

ViewTriplet make_controlled_views(const Image& im, const AugPolicy& policy, Rng& rng) {
  if (!policy.rotation)
    throw std::invalid_argument("make_controlled_views: rotation group must be enabled");
  ViewTriplet t;
  t.pplus = sample_params(rng, policy, im.h, im.w);

  // View 1: own geometry/base draws, color copied from the positive, rotation
  // re-drawn until it differs.
  AugPolicy no_color = policy;
  no_color.color = false;
  t.p1 = sample_params(rng, no_color, im.h, im.w);
  t.p1.jitter = t.pplus.jitter;
  t.p1.grayscale = t.pplus.grayscale;
  while (t.p1.rotation_k == t.pplus.rotation_k) t.p1.rotation_k = draw_rotation(rng, policy);

  // View 2: independent color and base, rotation copied from the positive.
  AugPolicy no_rotation = policy;
  no_rotation.rotation = false;
  t.p2 = sample_params(rng, no_rotation, im.h, im.w);
  t.p2.rotation_k = t.pplus.rotation_k;

  t.v1 = apply(im, t.p1);
  t.v2 = apply(im, t.p2);
  t.vplus = apply(im, t.pplus);
  return t;
}

ViewTriplet make_independent_views(const Image& im, const AugPolicy& policy, Rng& rng) {
  ViewTriplet t;
  t.pplus = sample_params(rng, policy, im.h, im.w);
  t.p1 = sample_params(rng, policy, im.h, im.w);
  t.p2 = sample_params(rng, policy, im.h, im.w);
  t.v1 = apply(im, t.p1);
  t.v2 = apply(im, t.p2);
  t.vplus = apply(im, t.pplus);
  return t;
}

}  // namespace kwd
