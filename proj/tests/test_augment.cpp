#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "kwd/augment.hpp"
#include "kwd/config.hpp"
#include "kwd/rng.hpp"

using namespace kwd;

namespace {

Image noisy(Rng& rng, int h, int w) {
  Image im(h, w);
  for (double& v : im.px) v = rng.uniform();
  return im;
}

bool same_pixels(const Image& a, const Image& b) {
  return a.h == b.h && a.w == b.w &&
         std::memcmp(a.px.data(), b.px.data(), a.px.size() * sizeof(double)) == 0;
}

// Direct separable blur with edge clamp, the oracle for gaussian_blur.
Image blur_naive(const Image& im, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  Image mid(im.h, im.w), out(im.h, im.w);
  for (int r = 0; r < im.h; ++r)
    for (int c = 0; c < im.w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * im.at(r, std::clamp(c + i, 0, im.w - 1), ch);
        mid.at(r, c, ch) = acc;
      }
  for (int r = 0; r < im.h; ++r)
    for (int c = 0; c < im.w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * mid.at(std::clamp(r + i, 0, im.h - 1), c, ch);
        out.at(r, c, ch) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("rotation quarter turn and group law") {
  Image im(2, 2);
  const double vals[4] = {1, 2, 3, 4};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) = vals[r * 2 + c];

  const Image t = rotate(im, 1);
  CHECK(t.at(0, 0, 0) == 2.0);
  CHECK(t.at(0, 1, 0) == 4.0);
  CHECK(t.at(1, 0, 0) == 1.0);
  CHECK(t.at(1, 1, 0) == 3.0);

  Rng rng(1);
  const Image nm = noisy(rng, 5, 7);
  CHECK(same_pixels(rotate(nm, 0), nm));
  CHECK(same_pixels(rotate90(nm), rotate(nm, 1)));
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) CHECK(same_pixels(rotate(rotate(nm, a), b), rotate(nm, (a + b) % 4)));
  CHECK(rotate(nm, 1).h == 7);
  CHECK(rotate(nm, 1).w == 5);
  CHECK_THROWS_AS(rotate(nm, 4), std::invalid_argument);
  CHECK_THROWS_AS(rotate(nm, -1), std::invalid_argument);
}

TEST_CASE("crops take the exact window") {
  Image im(5, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) im.at(r, c, 0) = r * 5 + c;
  const Image w = crop(im, 1, 2, 3);
  CHECK(w.h == 3);
  CHECK(w.w == 3);
  CHECK(w.at(0, 0, 0) == 7.0);
  CHECK(w.at(2, 2, 0) == 19.0);
  CHECK_THROWS_AS(crop(im, 3, 3, 3), std::invalid_argument);
  CHECK_THROWS_AS(crop(im, 0, 0, 0), std::invalid_argument);

  const Image cc = center_crop(im, 3);
  CHECK(same_pixels(cc, crop(im, 1, 1, 3)));
  CHECK_THROWS_AS(center_crop(im, 6), std::invalid_argument);
}

TEST_CASE("hflip is an involution") {
  Rng rng(2);
  const Image im = noisy(rng, 4, 6);
  const Image f = hflip(im);
  CHECK(f.at(0, 0, 0) == im.at(0, 5, 0));
  CHECK(same_pixels(hflip(f), im));
}

TEST_CASE("gaussian blur matches the direct separable filter") {
  Rng rng(3);
  const Image im = noisy(rng, 7, 6);
  for (double sigma : {0.4, 1.0, 2.0}) {
    const Image got = gaussian_blur(im, sigma);
    const Image want = blur_naive(im, sigma);
    REQUIRE(got.h == want.h);
    for (std::size_t i = 0; i < got.px.size(); ++i) CHECK(std::fabs(got.px[i] - want.px[i]) <= 1e-12);
  }
  const Image flat = Image::filled(5, 5, 0.3, 0.7, 0.1);
  const Image b = gaussian_blur(flat, 1.3);
  for (std::size_t i = 0; i < b.px.size(); ++i) CHECK(std::fabs(b.px[i] - flat.px[i]) <= 1e-12);
  CHECK_THROWS_AS(gaussian_blur(flat, 0.0), std::invalid_argument);
}

TEST_CASE("color jitter sub-operations") {
  Rng rng(4);
  const Image im = noisy(rng, 4, 4);

  JitterParams id;
  CHECK(same_pixels(color_jitter(im, id), im));

  JitterParams bright;
  bright.brightness = 2.0;
  const Image gray = Image::filled(2, 2, 0.25, 0.25, 0.25);
  CHECK(color_jitter(gray, bright).at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  // Contrast blends toward mean luminance, so a flat image is unchanged.
  JitterParams con;
  con.contrast = 0.5;
  const Image flat = Image::filled(3, 3, 0.6, 0.6, 0.6);
  CHECK(same_pixels(color_jitter(flat, con), flat));

  // Saturation blends toward per-pixel luminance, so already-gray pixels
  // move only by the rounding of the luminance weights.
  JitterParams sat;
  sat.saturation = 1.4;
  const Image gray_in = to_grayscale(im);
  const Image gray_out = color_jitter(gray_in, sat);
  for (std::size_t i = 0; i < gray_in.px.size(); ++i)
    CHECK(std::abs(gray_out.px[i] - gray_in.px[i]) <= 1e-12);

  JitterParams bad;
  bad.order = {0, 0, 1, 2};
  CHECK_THROWS_AS(color_jitter(im, bad), std::invalid_argument);
}

TEST_CASE("grayscale uses the luminance weights") {
  Image im(1, 1);
  im.at(0, 0, 0) = 0.8;
  im.at(0, 0, 1) = 0.2;
  im.at(0, 0, 2) = 0.4;
  const Image g = to_grayscale(im);
  const double want = 0.299 * 0.8 + 0.587 * 0.2 + 0.114 * 0.4;
  for (int ch = 0; ch < 3; ++ch) CHECK(g.at(0, 0, ch) == doctest::Approx(want).epsilon(1e-15));
  CHECK(same_pixels(to_grayscale(g), g));
}

TEST_CASE("sampled parameters respect the policy") {
  const AugPolicy policy = aug_policy(Config::defaults());
  Rng rng(6);
  for (int it = 0; it < 1000; ++it) {
    const AugParams p = sample_params(rng, policy, 40, 36);
    CHECK(p.crop_size == policy.crop);
    CHECK(p.crop_top >= 0);
    CHECK(p.crop_top + policy.crop <= 40);
    CHECK(p.crop_left >= 0);
    CHECK(p.crop_left + policy.crop <= 36);
    CHECK(p.rotation_k >= 0);
    CHECK(p.rotation_k <= 3);
    if (p.blur_sigma) {
      CHECK(*p.blur_sigma >= policy.blur_sigma_min);
      CHECK(*p.blur_sigma <= policy.blur_sigma_max);
    }
    if (p.jitter) {
      CHECK(p.jitter->brightness >= 1.0 - policy.jitter_strength);
      CHECK(p.jitter->brightness <= 1.0 + policy.jitter_strength);
      CHECK(std::fabs(p.jitter->hue) <= policy.hue_max);
    }
  }

  AugPolicy no_id = policy;
  no_id.rotation_includes_identity = false;
  for (int it = 0; it < 200; ++it) {
    const AugParams p = sample_params(rng, no_id, 40, 40);
    CHECK(p.rotation_k >= 1);
    CHECK(p.rotation_k <= 3);
  }
  CHECK_THROWS_AS(sample_params(rng, policy, 10, 40), std::invalid_argument);
}

TEST_CASE("controlled views share color and force distinct rotations") {
  const AugPolicy policy = aug_policy(Config::defaults());
  Rng irng(7);
  for (int it = 0; it < 200; ++it) {
    Rng rng = derive_rng(99, {tag("views"), static_cast<std::uint64_t>(it)});
    const Image im = noisy(irng, 32, 32);
    const ViewTriplet t = make_controlled_views(im, policy, rng);
    CHECK(t.p1.grayscale == t.pplus.grayscale);
    CHECK(t.p1.jitter.has_value() == t.pplus.jitter.has_value());
    if (t.p1.jitter) {
      CHECK(t.p1.jitter->brightness == t.pplus.jitter->brightness);
      CHECK(t.p1.jitter->contrast == t.pplus.jitter->contrast);
      CHECK(t.p1.jitter->saturation == t.pplus.jitter->saturation);
      CHECK(t.p1.jitter->hue == t.pplus.jitter->hue);
      CHECK(t.p1.jitter->order == t.pplus.jitter->order);
    }
    CHECK(t.p1.rotation_k != t.pplus.rotation_k);
    CHECK(t.p2.rotation_k == t.pplus.rotation_k);
    CHECK(t.v1.h == policy.crop);
    CHECK(t.v2.h == policy.crop);
    CHECK(t.vplus.h == policy.crop);
  }

  // The applied pixels follow the recorded parameters.
  Rng rng = derive_rng(99, {tag("views"), 0});
  const Image im = noisy(irng, 32, 32);
  const ViewTriplet t = make_controlled_views(im, policy, rng);
  CHECK(same_pixels(t.v1, apply(im, t.p1)));
  CHECK(same_pixels(t.v2, apply(im, t.p2)));
  CHECK(same_pixels(t.vplus, apply(im, t.pplus)));

  AugPolicy norot = policy;
  norot.rotation = false;
  Rng r2(1);
  CHECK_THROWS_AS(make_controlled_views(im, norot, r2), std::invalid_argument);
}

TEST_CASE("independent views draw every group separately") {
  const AugPolicy policy = aug_policy(Config::defaults());
  Rng irng(8);
  const Image im = noisy(irng, 32, 32);
  bool some_jitter_differs = false, some_rotation_matches = false;
  for (int it = 0; it < 200; ++it) {
    Rng rng = derive_rng(123, {tag("views"), static_cast<std::uint64_t>(it)});
    const ViewTriplet t = make_independent_views(im, policy, rng);
    if (t.p1.jitter && t.pplus.jitter && t.p1.jitter->brightness != t.pplus.jitter->brightness)
      some_jitter_differs = true;
    if (t.p1.rotation_k == t.pplus.rotation_k) some_rotation_matches = true;
  }
  CHECK(some_jitter_differs);
  CHECK(some_rotation_matches);
}
