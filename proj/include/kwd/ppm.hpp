#pragma once

#include <iosfwd>
#include <string>

#include "kwd/image.hpp"

namespace kwd {

// Binary PPM (P6), maxval 255. Writing maps v -> floor(clamp(v,0,1)*255 + 0.5);
// reading maps byte b -> b/255.0.
void write_ppm(std::ostream& out, const Image& im);
Image read_ppm(std::istream& in);

void write_image(const std::string& path, const Image& im);
Image read_image(const std::string& path);

unsigned char quantize_byte(double v);

}  // namespace kwd
