#include "kwd/ppm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kwd {

unsigned char quantize_byte(double v) {
  if (v < 0.0) v = 0.0;
  if (v > 1.0) v = 1.0;
  return static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
}

void write_ppm(std::ostream& out, const Image& im) {
  if (im.h <= 0 || im.w <= 0) throw std::invalid_argument("ppm: cannot write empty image");
  out << "P6\n" << im.w << " " << im.h << "\n255\n";
  std::vector<unsigned char> buf(im.px.size());
  for (std::size_t i = 0; i < im.px.size(); ++i) buf[i] = quantize_byte(im.px[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("ppm: write failed");
}

// Reads one whitespace-delimited token, skipping '#' comments to end of line.
static std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Image read_ppm(std::istream& in) {
  const std::string magic = next_token(in);
  if (magic != "P6") throw std::runtime_error("ppm: bad magic '" + magic + "', expected P6");
  const std::string ws = next_token(in), hs = next_token(in), ms = next_token(in);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxval = std::stoi(ms);
  } catch (const std::exception&) {
    throw std::runtime_error("ppm: malformed header fields '" + ws + " " + hs + " " + ms + "'");
  }
  if (w <= 0 || h <= 0) throw std::runtime_error("ppm: non-positive dimensions in header");
  if (maxval != 255) throw std::runtime_error("ppm: unsupported maxval " + std::to_string(maxval));
  // Exactly one whitespace byte separates the header from the payload; the
  // token reader has already consumed it.
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("ppm: truncated payload, expected " + std::to_string(buf.size()) + " bytes, got " +
                             std::to_string(in.gcount()));
  Image im(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) im.px[i] = static_cast<double>(buf[i]) / 255.0;
  return im;
}

void write_image(const std::string& path, const Image& im) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot open '" + path + "' for writing");
  write_ppm(f, im);
}

Image read_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot open '" + path + "'");
  return read_ppm(f);
}

}  // namespace kwd
