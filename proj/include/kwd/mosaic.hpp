#pragma once

#include <string>
#include <vector>

#include "kwd/image.hpp"
#include "kwd/rng.hpp"

namespace kwd {

// Synthetic aerial scene recipe. Element counts are drawn uniformly from the
// given ranges; every animal independently becomes an occluded
// animal-beneath-tree pair with probability beneath_tree_p.
struct MosaicSpec {
  int size = 192;
  int animals_min = 0;
  int animals_max = 6;
  double beneath_tree_p = 0.3;
  int trees_min = 2;
  int trees_max = 5;
  int trunks_min = 1;
  int trunks_max = 4;
  int tire_marks_min = 0;
  int tire_marks_max = 2;
  int grass_min = 2;
  int grass_max = 6;
  int animal_px_min = 4;
  int animal_px_max = 12;
};

struct Box {
  int x = 0, y = 0, w = 0, h = 0;  // x = column, y = row
  std::string kind;                // "animal" or "animal_beneath_tree"
};

struct Mosaic {
  Image image;
  std::vector<Box> boxes;  // animals only
};

// Pure function of (spec, rng state). Each element category draws from its
// own derived stream, so suppressing animals leaves all other content
// bit-identical.
Mosaic generate_mosaic(const MosaicSpec& spec, Rng& rng);

// Batch helper: mosaic i draws from its own stream derived from (seed, i).
std::vector<Mosaic> generate_mosaics(const MosaicSpec& spec, int count, std::uint64_t seed);

bool boxes_intersect(int ax, int ay, int aw, int ah, const Box& b);

}  // namespace kwd
