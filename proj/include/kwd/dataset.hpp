#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "kwd/image.hpp"
#include "kwd/mosaic.hpp"
#include "kwd/rng.hpp"

namespace kwd {

// One manifest record: a stored patch with label, split and provenance.
struct PatchRef {
  std::string path;  // relative, assigned at creation
  int label = 0;     // 1 = contains a whole animal
  std::string split; // "pre", "train", "val" or "test"
  int mosaic_id = 0;
  int x = 0;  // crop offset, column
  int y = 0;  // crop offset, row
};

// Unlabeled pretraining patches, one fixed size.
struct PatchSet {
  int patch = 0;
  std::vector<Image> patches;
  std::vector<PatchRef> recs;
};

// Labeled long-tail dataset; patch sizes may differ between classes.
struct LabeledDataset {
  std::vector<Image> patches;
  std::vector<PatchRef> recs;

  std::vector<std::size_t> split_indices(const std::string& split) const;
  // (foreground, background) counts within a split.
  std::pair<std::size_t, std::size_t> class_counts(const std::string& split) const;
};

// 15 random crops per mosaic plus 15 extra for mosaics containing animals.
// No labels or boxes are retained.
PatchSet extract_pre(const std::vector<Mosaic>& mosaics, int patch, Rng& rng);

struct LtParams {
  int bg_patch = 64;
  int fg_patch = 48;
  int train_fg = 160;
  int val_fg = 40;
  int test_fg = 40;
  int bg_per_fg = 18;          // train foreground:background = 1:bg_per_fg
  int max_crops_per_animal = 4;
};

// Mosaics are split 8:1:1 with disjoint provenance; each split draws from its
// own derived seed. Background windows are verified against ground truth;
// foreground windows fully contain at least one animal box.
LabeledDataset extract_lt(const std::vector<Mosaic>& mosaics, const LtParams& params, Rng& rng);

// Class-stratified subsampling of the train split; val/test untouched.
LabeledDataset subsample_labels(const LabeledDataset& ds, double fraction, Rng& rng);

// Manifest: header "#kwd-manifest v1", one record per line.
void write_manifest(std::ostream& out, const std::vector<PatchRef>& recs);
std::vector<PatchRef> read_manifest(std::istream& in);

// Patch directory: manifest.txt plus one PPM per record at rec.path.
void save_patches(const std::string& dir, const std::vector<PatchRef>& recs, const std::vector<Image>& patches);
std::pair<std::vector<PatchRef>, std::vector<Image>> load_patches(const std::string& dir);

void save_patchset(const std::string& dir, const PatchSet& ps);
PatchSet load_patchset(const std::string& dir);
void save_dataset(const std::string& dir, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::string& dir);

// Mosaic directory: m%04d.ppm plus truth.txt ("#kwd-truth v1",
// one "<file> <x> <y> <w> <h> <kind>" line per animal box).
void save_mosaics(const std::string& dir, const std::vector<Mosaic>& mosaics);
std::vector<Mosaic> load_mosaics(const std::string& dir);

}  // namespace kwd
