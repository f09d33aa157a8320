#include "kwd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kwd/augment.hpp"
#include "kwd/ppm.hpp"

namespace fs = std::filesystem;

namespace kwd {

std::vector<std::size_t> LabeledDataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (recs[i].split == split) out.push_back(i);
  return out;
}

std::pair<std::size_t, std::size_t> LabeledDataset::class_counts(const std::string& split) const {
  std::size_t fg = 0, bg = 0;
  for (const PatchRef& r : recs)
    if (r.split == split) (r.label == 1 ? fg : bg)++;
  return {fg, bg};
}

static std::string patch_name(const std::string& split, std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%06zu.ppm", idx);
  return split + "/" + buf;
}

PatchSet extract_pre(const std::vector<Mosaic>& mosaics, int patch, Rng& rng) {
  if (patch <= 0) throw std::invalid_argument("extract_pre: patch size must be positive");
  if (mosaics.empty()) throw std::invalid_argument("extract_pre: no mosaics");
  PatchSet ps;
  ps.patch = patch;
  constexpr int kCropsPerMosaic = 15;
  for (std::size_t mi = 0; mi < mosaics.size(); ++mi) {
    const Mosaic& m = mosaics[mi];
    if (m.image.h < patch || m.image.w < patch)
      throw std::invalid_argument("extract_pre: patch " + std::to_string(patch) + " larger than mosaic " +
                                  std::to_string(m.image.h) + "x" + std::to_string(m.image.w));
    const int rounds = m.boxes.empty() ? 1 : 2;  // 15 extra crops for mosaics with animals
    for (int rep = 0; rep < rounds * kCropsPerMosaic; ++rep) {
      const int y = rng.uniform_int(0, m.image.h - patch);
      const int x = rng.uniform_int(0, m.image.w - patch);
      ps.patches.push_back(crop(m.image, y, x, patch));
      PatchRef ref;
      ref.label = 0;
      ref.split = "pre";
      ref.mosaic_id = static_cast<int>(mi);
      ref.x = x;
      ref.y = y;
      ref.path = patch_name("pre", ps.recs.size());
      ps.recs.push_back(ref);
    }
  }
  return ps;
}

namespace {

struct SplitPlan {
  std::string name;
  std::vector<std::size_t> mosaics;
  int fg_target = 0;
  int bg_target = 0;
  std::uint64_t seed = 0;
};

}  // namespace

LabeledDataset extract_lt(const std::vector<Mosaic>& mosaics, const LtParams& p, Rng& rng) {
  if (p.bg_patch <= 0 || p.fg_patch <= 0) throw std::invalid_argument("extract_lt: patch sizes must be positive");
  if (p.train_fg <= 0 || p.val_fg <= 0 || p.test_fg <= 0 || p.bg_per_fg <= 0 || p.max_crops_per_animal <= 0)
    throw std::invalid_argument("extract_lt: counts must be positive");
  const std::size_t n = mosaics.size();
  if (n < 3) throw std::invalid_argument("extract_lt: need at least 3 mosaics for disjoint splits");
  for (const Mosaic& m : mosaics)
    if (m.image.h < p.bg_patch || m.image.w < p.bg_patch || m.image.h < p.fg_patch || m.image.w < p.fg_patch)
      throw std::invalid_argument("extract_lt: mosaic smaller than requested patch size");

  // 8:1:1 split over shuffled mosaics; each split then works from its own seed.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    Rng split_rng(rng.u64());
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = split_rng.below(i + 1);
      std::swap(order[i], order[j]);
    }
  }
  const std::size_t n_val = std::max<std::size_t>(1, n / 10);
  const std::size_t n_test = std::max<std::size_t>(1, n / 10);
  if (n_val + n_test >= n) throw std::invalid_argument("extract_lt: too few mosaics to carve val and test");

  SplitPlan plans[3];
  plans[0] = {"train", {}, p.train_fg, p.train_fg * p.bg_per_fg, rng.u64()};
  plans[1] = {"val", {}, p.val_fg, p.val_fg, rng.u64()};
  plans[2] = {"test", {}, p.test_fg, p.test_fg, rng.u64()};
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_val + n_test)
      plans[i < n_val ? 1 : 2].mosaics.push_back(order[i]);
    else
      plans[0].mosaics.push_back(order[i]);
  }

  LabeledDataset ds;
  for (SplitPlan& plan : plans) {
    Rng srng(plan.seed);
    std::sort(plan.mosaics.begin(), plan.mosaics.end());

    // Animals usable for whole-containment crops in this split.
    std::vector<std::pair<std::size_t, const Box*>> animals;
    for (std::size_t mi : plan.mosaics)
      for (const Box& b : mosaics[mi].boxes)
        if (b.w <= p.fg_patch && b.h <= p.fg_patch) animals.emplace_back(mi, &b);

    const long achievable = static_cast<long>(animals.size()) * p.max_crops_per_animal;
    if (achievable < plan.fg_target)
      throw std::invalid_argument("extract_lt: split '" + plan.name + "' needs " +
                                  std::to_string(plan.fg_target) + " foreground patches but only " +
                                  std::to_string(achievable) + " are achievable from " +
                                  std::to_string(animals.size()) + " animals");

    // Foreground: round-robin over animals, jittered window containing the box.
    int produced = 0;
    for (int round = 0; round < p.max_crops_per_animal && produced < plan.fg_target; ++round) {
      for (const auto& [mi, box] : animals) {
        if (produced >= plan.fg_target) break;
        const Mosaic& m = mosaics[mi];
        const int lox = std::max(0, box->x + box->w - p.fg_patch);
        const int hix = std::min(m.image.w - p.fg_patch, box->x);
        const int loy = std::max(0, box->y + box->h - p.fg_patch);
        const int hiy = std::min(m.image.h - p.fg_patch, box->y);
        const int x = srng.uniform_int(lox, hix);
        const int y = srng.uniform_int(loy, hiy);
        ds.patches.push_back(crop(m.image, y, x, p.fg_patch));
        PatchRef ref{patch_name(plan.name, ds.recs.size()), 1, plan.name, static_cast<int>(mi), x, y};
        ds.recs.push_back(ref);
        ++produced;
      }
    }

    // Background: uniform windows verified against every ground-truth box.
    for (int i = 0; i < plan.bg_target; ++i) {
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        const std::size_t mi = plan.mosaics[srng.below(plan.mosaics.size())];
        const Mosaic& m = mosaics[mi];
        const int x = srng.uniform_int(0, m.image.w - p.bg_patch);
        const int y = srng.uniform_int(0, m.image.h - p.bg_patch);
        bool hit = false;
        for (const Box& b : m.boxes)
          if (boxes_intersect(x, y, p.bg_patch, p.bg_patch, b)) {
            hit = true;
            break;
          }
        if (hit) continue;
        ds.patches.push_back(crop(m.image, y, x, p.bg_patch));
        PatchRef ref{patch_name(plan.name, ds.recs.size()), 0, plan.name, static_cast<int>(mi), x, y};
        ds.recs.push_back(ref);
        ok = true;
      }
      if (!ok)
        throw std::runtime_error("extract_lt: could not find an animal-free background window in split '" +
                                 plan.name + "' after 200 attempts");
    }
  }
  return ds;
}

LabeledDataset subsample_labels(const LabeledDataset& ds, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subsample_labels: fraction must lie in (0, 1]");

  std::vector<std::size_t> train_fg, train_bg;
  for (std::size_t i = 0; i < ds.recs.size(); ++i) {
    if (ds.recs[i].split != "train") continue;
    (ds.recs[i].label == 1 ? train_fg : train_bg).push_back(i);
  }
  const std::size_t keep_fg = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train_fg.size())));
  const std::size_t keep_bg = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train_bg.size())));
  if (keep_fg == 0)
    throw std::invalid_argument("subsample_labels: fraction " + std::to_string(fraction) +
                                " keeps zero foreground patches");

  auto pick = [&rng](std::vector<std::size_t>& pool, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
  };
  pick(train_fg, keep_fg);
  pick(train_bg, keep_bg);

  std::vector<bool> keep(ds.recs.size(), false);
  for (std::size_t i = 0; i < ds.recs.size(); ++i)
    if (ds.recs[i].split != "train") keep[i] = true;
  for (std::size_t i : train_fg) keep[i] = true;
  for (std::size_t i : train_bg) keep[i] = true;

  LabeledDataset out;
  for (std::size_t i = 0; i < ds.recs.size(); ++i)
    if (keep[i]) {
      out.recs.push_back(ds.recs[i]);
      out.patches.push_back(ds.patches[i]);
    }
  return out;
}

// ------------------------------------------------------------------ files

void write_manifest(std::ostream& out, const std::vector<PatchRef>& recs) {
  out << "#kwd-manifest v1\n";
  for (const PatchRef& r : recs)
    out << r.path << " " << r.label << " " << r.split << " " << r.mosaic_id << " " << r.x << " " << r.y << "\n";
  if (!out) throw std::runtime_error("manifest: write failed");
}

std::vector<PatchRef> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "#kwd-manifest v1")
    throw std::runtime_error("manifest: missing or wrong header, got '" + line + "'");
  std::vector<PatchRef> recs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    PatchRef r;
    if (!(ss >> r.path >> r.label >> r.split >> r.mosaic_id >> r.x >> r.y) || (r.label != 0 && r.label != 1))
      throw std::runtime_error("manifest: malformed record at line " + std::to_string(lineno));
    recs.push_back(r);
  }
  return recs;
}

void save_patches(const std::string& dir, const std::vector<PatchRef>& recs, const std::vector<Image>& patches) {
  if (recs.size() != patches.size()) throw std::invalid_argument("save_patches: record/patch count mismatch");
  fs::create_directories(dir);
  {
    std::ofstream mf(dir + "/manifest.txt");
    if (!mf) throw std::runtime_error("save_patches: cannot write manifest in " + dir);
    write_manifest(mf, recs);
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const fs::path path = fs::path(dir) / recs[i].path;
    fs::create_directories(path.parent_path());
    write_image(path.string(), patches[i]);
  }
}

std::pair<std::vector<PatchRef>, std::vector<Image>> load_patches(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw std::runtime_error("load_patches: no manifest in " + dir);
  std::vector<PatchRef> recs = read_manifest(mf);
  std::vector<Image> patches;
  patches.reserve(recs.size());
  for (const PatchRef& r : recs) patches.push_back(read_image((fs::path(dir) / r.path).string()));
  return {std::move(recs), std::move(patches)};
}

void save_patchset(const std::string& dir, const PatchSet& ps) { save_patches(dir, ps.recs, ps.patches); }

PatchSet load_patchset(const std::string& dir) {
  auto [recs, patches] = load_patches(dir);
  PatchSet ps;
  if (patches.empty()) throw std::runtime_error("load_patchset: empty patch set in " + dir);
  ps.patch = patches[0].h;
  for (const Image& im : patches)
    if (im.h != ps.patch || im.w != ps.patch)
      throw std::runtime_error("load_patchset: mixed patch sizes in " + dir);
  ps.recs = std::move(recs);
  ps.patches = std::move(patches);
  return ps;
}

void save_dataset(const std::string& dir, const LabeledDataset& ds) { save_patches(dir, ds.recs, ds.patches); }

LabeledDataset load_dataset(const std::string& dir) {
  auto [recs, patches] = load_patches(dir);
  LabeledDataset ds;
  ds.recs = std::move(recs);
  ds.patches = std::move(patches);
  return ds;
}

static std::string mosaic_name(std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "m%04zu.ppm", idx);
  return buf;
}

void save_mosaics(const std::string& dir, const std::vector<Mosaic>& mosaics) {
  fs::create_directories(dir);
  std::ofstream tf(dir + "/truth.txt");
  if (!tf) throw std::runtime_error("save_mosaics: cannot write truth file in " + dir);
  tf << "#kwd-truth v1\n";
  for (std::size_t i = 0; i < mosaics.size(); ++i) {
    const std::string name = mosaic_name(i);
    write_image((fs::path(dir) / name).string(), mosaics[i].image);
    for (const Box& b : mosaics[i].boxes)
      tf << name << " " << b.x << " " << b.y << " " << b.w << " " << b.h << " " << b.kind << "\n";
  }
  if (!tf) throw std::runtime_error("save_mosaics: truth file write failed");
}

std::vector<Mosaic> load_mosaics(const std::string& dir) {
  std::ifstream tf(dir + "/truth.txt");
  if (!tf) throw std::runtime_error("load_mosaics: no truth.txt in " + dir);
  std::string line;
  if (!std::getline(tf, line) || line != "#kwd-truth v1")
    throw std::runtime_error("load_mosaics: missing or wrong truth header");

  std::vector<Mosaic> mosaics;
  auto index_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0;; ++i) {
      if (mosaic_name(i) == name) return i;
      if (i > 100000) throw std::runtime_error("load_mosaics: unrecognized mosaic file '" + name + "'");
    }
  };
  // Load every m*.ppm present, in index order.
  for (std::size_t i = 0;; ++i) {
    const fs::path path = fs::path(dir) / mosaic_name(i);
    if (!fs::exists(path)) break;
    Mosaic m;
    m.image = read_image(path.string());
    mosaics.push_back(std::move(m));
  }
  if (mosaics.empty()) throw std::runtime_error("load_mosaics: no mosaic images in " + dir);
  while (std::getline(tf, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name;
    Box b;
    if (!(ss >> name >> b.x >> b.y >> b.w >> b.h >> b.kind))
      throw std::runtime_error("load_mosaics: malformed truth record '" + line + "'");
    const std::size_t idx = index_of(name);
    if (idx >= mosaics.size()) throw std::runtime_error("load_mosaics: truth refers to missing " + name);
    mosaics[idx].boxes.push_back(b);
  }
  return mosaics;
}

}  // namespace kwd
