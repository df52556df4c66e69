#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cact/errors.hpp"
#include "cact/rng.hpp"
#include "cact/tensor.hpp"

namespace cact {

// Class ids are fixed across the whole pipeline:
// 0 background, 1 normal, 2 low grade, 3 high grade.
inline constexpr int kClasses = 4;

inline const char* class_name(int label) {
  switch (label) {
    case 0: return "background";
    case 1: return "normal";
    case 2: return "low";
    case 3: return "high";
  }
  throw ContractError("unknown class label " + std::to_string(label));
}

// ---------------------------------------------------------------------------
// Grayscale image files: binary PGM (P5), 8-bit only.

struct PgmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  int maxval = 0;
};

namespace detail {

inline int pgm_token(std::istream& in) {
  // skips whitespace and '#' comments, returns the next integer
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw IoError("malformed pgm header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace detail

// Parses the header and leaves the stream at the first pixel byte.
inline PgmHeader read_pgm_header(std::istream& in) {
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != 'P' || m1 != '5') throw IoError("not a binary pgm file");
  PgmHeader h;
  h.width = static_cast<std::size_t>(detail::pgm_token(in));
  h.height = static_cast<std::size_t>(detail::pgm_token(in));
  h.maxval = detail::pgm_token(in);
  if (h.width == 0 || h.height == 0) throw IoError("pgm with empty dimensions");
  if (h.maxval != 255) throw IoError("unsupported pgm maxval " + std::to_string(h.maxval));
  return h;
}

inline PgmHeader read_pgm_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_pgm_header(in);
}

inline Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const PgmHeader h = read_pgm_header(in);
  std::vector<unsigned char> bytes(h.width * h.height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw IoError("truncated pgm data in " + path.string());
  std::vector<double> v(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = bytes[i] / 255.0;
  return Tensor::from({1, h.height, h.width}, std::move(v));
}

inline void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 1)
    throw DimensionError("write_pgm expects a [1,H,W] image, got " + shape_str(image.shape()));
  const std::size_t H = image.extent(1), W = image.extent(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> bytes(H * W);
  const auto& v = image.values();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double x = std::min(1.0, std::max(0.0, v[i]));
    bytes[i] = static_cast<unsigned char>(std::lround(x * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Coarse cell masks: whitespace-separated integer grids, "rows cols" first.

struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> cells;  // row-major

  int at(std::size_t i, std::size_t j) const { return cells[i * cols + j]; }
  int& at(std::size_t i, std::size_t j) { return cells[i * cols + j]; }
};

inline Mask read_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Mask m;
  if (!(in >> m.rows >> m.cols) || m.rows == 0 || m.cols == 0)
    throw IoError("malformed mask header in " + path.string());
  m.cells.resize(m.rows * m.cols);
  for (int& c : m.cells)
    if (!(in >> c)) throw IoError("truncated mask grid in " + path.string());
  return m;
}

inline void write_mask(const std::filesystem::path& path, const Mask& m) {
  if (m.cells.size() != m.rows * m.cols) throw ContractError("mask grid size mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << m.rows << " " << m.cols << "\n";
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out << (j ? " " : "") << m.at(i, j);
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// Fraction of non-background cells; drives the weighted training strategy.
inline double roi_ratio(const Mask& m) {
  if (m.cells.empty()) throw ContractError("roi_ratio on an empty mask");
  std::size_t roi = 0;
  for (int c : m.cells) roi += c != 0;
  return static_cast<double>(roi) / static_cast<double>(m.cells.size());
}

inline Tensor mask_to_onehot(const Mask& m, std::size_t classes = kClasses) {
  std::vector<double> v(classes * m.rows * m.cols, 0.0);
  for (std::size_t s = 0; s < m.cells.size(); ++s) {
    const int c = m.cells[s];
    if (c < 0 || static_cast<std::size_t>(c) >= classes)
      throw ContractError("mask cell value " + std::to_string(c) + " outside class set");
    v[static_cast<std::size_t>(c) * m.rows * m.cols + s] = 1.0;
  }
  return Tensor::from({1, classes, m.rows, m.cols}, std::move(v));
}

// ---------------------------------------------------------------------------
// Dataset: manifest.csv (id,path,label,fold,mask_path) over pgm/mask files.
// Folds 0..4 with the fixed split train {0,1,2}, validation {3}, test {4}.

inline constexpr int kTrainFolds[3] = {0, 1, 2};
inline constexpr int kValFold = 3;
inline constexpr int kTestFold = 4;

struct DatasetItem {
  std::string id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  int label = 0;
  int fold = 0;
  Mask mask;
};

class Dataset {
 public:
  static std::vector<std::string> validate(const std::filesystem::path& root,
                                           std::size_t patch_size) {
    std::vector<std::string> issues;
    load(root, patch_size, &issues);
    return issues;
  }

  static Dataset ingest(const std::filesystem::path& root, std::size_t patch_size) {
    std::vector<std::string> issues;
    Dataset d = load(root, patch_size, &issues);
    if (!issues.empty()) {
      std::string msg = "dataset validation failed:";
      for (const auto& line : issues) msg += "\n  " + line;
      throw ValidationError(msg);
    }
    return d;
  }

  const std::vector<DatasetItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  const DatasetItem& item(std::size_t i) const { return items_.at(i); }
  std::size_t patch_size() const { return patch_size_; }
  const std::filesystem::path& root() const { return root_; }

  Tensor load_image(std::size_t index) const {
    return read_pgm(items_.at(index).image_path);
  }

  std::vector<std::size_t> histogram() const {
    std::vector<std::size_t> h(kClasses, 0);
    for (const auto& it : items_) h.at(static_cast<std::size_t>(it.label))++;
    return h;
  }

  std::vector<std::size_t> fold_indices(const std::vector<int>& folds) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (std::find(folds.begin(), folds.end(), items_[i].fold) != folds.end())
        out.push_back(i);
    return out;
  }

  std::vector<std::size_t> train_indices() const { return fold_indices({0, 1, 2}); }
  std::vector<std::size_t> val_indices() const { return fold_indices({kValFold}); }
  std::vector<std::size_t> test_indices() const { return fold_indices({kTestFold}); }

 private:
  static Dataset load(const std::filesystem::path& root, std::size_t patch_size,
                      std::vector<std::string>* issues) {
    Dataset d;
    d.root_ = root;
    d.patch_size_ = patch_size;
    const auto manifest = root / "manifest.csv";
    std::ifstream in(manifest);
    if (!in) {
      issues->push_back("missing manifest " + manifest.string());
      return d;
    }
    std::string line;
    if (!std::getline(in, line) || line != "id,path,label,fold,mask_path") {
      issues->push_back("manifest header must be id,path,label,fold,mask_path");
      return d;
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string field;
      while (std::getline(ss, field, ',')) f.push_back(field);
      if (f.size() != 5) {
        issues->push_back("line " + std::to_string(lineno) + ": expected 5 fields");
        continue;
      }
      DatasetItem it;
      it.id = f[0];
      it.image_path = root / f[1];
      it.mask_path = root / f[4];
      try {
        it.label = std::stoi(f[2]);
        it.fold = std::stoi(f[3]);
      } catch (const std::exception&) {
        issues->push_back(it.id + ": non-numeric label or fold");
        continue;
      }
      bool ok = true;
      if (it.label < 0 || it.label >= kClasses) {
        issues->push_back(it.id + ": label " + f[2] + " outside class set");
        ok = false;
      }
      if (it.fold < 0 || it.fold > 4) {
        issues->push_back(it.id + ": fold " + f[3] + " outside 0..4");
        ok = false;
      }
      if (!std::filesystem::exists(it.image_path)) {
        issues->push_back(it.id + ": missing image " + f[1]);
        ok = false;
      }
      if (!std::filesystem::exists(it.mask_path)) {
        issues->push_back(it.id + ": missing mask " + f[4]);
        ok = false;
      }
      if (!ok) continue;
      try {
        const PgmHeader h = read_pgm_header(it.image_path);
        it.mask = read_mask(it.mask_path);
        const std::size_t want_rows = (h.height + patch_size - 1) / patch_size;
        const std::size_t want_cols = (h.width + patch_size - 1) / patch_size;
        if (it.mask.rows != want_rows || it.mask.cols != want_cols) {
          issues->push_back(it.id + ": mask grid " + std::to_string(it.mask.rows) + "x" +
                            std::to_string(it.mask.cols) + " does not match image grid " +
                            std::to_string(want_rows) + "x" + std::to_string(want_cols));
          continue;
        }
        for (int c : it.mask.cells)
          if (c < 0 || c >= kClasses) {
            issues->push_back(it.id + ": mask cell value " + std::to_string(c) +
                              " outside class set");
            ok = false;
            break;
          }
      } catch (const Error& e) {
        issues->push_back(it.id + ": " + e.what());
        continue;
      }
      if (ok) d.items_.push_back(std::move(it));
    }
    return d;
  }

  std::filesystem::path root_;
  std::size_t patch_size_ = 56;
  std::vector<DatasetItem> items_;
};

// ---------------------------------------------------------------------------
// Patch dataset: one labelled example per mask cell, optionally class-balanced.

struct PatchRef {
  std::size_t item = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  int label = 0;
};

struct PatchSet {
  std::vector<PatchRef> refs;
  std::vector<std::string> warnings;
};

inline PatchSet derive_patch_dataset(const Dataset& d, const std::vector<std::size_t>& items,
                                     std::size_t cap = std::numeric_limits<std::size_t>::max(),
                                     std::uint64_t seed = 0) {
  std::vector<std::vector<PatchRef>> by_class(kClasses);
  for (std::size_t idx : items) {
    const auto& it = d.item(idx);
    for (std::size_t i = 0; i < it.mask.rows; ++i)
      for (std::size_t j = 0; j < it.mask.cols; ++j)
        by_class[static_cast<std::size_t>(it.mask.at(i, j))].push_back(
            {idx, i, j, it.mask.at(i, j)});
  }
  PatchSet out;
  for (int c = 0; c < kClasses; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    if (pool.size() > cap) {
      Rng rng(stream_seed(seed, "patch_cap:" + std::string(class_name(c))));
      rng.shuffle(pool);
      pool.resize(cap);
      std::sort(pool.begin(), pool.end(), [](const PatchRef& a, const PatchRef& b) {
        return std::tie(a.item, a.i, a.j) < std::tie(b.item, b.i, b.j);
      });
    } else if (cap != std::numeric_limits<std::size_t>::max() && pool.size() < cap) {
      out.warnings.push_back("class " + std::string(class_name(c)) + " has only " +
                             std::to_string(pool.size()) + " patches for cap " +
                             std::to_string(cap) + "; taking all");
    }
    out.refs.insert(out.refs.end(), pool.begin(), pool.end());
  }
  return out;
}

inline PatchSet derive_patch_dataset(const Dataset& d,
                                     std::size_t cap = std::numeric_limits<std::size_t>::max(),
                                     std::uint64_t seed = 0) {
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return derive_patch_dataset(d, all, cap, seed);
}

// Crops one cell from a loaded image, zero-padded past the bottom/right edge.
inline Tensor crop_patch(const Tensor& image, std::size_t i, std::size_t j,
                         std::size_t patch_size) {
  const std::size_t H = image.extent(1), W = image.extent(2);
  std::vector<double> v(patch_size * patch_size, 0.0);
  const auto& src = image.values();
  for (std::size_t r = 0; r < patch_size; ++r) {
    const std::size_t y = i * patch_size + r;
    if (y >= H) break;
    const std::size_t x0 = j * patch_size;
    const std::size_t n = std::min(patch_size, x0 < W ? W - x0 : 0);
    for (std::size_t cidx = 0; cidx < n; ++cidx) v[r * patch_size + cidx] = src[y * W + x0 + cidx];
  }
  return Tensor::from({1, patch_size, patch_size}, std::move(v));
}

// ---------------------------------------------------------------------------
// Stratified k-fold partition used by the cross-validation driver.

inline std::vector<int> partition_folds(const std::vector<int>& labels, int k) {
  if (k < 2) throw ContractError("k-fold partition requires k >= 2");
  if (labels.empty()) throw ContractError("cannot partition an empty dataset");
  std::vector<int> fold(labels.size(), -1);
  int next = 0;  // rotation carried across classes keeps fold totals within 1
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  for (int c : classes)
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) {
        fold[i] = next;
        next = (next + 1) % k;
      }
  for (int f = 0; f < k; ++f)
    for (int c : classes) {
      bool found = false;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (fold[i] == f && labels[i] == c) {
          found = true;
          break;
        }
      if (!found)
        throw StratificationError("class " + std::to_string(c) + " absent from fold " +
                                  std::to_string(f));
    }
  return fold;
}

}  // namespace cact
