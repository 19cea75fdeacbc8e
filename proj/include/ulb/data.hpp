#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ulb/model.hpp"
#include "ulb/rng.hpp"

namespace ulb {

struct SynthSpec {
  int cluster_count = 8;
  int per_cluster = 500;
  int dim = 16;
  double spread = 0.35;
  std::uint64_t seed = 0;
};

// Isotropic Gaussian blobs around unit-norm random centers; label = cluster id.
inline Dataset synth_gaussians(const SynthSpec& spec) {
  if (spec.cluster_count < 2) throw std::invalid_argument("synth: need >= 2 clusters");
  if (spec.per_cluster < 1) throw std::invalid_argument("synth: need >= 1 point per cluster");
  if (spec.dim < 1) throw std::invalid_argument("synth: need dim >= 1");
  if (spec.spread < 0.0) throw std::invalid_argument("synth: spread must be >= 0");

  Rng rng(spec.seed);
  std::vector<double> centers(static_cast<std::size_t>(spec.cluster_count) * spec.dim);
  for (int c = 0; c < spec.cluster_count; ++c) {
    double* ctr = centers.data() + static_cast<std::size_t>(c) * spec.dim;
    double norm_sq = 0.0;
    for (int j = 0; j < spec.dim; ++j) {
      ctr[j] = rng.normal();
      norm_sq += ctr[j] * ctr[j];
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int j = 0; j < spec.dim; ++j) ctr[j] *= inv;
  }

  Dataset ds;
  ds.n = spec.cluster_count * spec.per_cluster;
  ds.d = spec.dim;
  ds.features.resize(static_cast<std::size_t>(ds.n) * ds.d);
  ds.labels.resize(ds.n);
  ds.ids.resize(ds.n);
  int row = 0;
  for (int c = 0; c < spec.cluster_count; ++c) {
    const double* ctr = centers.data() + static_cast<std::size_t>(c) * spec.dim;
    for (int k = 0; k < spec.per_cluster; ++k, ++row) {
      double* x = ds.features.data() + static_cast<std::size_t>(row) * spec.dim;
      for (int j = 0; j < spec.dim; ++j) x[j] = ctr[j] + spec.spread * rng.normal();
      ds.labels[row] = c;
      ds.ids[row] = row;
    }
  }
  return ds;
}

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated while reading " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace detail

// IDX image/label pair (big-endian headers, magic 2051 / 2049), pixels
// scaled into [0,1], rows flattened row-major, id = record index.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);

  const std::uint32_t img_magic = detail::read_be_u32(img, "image magic");
  if (img_magic != 2051) {
    throw std::runtime_error("idx: bad image magic " + std::to_string(img_magic));
  }
  const std::uint32_t n_img = detail::read_be_u32(img, "image count");
  const std::uint32_t rows = detail::read_be_u32(img, "rows");
  const std::uint32_t cols = detail::read_be_u32(img, "cols");

  const std::uint32_t lab_magic = detail::read_be_u32(lab, "label magic");
  if (lab_magic != 2049) {
    throw std::runtime_error("idx: bad label magic " + std::to_string(lab_magic));
  }
  const std::uint32_t n_lab = detail::read_be_u32(lab, "label count");
  if (n_img != n_lab) {
    throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(n_img) + " vs " +
                             std::to_string(n_lab) + ")");
  }

  Dataset ds;
  ds.n = static_cast<int>(n_img);
  ds.d = static_cast<int>(rows * cols);
  ds.features.resize(static_cast<std::size_t>(ds.n) * ds.d);
  ds.labels.resize(ds.n);
  ds.ids.resize(ds.n);

  std::vector<unsigned char> buf(ds.d);
  for (int i = 0; i < ds.n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), ds.d);
    if (!img) throw std::runtime_error("idx: truncated image data");
    double* dst = ds.features.data() + static_cast<std::size_t>(i) * ds.d;
    for (int j = 0; j < ds.d; ++j) dst[j] = buf[j] / 255.0;
    ds.ids[i] = i;
  }
  for (int i = 0; i < ds.n; ++i) {
    unsigned char y;
    lab.read(reinterpret_cast<char*>(&y), 1);
    if (!lab) throw std::runtime_error("idx: truncated label data");
    ds.labels[i] = y;
  }
  return ds;
}

// Headerless CSV: d feature columns followed by an integer class label.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  Dataset ds;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw std::runtime_error("csv: non-numeric cell '" + cell + "' at row " +
                                 std::to_string(row));
      }
      if (used != cell.size()) {
        throw std::runtime_error("csv: trailing junk in cell '" + cell + "' at row " +
                                 std::to_string(row));
      }
      cells.push_back(v);
    }
    if (cells.size() < 2) throw std::runtime_error("csv: need at least one feature and a label");
    if (ds.d == 0) {
      ds.d = static_cast<int>(cells.size()) - 1;
    } else if (static_cast<int>(cells.size()) - 1 != ds.d) {
      throw std::runtime_error("csv: inconsistent column count at row " + std::to_string(row));
    }
    const double label = cells.back();
    if (label < 0 || label != std::floor(label)) {
      throw std::runtime_error("csv: label out of range at row " + std::to_string(row));
    }
    ds.features.insert(ds.features.end(), cells.begin(), cells.end() - 1);
    ds.labels.push_back(static_cast<int>(label));
    ds.ids.push_back(row);
    ++row;
  }
  ds.n = row;
  return ds;
}

// Keeps the rows whose positions are listed, in the listed order.
inline Dataset subset_by_indices(const Dataset& ds, std::span<const int> indices) {
  Dataset out;
  out.n = static_cast<int>(indices.size());
  out.d = ds.d;
  out.features.reserve(static_cast<std::size_t>(out.n) * ds.d);
  out.labels.reserve(out.n);
  out.ids.reserve(out.n);
  for (int i : indices) {
    if (i < 0 || i >= ds.n) throw std::out_of_range("subset: index out of range");
    out.features.insert(out.features.end(), ds.row(i), ds.row(i) + ds.d);
    out.labels.push_back(ds.labels[i]);
    out.ids.push_back(ds.ids[i]);
  }
  return out;
}

// Keeps the rows with the given ids, preserving dataset order.
inline Dataset subset_by_ids(const Dataset& ds, const std::vector<std::int64_t>& ids) {
  std::unordered_set<std::int64_t> want(ids.begin(), ids.end());
  std::vector<int> indices;
  indices.reserve(ids.size());
  for (int i = 0; i < ds.n; ++i) {
    if (want.count(ds.ids[i])) indices.push_back(i);
  }
  if (indices.size() != want.size()) {
    throw std::invalid_argument("subset: some requested ids are missing from the dataset");
  }
  return subset_by_indices(ds, indices);
}

// Seeded permutation split; ids are preserved, the two parts partition them.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                                    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split: test_fraction must be in (0,1)");
  }
  std::vector<int> order(ds.n);
  for (int i = 0; i < ds.n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const int n_test = static_cast<int>(std::llround(ds.n * test_fraction));
  std::vector<int> test_idx(order.begin(), order.begin() + n_test);
  std::vector<int> train_idx(order.begin() + n_test, order.end());
  // keep original row order within each part
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {subset_by_indices(ds, train_idx), subset_by_indices(ds, test_idx)};
}

}  // namespace ulb
