#include "ddcm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ddcm/errors.hpp"
#include "ddcm/parallel.hpp"
#include "ddcm/rng.hpp"

namespace ddcm {

namespace {

struct Rgb {
  double r, g, b;
};

// Base colors per class. Low vegetation and trees are deliberately both
// green (texture and brightness tell them apart); cars are small and bright.
constexpr Rgb kBase[6] = {
    {0.55, 0.54, 0.52},  // surface
    {0.30, 0.38, 0.80},  // buildings
    {0.48, 0.76, 0.42},  // low vegetation
    {0.16, 0.47, 0.22},  // trees
    {0.88, 0.82, 0.22},  // cars
    {0.78, 0.32, 0.64},  // clutter
};

void paint_rect(LabelMap& lbl, Index y0, Index x0, Index h, Index w, std::int32_t cls) {
  const Index H = lbl.h, W = lbl.w;
  for (Index y = std::max<Index>(0, y0); y < std::min(H, y0 + h); ++y)
    for (Index x = std::max<Index>(0, x0); x < std::min(W, x0 + w); ++x) lbl(0, y, x) = cls;
}

void paint_ellipse(LabelMap& lbl, double cy, double cx, double ry, double rx, std::int32_t cls) {
  const Index y0 = std::max<Index>(0, static_cast<Index>(cy - ry) - 1);
  const Index y1 = std::min(lbl.h, static_cast<Index>(cy + ry) + 2);
  const Index x0 = std::max<Index>(0, static_cast<Index>(cx - rx) - 1);
  const Index x1 = std::min(lbl.w, static_cast<Index>(cx + rx) + 2);
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry;
      const double dx = (static_cast<double>(x) - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) lbl(0, y, x) = cls;
    }
}

}  // namespace

Sample generate_tile(const SceneSpec& spec, Index tile_index) {
  if (spec.class_count < 1 || spec.class_count > 6)
    throw ConfigError("scene generator supports 1..6 classes");
  if (spec.tile_size < 32) throw ConfigError("tile size must be >= 32");
  const Index S = spec.tile_size;
  Rng rng = Rng::keyed(spec.seed, 0x74696c65ULL, static_cast<std::uint64_t>(tile_index));

  Sample s;
  s.label = LabelMap(1, S, S);
  s.image = Tensor<float>(1, 3, S, S);
  const double area = static_cast<double>(S) * static_cast<double>(S);
  const double unit = std::sqrt(area) / 512.0;  // feature sizes scale with the tile

  // Low vegetation fields first, trees and buildings over them, then the
  // rare classes on top so they stay visible.
  if (spec.class_count > 2) {
    const Index n = 8 + static_cast<Index>(rng.uniform_int(5));
    for (Index i = 0; i < n; ++i)
      paint_ellipse(s.label, rng.uniform(0, S), rng.uniform(0, S), unit * rng.uniform(40, 90),
                    unit * rng.uniform(40, 90), 2);
  }
  if (spec.class_count > 3) {
    const Index n = 10 + static_cast<Index>(rng.uniform_int(7));
    for (Index i = 0; i < n; ++i)
      paint_ellipse(s.label, rng.uniform(0, S), rng.uniform(0, S), unit * rng.uniform(16, 45),
                    unit * rng.uniform(16, 45), 3);
  }
  if (spec.class_count > 1) {
    const Index n = 6 + static_cast<Index>(rng.uniform_int(4));
    for (Index i = 0; i < n; ++i) {
      const Index h = static_cast<Index>(unit * rng.uniform(60, 160));
      const Index w = static_cast<Index>(unit * rng.uniform(60, 160));
      paint_rect(s.label, static_cast<Index>(rng.uniform(0, S - 1)),
                 static_cast<Index>(rng.uniform(0, S - 1)), h, w, 1);
    }
  }
  if (spec.class_count > 5) {
    const Index n = 2 + static_cast<Index>(rng.uniform_int(3));
    for (Index i = 0; i < n; ++i) {
      // irregular stroke: a short random walk of small ellipses
      double cy = rng.uniform(0, S), cx = rng.uniform(0, S);
      const Index steps = 6 + static_cast<Index>(rng.uniform_int(8));
      for (Index t = 0; t < steps; ++t) {
        paint_ellipse(s.label, cy, cx, unit * rng.uniform(6, 16), unit * rng.uniform(6, 16), 5);
        cy += unit * rng.uniform(-22, 22);
        cx += unit * rng.uniform(-22, 22);
      }
    }
  }
  if (spec.class_count > 4) {
    const Index n = 42 + static_cast<Index>(rng.uniform_int(20));
    for (Index i = 0; i < n; ++i) {
      const Index h = std::max<Index>(3, static_cast<Index>(unit * rng.uniform(5, 9)));
      const Index w = std::max<Index>(4, static_cast<Index>(unit * rng.uniform(9, 16)));
      const bool swap = rng.bernoulli(0.5);
      paint_rect(s.label, static_cast<Index>(rng.uniform(0, S - 1)),
                 static_cast<Index>(rng.uniform(0, S - 1)), swap ? w : h, swap ? h : w, 4);
    }
  }

  // Per-tile illumination gradient plus per-pixel noise and a texture term
  // for trees.
  const double gy = rng.uniform(-0.05, 0.05), gx = rng.uniform(-0.05, 0.05);
  for (Index y = 0; y < S; ++y) {
    for (Index x = 0; x < S; ++x) {
      const std::int32_t cls = s.label(0, y, x);
      const Rgb base = kBase[cls];
      const double illum = gy * (static_cast<double>(y) / S - 0.5) + gx * (static_cast<double>(x) / S - 0.5);
      double tex = 0.0;
      if (cls == 3) tex = 0.08 * std::sin(0.9 * y) * std::sin(0.9 * x);
      const double nr = spec.noise * rng.gaussian();
      const double ng = spec.noise * rng.gaussian();
      const double nb = spec.noise * rng.gaussian();
      s.image(0, 0, y, x) = static_cast<float>(std::clamp(base.r + illum + tex + nr, 0.0, 1.0));
      s.image(0, 1, y, x) = static_cast<float>(std::clamp(base.g + illum + tex + ng, 0.0, 1.0));
      s.image(0, 2, y, x) = static_cast<float>(std::clamp(base.b + illum + tex + nb, 0.0, 1.0));
    }
  }
  return s;
}

Manifest generate_dataset(const SceneSpec& spec, Index tiles, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (!fs::is_directory(out_dir / "images") || !fs::is_directory(out_dir / "labels"))
    throw IoError("cannot create dataset directories under '" + out_dir.string() + "'");

  Manifest m;
  m.class_count = spec.class_count;
  m.tile_ids.resize(static_cast<size_t>(tiles));
  m.pixel_counts.assign(static_cast<size_t>(tiles),
                        std::vector<std::uint64_t>(static_cast<size_t>(spec.class_count), 0));

  parallel_for(tiles, [&](Index i) {
    Sample s = generate_tile(spec, i);
    char id[16];
    std::snprintf(id, sizeof(id), "%04lld", static_cast<long long>(i));
    m.tile_ids[static_cast<size_t>(i)] = id;
    write_ppm(out_dir / "images" / (std::string(id) + ".ppm"), s.image);
    write_pgm(out_dir / "labels" / (std::string(id) + ".pgm"), s.label);
    for (std::int32_t v : s.label.v) ++m.pixel_counts[static_cast<size_t>(i)][static_cast<size_t>(v)];
  });

  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

VecX<double> Manifest::frequencies(const std::vector<Index>& tiles) const {
  VecX<double> f = VecX<double>::Zero(class_count);
  std::uint64_t total = 0;
  for (Index t : tiles) {
    const auto& row = pixel_counts[static_cast<size_t>(t)];
    for (Index c = 0; c < class_count; ++c) {
      f[c] += static_cast<double>(row[static_cast<size_t>(c)]);
      total += row[static_cast<size_t>(c)];
    }
  }
  if (total > 0) f /= static_cast<double>(total);
  return f;
}

VecX<double> Manifest::frequencies() const {
  std::vector<Index> all(tile_ids.size());
  std::iota(all.begin(), all.end(), 0);
  return frequencies(all);
}

// ---------------------------------------------------------------------------

namespace {

void write_pnm_header(std::ofstream& f, const char* magic, Index w, Index h) {
  f << magic << "\n" << w << " " << h << "\n255\n";
}

std::pair<Index, Index> read_pnm_header(std::istream& f, const char* magic,
                                        const std::filesystem::path& path) {
  std::string m;
  f >> m;
  if (m != magic) throw IoError("'" + path.string() + "': expected " + magic + " header, got '" + m + "'");
  auto next_token = [&]() -> long {
    // PNM allows '#' comments between header tokens
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return std::stol(tok);
    }
    throw IoError("'" + path.string() + "': malformed header");
  };
  const long w = next_token();
  const long h = next_token();
  const long maxval = next_token();
  if (w < 1 || h < 1 || maxval != 255)
    throw IoError("'" + path.string() + "': unsupported dimensions or maxval");
  f.get();  // single whitespace before binary payload
  return {static_cast<Index>(h), static_cast<Index>(w)};
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  const auto& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("write_ppm: need a (1,3,h,w) image, got " + s.str());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  write_pnm_header(f, "P6", s.w, s.h);
  std::vector<unsigned char> row(static_cast<size_t>(s.w) * 3);
  for (Index y = 0; y < s.h; ++y) {
    for (Index x = 0; x < s.w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(image(0, c, y, x), 0.0f, 1.0f);
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(std::lround(static_cast<double>(v) * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  if (labels.n != 1) throw ShapeError("write_pgm: need a (1,h,w) map");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  write_pnm_header(f, "P5", labels.w, labels.h);
  std::vector<unsigned char> row(static_cast<size_t>(labels.w));
  for (Index y = 0; y < labels.h; ++y) {
    for (Index x = 0; x < labels.w; ++x) {
      const std::int32_t v = labels(0, y, x);
      if (v < 0 || v > 255) throw IoError("write_pgm: label value " + std::to_string(v) + " not 8-bit");
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(v);
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  const auto [h, w] = read_pnm_header(f, "P6", path);
  Tensor<float> img(1, 3, h, w);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (Index y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw IoError("'" + path.string() + "': truncated pixel data");
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        img(0, c, y, x) = static_cast<float>(row[static_cast<size_t>(x * 3 + c)]) / 255.0f;
  }
  return img;
}

LabelMap read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  const auto [h, w] = read_pnm_header(f, "P5", path);
  LabelMap lbl(1, h, w);
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (Index y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw IoError("'" + path.string() + "': truncated pixel data");
    for (Index x = 0; x < w; ++x) lbl(0, y, x) = row[static_cast<size_t>(x)];
  }
  return lbl;
}

Sample load_pair(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  Sample s;
  s.image = read_ppm(image_path);
  s.label = read_pgm(label_path);
  if (s.image.shape().h != s.label.h || s.image.shape().w != s.label.w)
    throw IoError("pair mismatch: image " + s.image.shape().str() + " vs label " +
                  std::to_string(s.label.h) + "x" + std::to_string(s.label.w));
  return s;
}

void save_pair(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
               const Sample& sample) {
  write_ppm(image_path, sample.image);
  write_pgm(label_path, sample.label);
}

// ---------------------------------------------------------------------------

Manifest read_manifest(const std::filesystem::path& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw IoError("cannot open '" + csv_path.string() + "'");
  Manifest m;
  std::string line;
  if (!std::getline(f, line)) throw IoError("'" + csv_path.string() + "': empty manifest");
  // header: tile,class0,...,classN
  m.class_count = static_cast<Index>(std::count(line.begin(), line.end(), ','));
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    m.tile_ids.push_back(cell);
    std::vector<std::uint64_t> counts;
    while (std::getline(ss, cell, ',')) counts.push_back(std::stoull(cell));
    if (static_cast<Index>(counts.size()) != m.class_count)
      throw IoError("'" + csv_path.string() + "': ragged manifest row");
    m.pixel_counts.push_back(std::move(counts));
  }
  return m;
}

void write_manifest(const std::filesystem::path& csv_path, const Manifest& m) {
  std::ofstream f(csv_path);
  if (!f) throw IoError("cannot open '" + csv_path.string() + "' for writing");
  f << "tile";
  for (Index c = 0; c < m.class_count; ++c) f << ",class" << c;
  f << "\n";
  for (size_t i = 0; i < m.tile_ids.size(); ++i) {
    f << m.tile_ids[i];
    for (auto v : m.pixel_counts[i]) f << "," << v;
    f << "\n";
  }
}

std::array<std::vector<Index>, 3> split_dataset(Index count, double train_frac, double val_frac,
                                                double test_frac, std::uint64_t seed) {
  const double sum = train_frac + val_frac + test_frac;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (train_frac < 0 || val_frac < 0 || test_frac < 0) throw ConfigError("split fractions must be >= 0");
  if (count < 1) throw ConfigError("split of an empty dataset");

  const double fracs[3] = {train_frac, val_frac, test_frac};
  Index sizes[3];
  double rema[3];
  Index assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fracs[i] * static_cast<double>(count);
    sizes[i] = static_cast<Index>(exact);
    rema[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  for (Index left = count - assigned; left > 0; --left) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rema[i] > rema[best]) best = i;
    ++sizes[best];
    rema[best] = -1.0;
  }
  for (int i = 0; i < 3; ++i)
    if (fracs[i] > 0.0 && sizes[i] == 0)
      throw ConfigError("dataset too small: a requested split would be empty");

  std::vector<Index> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::keyed(seed, 0x73706c69ULL);
  for (Index i = count - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1))]);

  std::array<std::vector<Index>, 3> out;
  size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    out[static_cast<size_t>(i)].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                       order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<size_t>(sizes[i])));
    std::sort(out[static_cast<size_t>(i)].begin(), out[static_cast<size_t>(i)].end());
    pos += static_cast<size_t>(sizes[i]);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir, double train_frac, double val_frac,
                     double test_frac, std::uint64_t seed) {
  Manifest m = read_manifest(dir / "manifest.csv");
  const Index count = static_cast<Index>(m.tile_ids.size());
  auto split = split_dataset(count, train_frac, val_frac, test_frac, seed);

  Dataset ds;
  ds.class_count = m.class_count;
  ds.train_ids = split[0];
  ds.val_ids = split[1];
  ds.test_ids = split[2];
  auto load_tiles = [&](const std::vector<Index>& ids, std::vector<Sample>& out) {
    for (Index i : ids) {
      const std::string& id = m.tile_ids[static_cast<size_t>(i)];
      out.push_back(load_pair(dir / "images" / (id + ".ppm"), dir / "labels" / (id + ".pgm")));
    }
  };
  load_tiles(ds.train_ids, ds.train);
  load_tiles(ds.val_ids, ds.val);
  load_tiles(ds.test_ids, ds.test);
  ds.train_frequencies = m.frequencies(ds.train_ids);
  return ds;
}

}  // namespace ddcm
