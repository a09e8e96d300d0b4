#pragma once

// Volume/label file I/O, resampling and intensity normalization.
//
// File format: a fixed-order ASCII header followed by a blank line and the
// raw little-endian voxel payload, x-fastest:
//
//   NDims = 3
//   DimSize = <x> <y> <z>
//   ElementSpacing = <sx> <sy> <sz>
//   Origin = <ox> <oy> <oz>
//   ElementType = FLOAT32 | UINT8
//   ElementDataFile = LOCAL
//
// Volumes are FLOAT32, label maps UINT8. Floating-point header values are
// written with 17 significant digits so a write/read round trip is exact.

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "darca/core.hpp"

namespace darca {

static_assert(std::endian::native == std::endian::little,
              "voxel payload I/O assumes a little-endian host");

enum class Interp { linear, nearest };

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string read_header_line(std::istream& in, const std::string& key,
                                    const std::string& path) {
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ": truncated header, expected key '" + key + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string prefix = key + " = ";
  if (line.rfind(prefix, 0) != 0)
    throw std::runtime_error(path + ": malformed header key, expected '" + key +
                             "', got line '" + line + "'");
  return line.substr(prefix.size());
}

template <typename T>
std::array<T, 3> parse_triplet(const std::string& text, const std::string& key,
                               const std::string& path) {
  std::istringstream ss(text);
  std::array<T, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (!(ss >> out[a]))
      throw std::runtime_error(path + ": malformed value for '" + key + "'");
  }
  std::string rest;
  if (ss >> rest)
    throw std::runtime_error(path + ": trailing data in '" + key + "'");
  return out;
}

struct RawHeader {
  GridGeometry geom;
  std::string element_type;
};

inline RawHeader read_header(std::istream& in, const std::string& path) {
  if (read_header_line(in, "NDims", path) != "3")
    throw std::runtime_error(path + ": unsupported NDims (only 3 supported)");
  RawHeader h;
  h.geom.dims = parse_triplet<int>(read_header_line(in, "DimSize", path), "DimSize", path);
  h.geom.spacing =
      parse_triplet<double>(read_header_line(in, "ElementSpacing", path), "ElementSpacing", path);
  h.geom.origin = parse_triplet<double>(read_header_line(in, "Origin", path), "Origin", path);
  h.element_type = read_header_line(in, "ElementType", path);
  if (h.element_type != "FLOAT32" && h.element_type != "UINT8")
    throw std::runtime_error(path + ": unsupported element type '" + h.element_type + "'");
  if (read_header_line(in, "ElementDataFile", path) != "LOCAL")
    throw std::runtime_error(path + ": unsupported ElementDataFile (only LOCAL)");
  std::string blank;
  if (!std::getline(in, blank) || !(blank.empty() || blank == "\r"))
    throw std::runtime_error(path + ": expected blank line before payload");
  h.geom.validate();
  return h;
}

inline void write_header(std::ostream& out, const GridGeometry& g,
                         const std::string& element_type) {
  out << "NDims = 3\n";
  out << "DimSize = " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n';
  out << "ElementSpacing = " << format_double(g.spacing[0]) << ' '
      << format_double(g.spacing[1]) << ' ' << format_double(g.spacing[2]) << '\n';
  out << "Origin = " << format_double(g.origin[0]) << ' ' << format_double(g.origin[1])
      << ' ' << format_double(g.origin[2]) << '\n';
  out << "ElementType = " << element_type << '\n';
  out << "ElementDataFile = LOCAL\n";
  out << '\n';
}

inline void read_payload(std::istream& in, void* dst, std::size_t bytes,
                         const std::string& path) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    throw std::runtime_error(path + ": payload length mismatch (file too short)");
  char extra;
  if (in.read(&extra, 1); in.gcount() != 0)
    throw std::runtime_error(path + ": payload length mismatch (trailing bytes)");
}

}  // namespace detail

inline Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open file");
  const auto h = detail::read_header(in, path.string());
  if (h.element_type != "FLOAT32")
    throw std::runtime_error(path.string() + ": expected FLOAT32 volume, got " +
                             h.element_type);
  Volume v(h.geom);
  detail::read_payload(in, v.voxels.data(), v.voxels.size() * sizeof(float), path.string());
  v.validate();
  return v;
}

inline LabelMap read_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open file");
  const auto h = detail::read_header(in, path.string());
  if (h.element_type != "UINT8")
    throw std::runtime_error(path.string() + ": expected UINT8 label map, got " +
                             h.element_type);
  LabelMap m(h.geom);
  detail::read_payload(in, m.voxels.data(), m.voxels.size(), path.string());
  m.validate();
  return m;
}

inline void write_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open file for writing");
  detail::write_header(out, v.geom, "FLOAT32");
  out.write(reinterpret_cast<const char*>(v.voxels.data()),
            static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

inline void write_labels(const LabelMap& m, const std::filesystem::path& path) {
  m.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open file for writing");
  detail::write_header(out, m.geom, "UINT8");
  out.write(reinterpret_cast<const char*>(m.voxels.data()),
            static_cast<std::streamsize>(m.voxels.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

// Resample onto (target_dims, target_spacing); the origin is inherited so the
// output grid stays anchored where the input was. Out-of-bounds samples are 0.
inline Volume resample(const Volume& v, const std::array<int, 3>& target_dims,
                       const std::array<double, 3>& target_spacing, Interp mode) {
  GridGeometry g{target_dims, target_spacing, v.geom.origin};
  g.validate();
  Volume out(g);
  std::size_t i = 0;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x, ++i) {
        const auto p = g.voxel_to_physical(x, y, z);
        out.voxels[i] =
            mode == Interp::linear ? sample_trilinear(v, p) : sample_nearest(v, p);
      }
  return out;
}

inline LabelMap resample(const LabelMap& m, const std::array<int, 3>& target_dims,
                         const std::array<double, 3>& target_spacing, Interp mode) {
  if (mode != Interp::nearest)
    throw std::invalid_argument("label maps must be resampled with nearest mode");
  GridGeometry g{target_dims, target_spacing, m.geom.origin};
  g.validate();
  LabelMap out(g);
  std::size_t i = 0;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x, ++i)
        out.voxels[i] = sample_nearest(m, g.voxel_to_physical(x, y, z));
  return out;
}

// Zero-mean unit-variance normalization (population variance).
inline Volume normalize_zscore(const Volume& v) {
  v.validate();
  double sum = 0.0;
  for (float x : v.voxels) sum += x;
  const double mean = sum / static_cast<double>(v.voxels.size());
  double sq = 0.0;
  for (float x : v.voxels) {
    const double d = x - mean;
    sq += d * d;
  }
  const double stdv = std::sqrt(sq / static_cast<double>(v.voxels.size()));
  if (stdv <= 1e-12)
    throw std::runtime_error("normalize_zscore: degenerate input (near-constant volume)");
  Volume out(v.geom);
  const double inv = 1.0 / stdv;
  for (std::size_t i = 0; i < v.voxels.size(); ++i)
    out.voxels[i] = static_cast<float>((v.voxels[i] - mean) * inv);
  return out;
}

}  // namespace darca
