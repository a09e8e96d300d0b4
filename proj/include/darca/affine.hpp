#pragma once

// 12-parameter 3-D affine transform on physical (mm) coordinates. The
// registration convention throughout: the transform maps fixed-space points
// into moving-space points. Serialized as one text line of 12 numbers,
// row-major matrix first, then translation.

#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>

namespace darca {

struct AffineTransform {
  std::array<double, 9> matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<double, 3> translation{0, 0, 0};               // mm

  static AffineTransform identity() { return AffineTransform{}; }

  bool operator==(const AffineTransform&) const = default;

  std::array<double, 3> apply(const std::array<double, 3>& p) const {
    return {matrix[0] * p[0] + matrix[1] * p[1] + matrix[2] * p[2] + translation[0],
            matrix[3] * p[0] + matrix[4] * p[1] + matrix[5] * p[2] + translation[1],
            matrix[6] * p[0] + matrix[7] * p[1] + matrix[8] * p[2] + translation[2]};
  }

  double det() const {
    return matrix[0] * (matrix[4] * matrix[8] - matrix[5] * matrix[7]) -
           matrix[1] * (matrix[3] * matrix[8] - matrix[5] * matrix[6]) +
           matrix[2] * (matrix[3] * matrix[7] - matrix[4] * matrix[6]);
  }

  bool invertible() const { return std::abs(det()) > 1e-9; }

  AffineTransform inverse() const {
    const double d = det();
    if (std::abs(d) <= 1e-9)
      throw std::runtime_error("affine transform is not invertible");
    const auto& m = matrix;
    AffineTransform inv;
    inv.matrix = {(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
                  (m[1] * m[5] - m[2] * m[4]) / d, (m[5] * m[6] - m[3] * m[8]) / d,
                  (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
                  (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
                  (m[0] * m[4] - m[1] * m[3]) / d};
    // x = A^-1 (y - t)
    inv.translation = {-(inv.matrix[0] * translation[0] + inv.matrix[1] * translation[1] +
                         inv.matrix[2] * translation[2]),
                       -(inv.matrix[3] * translation[0] + inv.matrix[4] * translation[1] +
                         inv.matrix[5] * translation[2]),
                       -(inv.matrix[6] * translation[0] + inv.matrix[7] * translation[1] +
                         inv.matrix[8] * translation[2])};
    return inv;
  }

  // compose(a, b)(x) = a(b(x))
  static AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
    AffineTransform c;
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += a.matrix[3 * r + k] * b.matrix[3 * k + col];
        c.matrix[3 * r + col] = acc;
      }
    const auto t = a.apply(b.translation);
    c.translation = t;
    return c;
  }

  std::string to_line() const {
    std::string out;
    char buf[40];
    for (int i = 0; i < 9; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", matrix[i]);
      out += buf;
      out += ' ';
    }
    for (int i = 0; i < 3; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", translation[i]);
      out += buf;
      if (i < 2) out += ' ';
    }
    return out;
  }

  static AffineTransform from_line(const std::string& line) {
    std::istringstream ss(line);
    AffineTransform t;
    for (int i = 0; i < 9; ++i)
      if (!(ss >> t.matrix[i]))
        throw std::runtime_error("affine line: expected 12 numbers");
    for (int i = 0; i < 3; ++i)
      if (!(ss >> t.translation[i]))
        throw std::runtime_error("affine line: expected 12 numbers");
    return t;
  }
};

}  // namespace darca
