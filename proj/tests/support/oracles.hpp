#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Written straight from the formulas, loop by loop, without sharing
// code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "aether/fieldgrid.hpp"
#include "aether/nn.hpp"
#include "aether/rng.hpp"
#include "aether/tasks.hpp"

namespace oracle {

using aether::nn::Matrix;

inline aether::EmbeddingField random_field(std::uint32_t w, std::uint32_t h, std::uint32_t c, std::uint64_t seed,
                                           double nodata_fraction = 0.0, double origin_x = 1000.0,
                                           double origin_y = 5000.0, double cell = 10.0) {
  aether::CounterRng rng(seed, "test_field");
  aether::GridGeometry g;
  g.width = w;
  g.height = h;
  g.channels = c;
  g.origin_x = origin_x;
  g.origin_y = origin_y;
  g.cell_size = cell;
  g.crs_code = 27700;
  std::vector<float> data(static_cast<std::size_t>(w) * h * c);
  for (std::size_t cellno = 0; cellno < static_cast<std::size_t>(w) * h; ++cellno) {
    const bool nodata = rng.uniform() < nodata_fraction;
    for (std::size_t k = 0; k < c; ++k) {
      data[cellno * c + k] = nodata ? std::numeric_limits<float>::quiet_NaN() : static_cast<float>(rng.normal());
    }
  }
  return aether::EmbeddingField(g, std::move(data));
}

struct BrutePool {
  std::vector<aether::CellIndex> members;
  std::vector<double> mean;
};

/// Scans every cell center; the closed-disk test is written independently.
inline BrutePool brute_pool(const aether::EmbeddingField& f, double cx, double cy, double radius) {
  BrutePool out;
  const auto& g = f.geometry();
  std::vector<double> sum(g.channels, 0.0);
  for (std::uint32_t r = 0; r < g.height; ++r) {
    for (std::uint32_t c = 0; c < g.width; ++c) {
      const double x = g.origin_x + c * g.cell_size;
      const double y = g.origin_y - r * g.cell_size;
      const double dx = x - cx;
      const double dy = y - cy;
      if (dx * dx + dy * dy > radius * radius) continue;
      const auto v = f.cell(r, c);
      if (std::isnan(v[0])) continue;
      out.members.push_back({r, c});
      for (std::size_t k = 0; k < g.channels; ++k) sum[k] += v[k];
    }
  }
  if (!out.members.empty()) {
    for (auto& s : sum) s /= static_cast<double>(out.members.size());
    out.mean = sum;
  }
  return out;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, aether::CounterRng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
  return m;
}

// ---------------------------------------------------------------- straight-line forward passes

inline std::vector<double> naive_normalize(const std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double n = std::sqrt(ss) + 1e-12;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

inline std::vector<double> matvec(const Matrix& w, const std::vector<double>& x) {
  std::vector<double> y(static_cast<std::size_t>(w.rows()), 0.0);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = s;
  }
  return y;
}

inline std::vector<double> naive_head(const aether::nn::AeProjectionHead& h, const std::vector<double>& a) {
  const auto x0 = matvec(h.w_in, a);
  auto hid = matvec(h.mlp_w1, x0);
  for (std::size_t i = 0; i < hid.size(); ++i) hid[i] = std::max(0.0, hid[i] + h.mlp_b1[static_cast<Eigen::Index>(i)]);
  auto m = matvec(h.mlp_w2, hid);
  auto g = matvec(h.gate_w, x0);
  std::vector<double> x1(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double gate = 1.0 / (1.0 + std::exp(-(g[i] + h.gate_b[k])));
    x1[i] = x0[i] + gate * (m[i] + h.mlp_b2[k]);
  }
  return naive_normalize(matvec(h.w_out, x1));
}

inline std::vector<double> naive_project(const Matrix& w, const std::vector<double>& t) {
  return naive_normalize(matvec(w, t));
}

/// -1/(2N) sum_i [log softmax_row + log softmax_col] written with plain loops.
inline double naive_info_nce(const Matrix& l, const Matrix& r, double tau) {
  const Eigen::Index n = l.rows();
  std::vector<std::vector<double>> s(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double d = 0.0;
      for (Eigen::Index k = 0; k < l.cols(); ++k) d += l(i, k) * r(j, k);
      s[i][j] = d / tau;
    }
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double mr = -1e300, mc = -1e300;
    for (Eigen::Index j = 0; j < n; ++j) {
      mr = std::max(mr, s[i][j]);
      mc = std::max(mc, s[j][i]);
    }
    double sr = 0.0, sc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      sr += std::exp(s[i][j] - mr);
      sc += std::exp(s[j][i] - mc);
    }
    total += -(s[i][i] - mr - std::log(sr)) - (s[i][i] - mc - std::log(sc));
  }
  return total / (2.0 * static_cast<double>(n));
}

inline std::vector<double> naive_task_head(const aether::TaskHead& h, const std::vector<double>& r) {
  if (h.hidden() == 0) {
    auto y = matvec(h.w2, r);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += h.b2[static_cast<Eigen::Index>(i)];
    return y;
  }
  auto hid = matvec(h.w1, r);
  for (std::size_t i = 0; i < hid.size(); ++i) hid[i] = std::max(0.0, hid[i] + h.b1[static_cast<Eigen::Index>(i)]);
  auto y = matvec(h.w2, hid);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += h.b2[static_cast<Eigen::Index>(i)];
  return y;
}

// ---------------------------------------------------------------- finite differences

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true value
/// is ~0 from turning finite-difference round-off into huge ratios.
inline double rel_err(double a, double n, double floor = 1e-4) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences of `loss` with respect to every entry of `x`,
/// compared with `analytic`. Returns the max relative error.
inline double fd_check(double* x, std::size_t size, const double* analytic, const std::function<double()>& loss,
                       double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

inline std::string temp_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() / ("aether_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline std::string slurp(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return {};
  std::string out;
  char buf[65536];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
  std::fclose(f);
  return out;
}

}  // namespace oracle
