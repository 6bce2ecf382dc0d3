// Copyright (c) 2026 The xphrase Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xphrase/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "xphrase/bytes.hpp"
#include "xphrase/log.hpp"

namespace xphrase::baselines {

namespace {

constexpr char kMagic[8] = {'X', 'P', 'H', 'R', 'S', 'M', 'A', 'P'};
constexpr int kMaxSweeps = 100;

double column_dot(const std::vector<double>& m, std::size_t d, std::size_t p, std::size_t q) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += m[i * d + p] * m[i * d + q];
  return s;
}

void rotate_columns(std::vector<double>& m, std::size_t d, std::size_t p, std::size_t q, double c, double s) {
  for (std::size_t i = 0; i < d; ++i) {
    const double a = m[i * d + p], b = m[i * d + q];
    m[i * d + p] = c * a - s * b;
    m[i * d + q] = s * a + c * b;
  }
}

// Fills the columns of u flagged in `missing` with unit vectors orthogonal to all others.
void complete_basis(std::vector<double>& u, std::size_t d, std::vector<bool> missing) {
  for (std::size_t j = 0; j < d; ++j) {
    if (!missing[j]) continue;
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> v(d, 0.0);
      v[k] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < d; ++c) {
          if (missing[c]) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < d; ++i) dot += v[i] * u[i * d + c];
          for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i * d + c];
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      if (norm > best_norm) {
        best_norm = norm;
        best = std::move(v);
      }
    }
    const double inv = 1.0 / std::sqrt(best_norm);
    for (std::size_t i = 0; i < d; ++i) u[i * d + j] = best[i] * inv;
    missing[j] = false;
  }
}

void check_pair(const Tensor& source, const Tensor& target) {
  if (source.shape().size() != 2 || source.shape() != target.shape()) {
    throw std::invalid_argument("procrustes: source " + shape_string(source.shape()) + " and target " +
                                shape_string(target.shape()) + " must be matching [n, d] matrices");
  }
  if (source.rows() == 0 || source.cols() == 0) throw std::invalid_argument("procrustes: empty input");
}

}  // namespace

OrthogonalMap OrthogonalMap::identity(std::size_t d) {
  OrthogonalMap w{d, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) w.matrix[i * d + i] = 1.0;
  return w;
}

std::vector<double> OrthogonalMap::apply(std::span<const double> x) const {
  if (x.size() != dim) throw std::invalid_argument("map: vector width does not match map dimension");
  std::vector<double> y(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) y[j] += x[i] * matrix[i * dim + j];
  }
  return y;
}

Tensor OrthogonalMap::apply(const Tensor& rows) const {
  if (rows.shape().size() != 2 || rows.cols() != dim) {
    throw std::invalid_argument("map: rows of shape " + shape_string(rows.shape()) + " for map of dimension " +
                                std::to_string(dim));
  }
  std::vector<double> out;
  out.reserve(rows.numel());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto y = apply(std::span(rows.values().data() + r * dim, dim));
    out.insert(out.end(), y.begin(), y.end());
  }
  return Tensor::from({rows.rows(), dim}, std::move(out));
}

double OrthogonalMap::orthogonality_error() const {
  double ss = 0.0;
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = 0; b < dim; ++b) {
      const double e = column_dot(matrix, dim, a, b) - (a == b ? 1.0 : 0.0);
      ss += e * e;
    }
  }
  return std::sqrt(ss);
}

Svd jacobi_svd(std::span<const double> a, std::size_t d) {
  if (a.size() != d * d) throw std::invalid_argument("svd: expected a square matrix");
  Svd out{d, {a.begin(), a.end()}, std::vector<double>(d, 0.0), OrthogonalMap::identity(d).matrix};
  auto& w = out.u;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double alpha = column_dot(w, d, p, p), beta = column_dot(w, d, q, q), gamma = column_dot(w, d, p, q);
        if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        rotate_columns(w, d, p, q, c, s);
        rotate_columns(out.v, d, p, q, c, s);
      }
    }
    if (!rotated) break;
  }
  double smax = 0.0;
  for (std::size_t j = 0; j < d; ++j) smax = std::max(smax, out.s[j] = std::sqrt(column_dot(w, d, j, j)));
  std::vector<bool> missing(d, false);
  bool any = false;
  for (std::size_t j = 0; j < d; ++j) {
    if (out.s[j] <= 1e-12 * smax || out.s[j] == 0.0) {
      missing[j] = any = true;
      continue;
    }
    for (std::size_t i = 0; i < d; ++i) w[i * d + j] /= out.s[j];
  }
  if (any) complete_basis(w, d, missing);
  return out;
}

OrthogonalMap fit_orthogonal_map(const Tensor& source, const Tensor& target) {
  check_pair(source, target);
  const std::size_t n = source.rows(), d = source.cols();
  std::vector<double> m(d * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* s = source.values().data() + r * d;
    const double* t = target.values().data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) m[i * d + j] += s[i] * t[j];
    }
  }
  const Svd svd = jacobi_svd(m, d);
  const double smax = *std::max_element(svd.s.begin(), svd.s.end());
  const auto rank = std::count_if(svd.s.begin(), svd.s.end(), [&](double s) { return s > 1e-10 * smax; });
  if (rank < static_cast<long>(d)) {
    log_warn("procrustes: cross-covariance has rank " + std::to_string(rank) + " < " + std::to_string(d) +
             "; the orthogonal map is not unique");
  }
  OrthogonalMap w{d, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += svd.u[i * d + k] * svd.v[j * d + k];
      w.matrix[i * d + j] = s;
    }
  }
  return w;
}

double residual(const OrthogonalMap& w, const Tensor& source, const Tensor& target) {
  check_pair(source, target);
  const Tensor mapped = w.apply(source);
  double ss = 0.0;
  for (std::size_t i = 0; i < mapped.numel(); ++i) {
    const double e = mapped.values()[i] - target.values()[i];
    ss += e * e;
  }
  return std::sqrt(ss);
}

Tensor cse_represent(const encoder::PhraseEncoder& frozen,
                     const std::vector<std::vector<corpus::ExampleSentence>>& examples, std::optional<std::size_t> layer,
                     std::size_t max_sentences) {
  retrieval::IndexOptions opts;
  opts.use_projection = false;
  opts.layer = layer.value_or(encoder::middle_layer(frozen.config()));
  opts.max_sentences = max_sentences;
  return retrieval::represent_all(frozen, examples, opts);
}

retrieval::PhraseIndex map_index(const OrthogonalMap& w, const retrieval::PhraseIndex& index) {
  if (index.dim != w.dim) throw std::invalid_argument("map: index width does not match map dimension");
  retrieval::PhraseIndex out = index;
  for (std::size_t r = 0; r < index.size(); ++r) {
    auto y = w.apply(index.row(r));
    double ss = 0.0;
    for (double v : y) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t c = 0; c < w.dim; ++c) out.matrix[r * w.dim + c] = y[c] * inv;
  }
  return out;
}

std::vector<std::uint8_t> serialize_map(const OrthogonalMap& w) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  bytes::put<std::uint32_t>(out, kMapVersion);
  bytes::put<std::uint64_t>(out, w.dim);
  bytes::put<std::uint64_t>(out, w.dim);
  bytes::put_doubles(out, w.matrix);
  return out;
}

OrthogonalMap deserialize_map(std::span<const std::uint8_t> data) {
  bytes::Reader in(data, "map");
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) in.fail("bad magic");
  if (const auto v = in.get<std::uint32_t>(); v != kMapVersion) in.fail("unsupported version " + std::to_string(v));
  const auto rows = in.get<std::uint64_t>(), cols = in.get<std::uint64_t>();
  if (rows != cols || rows == 0 || rows > 4096) in.fail("bad dimensions");
  OrthogonalMap w{rows, std::vector<double>(rows * cols)};
  in.get_doubles(w.matrix.data(), w.matrix.size());
  if (!in.done()) in.fail("trailing bytes");
  if (w.orthogonality_error() > 1e-6) in.fail("matrix is not orthogonal");
  return w;
}

void save_map(const OrthogonalMap& w, const std::string& path) { bytes::write_file(path, serialize_map(w), "map"); }

OrthogonalMap load_map(const std::string& path) {
  const auto data = bytes::read_file(path, "map");
  return deserialize_map(data);
}

}  // namespace xphrase::baselines
