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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "test_support.hpp"
#include "xphrase/baselines.hpp"
#include "xphrase/log.hpp"

using namespace xphrase;
using namespace xphrase::baselines;

namespace {

std::vector<double> copy_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor gaussian(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return Tensor::from({n, d}, std::move(v));
}

// Q from Gram-Schmidt on a Gaussian matrix: a random orthogonal matrix.
OrthogonalMap random_orthogonal(Rng& rng, std::size_t d) {
  OrthogonalMap w{d, copy_of(gaussian(rng, d, d))};
  for (std::size_t j = 0; j < d; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += w.matrix[i * d + j] * w.matrix[i * d + k];
        for (std::size_t i = 0; i < d; ++i) w.matrix[i * d + j] -= dot * w.matrix[i * d + k];
      }
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += w.matrix[i * d + j] * w.matrix[i * d + j];
    for (std::size_t i = 0; i < d; ++i) w.matrix[i * d + j] /= std::sqrt(ss);
  }
  return w;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor add_noise(Rng& rng, const Tensor& t, double scale) {
  auto v = copy_of(t);
  for (auto& x : v) x += scale * rng.normal();
  return Tensor::from(t.shape(), std::move(v));
}

}  // namespace

TEST_CASE("jacobi svd reconstructs its input") {
  Rng rng(1);
  for (std::size_t d : {1u, 2u, 5u, 16u, 64u}) {
    const auto a = copy_of(gaussian(rng, d, d));
    const Svd svd = jacobi_svd(a, d);
    CHECK(OrthogonalMap{d, svd.u}.orthogonality_error() <= 1e-10);
    CHECK(OrthogonalMap{d, svd.v}.orthogonality_error() <= 1e-10);
    std::vector<double> back(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) back[i * d + j] += svd.u[i * d + k] * svd.s[k] * svd.v[j * d + k];
    CHECK(max_abs_diff(back, a) <= 1e-10);
    for (double s : svd.s) CHECK(s >= 0.0);
  }
}

TEST_CASE("identity and exact rotation recovery") {
  Rng rng(2);
  const Tensor s = gaussian(rng, 40, 8);
  const auto same = fit_orthogonal_map(s, s);
  CHECK(max_abs_diff(same.matrix, OrthogonalMap::identity(8).matrix) <= 1e-6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.uniform_index(15);
    const auto r = random_orthogonal(rng, d);
    const Tensor src = gaussian(rng, 3 * d, d);
    const auto w = fit_orthogonal_map(src, r.apply(src));
    CHECK(max_abs_diff(w.matrix, r.matrix) <= 1e-6);
    CHECK(w.orthogonality_error() <= 1e-6);
  }
}

TEST_CASE("two-dimensional fit matches an angle grid search") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor src = gaussian(rng, 30, 2);
    const double angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const OrthogonalMap rot{2, {std::cos(angle), std::sin(angle), -std::sin(angle), std::cos(angle)}};
    const Tensor tgt = add_noise(rng, rot.apply(src), 0.1);
    const auto w = fit_orthogonal_map(src, tgt);
    CHECK(std::abs(w.matrix[0] * w.matrix[3] - w.matrix[1] * w.matrix[2] - 1.0) <= 1e-9);

    double best = std::numeric_limits<double>::infinity(), best_theta = 0.0;
    for (double theta = -std::numbers::pi; theta < std::numbers::pi; theta += 1e-4) {
      const OrthogonalMap g{2, {std::cos(theta), std::sin(theta), -std::sin(theta), std::cos(theta)}};
      const double r = residual(g, src, tgt);
      if (r < best) best = r, best_theta = theta;
    }
    const double fitted = std::atan2(w.matrix[1], w.matrix[0]);
    CHECK(std::abs(std::remainder(fitted - best_theta, 2.0 * std::numbers::pi)) <= 1e-4);
    CHECK(residual(w, src, tgt) <= best + 1e-12);
  }
}

TEST_CASE("noisy fit beats random orthogonal matrices") {
  Rng rng(4);
  const Tensor src = gaussian(rng, 50, 8);
  const Tensor tgt = add_noise(rng, random_orthogonal(rng, 8).apply(src), 0.5);
  const auto w = fit_orthogonal_map(src, tgt);
  const double fitted = residual(w, src, tgt);
  for (int i = 0; i < 1000; ++i) CHECK(fitted <= residual(random_orthogonal(rng, 8), src, tgt));

  const Tensor unrelated = gaussian(rng, 50, 8);
  const auto w2 = fit_orthogonal_map(src, unrelated);
  const double r2 = residual(w2, src, unrelated);
  for (int i = 0; i < 1000; ++i) CHECK(r2 <= residual(random_orthogonal(rng, 8), src, unrelated));
}

TEST_CASE("orthogonality and norm preservation on random fits") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.uniform_index(20), n = 1 + rng.uniform_index(40);
    const Tensor src = gaussian(rng, n, d), tgt = gaussian(rng, n, d);
    const auto w = fit_orthogonal_map(src, tgt);
    CHECK(w.orthogonality_error() <= 1e-6);
    const Tensor mapped = w.apply(src);
    for (std::size_t r = 0; r < n; ++r) {
      double a = 0.0, b = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        a += src.values()[r * d + c] * src.values()[r * d + c];
        b += mapped.values()[r * d + c] * mapped.values()[r * d + c];
      }
      CHECK(std::abs(std::sqrt(a) - std::sqrt(b)) <= 1e-9);
    }
  }
}

TEST_CASE("rank deficient input still yields an orthogonal map") {
  Rng rng(6);
  const auto before = warning_count();
  const Tensor src = gaussian(rng, 2, 6), tgt = gaussian(rng, 2, 6);
  const auto w = fit_orthogonal_map(src, tgt);
  CHECK(warning_count() == before + 1);
  CHECK(w.orthogonality_error() <= 1e-6);
  const Tensor zeros = Tensor::zeros({4, 3});
  CHECK(fit_orthogonal_map(zeros, zeros).orthogonality_error() <= 1e-6);
  CHECK_THROWS_AS(fit_orthogonal_map(gaussian(rng, 4, 3), gaussian(rng, 4, 2)), std::invalid_argument);
}

TEST_CASE("mapping separates rotated spaces for retrieval") {
  Rng rng(7);
  const std::size_t n = 60, d = 8;
  auto normalize = [](Tensor t) {
    auto v = copy_of(t);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double ss = 0.0;
      for (std::size_t c = 0; c < t.cols(); ++c) ss += v[r * t.cols() + c] * v[r * t.cols() + c];
      for (std::size_t c = 0; c < t.cols(); ++c) v[r * t.cols() + c] /= std::sqrt(ss);
    }
    return Tensor::from(t.shape(), std::move(v));
  };
  const Tensor src = normalize(gaussian(rng, n, d));
  const Tensor tgt = normalize(add_noise(rng, random_orthogonal(rng, d).apply(src), 0.05));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("t" + std::to_string(i));
  const auto index = retrieval::index_from_rows(ids, tgt);
  const auto w = fit_orthogonal_map(src, tgt);
  const double unmapped = retrieval::accuracy_at_1(index, src, ids);
  const double mapped = retrieval::accuracy_at_1(index, normalize(w.apply(src)), ids);
  CHECK(mapped >= unmapped);
  CHECK(mapped > 0.9);

  const auto src_index = retrieval::index_from_rows(ids, src);
  const auto moved = map_index(w, src_index);
  for (std::size_t r = 0; r < n; ++r) {
    const auto y = w.apply(src_index.row(r));
    for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(moved.row(r)[c] - y[c]) <= 1e-12);
  }
}

TEST_CASE("cse representation is the unprojected middle-layer contract") {
  encoder::EncoderConfig c;
  c.vocab_size = 20;
  c.hidden_dim = 8;
  c.num_layers = 3;
  c.num_heads = 2;
  c.ffn_dim = 8;
  c.max_sequence_length = 10;
  c.projection_dim = 4;
  const auto enc = encoder::init_parameters(c, 3);
  corpus::ExampleSentence a{"", {2, 3, 4, 5}, 2, 3}, b{"", {6, 3, 4, 7, 8}, 2, 3};
  const std::vector<std::vector<corpus::ExampleSentence>> phrases{{a, b}, {b}};
  const Tensor reps = cse_represent(enc, phrases);
  CHECK(reps.cols() == 8);
  encoder::RepresentOptions opts;
  opts.use_projection = false;
  opts.layer = 1;
  const auto direct = encoder::represent_phrase(enc, phrases[0], opts);
  CHECK(std::equal(direct.p.values().begin(), direct.p.values().end(), reps.values().begin()));
  opts.layer = 2;
  const auto other = encoder::represent_phrase(enc, phrases[0], opts);
  CHECK_FALSE(std::equal(other.p.values().begin(), other.p.values().end(), reps.values().begin()));
  CHECK(cse_represent(enc, phrases, 2).values()[0] == other.p.values()[0]);
}

TEST_CASE("map file round-trip") {
  Rng rng(8);
  const auto w = random_orthogonal(rng, 6);
  const auto path = (std::filesystem::temp_directory_path() / "xphrase_map.bin").string();
  save_map(w, path);
  const auto back = load_map(path);
  CHECK(back.dim == 6);
  CHECK(back.matrix == w.matrix);
  auto bytes = serialize_map(w);
  bytes.resize(bytes.size() - 8);
  CHECK_THROWS(deserialize_map(bytes));
  auto skew = w;
  skew.matrix[0] += 0.01;
  CHECK_THROWS(deserialize_map(serialize_map(skew)));
  std::filesystem::remove(path);
}
