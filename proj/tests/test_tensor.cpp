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
#include <cstdio>
#include <filesystem>
#include <limits>

#include "test_support.hpp"
#include "xphrase/tensor.hpp"

using namespace xphrase;
using testing::random_tensor;

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Checks d(sum(weights * op(inputs)))/d(input) against central differences
// for every input.
void check_op_gradient(const std::vector<Tensor>& inputs, const std::function<Tensor()>& op, Rng& rng,
                       double tolerance = 1e-4) {
  Tensor probe_shape;
  {
    NoGradGuard g;
    probe_shape = op();
  }
  const Tensor weights = random_tensor(rng, probe_shape.shape(), -1.0, 1.0, false);
  auto loss_fn = [&] { return sum(mul(op(), weights)); };
  for (auto in : inputs) in.zero_grad();
  loss_fn().backward();
  for (auto in : inputs) {
    const auto analytic = to_vec(in.grad());
    const auto numeric = testing::numeric_gradient(in, [&] { return loss_fn().item(); });
    CHECK(testing::max_relative_error(analytic, numeric) <= tolerance);
  }
}

std::size_t rdim(Rng& rng) { return 1 + rng.uniform_index(8); }

}  // namespace

TEST_CASE("forward examples") {
  auto x = Tensor::from({3}, {-1, 0, 2});
  CHECK(to_vec(relu(x).values()) == std::vector<double>{0, 0, 2});

  auto s = softmax_rows(Tensor::from({1, 2}, {0, 0}));
  CHECK(s.values()[0] == 0.5);
  CHECK(s.values()[1] == 0.5);

  auto n = l2_normalize_rows(Tensor::from({1, 2}, {3, 4}));
  CHECK(n.values()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.values()[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("shape mismatch names the op and both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(mul(a, Tensor::zeros({6})), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
}

TEST_CASE("backward on sum of squares") {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  sum(mul(x, x)).backward();
  CHECK(to_vec(x.grad()) == std::vector<double>{2, 4, 6});
}

TEST_CASE("parameter without dependence gets zero gradient") {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto w = Tensor::from({2}, {5, 6}, true);
  w.zero_grad();
  sum(mul(x, w.detach())).backward();
  CHECK(to_vec(w.grad()) == std::vector<double>{0, 0});
  CHECK(to_vec(x.grad()) == std::vector<double>{5, 6});
}

TEST_CASE("backward misuse is rejected") {
  auto x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(mul(x, x).backward(), GradError);
  auto loss = sum(mul(x, x));
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), GradError);
  auto constant = sum(Tensor::from({2}, {1, 2}));
  CHECK_THROWS_AS(constant.backward(), GradError);
}

TEST_CASE("no-grad guard disables recording") {
  auto x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradients of every differentiable op match finite differences") {
  Rng rng(1234);
  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    const std::size_t m = rdim(rng), k = rdim(rng), n = rdim(rng);
    auto a = random_tensor(rng, {m, k});
    auto b = random_tensor(rng, {k, n});
    auto bt = random_tensor(rng, {n, k});
    auto c = random_tensor(rng, {m, k});
    check_op_gradient({a, b}, [&] { return matmul(a, b); }, rng);
    check_op_gradient({a, bt}, [&] { return matmul_nt(a, bt); }, rng);
    check_op_gradient({a}, [&] { return transpose(a); }, rng);
    check_op_gradient({a, c}, [&] { return add(a, c); }, rng);
    check_op_gradient({a, c}, [&] { return sub(a, c); }, rng);
    check_op_gradient({a, c}, [&] { return mul(a, c); }, rng);
    check_op_gradient({a}, [&] { return scale(a, 1.7); }, rng);
    auto bias = random_tensor(rng, {k});
    check_op_gradient({a, bias}, [&] { return add_bias(a, bias); }, rng);
    check_op_gradient({a}, [&] { return gelu(a); }, rng);
    check_op_gradient({a}, [&] { return softmax_rows(scale(a, 3.0)); }, rng);
    check_op_gradient({a}, [&] { return mean_axis(a, 0); }, rng);
    check_op_gradient({a}, [&] { return mean_axis(a, 1); }, rng);
    check_op_gradient({a}, [&] { return sum(a); }, rng);

    // Keep relu/log/normalize inputs away from kinks and singularities.
    std::vector<double> away(m * k);
    for (double& v : away) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
    auto r = Tensor::from({m, k}, away, true);
    check_op_gradient({r}, [&] { return relu(r); }, rng);
    check_op_gradient({r}, [&] { return l2_normalize_rows(r); }, rng);
    auto pos = random_tensor(rng, {m, k}, 0.2, 2.0);
    check_op_gradient({pos}, [&] { return log(pos); }, rng);

    std::vector<std::size_t> idx(rdim(rng));
    for (auto& i : idx) i = rng.uniform_index(m);
    check_op_gradient({a}, [&] { return gather_rows(a, idx); }, rng);
    const std::size_t lo = rng.uniform_index(m);
    const std::size_t hi = lo + 1 + rng.uniform_index(m - lo);
    check_op_gradient({a}, [&] { return slice_rows(a, lo, hi); }, rng);
    auto other = random_tensor(rng, {n, k});
    check_op_gradient({a, other}, [&] { return concat_rows(a, other); }, rng);

    auto gain = random_tensor(rng, {k}, 0.5, 1.5);
    auto shift = random_tensor(rng, {k});
    if (k >= 2) check_op_gradient({a, gain, shift}, [&] { return layer_norm_rows(a, gain, shift); }, rng);

    const std::uint64_t mask_seed = rng.next_u64();
    check_op_gradient({a}, [&] {
      Rng mask_rng(mask_seed);
      return dropout(a, 0.3, &mask_rng);
    }, rng);

    std::vector<std::size_t> targets(m);
    for (auto& t : targets) t = rng.uniform_index(k);
    check_op_gradient({a}, [&] { return softmax_cross_entropy(scale(a, 2.0), targets); }, rng);

    std::vector<std::vector<WeightedRow>> pools(rdim(rng));
    for (auto& p : pools) {
      const std::size_t count = 1 + rng.uniform_index(3);
      for (std::size_t j = 0; j < count; ++j) p.push_back({rng.uniform_index(m), rng.uniform(0.1, 1.0)});
    }
    check_op_gradient({a}, [&] { return pool_rows(a, pools); }, rng);

    const std::size_t heads = 1 + rng.uniform_index(2);
    const std::size_t width = heads * (1 + rng.uniform_index(4));
    std::vector<Segment> segs;
    std::size_t total = 0;
    for (std::size_t s = 0, count = 1 + rng.uniform_index(3); s < count; ++s) {
      const std::size_t len = 1 + rng.uniform_index(4);
      segs.push_back({total, len});
      total += len;
    }
    auto q = random_tensor(rng, {total, width});
    auto kk = random_tensor(rng, {total, width});
    auto v = random_tensor(rng, {total, width});
    check_op_gradient({q, kk, v}, [&] { return segmented_attention(q, kk, v, segs, heads); }, rng);
  }
}

TEST_CASE("softmax rows are positive and sum to one") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor(rng, {rdim(rng), rdim(rng)}, -30, 30, false);
    auto y = softmax_rows(x);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) {
        CHECK(y.at(i, j) > 0.0);
        total += y.at(i, j);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("l2-normalized rows have unit norm") {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    auto y = l2_normalize_rows(random_tensor(rng, {rdim(rng), rdim(rng)}, -5, 5, false));
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) sq += y.at(i, j) * y.at(i, j);
      CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(l2_normalize_rows(Tensor::zeros({1, 3})), ShapeError);
}

TEST_CASE("segmented attention keeps segments independent") {
  Rng rng(3);
  auto q = random_tensor(rng, {5, 4}, -1, 1, false);
  auto k = random_tensor(rng, {5, 4}, -1, 1, false);
  auto v = random_tensor(rng, {5, 4}, -1, 1, false);
  const std::vector<Segment> two = {{0, 2}, {2, 3}};
  auto joint = segmented_attention(q, k, v, two, 2);
  const std::vector<Segment> first = {{0, 2}};
  auto alone = segmented_attention(slice_rows(q, 0, 2), slice_rows(k, 0, 2), slice_rows(v, 0, 2), first, 2);
  for (std::size_t i = 0; i < 8; ++i) CHECK(joint.values()[i] == alone.values()[i]);
  CHECK_THROWS_AS(segmented_attention(q, k, v, std::vector<Segment>{{0, 2}}, 2), ShapeError);
  CHECK_THROWS_AS(segmented_attention(q, k, v, two, 3), ShapeError);
}

TEST_CASE("momentum blend") {
  auto make = [](double target, double source) {
    ParameterList t{{"w", Tensor::from({1}, {target})}};
    ParameterList s{{"w", Tensor::from({1}, {source})}};
    return std::pair{t, s};
  };
  {
    auto [t, s] = make(0.123456789, 9.87654321);
    momentum_blend(t, s, 1.0);
    CHECK(t[0].tensor.item() == 0.123456789);
  }
  {
    auto [t, s] = make(0.123456789, 9.87654321);
    momentum_blend(t, s, 0.0);
    CHECK(t[0].tensor.item() == 9.87654321);
  }
  {
    auto [t, s] = make(2.0, 4.0);
    momentum_blend(t, s, 0.5);
    CHECK(t[0].tensor.item() == 3.0);
  }
  ParameterList bad{{"w", Tensor::from({2}, {1, 2})}};
  ParameterList t{{"w", Tensor::from({1}, {1})}};
  CHECK_THROWS_AS(momentum_blend(t, bad, 0.5), ShapeError);
  CHECK_THROWS(momentum_blend(t, t, 1.5));

  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const double mu = rng.uniform();
    auto a = random_tensor(rng, {3, 2}, -1, 1, false);
    auto src = random_tensor(rng, {3, 2}, -1, 1, false);
    ParameterList twice{{"w", a.clone(false)}};
    ParameterList once{{"w", a.clone(false)}};
    ParameterList source{{"w", src}};
    momentum_blend(twice, source, mu);
    momentum_blend(twice, source, mu);
    momentum_blend(once, source, mu * mu);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(twice[0].tensor.values()[i] - once[0].tensor.values()[i]) <= 1e-14);
  }
}

TEST_CASE("adam learning-rate schedule") {
  AdamConfig c;
  c.learning_rate = 0.01;
  c.warmup_fraction = 0.1;
  c.total_steps = 100;
  CHECK(warmup_steps(c) == 10);
  CHECK(scheduled_learning_rate(c, 10) == 0.01);
  CHECK(scheduled_learning_rate(c, 100) == 0.0);
  CHECK(scheduled_learning_rate(c, 5) == doctest::Approx(0.005));
  CHECK(scheduled_learning_rate(c, 55) == doctest::Approx(0.005));
  for (std::uint64_t s = 1; s <= 120; ++s) CHECK(scheduled_learning_rate(c, s) >= 0.0);
  c.warmup_fraction = 0.0;
  CHECK(scheduled_learning_rate(c, 1) == doctest::Approx(0.01 * 99.0 / 100.0));
}

TEST_CASE("adam single step matches the scalar recurrence") {
  ParameterList params{{"w", Tensor::from({1}, {1.0}, true)}};
  AdamConfig c;
  c.learning_rate = 0.1;
  c.warmup_fraction = 0.0;
  c.total_steps = 10;
  auto state = make_adam_state(params, c);
  params[0].tensor.zero_grad();
  params[0].tensor.mutable_grad()[0] = 0.5;
  const double lr = adam_step(params, state);
  // m = 0.1*0.5 = 0.05, v = 0.001*0.25; bias-corrected m_hat = 0.5, v_hat = 0.25
  const double expected_lr = 0.1 * 9.0 / 10.0;
  CHECK(lr == doctest::Approx(expected_lr).epsilon(1e-15));
  const double expected = 1.0 - expected_lr * 0.5 / (0.5 + 1e-8);
  CHECK(params[0].tensor.item() == doctest::Approx(expected).epsilon(1e-14));
  CHECK(params[0].tensor.item() < 1.0);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  Rng rng(8);
  ParameterList params{{"a", random_tensor(rng, {4, 3})}, {"b", random_tensor(rng, {5})}};
  const auto before_a = to_vec(params[0].tensor.values());
  const auto before_b = to_vec(params[1].tensor.values());
  AdamConfig c;
  c.total_steps = 50;
  auto state = make_adam_state(params, c);
  for (int i = 0; i < 5; ++i) {
    zero_grad(params);
    adam_step(params, state);
  }
  CHECK(to_vec(params[0].tensor.values()) == before_a);
  CHECK(to_vec(params[1].tensor.values()) == before_b);
}

TEST_CASE("adam rejects a parameter without gradient") {
  ParameterList params{{"encoder.tok_emb", Tensor::from({1}, {1.0}, true)}};
  auto state = make_adam_state(params, AdamConfig{});
  try {
    adam_step(params, state);
    FAIL("expected error");
  } catch (const GradError& e) {
    CHECK(std::string(e.what()).find("encoder.tok_emb") != std::string::npos);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Checkpoint ckpt;
    ckpt.config_hash = rng.next_u64();
    for (std::size_t e = 0, count = rng.uniform_index(5); e < count; ++e) {
      Shape shape{rdim(rng), rdim(rng)};
      std::vector<double> values(shape_numel(shape));
      for (auto& v : values) {
        const std::uint64_t bits = rng.next_u64();
        std::memcpy(&v, &bits, sizeof v);
      }
      values[0] = -0.0;
      ckpt.entries.push_back({"tensor." + std::to_string(e), shape, values});
    }
    const auto bytes = serialize_checkpoint(ckpt);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(back.config_hash == ckpt.config_hash);
    REQUIRE(back.entries.size() == ckpt.entries.size());
    for (std::size_t e = 0; e < ckpt.entries.size(); ++e) {
      CHECK(back.entries[e].name == ckpt.entries[e].name);
      CHECK(back.entries[e].shape == ckpt.entries[e].shape);
      CHECK(std::memcmp(back.entries[e].values.data(), ckpt.entries[e].values.data(),
                        ckpt.entries[e].values.size() * sizeof(double)) == 0);
    }
    CHECK(serialize_checkpoint(back) == bytes);
  }
}

TEST_CASE("checkpoint rejects damaged containers") {
  Checkpoint ckpt;
  ckpt.entries.push_back({"w", {2}, {1.0, 2.0}});
  auto bytes = serialize_checkpoint(ckpt);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS(deserialize_checkpoint(truncated));
  auto bad_magic = bytes;
  bad_magic[0] = 'Z';
  CHECK_THROWS(deserialize_checkpoint(bad_magic));
  auto bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS(deserialize_checkpoint(bad_version));

  const auto path = (std::filesystem::temp_directory_path() / "xphrase_ckpt_test.bin").string();
  save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.entries[0].values == ckpt.entries[0].values);
  std::filesystem::remove(path);

  ParameterList params{{"w", Tensor::zeros({2})}};
  restore_parameters(loaded, "", params);
  CHECK(params[0].tensor.values()[1] == 2.0);
  ParameterList wrong{{"w", Tensor::zeros({3})}};
  CHECK_THROWS_AS(restore_parameters(loaded, "", wrong), ShapeError);
}
