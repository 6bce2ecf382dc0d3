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

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xphrase/kernels.hpp"
#include "xphrase/parallel.hpp"
#include "xphrase/tensor.hpp"

namespace xphrase {
namespace {

using detail::Node;

Tensor result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool record = false;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) record = record || t->requires_grad();
  }
  if (record) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_2d(const std::string& op, const Tensor& t) {
  if (t.shape().size() != 2) throw ShapeError(op, "expected 2-D operand, got " + shape_string(t.shape()));
}

void require_same(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

// Rough per-chunk work threshold so tiny ops stay serial.
std::size_t chunk_for(std::size_t work_per_item) {
  constexpr std::size_t kTarget = 16384;
  return std::max<std::size_t>(1, kTarget / std::max<std::size_t>(1, work_per_item));
}

template <typename F>
Tensor unary(const Tensor& a, F&& forward, std::function<void(Node&)> (*make_bw)(Node*)) {
  std::vector<double> out(a.numel());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return result(a.shape(), std::move(out), {&a}, make_bw(a.node().get()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  const auto& kt = kernels::active();
  parallel_for(m, chunk_for(k * n), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* row = out.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double s = A[i * k + p];
        if (s != 0.0) kt.axpy(s, B + p * n, row, n);
      }
    }
  });
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return result({m, n}, std::move(out), {&a, &b}, [na, nb, m, k, n](Node& self) {
    const auto& kt = kernels::active();
    const double* G = self.grad.data();
    if (na->requires_grad) {
      double* dA = na->grad.data();
      const double* B = nb->value.data();
      parallel_for(m, chunk_for(k * n), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
          for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += kt.dot(G + i * n, B + p * n, n);
        }
      });
    }
    if (nb->requires_grad) {
      double* dB = nb->grad.data();
      const double* A = na->value.data();
      parallel_for(k, chunk_for(m * n), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = lo; p < hi; ++p) {
          for (std::size_t i = 0; i < m; ++i) {
            const double s = A[i * k + p];
            if (s != 0.0) kt.axpy(s, G + i * n, dB + p * n, n);
          }
        }
      });
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d("matmul_nt", a);
  require_2d("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw ShapeError("matmul_nt", a.shape(), b.shape());
  std::vector<double> out(m * n);
  const double* A = a.values().data();
  const double* B = b.values().data();
  const auto& kt = kernels::active();
  parallel_for(m, chunk_for(k * n), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = kt.dot(A + i * k, B + j * k, k);
    }
  });
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return result({m, n}, std::move(out), {&a, &b}, [na, nb, m, k, n](Node& self) {
    const auto& kt = kernels::active();
    const double* G = self.grad.data();
    if (na->requires_grad) {
      double* dA = na->grad.data();
      const double* B = nb->value.data();
      parallel_for(m, chunk_for(k * n), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double s = G[i * n + j];
            if (s != 0.0) kt.axpy(s, B + j * k, dA + i * k, k);
          }
        }
      });
    }
    if (nb->requires_grad) {
      double* dB = nb->grad.data();
      const double* A = na->value.data();
      parallel_for(n, chunk_for(k * m), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t j = lo; j < hi; ++j) {
          for (std::size_t i = 0; i < m; ++i) {
            const double s = G[i * n + j];
            if (s != 0.0) kt.axpy(s, A + i * k, dB + j * k, k);
          }
        }
      });
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto in = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  Node* na = a.node().get();
  return result({n, m}, std::move(out), {&a}, [na, m, n](Node& self) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  kernels::active().add(b.values().data(), out.data(), out.size());
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return result(a.shape(), std::move(out), {&a, &b}, [na, nb](Node& self) {
    const auto& kt = kernels::active();
    if (na->requires_grad) kt.add(self.grad.data(), na->grad.data(), self.grad.size());
    if (nb->requires_grad) kt.add(self.grad.data(), nb->grad.data(), self.grad.size());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return result(a.shape(), std::move(out), {&a, &b}, [na, nb](Node& self) {
    const auto& kt = kernels::active();
    if (na->requires_grad) kt.add(self.grad.data(), na->grad.data(), self.grad.size());
    if (nb->requires_grad) kt.axpy(-1.0, self.grad.data(), nb->grad.data(), self.grad.size());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return result(a.shape(), std::move(out), {&a, &b}, [na, nb](Node& self) {
    const std::size_t n = self.grad.size();
    if (na->requires_grad)
      for (std::size_t i = 0; i < n; ++i) na->grad[i] += self.grad[i] * nb->value[i];
    if (nb->requires_grad)
      for (std::size_t i = 0; i < n; ++i) nb->grad[i] += self.grad[i] * na->value[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  kernels::active().scale(factor, a.values().data(), out.data(), out.size());
  Node* na = a.node().get();
  return result(a.shape(), std::move(out), {&a}, [na, factor](Node& self) {
    kernels::active().axpy(factor, self.grad.data(), na->grad.data(), self.grad.size());
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_2d("add_bias", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n || bias.shape().size() != 1) throw ShapeError("add_bias", a.shape(), bias.shape());
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto& kt = kernels::active();
  for (std::size_t i = 0; i < m; ++i) kt.add(bias.values().data(), out.data() + i * n, n);
  Node* na = a.node().get();
  Node* nb = bias.node().get();
  return result({m, n}, std::move(out), {&a, &bias}, [na, nb, m, n](Node& self) {
    const auto& kt = kernels::active();
    if (na->requires_grad) kt.add(self.grad.data(), na->grad.data(), self.grad.size());
    if (nb->requires_grad)
      for (std::size_t i = 0; i < m; ++i) kt.add(self.grad.data() + i * n, nb->grad.data(), n);
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x < 0.0 ? 0.0 : x; }, [](Node* na) {
    return std::function<void(Node&)>([na](Node& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (na->value[i] > 0.0) na->grad[i] += self.grad[i];
    });
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  return unary(a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
               [](Node* na) {
                 return std::function<void(Node&)>([na](Node& self) {
                   constexpr double kInvSqrt2 = 0.70710678118654752440;
                   constexpr double kInvSqrt2Pi = 0.39894228040143267794;
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double x = na->value[i];
                     const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                     const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                     na->grad[i] += self.grad[i] * (cdf + x * pdf);
                   }
                 });
               });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](Node* na) {
    return std::function<void(Node&)>([na](Node& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i] / na->value[i];
    });
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_2d("softmax_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto in = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = in.data() + i * n;
    double* y = out.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  Node* na = a.node().get();
  return result({m, n}, std::move(out), {&a}, [na, m, n](Node& self) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double inner = 0.0;
      for (std::size_t j = 0; j < n; ++j) inner += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += y[j] * (g[j] - inner);
    }
  });
}

Tensor l2_normalize_rows(const Tensor& a) {
  require_2d("l2_normalize_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  const auto in = a.values();
  const auto& kt = kernels::active();
  for (std::size_t i = 0; i < m; ++i) {
    const double norm = std::sqrt(kt.sum_squares(in.data() + i * n, n));
    if (!(norm > 0.0)) throw ShapeError("l2_normalize_rows", "row " + std::to_string(i) + " has zero norm");
    norms[i] = norm;
    // Divide rather than multiply by the reciprocal: closer to unit norm.
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = in[i * n + j] / norm;
  }
  Node* na = a.node().get();
  return result({m, n}, std::move(out), {&a}, [na, m, n, norms = std::move(norms)](Node& self) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double inner = 0.0;
      for (std::size_t j = 0; j < n; ++j) inner += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += (g[j] - y[j] * inner) / norms[i];
    }
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  require_2d("mean_axis", a);
  if (axis > 1) throw ShapeError("mean_axis", "axis must be 0 or 1");
  const std::size_t m = a.rows(), n = a.cols();
  const auto in = a.values();
  const std::size_t out_n = axis == 0 ? n : m;
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += in[i * n + j];
  const double denom = static_cast<double>(axis == 0 ? m : n);
  for (double& v : out) v /= denom;
  Node* na = a.node().get();
  return result({out_n}, std::move(out), {&a}, [na, m, n, axis, denom](Node& self) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += self.grad[axis == 0 ? j : i] / denom;
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Node* na = a.node().get();
  return result({1}, {total}, {&a}, [na](Node& self) {
    const double g = self.grad[0];
    for (double& d : na->grad) d += g;
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_2d("gather_rows", table);
  const std::size_t v = table.rows(), h = table.cols();
  if (indices.empty()) throw ShapeError("gather_rows", "empty index list");
  std::vector<double> out(indices.size() * h);
  const auto in = table.values();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= v) {
      throw ShapeError("gather_rows", "index " + std::to_string(indices[r]) + " out of range for " +
                                          shape_string(table.shape()));
    }
    std::copy_n(in.data() + indices[r] * h, h, out.data() + r * h);
  }
  Node* nt = table.node().get();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return result({indices.size(), h}, std::move(out), {&table}, [nt, h, idx = std::move(idx)](Node& self) {
    const auto& kt = kernels::active();
    for (std::size_t r = 0; r < idx.size(); ++r) kt.add(self.grad.data() + r * h, nt->grad.data() + idx[r] * h, h);
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d("slice_rows", a);
  const std::size_t n = a.cols();
  if (begin >= end || end > a.rows()) {
    throw ShapeError("slice_rows", "invalid range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                       ") for " + shape_string(a.shape()));
  }
  std::vector<double> out(a.values().begin() + begin * n, a.values().begin() + end * n);
  Node* na = a.node().get();
  return result({end - begin, n}, std::move(out), {&a}, [na, begin, n](Node& self) {
    kernels::active().add(self.grad.data(), na->grad.data() + begin * n, self.grad.size());
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_2d("concat_rows", a);
  require_2d("concat_rows", b);
  if (a.cols() != b.cols()) throw ShapeError("concat_rows", a.shape(), b.shape());
  std::vector<double> out(a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t split = a.numel();
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return result({a.rows() + b.rows(), a.cols()}, std::move(out), {&a, &b}, [na, nb, split](Node& self) {
    const auto& kt = kernels::active();
    if (na->requires_grad) kt.add(self.grad.data(), na->grad.data(), split);
    if (nb->requires_grad) kt.add(self.grad.data() + split, nb->grad.data(), self.grad.size() - split);
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  require_2d("layer_norm_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n) throw ShapeError("layer_norm_rows", x.shape(), gain.shape());
  if (bias.numel() != n) throw ShapeError("layer_norm_rows", x.shape(), bias.shape());
  std::vector<double> out(m * n);
  std::vector<double> normalized(m * n);
  std::vector<double> inv_std(m);
  const auto in = x.values();
  const auto g = gain.values();
  const auto b = bias.values();
  parallel_for(m, chunk_for(4 * n), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* row = in.data() + i * n;
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += row[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + epsilon);
      inv_std[i] = is;
      for (std::size_t j = 0; j < n; ++j) {
        const double xh = (row[j] - mean) * is;
        normalized[i * n + j] = xh;
        out[i * n + j] = g[j] * xh + b[j];
      }
    }
  });
  Node* nx = x.node().get();
  Node* ng = gain.node().get();
  Node* nb = bias.node().get();
  return result({m, n}, std::move(out), {&x, &gain, &bias},
                [nx, ng, nb, m, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
                  const double* G = self.grad.data();
                  if (ng->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) ng->grad[j] += G[i * n + j] * normalized[i * n + j];
                  if (nb->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) nb->grad[j] += G[i * n + j];
                  if (!nx->requires_grad) return;
                  const double* gv = ng->value.data();
                  parallel_for(m, chunk_for(6 * n), [&](std::size_t lo, std::size_t hi) {
                    std::vector<double> dxh(n);
                    for (std::size_t i = lo; i < hi; ++i) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        dxh[j] = G[i * n + j] * gv[j];
                        mean_d += dxh[j];
                        mean_dx += dxh[j] * normalized[i * n + j];
                      }
                      mean_d /= static_cast<double>(n);
                      mean_dx /= static_cast<double>(n);
                      for (std::size_t j = 0; j < n; ++j) {
                        nx->grad[i * n + j] += inv_std[i] * (dxh[j] - mean_d - normalized[i * n + j] * mean_dx);
                      }
                    }
                  });
                });
}

Tensor dropout(const Tensor& x, double rate, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) throw ShapeError("dropout", "rate must lie in [0, 1)");
  if (rng == nullptr || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& v : mask) v = rng->uniform() >= rate ? keep_scale : 0.0;
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  Node* nx = x.node().get();
  return result(x.shape(), std::move(out), {&x}, [nx, mask = std::move(mask)](Node& self) {
    for (std::size_t i = 0; i < mask.size(); ++i) nx->grad[i] += self.grad[i] * mask[i];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_2d("softmax_cross_entropy", logits);
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    throw ShapeError("softmax_cross_entropy", "expected " + std::to_string(m) + " targets, got " +
                                                  std::to_string(targets.size()));
  }
  std::vector<double> probs(m * n);
  double total = 0.0;
  const auto in = logits.values();
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) throw ShapeError("softmax_cross_entropy", "target column out of range");
    const double* x = in.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (probs[i * n + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += std::log(z) + mx - x[targets[i]];
  }
  Node* nl = logits.node().get();
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return result({1}, {total}, {&logits}, [nl, m, n, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        nl->grad[i * n + j] += g * (probs[i * n + j] - (j == tgt[i] ? 1.0 : 0.0));
      }
    }
  });
}

Tensor segmented_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           std::span<const Segment> segments, std::size_t num_heads) {
  require_2d("segmented_attention", q);
  require_same("segmented_attention", q, k);
  require_same("segmented_attention", q, v);
  const std::size_t t_total = q.rows(), width = q.cols();
  if (num_heads == 0 || width % num_heads != 0) {
    throw ShapeError("segmented_attention", "width " + std::to_string(width) + " not divisible by " +
                                                 std::to_string(num_heads) + " heads");
  }
  std::size_t covered = 0;
  std::vector<std::size_t> prob_offset(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].offset != covered || segments[s].length == 0) {
      throw ShapeError("segmented_attention", "segments must tile the rows contiguously");
    }
    covered += segments[s].length;
  }
  if (covered != t_total) throw ShapeError("segmented_attention", "segments do not cover all rows");
  std::size_t acc = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    prob_offset[s] = acc;
    acc += segments[s].length * segments[s].length * num_heads;
  }
  const std::size_t hd = width / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> probs(acc);
  std::vector<double> out(t_total * width, 0.0);
  const double* Q = q.values().data();
  const double* K = k.values().data();
  const double* V = v.values().data();
  const auto& kt = kernels::active();
  std::vector<Segment> segs(segments.begin(), segments.end());
  parallel_for(segs.size(), chunk_for(segs.empty() ? 1 : 2 * width * segs[0].length * segs[0].length),
               [&](std::size_t lo, std::size_t hi) {
                 for (std::size_t s = lo; s < hi; ++s) {
                   const std::size_t off = segs[s].offset, len = segs[s].length;
                   for (std::size_t h = 0; h < num_heads; ++h) {
                     double* P = probs.data() + prob_offset[s] + h * len * len;
                     for (std::size_t i = 0; i < len; ++i) {
                       double* prow = P + i * len;
                       double mx = -INFINITY;
                       for (std::size_t j = 0; j < len; ++j) {
                         prow[j] = inv_sqrt * kt.dot(Q + (off + i) * width + h * hd, K + (off + j) * width + h * hd, hd);
                         mx = std::max(mx, prow[j]);
                       }
                       double z = 0.0;
                       for (std::size_t j = 0; j < len; ++j) z += (prow[j] = std::exp(prow[j] - mx));
                       for (std::size_t j = 0; j < len; ++j) prow[j] /= z;
                       double* orow = out.data() + (off + i) * width + h * hd;
                       for (std::size_t j = 0; j < len; ++j) kt.axpy(prow[j], V + (off + j) * width + h * hd, orow, hd);
                     }
                   }
                 }
               });
  Node* nq = q.node().get();
  Node* nk = k.node().get();
  Node* nv = v.node().get();
  return result({t_total, width}, std::move(out), {&q, &k, &v},
                [nq, nk, nv, segs = std::move(segs), prob_offset = std::move(prob_offset), probs = std::move(probs),
                 num_heads, hd, width, inv_sqrt](Node& self) {
                  const auto& kt = kernels::active();
                  const double* G = self.grad.data();
                  const double* Q = nq->value.data();
                  const double* K = nk->value.data();
                  const double* V = nv->value.data();
                  const bool want_q = nq->requires_grad, want_k = nk->requires_grad, want_v = nv->requires_grad;
                  parallel_for(segs.size(), 1, [&](std::size_t lo, std::size_t hi) {
                    std::vector<double> dp;
                    for (std::size_t s = lo; s < hi; ++s) {
                      const std::size_t off = segs[s].offset, len = segs[s].length;
                      dp.resize(len);
                      for (std::size_t h = 0; h < num_heads; ++h) {
                        const double* P = probs.data() + prob_offset[s] + h * len * len;
                        for (std::size_t i = 0; i < len; ++i) {
                          const double* prow = P + i * len;
                          const double* grow = G + (off + i) * width + h * hd;
                          double inner = 0.0;
                          for (std::size_t j = 0; j < len; ++j) {
                            dp[j] = kt.dot(grow, V + (off + j) * width + h * hd, hd);
                            inner += dp[j] * prow[j];
                            if (want_v) kt.axpy(prow[j], grow, nv->grad.data() + (off + j) * width + h * hd, hd);
                          }
                          for (std::size_t j = 0; j < len; ++j) {
                            const double ds = prow[j] * (dp[j] - inner) * inv_sqrt;
                            if (ds == 0.0) continue;
                            if (want_q) kt.axpy(ds, K + (off + j) * width + h * hd, nq->grad.data() + (off + i) * width + h * hd, hd);
                            if (want_k) kt.axpy(ds, Q + (off + i) * width + h * hd, nk->grad.data() + (off + j) * width + h * hd, hd);
                          }
                        }
                      }
                    }
                  });
                });
}

Tensor pool_rows(const Tensor& x, const std::vector<std::vector<WeightedRow>>& pools) {
  require_2d("pool_rows", x);
  const std::size_t rows = x.rows(), n = x.cols();
  if (pools.empty()) throw ShapeError("pool_rows", "no pools given");
  std::vector<double> out(pools.size() * n, 0.0);
  const auto& kt = kernels::active();
  const double* X = x.values().data();
  for (std::size_t p = 0; p < pools.size(); ++p) {
    if (pools[p].empty()) throw ShapeError("pool_rows", "pool " + std::to_string(p) + " is empty");
    for (const auto& wr : pools[p]) {
      if (wr.row >= rows) throw ShapeError("pool_rows", "row " + std::to_string(wr.row) + " out of range");
      kt.axpy(wr.weight, X + wr.row * n, out.data() + p * n, n);
    }
  }
  Node* nx = x.node().get();
  return result({pools.size(), n}, std::move(out), {&x}, [nx, n, pools](Node& self) {
    const auto& kt = kernels::active();
    for (std::size_t p = 0; p < pools.size(); ++p)
      for (const auto& wr : pools[p]) kt.axpy(wr.weight, self.grad.data() + p * n, nx->grad.data() + wr.row * n, n);
  });
}

}  // namespace xphrase
