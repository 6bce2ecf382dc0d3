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

#pragma once

#include <cstddef>
#include <string_view>

namespace xphrase::kernels {

// Instruction set used by the dense inner loops. `kAuto` picks the widest
// variant the running CPU supports.
enum class Isa { kAuto, kScalar, kAvx2 };

// Function table for the data-parallel inner loops. Every variant computes
// the same mathematical result; SIMD variants may differ from the scalar
// reference by floating-point reassociation only.
struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = alpha * x
  void (*scale)(double alpha, const double* x, double* y, std::size_t n);
  double (*sum_squares)(const double* x, std::size_t n);
  // y += x
  void (*add)(const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();
// Returns nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();
bool cpu_supports_avx2();

// Currently active table. Selected once from XPHRASE_ISA (scalar|avx2|auto)
// on first use; `select` overrides it.
const KernelTable& active();
// Throws std::runtime_error when the requested variant is unavailable.
void select(Isa isa);
std::string_view isa_name(Isa isa);

}  // namespace xphrase::kernels
