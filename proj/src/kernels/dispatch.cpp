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

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "xphrase/kernels.hpp"

namespace xphrase::kernels {

#ifndef XPHRASE_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_supports_avx2() {
#if defined(XPHRASE_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* resolve(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &scalar_table();
    case Isa::kAvx2:
      return cpu_supports_avx2() ? avx2_table() : nullptr;
    case Isa::kAuto:
      if (cpu_supports_avx2()) return avx2_table();
      return &scalar_table();
  }
  return nullptr;
}

Isa isa_from_env() {
  const char* env = std::getenv("XPHRASE_ISA");
  if (env == nullptr) return Isa::kAuto;
  const std::string value(env);
  if (value == "scalar") return Isa::kScalar;
  if (value == "avx2") return Isa::kAvx2;
  return Isa::kAuto;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{nullptr};
  return table;
}

}  // namespace

const KernelTable& active() {
  const KernelTable* table = slot().load(std::memory_order_acquire);
  if (table == nullptr) {
    table = resolve(isa_from_env());
    if (table == nullptr) table = &scalar_table();
    slot().store(table, std::memory_order_release);
  }
  return *table;
}

void select(Isa isa) {
  const KernelTable* table = resolve(isa);
  if (table == nullptr) {
    throw std::runtime_error("kernel variant '" + std::string(isa_name(isa)) +
                             "' is not available on this CPU/build");
  }
  slot().store(table, std::memory_order_release);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kAuto:
      return "auto";
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace xphrase::kernels
