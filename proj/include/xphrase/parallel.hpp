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
#include <functional>

namespace xphrase {

// Process-wide worker pool used by the row-parallel tensor kernels.
//
// Work is split into contiguous index ranges; every index is processed by
// exactly one worker with the same arithmetic as the serial path, so results
// never depend on the thread count.
void set_num_threads(std::size_t n);  // 0 = hardware concurrency
std::size_t num_threads();

// Calls body(begin, end) over disjoint ranges covering [0, n). Runs inline
// when n is small, when one thread is configured, or when called from a
// worker thread.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace xphrase
