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

#include "xphrase/bytes.hpp"
#include "xphrase/tensor.hpp"

// Layout (all integers little-endian):
//   magic "XPHRCKPT" | u32 version | u64 config_hash | u32 entry_count
//   per entry: u32 name_len | name bytes | u32 ndim | u64 dims[ndim] | f64 values[numel]

namespace xphrase {
namespace {

constexpr char kMagic[8] = {'X', 'P', 'H', 'R', 'C', 'K', 'P', 'T'};

using bytes::put;

class Reader : public bytes::Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : bytes::Reader(data, "checkpoint") {}
};

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.values.size() != shape_numel(e.shape)) {
      throw ShapeError("checkpoint", "entry '" + e.name + "' has inconsistent shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) put<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.values.data());
    out.insert(out.end(), p, p + e.values.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_hash = in.get<std::uint64_t>();
  const auto count = in.get<std::uint32_t>();
  ckpt.entries.resize(count);
  for (auto& e : ckpt.entries) {
    e.name = in.get_string(in.get<std::uint32_t>());
    const auto ndim = in.get<std::uint32_t>();
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    e.values.resize(shape_numel(e.shape));
    in.get_doubles(e.values.data(), e.values.size());
  }
  if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  bytes::write_file(path, serialize_checkpoint(ckpt), "checkpoint");
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(bytes::read_file(path, "checkpoint")); }

void append_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterList& params) {
  for (const auto& p : params) {
    ckpt.entries.push_back({prefix + p.name, p.tensor.shape(),
                            std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())});
  }
}

void restore_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterList& params) {
  for (auto& p : params) {
    const CheckpointEntry* e = ckpt.find(prefix + p.name);
    if (e == nullptr) throw std::runtime_error("checkpoint: missing entry '" + prefix + p.name + "'");
    if (e->shape != p.tensor.shape()) throw ShapeError("checkpoint(" + p.name + ")", e->shape, p.tensor.shape());
    std::copy(e->values.begin(), e->values.end(), p.tensor.mutable_values().begin());
  }
}

}  // namespace xphrase
