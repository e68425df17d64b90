// Copyright 2026 The FAVA-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fava/data.hpp"

namespace fava::data {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'T', '1'};

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

size_t dtype_size(DType t) {
  switch (t) {
    case DType::kU8:
      return 1;
    case DType::kF32:
    case DType::kI32:
      return 4;
    case DType::kF64:
      return 8;
  }
  throw Error("unknown dtype tag");
}

size_t RawTensor::numel() const {
  size_t n = 1;
  for (uint32_t d : dims) n *= d;
  return n;
}

size_t header_size(size_t rank) { return 4 + 1 + 4 * rank + 1; }

std::vector<unsigned char> encode_tensor(const RawTensor& t) {
  if (t.dims.size() > kMaxRank) throw Error("tensor rank exceeds 4");
  if (t.payload.size() != t.numel() * dtype_size(t.dtype)) throw Error("tensor payload does not match its shape");
  std::vector<unsigned char> out;
  out.reserve(header_size(t.dims.size()) + t.payload.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<unsigned char>(t.dims.size()));
  for (uint32_t d : t.dims) put_u32(out, d);
  out.push_back(static_cast<unsigned char>(t.dtype));
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

RawTensor decode_tensor(std::span<const unsigned char> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error("bad magic in tensor file");
  const size_t rank = bytes[4];
  if (rank > kMaxRank) throw Error("tensor rank exceeds 4");
  if (bytes.size() < header_size(rank)) throw Error("truncated tensor header");
  RawTensor t;
  for (size_t i = 0; i < rank; ++i) t.dims.push_back(get_u32(bytes.data() + 5 + 4 * i));
  const uint8_t tag = bytes[5 + 4 * rank];
  if (tag > 3) throw Error("unknown dtype tag " + std::to_string(tag));
  t.dtype = static_cast<DType>(tag);
  const size_t expected = t.numel() * dtype_size(t.dtype);
  const size_t have = bytes.size() - header_size(rank);
  if (have < expected) throw Error("truncated tensor payload");
  if (have > expected) throw Error("trailing bytes after tensor payload");
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header_size(rank)), bytes.end());
  return t;
}

void write_tensor(const std::filesystem::path& path, const RawTensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

RawTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

RawTensor make_u8(std::vector<uint32_t> dims, std::vector<uint8_t> values) {
  RawTensor t{DType::kU8, std::move(dims), {}};
  if (values.size() != t.numel()) throw Error("make_u8: value count does not match shape");
  t.payload.assign(values.begin(), values.end());
  return t;
}

RawTensor make_f32(std::vector<uint32_t> dims, std::span<const float> values) {
  RawTensor t{DType::kF32, std::move(dims), {}};
  if (values.size() != t.numel()) throw Error("make_f32: value count does not match shape");
  t.payload.resize(values.size() * 4);
  // Payload is little-endian; the supported targets are little-endian too.
  std::memcpy(t.payload.data(), values.data(), t.payload.size());
  return t;
}

std::vector<float> to_f32(const RawTensor& t) {
  std::vector<float> out(t.numel());
  const unsigned char* p = t.payload.data();
  switch (t.dtype) {
    case DType::kU8:
      for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(p[i]);
      break;
    case DType::kF32:
      std::memcpy(out.data(), p, out.size() * 4);
      break;
    case DType::kF64:
      for (size_t i = 0; i < out.size(); ++i) {
        double v;
        std::memcpy(&v, p + 8 * i, 8);
        out[i] = static_cast<float>(v);
      }
      break;
    case DType::kI32:
      for (size_t i = 0; i < out.size(); ++i) {
        int32_t v;
        std::memcpy(&v, p + 4 * i, 4);
        out[i] = static_cast<float>(v);
      }
      break;
  }
  return out;
}

uint8_t unit_to_pixel(float v) {
  const float x = std::round((v + 1.0f) * 127.5f);
  return static_cast<uint8_t>(std::clamp(x, 0.0f, 255.0f));
}

VideoSequence video_from_tensor(const RawTensor& t) {
  if (t.dtype != DType::kU8 || t.dims.size() != 4 || t.dims[3] != 3)
    throw Error("video tensor must be u8 with shape frames x H x W x 3");
  VideoSequence v;
  v.height = static_cast<int>(t.dims[1]);
  v.width = static_cast<int>(t.dims[2]);
  const Eigen::Index cols = static_cast<Eigen::Index>(t.dims[1]) * t.dims[2] * 3;
  v.frames.resize(t.dims[0], cols);
  float* dst = v.frames.data();
  for (size_t i = 0; i < t.payload.size(); ++i) dst[i] = pixel_to_unit(t.payload[i]);
  return v;
}

RawTensor video_to_tensor(const VideoSequence& v) {
  RawTensor t{DType::kU8,
              {static_cast<uint32_t>(v.num_frames()), static_cast<uint32_t>(v.height),
               static_cast<uint32_t>(v.width), 3u},
              {}};
  if (v.frames.cols() != static_cast<Eigen::Index>(v.height) * v.width * 3)
    throw Error("video frame width does not match resolution");
  t.payload.resize(static_cast<size_t>(v.frames.size()));
  const float* src = v.frames.data();
  for (size_t i = 0; i < t.payload.size(); ++i) t.payload[i] = unit_to_pixel(src[i]);
  return t;
}

}  // namespace fava::data
