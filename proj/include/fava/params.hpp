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

#ifndef FAVA_PARAMS_HPP_
#define FAVA_PARAMS_HPP_

#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "fava/common.hpp"

namespace fava {

// Logical shape plus a 2-D view: rows = product of all dims but the last,
// cols = last dim (a 1-D tensor is a single row).
template <typename Scalar>
struct Tensor {
  std::vector<int64_t> shape;
  Matrix<Scalar> value;

  int64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
  }
};

inline std::pair<Eigen::Index, Eigen::Index> matrix_dims(const std::vector<int64_t>& shape) {
  if (shape.empty()) return {1, 1};
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(shape.back())};
}

inline std::string root_of(const std::string& name) { return name.substr(0, name.find('/')); }

// Named tensors grouped by root (the prefix before the first '/').
template <typename Scalar>
class ParameterTree {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  void add(const std::string& name, std::vector<int64_t> shape, Matrix<Scalar> value) {
    const auto [r, c] = matrix_dims(shape);
    if (value.rows() != r || value.cols() != c) throw Error("parameter " + name + ": value does not match shape");
    if (!tensors_.emplace(name, Tensor<Scalar>{std::move(shape), std::move(value)}).second)
      throw Error("duplicate parameter name: " + name);
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor<Scalar>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("missing parameter: " + name);
    return it->second;
  }
  Tensor<Scalar>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("missing parameter: " + name);
    return it->second;
  }
  const Matrix<Scalar>& value(const std::string& name) const { return at(name).value; }

  const Map& tensors() const { return tensors_; }
  Map& tensors() { return tensors_; }
  size_t size() const { return tensors_.size(); }

  std::set<std::string> roots() const {
    std::set<std::string> out;
    for (const auto& [name, _] : tensors_) out.insert(root_of(name));
    return out;
  }
  bool has_root(const std::string& root) const { return roots().count(root) != 0; }

  void erase_root(const std::string& root) {
    std::erase_if(tensors_, [&](const auto& kv) { return root_of(kv.first) == root; });
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
  }
  int64_t count(const std::string& root) const {
    int64_t n = 0;
    for (const auto& [name, t] : tensors_) {
      if (root_of(name) == root) n += t.numel();
    }
    return n;
  }

  template <typename Other>
  ParameterTree<Other> cast() const {
    ParameterTree<Other> out;
    for (const auto& [name, t] : tensors_) out.add(name, t.shape, t.value.template cast<Other>());
    return out;
  }

  bool all_finite() const {
    for (const auto& [_, t] : tensors_) {
      if (!t.value.allFinite()) return false;
    }
    return true;
  }

  bool operator==(const ParameterTree& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    for (const auto& [name, t] : tensors_) {
      auto it = o.tensors_.find(name);
      if (it == o.tensors_.end() || it->second.shape != t.shape) return false;
      if (std::memcmp(t.value.data(), it->second.value.data(), sizeof(Scalar) * t.value.size()) != 0) return false;
    }
    return true;
  }

 private:
  Map tensors_;
};

}  // namespace fava

#endif  // FAVA_PARAMS_HPP_
