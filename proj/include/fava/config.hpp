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

#ifndef FAVA_CONFIG_HPP_
#define FAVA_CONFIG_HPP_

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fava/data.hpp"
#include "fava/model.hpp"

namespace fava::config {

// Flat "key = value" configuration. '#' starts a comment; blank lines are
// ignored. Later assignments win.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Copies every entry of `other` over this one.
  void merge(const KeyValues& other);
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Sorted "key = value" lines; parse(dump()) reproduces the table.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every recognized key with its default.
const std::vector<KeySpec>& known_keys();
bool is_known_key(const std::string& key);
KeyValues defaults();

// Defaults, then the file (if any), then explicit overrides. Unknown keys
// are rejected.
KeyValues resolve(const std::filesystem::path* file, const KeyValues& overrides);

data::CorpusSpec corpus_spec(const KeyValues& kv);
// Preset sizes with any explicit model overrides applied.
model::ModelConfig model_config(const KeyValues& kv);

std::string model_config_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const std::string& text);

}  // namespace fava::config

#endif  // FAVA_CONFIG_HPP_
