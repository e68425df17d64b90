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

#include "fava/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fava/config.hpp"
#include "json.hpp"

namespace fava::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

uint64_t fnv1a(const void* data, size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

OptimizerState zero_state(const ParameterTree<float>& params) {
  OptimizerState s;
  for (const auto& [name, t] : params.tensors()) {
    s.m.add(name, t.shape, MatrixF::Zero(t.value.rows(), t.value.cols()));
    s.v.add(name, t.shape, MatrixF::Zero(t.value.rows(), t.value.cols()));
  }
  return s;
}

namespace {

std::string hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Appends every tensor to `blob` and returns the index entries.
json write_blob(const ParameterTree<float>& tree, std::vector<char>& blob) {
  json index = json::array();
  for (const auto& [name, t] : tree.tensors()) {
    const size_t bytes = sizeof(float) * static_cast<size_t>(t.value.size());
    json e;
    e["name"] = name;
    e["dtype"] = "f32";
    e["shape"] = t.shape;
    e["offset"] = blob.size();
    e["bytes"] = bytes;
    e["checksum"] = hex(fnv1a(t.value.data(), bytes));
    const auto* p = reinterpret_cast<const char*>(t.value.data());
    blob.insert(blob.end(), p, p + bytes);
    index.push_back(std::move(e));
  }
  return index;
}

ParameterTree<float> read_blob(const json& index, const std::vector<char>& blob, const std::string& file) {
  ParameterTree<float> tree;
  std::vector<bool> covered(blob.size(), false);
  for (const auto& e : index) {
    const std::string name = e.at("name").get<std::string>();
    if (e.at("dtype").get<std::string>() != "f32") throw Error(file + ": tensor " + name + ": unsupported dtype");
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    const size_t offset = e.at("offset").get<size_t>();
    const size_t bytes = e.at("bytes").get<size_t>();
    const auto [rows, cols] = matrix_dims(shape);
    if (bytes != sizeof(float) * static_cast<size_t>(rows * cols))
      throw Error(file + ": tensor " + name + ": byte count does not match shape");
    if (offset + bytes > blob.size()) throw Error(file + ": tensor " + name + ": blob truncated");
    for (size_t i = offset; i < offset + bytes; ++i) {
      if (covered[i]) throw Error(file + ": tensor " + name + ": overlaps another tensor");
      covered[i] = true;
    }
    if (hex(fnv1a(blob.data() + offset, bytes)) != e.at("checksum").get<std::string>())
      throw Error(file + ": tensor " + name + ": checksum mismatch");
    MatrixF m(rows, cols);
    std::memcpy(m.data(), blob.data() + offset, bytes);
    tree.add(name, shape, std::move(m));
  }
  for (bool c : covered) {
    if (!c) throw Error(file + ": bytes not covered by the index");
  }
  return tree;
}

void write_file(const fs::path& path, const void* data, size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

MatrixF row_matrix(const RowVector<float>& v) { return MatrixF(v); }

Checkpoint load_impl(const fs::path& dir, bool with_optimizer) {
  json meta;
  try {
    const auto text = read_file(dir / "meta.json");
    meta = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw Error((dir / "meta.json").string() + ": " + e.what());
  }
  try {
    Checkpoint c;
    c.step = meta.at("step");
    c.mode = meta.at("mode");
    c.seed = meta.at("seed");
    c.model = config::model_config_from_json(meta.at("model").dump());
    c.resolved_config = meta.at("config");
    c.skipped_steps = meta.value("skipped_steps", int64_t{0});
    for (const auto& e : meta.at("evals")) c.evals.push_back({e.at("step"), e.at("wer_clean"), e.at("wer_noisy")});

    ParameterTree<float> all = read_blob(meta.at("tensors"), read_file(dir / "tensors.bin"), "tensors.bin");
    for (auto& [name, t] : all.tensors()) {
      const std::string root = root_of(name);
      if (root == kQuantizerRoot || root == kFrozenRoot) continue;
      c.params.add(name, t.shape, t.value);
    }
    if (meta.contains("quantizer")) {
      const auto& q = meta.at("quantizer");
      bestrq::RandomQuantizer rq;
      rq.seed = q.at("seed");
      rq.input_dim = q.at("input_dim");
      rq.code_dim = q.at("code_dim");
      rq.codebook_size = q.at("codebook_size");
      rq.projection = all.value("quantizer/projection");
      rq.codebook = all.value("quantizer/codebook");
      rq.input_mean = all.value("quantizer/input_mean").row(0);
      rq.input_std = all.value("quantizer/input_std").row(0);
      c.quantizer = std::move(rq);
    }
    if (all.contains("frozen/feature_mean")) {
      data::FeatureStats s;
      s.mean = all.value("frozen/feature_mean").row(0);
      s.stdev = all.value("frozen/feature_std").row(0);
      c.feature_stats = std::move(s);
    }
    if (with_optimizer) {
      const auto& o = meta.at("optimizer");
      c.optimizer.step = o.at("step");
      const ParameterTree<float> moments = read_blob(o.at("tensors"), read_file(dir / "optimizer.bin"), "optimizer.bin");
      for (const auto& [name, t] : moments.tensors()) {
        if (name.starts_with("m/")) c.optimizer.m.add(name.substr(2), t.shape, t.value);
        else if (name.starts_with("v/")) c.optimizer.v.add(name.substr(2), t.shape, t.value);
        else throw Error("optimizer.bin: unexpected tensor " + name);
      }
      if (c.optimizer.m.size() != c.params.size() || c.optimizer.v.size() != c.params.size())
        throw Error("optimizer state does not cover every parameter");
    }
    return c;
  } catch (const json::exception& e) {
    throw Error((dir / "meta.json").string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error("checkpoint " + dir.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& c) {
  ParameterTree<float> all;
  for (const auto& [name, t] : c.params.tensors()) {
    const std::string root = root_of(name);
    if (root == kQuantizerRoot || root == kFrozenRoot) throw Error("parameter name in a reserved namespace: " + name);
    all.add(name, t.shape, t.value);
  }
  json meta;
  meta["format"] = "fava-checkpoint-1";
  meta["step"] = c.step;
  meta["mode"] = c.mode;
  meta["preset"] = model::to_string(c.model.preset);
  meta["seed"] = c.seed;
  meta["model"] = json::parse(config::model_config_json(c.model));
  meta["config"] = c.resolved_config;
  meta["skipped_steps"] = c.skipped_steps;
  // Every random draw is keyed by (seed, stream, step), so the step is the
  // whole generator cursor.
  meta["rng_cursor"] = c.step;
  meta["evals"] = json::array();
  for (const auto& e : c.evals) meta["evals"].push_back({{"step", e.step}, {"wer_clean", e.wer_clean}, {"wer_noisy", e.wer_noisy}});
  if (c.quantizer) {
    const auto& q = *c.quantizer;
    meta["quantizer"] = {{"seed", q.seed}, {"input_dim", q.input_dim}, {"code_dim", q.code_dim},
                         {"codebook_size", q.codebook_size}};
    all.add("quantizer/projection", {q.projection.rows(), q.projection.cols()}, q.projection);
    all.add("quantizer/codebook", {q.codebook.rows(), q.codebook.cols()}, q.codebook);
    all.add("quantizer/input_mean", {q.input_mean.size()}, row_matrix(q.input_mean));
    all.add("quantizer/input_std", {q.input_std.size()}, row_matrix(q.input_std));
  }
  if (c.feature_stats) {
    all.add("frozen/feature_mean", {c.feature_stats->mean.size()}, row_matrix(c.feature_stats->mean));
    all.add("frozen/feature_std", {c.feature_stats->stdev.size()}, row_matrix(c.feature_stats->stdev));
  }
  std::vector<char> blob;
  meta["tensors"] = write_blob(all, blob);

  ParameterTree<float> moments;
  for (const auto& [name, t] : c.optimizer.m.tensors()) moments.add("m/" + name, t.shape, t.value);
  for (const auto& [name, t] : c.optimizer.v.tensors()) moments.add("v/" + name, t.shape, t.value);
  std::vector<char> opt_blob;
  meta["optimizer"] = {{"step", c.optimizer.step}, {"tensors", write_blob(moments, opt_blob)}};

  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_file(tmp / "tensors.bin", blob.data(), blob.size());
  write_file(tmp / "optimizer.bin", opt_blob.data(), opt_blob.size());
  const std::string text = meta.dump(1) + "\n";
  write_file(tmp / "meta.json", text.data(), text.size());
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const fs::path& dir) { return load_impl(dir, true); }

Checkpoint load_params(const fs::path& dir) { return load_impl(dir, false); }

}  // namespace fava::ckpt
