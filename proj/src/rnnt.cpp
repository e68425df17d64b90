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

#include "fava/rnnt.hpp"

#include <sstream>

namespace fava::rnnt {

int Vocabulary::id(const std::string& symbol) const {
  for (int i = 1; i < size(); ++i) {
    if (symbols[i] == symbol) return i;
  }
  throw Error("unknown symbol: " + symbol);
}

std::vector<int> Vocabulary::encode(const std::string& transcript) const {
  std::istringstream is(transcript);
  std::vector<int> ids;
  std::string tok;
  while (is >> tok) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int y : ids) {
    if (y <= kBlank || y >= size()) throw Error("decode: invalid label id");
    if (!out.empty()) out += ' ';
    out += symbols[y];
  }
  return out;
}

Vocabulary Vocabulary::letters(int num_symbols) {
  if (num_symbols < 1 || num_symbols > 26) throw Error("letters: between 1 and 26 symbols");
  Vocabulary v;
  v.symbols.push_back("<blank>");
  for (int i = 0; i < num_symbols; ++i) v.symbols.push_back(std::string(1, static_cast<char>('a' + i)));
  return v;
}

}  // namespace fava::rnnt
