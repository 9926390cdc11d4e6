// Copyright 2026 The simulst Authors.
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

// Flat key=value experiment configuration shared by every command.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "simulst/data.h"
#include "simulst/model.h"
#include "simulst/simul.h"
#include "simulst/train.h"

namespace simulst::cli {

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every accepted key, in display order.
const std::vector<KeySpec>& config_schema();

class RunConfig {
 public:
  RunConfig();  // all defaults

  // "key=value" lines; '#' starts a comment. ConfigError names the file and
  // line for unknown keys and malformed lines.
  void load_file(const std::filesystem::path& path);
  // One "key=value" override.
  void set(std::string_view assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  // Comma-separated sizes; "inf" maps to kWaitAll.
  std::vector<std::size_t> get_size_list(const std::string& key) const;

  SyntheticTaskConfig synthetic() const;
  // Vocabulary sizes and feature dimension come from the data.
  ModelConfig model(std::size_t d_feat, std::size_t source_vocab, std::size_t target_vocab) const;
  TrainConfig training() const;
  SimulConfig simul(std::size_t k, std::size_t n) const;

  // Checks every value parses and the derived configs validate.
  void validate() const;
  // key=value lines for every key, in schema order.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

// The schema as a help table.
std::string schema_help();

}  // namespace simulst::cli
