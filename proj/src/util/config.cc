// Copyright (c) 2026 Accentfuse Authors
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

#include "util/config.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace af {

namespace {

const std::map<std::string, std::string>& registry() {
  static const std::map<std::string, std::string> kDefaults = {
      // Synthetic corpus.
      {"data.vocab_size", "16"},
      {"data.accents", "4"},
      {"data.feat_dim", "80"},
      {"data.frames_per_token", "4"},
      {"data.len_min", "3"},
      {"data.len_max", "10"},
      {"data.noise_std", "0.1"},
      {"data.accent_offset", "1.0"},
      {"data.accent_band", "8"},
      {"data.token_band", "64"},
      {"data.template_amp", "1.0"},
      {"data.template_seed", "9001"},
      {"data.accent_token_coupling", "false"},
      {"data.accent_code", "band"},  // band | nonlinear
      {"data.train_utts", "512"},
      {"data.dev_utts", "128"},
      {"data.test_utts", "128"},
      {"data.seed", "1234"},
      // Feature pipeline.
      {"features.sample_rate", "16000"},
      {"features.cmvn_per_utterance", "false"},
      {"features.spec_augment", "true"},
      {"features.time_masks", "1"},
      {"features.time_width", "2"},
      {"features.freq_masks", "1"},
      {"features.freq_width", "6"},
      // Model.
      {"model.d", "32"},
      {"model.laf_enabled", "true"},
      {"model.heads", "4"},
      {"model.blocks", "12"},
      {"model.sub2_after", "3"},
      {"model.taps", "7"},
      {"model.conv_kernel", "15"},
      {"model.ffn_expansion", "4"},
      {"model.max_len", "1024"},
      {"model.laf_mode", "concat"},  // concat | sum | probe
      {"model.probe_layer", "8"},
      {"model.laf_channels", "4"},
      {"model.fusion", "cross"},  // cross | self | off
      {"model.fusion_heads", "1"},
      {"model.fusion_residual", "false"},
      {"model.dec_layers", "3"},
      {"model.dec_heads", "4"},
      // Training.
      {"train.batch", "8"},
      {"train.steps", "3000"},
      {"train.peak_lr", "2e-3"},
      {"train.warmup", "400"},
      {"train.seed", "1"},
      {"train.chunk_policy", "dynamic"},  // dynamic | fixed | full
      {"train.chunk_size", "4"},
      {"train.clip_norm", "5.0"},
      {"train.lambda_ctc", "0.3"},
      {"train.lambda_aid", "0.3"},
      {"train.log_every", "50"},
      {"train.eval_every", "250"},
      {"train.width", "32"},  // 32 | 64
      {"train.early_stop", "true"},
      {"train.target_cer", "0.05"},
      {"train.target_aid", "0.95"},
      // Decoding.
      {"decode.beam", "8"},
      {"decode.ctc_weight", "0.3"},
      // Ablation driver.
      {"ablation.steps", "800"},
      {"ablation.margin", "0.0"},
      {"ablation.seeds", "1"},
      {"ablation.stream_chunk", "4"},
      {"ablation.probe_steps", "400"},
  };
  return kDefaults;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::defaults() {
  Config c;
  c.values_ = registry();
  return c;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  Config c = defaults();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                        ": expected `section.key = value`");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  if (registry().find(key) == registry().end()) {
    throw ConfigError("config: unknown key `" + key + "`");
  }
  values_[key] = value;
}

bool Config::has(const std::string& key) const {
  return values_.find(key) != values_.end();
}

int64_t Config::geti(const std::string& key) const {
  const std::string& v = gets(key);
  char* end = nullptr;
  long long r = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("config: key `" + key + "` is not an integer: " + v);
  }
  return r;
}

double Config::getf(const std::string& key) const {
  const std::string& v = gets(key);
  char* end = nullptr;
  double r = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("config: key `" + key + "` is not a number: " + v);
  }
  return r;
}

bool Config::getb(const std::string& key) const {
  const std::string& v = gets(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key `" + key + "` is not a boolean: " + v);
}

const std::string& Config::gets(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key `" + key + "`");
  return it->second;
}

}  // namespace af
