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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/error.h"
#include "core/rng.h"

namespace af {

struct FeatureMatrix {
  int64_t frames = 0;
  int64_t dim = 0;
  std::vector<double> data;  // row-major frames x dim
  int64_t sample_rate = 16000;
  double frame_shift_ms = 10.0;
  double frame_length_ms = 25.0;

  double& at(int64_t t, int64_t j) { return data[t * dim + j]; }
  double at(int64_t t, int64_t j) const { return data[t * dim + j]; }
};

// Log-mel filterbank energies. Pipeline: pre-emphasis 0.97, Hann window,
// power spectrum, `n_mels` triangular mel filters from 0 Hz to Nyquist,
// natural log with floor 1e-10. 25 ms window / 10 ms shift.
FeatureMatrix fbank(const std::vector<double>& waveform, int64_t sample_rate,
                    int64_t n_mels = 80);

// Closed-form frame count for the fbank framing policy.
int64_t fbank_num_frames(int64_t num_samples, int64_t sample_rate);

// Center frequencies (Hz) of the triangular mel filters; exposed so tests can
// localize pure tones independently.
std::vector<double> mel_filter_centers_hz(int64_t n_mels, int64_t sample_rate);

struct CmvnStats {
  std::vector<double> mean;
  std::vector<double> var;  // population variance, floored at 1e-8
  int64_t frame_count = 0;
};

CmvnStats compute_cmvn(const std::vector<const FeatureMatrix*>& mats);
void apply_cmvn(FeatureMatrix& feat, const CmvnStats& stats);

// Fixed-width rectangular masks on normalized features; masked cells become 0.
// Train-time only; a zero-mask policy is the identity.
struct SpecAugmentPolicy {
  int64_t freq_masks = 1;
  int64_t freq_width = 6;
  int64_t time_masks = 1;
  int64_t time_width = 2;
};

void spec_augment(FeatureMatrix& feat, const SpecAugmentPolicy& policy, Rng& rng);

// ---- synthetic accent corpus ----

enum class AccentCode {
  kBand,       // additive accent_id * offset on the reserved sub-band
  kNonlinear,  // sign-correlation code on band pairs; zero mean, needs depth
};

struct SynthConfig {
  int64_t vocab = 16;
  int64_t accents = 4;
  int64_t feat_dim = 80;
  int64_t frames_per_token = 4;
  int64_t len_min = 3;
  int64_t len_max = 10;
  double noise_std = 0.1;
  double accent_offset = 1.0;
  double template_amp = 1.0;
  int64_t accent_band = 8;   // reserved dims at the top of the feature axis
  int64_t token_band = 64;   // dims carrying the token template
  bool accent_token_coupling = false;  // accent permutes the token templates
  AccentCode accent_code = AccentCode::kBand;
  uint64_t template_seed = 9001;
};

struct Utterance {
  std::string id;
  FeatureMatrix features;
  std::vector<int64_t> tokens;
  int64_t accent_id = -1;
};

// Token template vectors (vocab x feat_dim); depends only on the config.
std::vector<std::vector<double>> token_templates(const SynthConfig& cfg);

// Deterministic per (accent_id, seed, cfg). Transcripts are uniform without
// adjacent repeats so every utterance stays CTC-alignable at the default
// frames_per_token/subsampling ratio.
Utterance synth_utterance(int64_t accent_id, uint64_t seed, const SynthConfig& cfg);

std::string tokens_to_string(const std::vector<int64_t>& tokens);
std::vector<int64_t> string_to_tokens(const std::string& s, int64_t vocab);

// ---- manifests ----

struct ManifestEntry {
  std::string utt_id;
  std::string source;  // waveform path or "synth:<seed>"
  std::string transcript;
  int64_t accent_id = -1;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries);

// Realizes a manifest entry: synthesizes or reads a waveform + fbank.
Utterance load_utterance(const ManifestEntry& e, const SynthConfig& cfg,
                         int64_t sample_rate);

// Minimal mono 16-bit PCM WAV reader, samples scaled to [-1, 1].
std::vector<double> read_wav(const std::string& path, int64_t* sample_rate);

}  // namespace af
