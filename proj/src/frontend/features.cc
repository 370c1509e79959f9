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

#include "frontend/features.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <sstream>

namespace af {

namespace {

constexpr double kPreEmphasis = 0.97;
constexpr double kLogFloor = 1e-10;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 FFT, in place.
void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        auto u = a[i + j];
        auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

struct MelBank {
  // weights[k] over fft power bins 0..nfft/2.
  std::vector<std::vector<double>> weights;
};

MelBank make_mel_bank(int64_t n_mels, int64_t sample_rate, int64_t nfft) {
  const double nyquist = static_cast<double>(sample_rate) / 2.0;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> edges(n_mels + 2);
  for (int64_t i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  }
  MelBank bank;
  bank.weights.assign(n_mels, std::vector<double>(nfft / 2 + 1, 0.0));
  for (int64_t k = 0; k < n_mels; ++k) {
    const double lo = edges[k], mid = edges[k + 1], hi = edges[k + 2];
    for (int64_t b = 0; b <= nfft / 2; ++b) {
      const double f = static_cast<double>(b) * sample_rate / nfft;
      if (f <= lo || f >= hi) continue;
      bank.weights[k][b] = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return bank;
}

}  // namespace

int64_t fbank_num_frames(int64_t num_samples, int64_t sample_rate) {
  const int64_t win = sample_rate * 25 / 1000;
  const int64_t shift = sample_rate * 10 / 1000;
  if (num_samples < win) return 0;
  return (num_samples - win) / shift + 1;
}

std::vector<double> mel_filter_centers_hz(int64_t n_mels, int64_t sample_rate) {
  const double mel_hi = hz_to_mel(static_cast<double>(sample_rate) / 2.0);
  std::vector<double> centers(n_mels);
  for (int64_t k = 0; k < n_mels; ++k) {
    centers[k] = mel_to_hz(mel_hi * static_cast<double>(k + 1) /
                           static_cast<double>(n_mels + 1));
  }
  return centers;
}

FeatureMatrix fbank(const std::vector<double>& waveform, int64_t sample_rate,
                    int64_t n_mels) {
  if (sample_rate != 8000 && sample_rate != 16000) {
    throw InputError("fbank: unsupported sample rate " +
                     std::to_string(sample_rate));
  }
  const int64_t win = sample_rate * 25 / 1000;
  const int64_t shift = sample_rate * 10 / 1000;
  const int64_t n = static_cast<int64_t>(waveform.size());
  if (n < win) {
    throw InputError("fbank: waveform of " + std::to_string(n) +
                     " samples is shorter than one 25 ms window (" +
                     std::to_string(win) + ")");
  }
  const int64_t frames = (n - win) / shift + 1;
  const int64_t nfft = next_pow2(win);

  std::vector<double> emphasized(waveform.size());
  emphasized[0] = waveform[0] - kPreEmphasis * waveform[0];
  for (int64_t i = 1; i < n; ++i)
    emphasized[i] = waveform[i] - kPreEmphasis * waveform[i - 1];

  std::vector<double> hann(win);
  for (int64_t i = 0; i < win; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (win - 1));

  const MelBank bank = make_mel_bank(n_mels, sample_rate, nfft);

  FeatureMatrix out;
  out.frames = frames;
  out.dim = n_mels;
  out.sample_rate = sample_rate;
  out.data.assign(frames * n_mels, 0.0);

  std::vector<std::complex<double>> buf(nfft);
  std::vector<double> power(nfft / 2 + 1);
  for (int64_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const int64_t off = t * shift;
    for (int64_t i = 0; i < win; ++i)
      buf[i] = std::complex<double>(emphasized[off + i] * hann[i], 0.0);
    fft(buf);
    for (int64_t b = 0; b <= nfft / 2; ++b) power[b] = std::norm(buf[b]);
    for (int64_t k = 0; k < n_mels; ++k) {
      double e = 0.0;
      const auto& w = bank.weights[k];
      for (int64_t b = 0; b <= nfft / 2; ++b) e += w[b] * power[b];
      out.at(t, k) = std::log(std::max(e, kLogFloor));
    }
  }
  return out;
}

CmvnStats compute_cmvn(const std::vector<const FeatureMatrix*>& mats) {
  if (mats.empty() || mats[0]->frames == 0) {
    throw InputError("cmvn: no frames to accumulate");
  }
  const int64_t dim = mats[0]->dim;
  CmvnStats s;
  s.mean.assign(dim, 0.0);
  s.var.assign(dim, 0.0);
  for (const auto* m : mats) {
    if (m->dim != dim) {
      throw ShapeError("cmvn: feature dim mismatch " + std::to_string(m->dim) +
                       " vs " + std::to_string(dim));
    }
    for (int64_t t = 0; t < m->frames; ++t)
      for (int64_t j = 0; j < dim; ++j) s.mean[j] += m->at(t, j);
    s.frame_count += m->frames;
  }
  for (auto& v : s.mean) v /= static_cast<double>(s.frame_count);
  for (const auto* m : mats) {
    for (int64_t t = 0; t < m->frames; ++t)
      for (int64_t j = 0; j < dim; ++j) {
        const double d = m->at(t, j) - s.mean[j];
        s.var[j] += d * d;
      }
  }
  for (auto& v : s.var) v = std::max(v / static_cast<double>(s.frame_count), 1e-8);
  return s;
}

void apply_cmvn(FeatureMatrix& feat, const CmvnStats& stats) {
  if (feat.dim != static_cast<int64_t>(stats.mean.size())) {
    throw ShapeError("cmvn: stats dim " + std::to_string(stats.mean.size()) +
                     " does not match features dim " + std::to_string(feat.dim));
  }
  for (int64_t t = 0; t < feat.frames; ++t)
    for (int64_t j = 0; j < feat.dim; ++j)
      feat.at(t, j) = (feat.at(t, j) - stats.mean[j]) / std::sqrt(stats.var[j]);
}

void spec_augment(FeatureMatrix& feat, const SpecAugmentPolicy& policy, Rng& rng) {
  const int64_t fw = std::min(policy.freq_width, feat.dim);
  for (int64_t m = 0; m < policy.freq_masks; ++m) {
    if (fw <= 0) break;
    const int64_t start = rng.uniform_int(0, feat.dim - fw);
    for (int64_t t = 0; t < feat.frames; ++t)
      for (int64_t j = start; j < start + fw; ++j) feat.at(t, j) = 0.0;
  }
  const int64_t tw = std::min(policy.time_width, feat.frames);
  for (int64_t m = 0; m < policy.time_masks; ++m) {
    if (tw <= 0) break;
    const int64_t start = rng.uniform_int(0, feat.frames - tw);
    for (int64_t t = start; t < start + tw; ++t)
      for (int64_t j = 0; j < feat.dim; ++j) feat.at(t, j) = 0.0;
  }
}

std::vector<std::vector<double>> token_templates(const SynthConfig& cfg) {
  if (cfg.token_band + cfg.accent_band > cfg.feat_dim) {
    throw ConfigError("synth: token_band + accent_band exceeds feat_dim");
  }
  Rng rng(cfg.template_seed);
  std::vector<std::vector<double>> tmpl(cfg.vocab,
                                        std::vector<double>(cfg.feat_dim, 0.0));
  for (int64_t v = 0; v < cfg.vocab; ++v)
    for (int64_t j = 0; j < cfg.token_band; ++j)
      tmpl[v][j] = rng.normal() * cfg.template_amp;
  return tmpl;
}

Utterance synth_utterance(int64_t accent_id, uint64_t seed,
                          const SynthConfig& cfg) {
  if (accent_id < 0 || accent_id >= cfg.accents) {
    throw InputError("synth: accent id " + std::to_string(accent_id) +
                     " out of [0, " + std::to_string(cfg.accents) + ")");
  }
  const auto tmpl = token_templates(cfg);
  Rng rng(seed);
  const int64_t len = rng.uniform_int(cfg.len_min, cfg.len_max);

  Utterance utt;
  utt.accent_id = accent_id;
  utt.tokens.reserve(len);
  int64_t prev = -1;
  for (int64_t i = 0; i < len; ++i) {
    int64_t tok;
    if (prev < 0 || cfg.vocab == 1) {
      tok = rng.uniform_int(0, cfg.vocab - 1);
    } else {
      tok = rng.uniform_int(0, cfg.vocab - 2);
      if (tok >= prev) ++tok;  // uniform over vocab \ {prev}
    }
    utt.tokens.push_back(tok);
    prev = tok;
  }

  const int64_t band0 = cfg.feat_dim - cfg.accent_band;
  const int64_t shift = cfg.accents > 0 ? cfg.vocab / cfg.accents : 0;
  FeatureMatrix& f = utt.features;
  f.frames = len * cfg.frames_per_token;
  f.dim = cfg.feat_dim;
  f.data.assign(f.frames * f.dim, 0.0);
  int64_t t = 0;
  for (int64_t i = 0; i < len; ++i) {
    int64_t tpl_idx = utt.tokens[i];
    if (cfg.accent_token_coupling) {
      tpl_idx = (utt.tokens[i] + accent_id * std::max<int64_t>(shift, 1)) % cfg.vocab;
    }
    for (int64_t r = 0; r < cfg.frames_per_token; ++r, ++t) {
      for (int64_t j = 0; j < cfg.feat_dim; ++j) f.at(t, j) = tmpl[tpl_idx][j];
      if (cfg.accent_code == AccentCode::kBand) {
        for (int64_t j = band0; j < cfg.feat_dim; ++j)
          f.at(t, j) += static_cast<double>(accent_id) * cfg.accent_offset;
      } else {
        // Sign-correlation code: a carrier r=+/-1 per pair per frame; the
        // second dim of each pair carries r*sign(bit). The band is zero-mean,
        // so accent identity is only recoverable from the pair product.
        const int64_t pairs = std::min<int64_t>(cfg.accent_band / 2, 8);
        for (int64_t p = 0; p < pairs; ++p) {
          const double carrier = rng.uniform() < 0.5 ? -1.0 : 1.0;
          const double sign = ((accent_id >> p) & 1) ? 1.0 : -1.0;
          f.at(t, band0 + 2 * p) += carrier * cfg.accent_offset;
          f.at(t, band0 + 2 * p + 1) += carrier * sign * cfg.accent_offset;
        }
      }
      if (cfg.noise_std > 0.0) {
        for (int64_t j = 0; j < cfg.feat_dim; ++j)
          f.at(t, j) += rng.normal() * cfg.noise_std;
      }
    }
  }
  utt.id = "synth_" + std::to_string(seed);
  return utt;
}

std::string tokens_to_string(const std::vector<int64_t>& tokens) {
  std::string s;
  s.reserve(tokens.size());
  for (int64_t t : tokens) s.push_back(static_cast<char>('a' + t));
  return s;
}

std::vector<int64_t> string_to_tokens(const std::string& s, int64_t vocab) {
  std::vector<int64_t> out;
  out.reserve(s.size());
  for (char c : s) {
    const int64_t t = c - 'a';
    if (t < 0 || t >= vocab) {
      throw InputError(std::string("transcript: token `") + c +
                       "` outside vocab of " + std::to_string(vocab));
    }
    out.push_back(t);
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("manifest: cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t pos = 0;
    while (true) {
      size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    if (fields.size() != 4) {
      throw InputError("manifest: " + path + ":" + std::to_string(lineno) +
                       ": expected 4 tab-separated fields, got " +
                       std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.utt_id = fields[0];
    e.source = fields[1];
    e.transcript = fields[2];
    e.accent_id = std::stoll(fields[3]);
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw InputError("manifest: cannot open " + path + " for writing");
  for (const auto& e : entries) {
    out << e.utt_id << '\t' << e.source << '\t' << e.transcript << '\t'
        << e.accent_id << '\n';
  }
}

Utterance load_utterance(const ManifestEntry& e, const SynthConfig& cfg,
                         int64_t sample_rate) {
  Utterance utt;
  if (e.source.rfind("synth:", 0) == 0) {
    const uint64_t seed = std::stoull(e.source.substr(6));
    utt = synth_utterance(e.accent_id, seed, cfg);
  } else {
    int64_t sr = sample_rate;
    auto wave = read_wav(e.source, &sr);
    utt.features = fbank(wave, sr, cfg.feat_dim);
    utt.accent_id = e.accent_id;
    utt.tokens = string_to_tokens(e.transcript, cfg.vocab);
  }
  utt.id = e.utt_id;
  if (!e.transcript.empty()) utt.tokens = string_to_tokens(e.transcript, cfg.vocab);
  return utt;
}

std::vector<double> read_wav(const std::string& path, int64_t* sample_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("wav: cannot open " + path);
  auto read_bytes = [&](char* dst, size_t n, const char* what) {
    if (!in.read(dst, static_cast<std::streamsize>(n))) {
      throw FormatError(std::string("wav: truncated while reading ") + what);
    }
  };
  auto read_u32 = [&](const char* what) {
    unsigned char b[4];
    read_bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<uint32_t>(b[0]) | (b[1] << 8) | (b[2] << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  };
  auto read_u16 = [&](const char* what) {
    unsigned char b[2];
    read_bytes(reinterpret_cast<char*>(b), 2, what);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  };
  char tag[4];
  read_bytes(tag, 4, "RIFF tag");
  if (std::memcmp(tag, "RIFF", 4) != 0) throw FormatError("wav: not a RIFF file");
  read_u32("riff size");
  read_bytes(tag, 4, "WAVE tag");
  if (std::memcmp(tag, "WAVE", 4) != 0) throw FormatError("wav: not a WAVE file");

  uint16_t channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<double> samples;
  while (in.peek() != EOF) {
    read_bytes(tag, 4, "chunk tag");
    uint32_t size = read_u32("chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      uint16_t fmt = read_u16("format");
      channels = read_u16("channels");
      rate = read_u32("sample rate");
      read_u32("byte rate");
      read_u16("block align");
      bits = read_u16("bits");
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      if (fmt != 1 || bits != 16) {
        throw FormatError("wav: only 16-bit PCM supported");
      }
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (channels == 0) throw FormatError("wav: data before fmt chunk");
      const size_t n = size / 2;
      samples.reserve(n / channels);
      for (size_t i = 0; i < n; i += channels) {
        double acc = 0.0;
        for (uint16_t c = 0; c < channels; ++c) {
          const int16_t s = static_cast<int16_t>(read_u16("sample"));
          acc += static_cast<double>(s) / 32768.0;
        }
        samples.push_back(acc / channels);
      }
      break;
    } else {
      in.seekg(size, std::ios::cur);
    }
  }
  if (samples.empty()) throw FormatError("wav: no data chunk in " + path);
  *sample_rate = rate;
  return samples;
}

}  // namespace af
