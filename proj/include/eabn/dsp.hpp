#pragma once

// Acoustic front end: 4 s segmentation, log power spectrogram (513x400),
// LFCC with deltas (60x400), and SpecAugment band masking.

#include <cstdint>
#include <string>
#include <vector>

#include "eabn/tensor.hpp"  // TensorError

namespace eabn {

inline constexpr int kSampleRate = 16000;
inline constexpr int kSegmentSamples = 4 * kSampleRate;  // 64000

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

enum class FeatureKind : uint8_t { kLogPowSpec = 0, kLfcc = 1 };

struct FeatureMatrix {
  std::vector<float> values;  // row-major, rows x cols
  int64_t rows = 0;
  int64_t cols = 0;
  FeatureKind kind = FeatureKind::kLogPowSpec;
  std::string source_id;
  int segment_index = 0;

  float& at(int64_t r, int64_t c) { return values[r * cols + c]; }
  float at(int64_t r, int64_t c) const { return values[r * cols + c]; }
};

struct AugmentPolicy {
  double apply_probability = 0.25;
  int time_band_min = 20, time_band_max = 80;       // frames
  int freq_band_min = 0, freq_band_max = 0;         // 0 = pick from feature kind
  uint64_t rng_seed = 0;
};

// stable 64-bit hash used to derive the per-sample SpecAugment stream from
// (global seed, utterance id, segment index)
uint64_t fnv1a64(const std::string& s, uint64_t seed);

// short inputs are tiled end-to-end up to 4 s; long inputs are cut into
// non-overlapping 4 s pieces with the trailing remainder tiled likewise
std::vector<Waveform> segment_4s(const Waveform& w);

// 400-sample frames, hop 160, Hamming window, 1024-point FFT -> 513 bins,
// log(power + 1e-10); the signal is padded 120 samples per side so the
// frame count is exactly 400
FeatureMatrix log_pow_spec(const Waveform& w);

// 320-sample frames, hop 160, 512-point FFT, 20 linear triangular filters
// over 0-8 kHz, DCT-II (c0 included) -> 20 static + delta + delta-delta
FeatureMatrix lfcc(const Waveform& w);

// regression delta over +-window frames with edge replication
std::vector<double> deltas(const std::vector<double>& data, int64_t rows, int64_t cols,
                           int window);

FeatureMatrix spec_augment(const FeatureMatrix& f, const AugmentPolicy& p);

}  // namespace eabn
