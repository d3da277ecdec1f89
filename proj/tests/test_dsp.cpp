#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>
#include <set>

#include "eabn/dsp.hpp"

using namespace eabn;

namespace {

Waveform random_wave(int samples, uint32_t seed) {
  Waveform w;
  w.samples.resize(samples);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-0.9f, 0.9f);
  for (auto& s : w.samples) s = dist(rng);
  return w;
}

Waveform sine_wave(double hz, int samples = kSegmentSamples) {
  Waveform w;
  w.samples.resize(samples);
  for (int i = 0; i < samples; ++i)
    w.samples[i] = 0.8f * static_cast<float>(std::sin(2.0 * M_PI * hz * i / kSampleRate));
  return w;
}

// naive O(n^2) DFT power spectrum of one Hamming-windowed zero-padded frame
std::vector<double> oracle_frame_power(const std::vector<double>& padded, int frame_start,
                                       int frame_len, int nfft) {
  std::vector<double> x(nfft, 0.0);
  for (int i = 0; i < frame_len; ++i) {
    double win = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (frame_len - 1));
    x[i] = padded[frame_start + i] * win;
  }
  std::vector<double> p(nfft / 2 + 1);
  for (int k = 0; k <= nfft / 2; ++k) {
    std::complex<double> acc = 0;
    for (int n = 0; n < nfft; ++n)
      acc += x[n] * std::exp(std::complex<double>(0, -2.0 * M_PI * k * n / nfft));
    p[k] = std::norm(acc);
  }
  return p;
}

std::vector<double> symmetric_pad(const std::vector<float>& x, int frame, int hop, int frames) {
  int need = frame + (frames - 1) * hop;
  int left = (need - static_cast<int>(x.size())) / 2;
  std::vector<double> y(need, 0.0);
  for (size_t i = 0; i < x.size(); ++i) y[left + i] = x[i];
  return y;
}

}  // namespace

TEST_CASE("segment_4s: identity, tiling, and the 10 s split") {
  auto w4 = random_wave(kSegmentSamples, 1);
  auto segs = segment_4s(w4);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].samples == w4.samples);

  auto w2 = random_wave(kSegmentSamples / 2, 2);
  segs = segment_4s(w2);
  REQUIRE(segs.size() == 1);
  for (int i = 0; i < kSegmentSamples; ++i)
    CHECK(segs[0].samples[i] == w2.samples[i % (kSegmentSamples / 2)]);

  auto w10 = random_wave(10 * kSampleRate, 3);
  segs = segment_4s(w10);
  REQUIRE(segs.size() == 3);
  for (size_t s = 0; s < 2; ++s)
    for (int i = 0; i < kSegmentSamples; ++i)
      CHECK(segs[s].samples[i] == w10.samples[s * kSegmentSamples + i]);
  int rem = 2 * kSampleRate;
  for (int i = 0; i < kSegmentSamples; ++i)
    CHECK(segs[2].samples[i] == w10.samples[2 * kSegmentSamples + i % rem]);

  CHECK_THROWS_AS(segment_4s(Waveform{}), TensorError);
  Waveform bad = w4;
  bad.sample_rate = 8000;
  CHECK_THROWS_AS(segment_4s(bad), TensorError);
}

TEST_CASE("segment_4s reconstruction: concatenation minus tiling recovers the input") {
  for (int len : {7000, 64000, 100000, 190000}) {
    auto w = random_wave(len, 100 + len);
    auto segs = segment_4s(w);
    std::vector<float> rebuilt;
    size_t full = len / kSegmentSamples;
    for (size_t s = 0; s < full; ++s)
      rebuilt.insert(rebuilt.end(), segs[s].samples.begin(), segs[s].samples.end());
    size_t rem = len % kSegmentSamples;
    if (rem > 0)
      rebuilt.insert(rebuilt.end(), segs.back().samples.begin(),
                     segs.back().samples.begin() + rem);
    CHECK(rebuilt == w.samples);
  }
}

TEST_CASE("feature shape contracts") {
  for (uint32_t seed : {10u, 11u, 12u}) {
    auto w = random_wave(kSegmentSamples, seed);
    auto lps = log_pow_spec(w);
    CHECK(lps.rows == 513);
    CHECK(lps.cols == 400);
    CHECK(lps.kind == FeatureKind::kLogPowSpec);
    auto lf = lfcc(w);
    CHECK(lf.rows == 60);
    CHECK(lf.cols == 400);
    CHECK(lf.kind == FeatureKind::kLfcc);
    for (float v : lps.values) CHECK(std::isfinite(v));
    for (float v : lf.values) CHECK(std::isfinite(v));
  }
  auto short_w = random_wave(1000, 13);
  CHECK_THROWS_AS(log_pow_spec(short_w), TensorError);
  CHECK_THROWS_AS(lfcc(short_w), TensorError);
}

TEST_CASE("log_pow_spec of silence is the constant log floor") {
  Waveform w;
  w.samples.assign(kSegmentSamples, 0.0f);
  auto f = log_pow_spec(w);
  float expect = std::log(1e-10f);
  for (float v : f.values) CHECK(v == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("log_pow_spec: 1 kHz sine peaks at bin 64 in every frame") {
  auto f = log_pow_spec(sine_wave(1000.0));
  for (int t = 0; t < 400; ++t) {
    int arg = 0;
    for (int k = 1; k < 513; ++k)
      if (f.at(k, t) > f.at(arg, t)) arg = k;
    CHECK(arg == 64);
  }
}

TEST_CASE("log_pow_spec matches a naive DFT oracle on sampled frames") {
  auto w = random_wave(kSegmentSamples, 21);
  auto f = log_pow_spec(w);
  auto padded = symmetric_pad(w.samples, 400, 160, 400);
  for (int t : {0, 1, 57, 200, 399}) {
    auto p = oracle_frame_power(padded, t * 160, 400, 1024);
    for (int k = 0; k < 513; ++k) {
      double expect = std::log(p[k] + 1e-10);
      CHECK(f.at(k, t) == doctest::Approx(expect).epsilon(1e-4));
    }
  }
}

TEST_CASE("deltas: constants, ramps, and a brute-force oracle") {
  std::vector<double> c(3 * 10, 7.5);
  auto d = deltas(c, 3, 10, 2);
  for (double v : d) CHECK(v == doctest::Approx(0.0));

  // per-row ramp with slope 0.5: interior deltas equal the slope
  std::vector<double> ramp(20);
  for (int t = 0; t < 20; ++t) ramp[t] = 0.5 * t;
  auto dr = deltas(ramp, 1, 20, 2);
  for (int t = 2; t < 18; ++t) CHECK(dr[t] == doctest::Approx(0.5));

  std::mt19937 rng(4);
  std::uniform_real_distribution<double> dist(-2, 2);
  std::vector<double> m(5 * 20);
  for (auto& v : m) v = dist(rng);
  auto dm = deltas(m, 5, 20, 2);
  for (int64_t r = 0; r < 5; ++r)
    for (int64_t t = 0; t < 20; ++t) {
      auto idx = [&](int64_t tt) { return m[r * 20 + std::clamp(tt, int64_t{0}, int64_t{19})]; };
      double expect = (1 * (idx(t + 1) - idx(t - 1)) + 2 * (idx(t + 2) - idx(t - 2))) / 10.0;
      CHECK(std::abs(dm[r * 20 + t] - expect) <= 1e-6);
    }

  CHECK_THROWS_AS(deltas(c, 0, 0, 2), TensorError);
  CHECK_THROWS_AS(deltas(c, 3, 10, 0), TensorError);
}

TEST_CASE("lfcc: DC input has vanishing interior deltas") {
  Waveform w;
  w.samples.assign(kSegmentSamples, 0.5f);
  auto f = lfcc(w);
  // edge frames see zero padding; the effect reaches 2 frames into the
  // deltas and 4 into the delta-deltas
  for (int64_t r = 20; r < 60; ++r)
    for (int64_t t = 5; t < 395; ++t) CHECK(f.at(r, t) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("lfcc: white noise static cepstra c1..c19 have near-zero mean") {
  std::mt19937 rng(31);
  std::normal_distribution<float> noise(0.0f, 0.1f);
  Waveform w;
  w.samples.resize(kSegmentSamples);
  for (auto& s : w.samples) s = noise(rng);
  auto f = lfcc(w);
  for (int64_t r = 1; r < 20; ++r) {
    double mean = 0;
    for (int64_t t = 0; t < 400; ++t) mean += f.at(r, t);
    mean /= 400;
    CHECK(std::abs(mean) <= 0.1);
  }
}

TEST_CASE("feature extraction is bitwise deterministic") {
  auto w = random_wave(kSegmentSamples, 77);
  auto a = log_pow_spec(w), b = log_pow_spec(w);
  CHECK(a.values == b.values);
  auto c = lfcc(w), d = lfcc(w);
  CHECK(c.values == d.values);
}

TEST_CASE("spec_augment: probability 0 is the identity") {
  auto f = log_pow_spec(random_wave(kSegmentSamples, 41));
  f.source_id = "utt1";
  AugmentPolicy p;
  p.apply_probability = 0.0;
  for (uint64_t seed : {0ull, 5ull, 99ull}) {
    p.rng_seed = seed;
    CHECK(spec_augment(f, p).values == f.values);
  }
}

TEST_CASE("spec_augment: probability 1 zeroes one time and one frequency band") {
  FeatureMatrix f;
  f.rows = 513;
  f.cols = 400;
  f.kind = FeatureKind::kLogPowSpec;
  f.values.assign(f.rows * f.cols, 1.0f);
  f.source_id = "LA_0001";
  AugmentPolicy p;
  p.apply_probability = 1.0;

  for (int draw = 0; draw < 50; ++draw) {
    f.segment_index = draw;
    auto g = spec_augment(f, p);

    std::vector<int64_t> zero_cols, zero_rows;
    for (int64_t c = 0; c < f.cols; ++c) {
      bool all = true;
      for (int64_t r = 0; r < f.rows && all; ++r) all = g.at(r, c) == 0.0f;
      if (all) zero_cols.push_back(c);
    }
    for (int64_t r = 0; r < f.rows; ++r) {
      bool all = true;
      for (int64_t c = 0; c < f.cols && all; ++c) all = g.at(r, c) == 0.0f;
      if (all) zero_rows.push_back(r);
    }
    // contiguous bands of in-range width
    auto contiguous = [](const std::vector<int64_t>& v) {
      for (size_t i = 1; i < v.size(); ++i)
        if (v[i] != v[i - 1] + 1) return false;
      return true;
    };
    CHECK(contiguous(zero_cols));
    CHECK(contiguous(zero_rows));
    CHECK(zero_cols.size() >= 20);
    CHECK(zero_cols.size() <= 80);
    CHECK(zero_rows.size() >= 25);
    CHECK(zero_rows.size() <= 100);

    // outside the bands nothing changed
    std::set<int64_t> zc(zero_cols.begin(), zero_cols.end());
    std::set<int64_t> zr(zero_rows.begin(), zero_rows.end());
    for (int64_t r = 0; r < f.rows; ++r)
      for (int64_t c = 0; c < f.cols; ++c)
        if (!zc.count(c) && !zr.count(r)) CHECK(g.at(r, c) == 1.0f);
  }
}

TEST_CASE("spec_augment: LFCC band widths and seeded determinism") {
  FeatureMatrix f;
  f.rows = 60;
  f.cols = 400;
  f.kind = FeatureKind::kLfcc;
  f.values.assign(f.rows * f.cols, 2.0f);
  f.source_id = "LA_0002";
  AugmentPolicy p;
  p.apply_probability = 1.0;
  p.rng_seed = 7;

  bool any_differs = false;
  for (int draw = 0; draw < 50; ++draw) {
    f.segment_index = draw;
    auto g = spec_augment(f, p);
    auto h = spec_augment(f, p);
    CHECK(g.values == h.values);
    int64_t zero_rows = 0, zero_cols = 0;
    for (int64_t r = 0; r < f.rows; ++r) {
      bool all = true;
      for (int64_t c = 0; c < f.cols && all; ++c) all = g.at(r, c) == 0.0f;
      zero_rows += all;
    }
    for (int64_t c = 0; c < f.cols; ++c) {
      bool all = true;
      for (int64_t r = 0; r < f.rows && all; ++r) all = g.at(r, c) == 0.0f;
      zero_cols += all;
    }
    CHECK(zero_rows >= 5);
    CHECK(zero_rows <= 20);
    CHECK(zero_cols >= 20);
    CHECK(zero_cols <= 80);
    if (draw > 0) {
      FeatureMatrix prev = f;
      prev.segment_index = draw - 1;
      any_differs = any_differs || spec_augment(prev, p).values != g.values;
    }
  }
  CHECK(any_differs);
}
