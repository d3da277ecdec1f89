#include "eabn/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>

namespace eabn {

namespace {

constexpr double kLogFloor = 1e-10;

// FFTW plan creation is not thread-safe; execution on distinct buffers is.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    static std::mutex plan_mutex;
    std::lock_guard<std::mutex> lock(plan_mutex);
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  // windowed frame -> power spectrum, n/2+1 bins
  void power(const double* frame, double* out_power) {
    std::copy(frame, frame + n_, in_);
    fftw_execute(plan_);
    for (int k = 0; k <= n_ / 2; ++k)
      out_power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

std::vector<double> hamming(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n - 1));
  return w;
}

void check_segment_input(const Waveform& w, const char* op) {
  if (w.sample_rate != kSampleRate)
    throw TensorError(std::string(op) + ": expected " + std::to_string(kSampleRate) +
                      " Hz input, got " + std::to_string(w.sample_rate));
  if (static_cast<int>(w.samples.size()) != kSegmentSamples)
    throw TensorError(std::string(op) + ": expected exactly " +
                      std::to_string(kSegmentSamples) + " samples, got " +
                      std::to_string(w.samples.size()));
}

// symmetric zero padding so that 1 + (len - frame)/hop lands on 400 frames
std::vector<double> pad_signal(const std::vector<float>& x, int frame, int hop, int frames) {
  int need = frame + (frames - 1) * hop;
  int pad = need - static_cast<int>(x.size());
  int left = pad / 2;
  std::vector<double> y(need, 0.0);
  for (size_t i = 0; i < x.size(); ++i) y[left + i] = x[i];
  return y;
}

}  // namespace

uint64_t fnv1a64(const std::string& s, uint64_t seed) {
  uint64_t h = 14695981039346656037ull ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<Waveform> segment_4s(const Waveform& w) {
  if (w.samples.empty()) throw TensorError("segment_4s: empty waveform");
  if (w.sample_rate != kSampleRate)
    throw TensorError("segment_4s: expected " + std::to_string(kSampleRate) + " Hz input, got " +
                      std::to_string(w.sample_rate));

  auto tile = [](const float* src, size_t n) {
    Waveform seg;
    seg.samples.resize(kSegmentSamples);
    for (int i = 0; i < kSegmentSamples; ++i) seg.samples[i] = src[i % n];
    return seg;
  };

  std::vector<Waveform> out;
  size_t n = w.samples.size();
  size_t full = n / kSegmentSamples;
  for (size_t s = 0; s < full; ++s) {
    Waveform seg;
    seg.samples.assign(w.samples.begin() + s * kSegmentSamples,
                       w.samples.begin() + (s + 1) * kSegmentSamples);
    out.push_back(std::move(seg));
  }
  size_t rem = n % kSegmentSamples;
  if (rem > 0) out.push_back(tile(w.samples.data() + full * kSegmentSamples, rem));
  return out;
}

FeatureMatrix log_pow_spec(const Waveform& w) {
  check_segment_input(w, "log_pow_spec");
  constexpr int kFrame = 400, kHop = 160, kFft = 1024, kBins = 513, kFrames = 400;

  auto x = pad_signal(w.samples, kFrame, kHop, kFrames);
  auto win = hamming(kFrame);
  RealFft fft(kFft);

  FeatureMatrix f;
  f.rows = kBins;
  f.cols = kFrames;
  f.kind = FeatureKind::kLogPowSpec;
  f.values.resize(kBins * kFrames);

  std::vector<double> frame(kFft, 0.0), power(kBins);
  for (int t = 0; t < kFrames; ++t) {
    const double* src = x.data() + t * kHop;
    for (int i = 0; i < kFrame; ++i) frame[i] = src[i] * win[i];
    // zero padding beyond the frame is already in place
    fft.power(frame.data(), power.data());
    for (int k = 0; k < kBins; ++k)
      f.values[static_cast<int64_t>(k) * kFrames + t] =
          static_cast<float>(std::log(power[k] + kLogFloor));
  }
  return f;
}

std::vector<double> deltas(const std::vector<double>& data, int64_t rows, int64_t cols,
                           int window) {
  if (window < 1) throw TensorError("deltas: window must be >= 1");
  if (rows <= 0 || cols <= 0) throw TensorError("deltas: empty input");
  double denom = 0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;
  std::vector<double> out(rows * cols);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = data.data() + r * cols;
    for (int64_t t = 0; t < cols; ++t) {
      double acc = 0;
      for (int n = 1; n <= window; ++n) {
        int64_t hi = std::min(t + n, cols - 1);
        int64_t lo = std::max(t - n, int64_t{0});
        acc += n * (row[hi] - row[lo]);
      }
      out[r * cols + t] = acc / denom;
    }
  }
  return out;
}

FeatureMatrix lfcc(const Waveform& w) {
  check_segment_input(w, "lfcc");
  constexpr int kFrame = 320, kHop = 160, kFft = 512, kFrames = 400;
  constexpr int kFilters = 20, kCepstra = 20, kBins = kFft / 2 + 1;

  auto x = pad_signal(w.samples, kFrame, kHop, kFrames);
  auto win = hamming(kFrame);
  RealFft fft(kFft);

  // 20 triangular filters with edges linearly spaced over 0..8000 Hz
  std::vector<std::vector<double>> fbank(kFilters, std::vector<double>(kBins, 0.0));
  double bin_hz = static_cast<double>(kSampleRate) / kFft;
  for (int m = 0; m < kFilters; ++m) {
    double lo = 8000.0 * m / (kFilters + 1);
    double mid = 8000.0 * (m + 1) / (kFilters + 1);
    double hi = 8000.0 * (m + 2) / (kFilters + 1);
    for (int k = 0; k < kBins; ++k) {
      double fhz = k * bin_hz;
      if (fhz > lo && fhz < mid)
        fbank[m][k] = (fhz - lo) / (mid - lo);
      else if (fhz >= mid && fhz < hi)
        fbank[m][k] = (hi - fhz) / (hi - mid);
    }
  }

  // orthonormal DCT-II over the 20 log filter energies
  std::vector<double> dct(kCepstra * kFilters);
  for (int i = 0; i < kCepstra; ++i) {
    double norm = std::sqrt((i == 0 ? 1.0 : 2.0) / kFilters);
    for (int j = 0; j < kFilters; ++j)
      dct[i * kFilters + j] = norm * std::cos(M_PI * i * (j + 0.5) / kFilters);
  }

  std::vector<double> stat(static_cast<size_t>(kCepstra) * kFrames);
  std::vector<double> frame(kFft, 0.0), power(kBins), energy(kFilters);
  for (int t = 0; t < kFrames; ++t) {
    const double* src = x.data() + t * kHop;
    for (int i = 0; i < kFrame; ++i) frame[i] = src[i] * win[i];
    fft.power(frame.data(), power.data());
    for (int m = 0; m < kFilters; ++m) {
      double e = 0;
      for (int k = 0; k < kBins; ++k) e += fbank[m][k] * power[k];
      energy[m] = std::log(e + kLogFloor);
    }
    for (int i = 0; i < kCepstra; ++i) {
      double c = 0;
      for (int j = 0; j < kFilters; ++j) c += dct[i * kFilters + j] * energy[j];
      stat[static_cast<size_t>(i) * kFrames + t] = c;
    }
  }

  auto d1 = deltas(stat, kCepstra, kFrames, 2);
  auto d2 = deltas(d1, kCepstra, kFrames, 2);

  FeatureMatrix f;
  f.rows = 3 * kCepstra;
  f.cols = kFrames;
  f.kind = FeatureKind::kLfcc;
  f.values.resize(f.rows * f.cols);
  for (int64_t i = 0; i < kCepstra * kFrames; ++i) {
    f.values[i] = static_cast<float>(stat[i]);
    f.values[kCepstra * kFrames + i] = static_cast<float>(d1[i]);
    f.values[2 * kCepstra * kFrames + i] = static_cast<float>(d2[i]);
  }
  return f;
}

FeatureMatrix spec_augment(const FeatureMatrix& f, const AugmentPolicy& p) {
  if (p.apply_probability < 0 || p.apply_probability > 1)
    throw TensorError("spec_augment: probability out of [0,1]");
  uint64_t seed = fnv1a64(f.source_id + "#" + std::to_string(f.segment_index), p.rng_seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  FeatureMatrix out = f;
  if (coin(rng) >= p.apply_probability) return out;

  int fmin = p.freq_band_min, fmax = p.freq_band_max;
  if (fmin == 0 && fmax == 0) {
    fmin = f.kind == FeatureKind::kLfcc ? 5 : 25;
    fmax = f.kind == FeatureKind::kLfcc ? 20 : 100;
  }
  auto band = [&](int lo, int hi, int64_t dim) {
    int width = std::uniform_int_distribution<int>(lo, hi)(rng);
    width = std::min<int64_t>(width, dim);
    int64_t start = std::uniform_int_distribution<int64_t>(0, dim - width)(rng);
    return std::make_pair(start, start + width);
  };

  auto [t0, t1] = band(p.time_band_min, p.time_band_max, f.cols);
  auto [r0, r1] = band(fmin, fmax, f.rows);
  for (int64_t r = 0; r < f.rows; ++r)
    for (int64_t c = t0; c < t1; ++c) out.at(r, c) = 0.0f;
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = 0; c < f.cols; ++c) out.at(r, c) = 0.0f;
  return out;
}

}  // namespace eabn
