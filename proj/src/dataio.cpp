#include "eabn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

namespace eabn {

namespace fs = std::filesystem;

std::string partition_name(Partition p) {
  switch (p) {
    case Partition::kTrain: return "train";
    case Partition::kDev: return "dev";
    case Partition::kEval: return "eval";
  }
  throw TensorError("bad partition");
}

Partition parse_partition(const std::string& s) {
  if (s == "train") return Partition::kTrain;
  if (s == "dev") return Partition::kDev;
  if (s == "eval") return Partition::kEval;
  throw TensorError("unknown partition '" + s + "'");
}

std::vector<ProtocolEntry> parse_protocol(std::istream& in, Partition partition) {
  std::vector<ProtocolEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    ProtocolEntry e;
    e.partition = partition;
    std::string dash, key;
    if (!(ls >> e.speaker_id >> e.utt_id >> dash >> e.attack_id >> key))
      throw TensorError("protocol line " + std::to_string(line_no) +
                        ": expected <speaker> <utt> - <attack> <key>");
    if (key == "bonafide")
      e.bonafide = true;
    else if (key == "spoof")
      e.bonafide = false;
    else
      throw TensorError("protocol line " + std::to_string(line_no) + ": unknown key '" + key +
                        "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

void serialize_protocol(std::ostream& out, const std::vector<ProtocolEntry>& entries) {
  for (const auto& e : entries)
    out << e.speaker_id << ' ' << e.utt_id << " - " << e.attack_id << ' '
        << (e.bonafide ? "bonafide" : "spoof") << '\n';
}

namespace {

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}
void put_u16(std::ostream& out, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<char*>(b), 2);
}
uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t{b[3]} << 24);
}
uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TensorError("cannot open '" + path + "' for writing");
  uint32_t n = static_cast<uint32_t>(w.samples.size());
  uint32_t data_bytes = n * 2;
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, w.sample_rate);
  put_u32(out, w.sample_rate * 2);  // byte rate
  put_u16(out, 2);                  // block align
  put_u16(out, 16);                 // bits per sample
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (float s : w.samples) {
    float c = std::clamp(s, -1.0f, 1.0f);
    int v = std::clamp(static_cast<int>(std::lround(c * 32768.0f)), -32768, 32767);
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }
  if (!out) throw TensorError("write failed for '" + path + "'");
}

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("cannot open '" + path + "'");
  char tag[5] = {0};
  in.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) throw TensorError("'" + path + "': not a RIFF file");
  get_u32(in);
  in.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) throw TensorError("'" + path + "': not a WAVE file");

  Waveform w;
  uint16_t bits = 0, channels = 0;
  bool got_fmt = false;
  while (in.read(tag, 4)) {
    uint32_t chunk = get_u32(in);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      uint16_t format = get_u16(in);
      channels = get_u16(in);
      w.sample_rate = static_cast<int>(get_u32(in));
      get_u32(in);
      get_u16(in);
      bits = get_u16(in);
      if (chunk > 16) in.seekg(chunk - 16, std::ios::cur);
      if (format != 1 || channels != 1 || bits != 16)
        throw TensorError("'" + path + "': only 16-bit PCM mono is supported");
      got_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (!got_fmt) throw TensorError("'" + path + "': data chunk before fmt");
      uint32_t n = chunk / 2;
      w.samples.resize(n);
      for (uint32_t i = 0; i < n; ++i)
        w.samples[i] = static_cast<int16_t>(get_u16(in)) / 32768.0f;
      if (!in) throw TensorError("'" + path + "': truncated data chunk");
      return w;
    } else {
      in.seekg(chunk + (chunk & 1), std::ios::cur);
    }
  }
  throw TensorError("'" + path + "': no data chunk");
}

void ToySpec::validate() const {
  if (n_bonafide < 1 || n_spoof < 1) throw TensorError("ToySpec: counts must be >= 1");
  if (duration_seconds <= 0) throw TensorError("ToySpec: duration must be positive");
}

namespace {

// base signal for both classes: 3-5 seeded harmonics plus a little noise
Waveform toy_clean(const ToySpec& spec, uint64_t index, const char* klass) {
  std::mt19937_64 rng(fnv1a64(std::string(klass) + "#" + std::to_string(index), spec.seed));
  int n = static_cast<int>(spec.duration_seconds * kSampleRate);
  Waveform w;
  w.samples.resize(n);

  int harmonics = std::uniform_int_distribution<int>(3, 5)(rng);
  double f0 = std::uniform_real_distribution<double>(100.0, 400.0)(rng);
  std::vector<double> amp(harmonics), phase(harmonics);
  for (int h = 0; h < harmonics; ++h) {
    amp[h] = std::uniform_real_distribution<double>(0.3, 1.0)(rng) / (h + 1);
    phase[h] = std::uniform_real_distribution<double>(0.0, 2 * M_PI)(rng);
  }
  double norm = 0;
  for (double a : amp) norm += a;
  std::normal_distribution<double> noise(0.0, 0.005);
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / kSampleRate;
    double v = 0;
    for (int h = 0; h < harmonics; ++h)
      v += amp[h] * std::sin(2 * M_PI * f0 * (h + 1) * t + phase[h]);
    w.samples[i] = static_cast<float>(0.5 * v / norm + noise(rng));
  }
  return w;
}

struct Biquad {
  double b0, b1, b2, a1, a2;
  double z1 = 0, z2 = 0;
  double step(double x) {
    double y = b0 * x + z1;
    z1 = b1 * x - a1 * y + z2;
    z2 = b2 * x - a2 * y;
    return y;
  }
};

// bilinear-transform Butterworth low-pass section
Biquad butter_lp(double fc, double fs, double q) {
  double k = std::tan(M_PI * fc / fs);
  double a0 = k * k + k / q + 1.0;
  Biquad s;
  s.b0 = k * k / a0;
  s.b1 = 2 * s.b0;
  s.b2 = s.b0;
  s.a1 = 2 * (k * k - 1) / a0;
  s.a2 = (k * k - k / q + 1) / a0;
  return s;
}

}  // namespace

Waveform toy_bonafide(const ToySpec& spec, uint64_t index) {
  spec.validate();
  return toy_clean(spec, index, "bonafide");
}

Waveform toy_spoof(const ToySpec& spec, uint64_t index) {
  spec.validate();
  Waveform w = toy_clean(spec, index, "spoof");
  int n = static_cast<int>(w.samples.size());

  // playback noise enters before the recording chain, so the band limit
  // shapes it too and the spoof class stays high-frequency poor
  double power = 0;
  for (float v : w.samples) power += static_cast<double>(v) * v;
  power /= n;
  double noise_std = std::sqrt(power / std::pow(10.0, spec.noise_snr_db / 10.0));
  std::mt19937_64 rng(fnv1a64("spoof-noise#" + std::to_string(index), spec.seed));
  std::normal_distribution<double> noise(0.0, noise_std);

  // order-4 Butterworth low pass: two cascaded sections
  Biquad s1 = butter_lp(spec.lowpass_hz, kSampleRate, 0.5411961);
  Biquad s2 = butter_lp(spec.lowpass_hz, kSampleRate, 1.3065630);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = s2.step(s1.step(w.samples[i] + noise(rng)));

  int delay = static_cast<int>(std::lround(spec.echo_delay_s * kSampleRate));
  for (int i = n - 1; i >= delay; --i) y[i] += spec.echo_decay * y[i - delay];

  for (int i = 0; i < n; ++i) w.samples[i] = static_cast<float>(std::clamp(y[i], -1.0, 1.0));
  return w;
}

void gen_toy_dataset(const ToySpec& spec, const std::string& dir) {
  spec.validate();
  fs::create_directories(fs::path(dir) / "wav");

  auto split_of = [](int i, int total) {
    if (i * 10 < total * 6) return Partition::kTrain;
    if (i * 10 < total * 8) return Partition::kDev;
    return Partition::kEval;
  };

  std::map<Partition, std::vector<ProtocolEntry>> protocols;
  auto emit = [&](bool bonafide, int i, int total) {
    ProtocolEntry e;
    char id[32];
    std::snprintf(id, sizeof(id), "TOY_%c_%06d", bonafide ? 'B' : 'S', i);
    e.speaker_id = "TOY_0000";
    e.utt_id = id;
    e.attack_id = bonafide ? "-" : "A01";
    e.bonafide = bonafide;
    e.partition = split_of(i, total);
    Waveform w = bonafide ? toy_bonafide(spec, i) : toy_spoof(spec, i);
    write_wav((fs::path(dir) / "wav" / (e.utt_id + ".wav")).string(), w);
    protocols[e.partition].push_back(std::move(e));
  };
  for (int i = 0; i < spec.n_bonafide; ++i) emit(true, i, spec.n_bonafide);
  for (int i = 0; i < spec.n_spoof; ++i) emit(false, i, spec.n_spoof);

  for (auto& [part, entries] : protocols) {
    std::ofstream out(fs::path(dir) / ("protocol_" + partition_name(part) + ".txt"));
    serialize_protocol(out, entries);
    if (!out) throw TensorError("failed writing protocol for " + partition_name(part));
  }
}

void write_feature(const std::string& path, const FeatureMatrix& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TensorError("cannot open '" + path + "' for writing");
  out.write("FEAT", 4);
  char kind = static_cast<char>(f.kind);
  out.write(&kind, 1);
  put_u32(out, static_cast<uint32_t>(f.rows));
  put_u32(out, static_cast<uint32_t>(f.cols));
  out.write(reinterpret_cast<const char*>(f.values.data()),
            static_cast<std::streamsize>(f.values.size() * sizeof(float)));
  if (!out) throw TensorError("write failed for '" + path + "'");
}

FeatureMatrix read_feature(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::strncmp(magic, "FEAT", 4) != 0)
    throw TensorError("'" + path + "': not a feature file");
  char kind;
  in.read(&kind, 1);
  FeatureMatrix f;
  f.kind = static_cast<FeatureKind>(kind);
  f.rows = get_u32(in);
  f.cols = get_u32(in);
  if (f.rows <= 0 || f.cols <= 0 || f.rows * f.cols > (int64_t{1} << 28))
    throw TensorError("'" + path + "': implausible feature dimensions");
  f.values.resize(f.rows * f.cols);
  in.read(reinterpret_cast<char*>(f.values.data()),
          static_cast<std::streamsize>(f.values.size() * sizeof(float)));
  if (!in) throw TensorError("'" + path + "': truncated feature file");
  return f;
}

namespace {

void write_pgm_csv(const std::vector<float>& values, int64_t rows, int64_t cols,
                   const std::string& prefix) {
  std::ofstream pgm(prefix + ".pgm", std::ios::binary);
  if (!pgm) throw TensorError("cannot open '" + prefix + ".pgm' for writing");
  pgm << "P5\n" << cols << " " << rows << "\n255\n";
  for (float v : values) {
    unsigned char byte = static_cast<unsigned char>(std::lround(255.0f * v));
    pgm.write(reinterpret_cast<char*>(&byte), 1);
  }

  std::ofstream csv(prefix + ".csv");
  if (!csv) throw TensorError("cannot open '" + prefix + ".csv' for writing");
  csv << std::setprecision(8);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) csv << (c ? "," : "") << values[r * cols + c];
    csv << '\n';
  }
  if (!pgm || !csv) throw TensorError("mask export failed for '" + prefix + "'");
}

}  // namespace

void export_mask(const std::vector<Mask>& masks, bool class_average,
                 const std::string& prefix) {
  if (masks.empty()) throw TensorError("export_mask: no masks");
  for (const auto& m : masks) {
    if (m.rows <= 0 || m.cols <= 0 ||
        static_cast<int64_t>(m.values.size()) != m.rows * m.cols)
      throw TensorError("export_mask: shape mismatch");
    for (float v : m.values)
      if (!(v >= 0.0f && v <= 1.0f))
        throw TensorError("export_mask: mask value " + std::to_string(v) + " outside [0,1]");
  }

  if (!class_average) {
    if (masks.size() != 1) throw TensorError("export_mask: single mode expects one mask");
    write_pgm_csv(masks[0].values, masks[0].rows, masks[0].cols, prefix);
    return;
  }

  std::map<std::string, std::pair<std::vector<double>, int>> groups;
  for (const auto& m : masks) {
    if (m.rows != masks[0].rows || m.cols != masks[0].cols)
      throw TensorError("export_mask: class-average needs uniform mask shapes");
    auto& [acc, count] = groups[m.attack_id];
    if (acc.empty()) acc.assign(m.values.size(), 0.0);
    for (size_t i = 0; i < m.values.size(); ++i) acc[i] += m.values[i];
    ++count;
  }
  for (auto& [attack, group] : groups) {
    auto& [acc, count] = group;
    std::vector<float> avg(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) avg[i] = static_cast<float>(acc[i] / count);
    write_pgm_csv(avg, masks[0].rows, masks[0].cols, prefix + "_" + attack);
  }
}

}  // namespace eabn
