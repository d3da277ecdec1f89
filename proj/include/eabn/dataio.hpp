#pragma once

// Dataset plumbing: protocol files, WAV and feature-file persistence, the
// synthetic toy dataset, and attention-mask export.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "eabn/dsp.hpp"

namespace eabn {

enum class Partition { kTrain, kDev, kEval };

std::string partition_name(Partition p);
Partition parse_partition(const std::string& s);

struct ProtocolEntry {
  std::string speaker_id;
  std::string utt_id;
  std::string attack_id = "-";  // "-" for bonafide
  bool bonafide = false;
  Partition partition = Partition::kTrain;
};

// whitespace-separated 5-field lines: <speaker> <utt> - <attack> <key>
std::vector<ProtocolEntry> parse_protocol(std::istream& in, Partition partition);
void serialize_protocol(std::ostream& out, const std::vector<ProtocolEntry>& entries);

// 16-bit PCM mono RIFF
void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

struct ToySpec {
  int n_bonafide = 200;
  int n_spoof = 1800;
  double duration_seconds = 2.0;
  uint64_t seed = 0;
  double lowpass_hz = 4000.0;   // replay channel band limit (order-4)
  double echo_delay_s = 0.040;  // single echo
  double echo_decay = 0.4;
  double noise_snr_db = 25.0;   // additive channel noise

  void validate() const;
};

// writes <dir>/wav/*.wav and <dir>/protocol_{train,dev,eval}.txt with
// 60/20/20 splits per class; pure function of the spec
void gen_toy_dataset(const ToySpec& spec, const std::string& dir);

// synthesis primitives, exposed for testing
Waveform toy_bonafide(const ToySpec& spec, uint64_t index);
Waveform toy_spoof(const ToySpec& spec, uint64_t index);

// feature files: "FEAT" magic, kind u8, rows u32, cols u32, f32 row-major
void write_feature(const std::string& path, const FeatureMatrix& f);
FeatureMatrix read_feature(const std::string& path);

struct Mask {
  std::vector<float> values;  // row-major, in [0,1]
  int64_t rows = 0;
  int64_t cols = 0;
  std::string attack_id = "-";
};

// single mode: writes <prefix>.pgm and <prefix>.csv from one mask;
// class-average mode: one pair per attack id, averaged cellwise
void export_mask(const std::vector<Mask>& masks, bool class_average,
                 const std::string& prefix);

}  // namespace eabn
