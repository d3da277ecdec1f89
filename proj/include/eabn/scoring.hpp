#pragma once

// Countermeasure metrics: EER and the tandem detection cost function.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "eabn/tensor.hpp"  // TensorError

namespace eabn {

struct Trial {
  std::string utt_id;
  std::string attack_id = "-";  // "-" for bonafide
  bool bonafide = false;
  double score = 0.0;
};

struct TdcfParams {
  double pi_tar = 0.9405, pi_non = 0.0095, pi_spoof = 0.05;
  double c_miss_asv = 1.0, c_fa_asv = 10.0;
  double c_miss_cm = 1.0, c_fa_cm = 10.0;
  // operating point of the tandem ASV system, supplied externally
  double p_miss_asv = 0.0, p_fa_asv = 0.0, p_miss_spoof_asv = 0.0;

  void validate() const;
  double c1() const {
    return pi_tar * (c_miss_cm - c_miss_asv * p_miss_asv) - pi_non * c_fa_asv * p_fa_asv;
  }
  double c2() const { return c_fa_cm * pi_spoof * (1.0 - p_miss_spoof_asv); }
};

struct ErrorRates {
  double p_miss = 0.0;  // bonafide with score <= s
  double p_fa = 0.0;    // spoof with score > s
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

struct TdcfResult {
  std::vector<double> thresholds;  // candidate sweep (finite midpoints + sentinels)
  std::vector<double> values;      // raw t-DCF at each threshold
  double c1 = 0.0, c2 = 0.0;
  double min_tdcf = 0.0;
  double min_threshold = 0.0;
  double normalized_min = 0.0;  // min_tdcf / min(c1, c2)
};

// midpoints between consecutive distinct sorted scores, plus +-inf sentinels
std::vector<double> candidate_thresholds(const std::vector<Trial>& trials);

ErrorRates error_rates(const std::vector<Trial>& trials, double threshold);

EerResult compute_eer(const std::vector<Trial>& trials);

TdcfResult tdcf_curve(const std::vector<Trial>& trials, const TdcfParams& p);

// one trial per line: <utt_id> <attack_id> <key> <score>
std::vector<Trial> parse_scores(std::istream& in);
void write_scores(std::ostream& out, const std::vector<Trial>& trials);

// text report: EER, t-DCF, per-attack breakdown
std::string evaluation_report(const std::vector<Trial>& trials, const TdcfParams& p);

}  // namespace eabn
