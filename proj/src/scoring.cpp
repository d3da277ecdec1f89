#include "eabn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace eabn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_both_classes(const std::vector<Trial>& trials, const char* op) {
  bool has_bona = false, has_spoof = false;
  for (const auto& t : trials) (t.bonafide ? has_bona : has_spoof) = true;
  if (!has_bona || !has_spoof)
    throw TensorError(std::string(op) + ": need at least one bonafide and one spoof trial");
}

}  // namespace

void TdcfParams::validate() const {
  if (std::abs(pi_tar + pi_non + pi_spoof - 1.0) > 1e-9)
    throw TensorError("TdcfParams: priors must sum to 1, got " +
                      std::to_string(pi_tar + pi_non + pi_spoof));
  if (c_miss_asv <= 0 || c_fa_asv <= 0 || c_miss_cm <= 0 || c_fa_cm <= 0)
    throw TensorError("TdcfParams: costs must be positive");
  for (double r : {p_miss_asv, p_fa_asv, p_miss_spoof_asv})
    if (r < 0 || r > 1) throw TensorError("TdcfParams: ASV rates must lie in [0,1]");
}

std::vector<double> candidate_thresholds(const std::vector<Trial>& trials) {
  std::vector<double> scores;
  scores.reserve(trials.size());
  for (const auto& t : trials) {
    if (!std::isfinite(t.score)) throw TensorError("non-finite score for trial " + t.utt_id);
    scores.push_back(t.score);
  }
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> cand = {-kInf};
  for (size_t i = 0; i + 1 < scores.size(); ++i)
    cand.push_back(0.5 * (scores[i] + scores[i + 1]));
  cand.push_back(kInf);
  return cand;
}

ErrorRates error_rates(const std::vector<Trial>& trials, double threshold) {
  check_both_classes(trials, "error_rates");
  int64_t n_bona = 0, n_spoof = 0, miss = 0, fa = 0;
  for (const auto& t : trials) {
    if (t.bonafide) {
      ++n_bona;
      if (t.score <= threshold) ++miss;
    } else {
      ++n_spoof;
      if (t.score > threshold) ++fa;
    }
  }
  return {static_cast<double>(miss) / n_bona, static_cast<double>(fa) / n_spoof};
}

EerResult compute_eer(const std::vector<Trial>& trials) {
  check_both_classes(trials, "compute_eer");
  auto cand = candidate_thresholds(trials);
  // diff = p_miss - p_fa is non-decreasing across the sweep
  double prev_miss = 0, prev_fa = 1, prev_thr = cand.front();
  for (double s : cand) {
    auto [miss, fa] = error_rates(trials, s);
    double diff = miss - fa;
    if (diff >= 0) {
      if (diff == 0) return {miss, s};
      // interpolate between the previous operating point and this one
      double denom = (miss - prev_miss) + (prev_fa - fa);
      double t = denom > 0 ? (prev_fa - prev_miss) / denom : 0.0;
      double eer = prev_miss + t * (miss - prev_miss);
      double thr = std::isfinite(prev_thr) ? prev_thr : s;
      return {eer, thr};
    }
    prev_miss = miss;
    prev_fa = fa;
    prev_thr = s;
  }
  return {prev_miss, prev_thr};  // unreachable: diff hits +? at +inf where fa=0
}

TdcfResult tdcf_curve(const std::vector<Trial>& trials, const TdcfParams& p) {
  check_both_classes(trials, "tdcf_curve");
  p.validate();
  TdcfResult r;
  r.c1 = p.c1();
  r.c2 = p.c2();
  if (r.c1 <= 0 || r.c2 <= 0)
    throw TensorError("tdcf_curve: degenerate cost model (C1 = " + std::to_string(r.c1) +
                      ", C2 = " + std::to_string(r.c2) + ")");
  r.thresholds = candidate_thresholds(trials);
  r.min_tdcf = kInf;
  for (double s : r.thresholds) {
    auto [miss, fa] = error_rates(trials, s);
    double v = r.c1 * miss + r.c2 * fa;
    r.values.push_back(v);
    if (v < r.min_tdcf) {
      r.min_tdcf = v;
      r.min_threshold = s;
    }
  }
  r.normalized_min = r.min_tdcf / std::min(r.c1, r.c2);
  return r;
}

std::vector<Trial> parse_scores(std::istream& in) {
  std::vector<Trial> trials;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Trial t;
    std::string key, score_str;
    if (!(ls >> t.utt_id >> t.attack_id >> key >> score_str))
      throw TensorError("score file line " + std::to_string(line_no) +
                        ": expected <utt_id> <attack_id> <key> <score>");
    if (key == "bonafide")
      t.bonafide = true;
    else if (key == "spoof")
      t.bonafide = false;
    else
      throw TensorError("score file line " + std::to_string(line_no) + ": unknown key '" + key +
                        "'");
    try {
      t.score = std::stod(score_str);
    } catch (const std::exception&) {
      throw TensorError("score file line " + std::to_string(line_no) + ": bad score '" +
                        score_str + "'");
    }
    if (!std::isfinite(t.score))
      throw TensorError("score file line " + std::to_string(line_no) + ": non-finite score");
    trials.push_back(std::move(t));
  }
  return trials;
}

void write_scores(std::ostream& out, const std::vector<Trial>& trials) {
  out << std::setprecision(10);
  for (const auto& t : trials)
    out << t.utt_id << ' ' << t.attack_id << ' ' << (t.bonafide ? "bonafide" : "spoof") << ' '
        << t.score << '\n';
}

std::string evaluation_report(const std::vector<Trial>& trials, const TdcfParams& p) {
  auto eer = compute_eer(trials);
  auto tdcf = tdcf_curve(trials, p);
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "trials: " << trials.size() << "\n";
  os << "EER: " << 100.0 * eer.eer << "% (threshold " << eer.threshold << ")\n";
  os << "min t-DCF (raw): " << std::setprecision(6) << tdcf.min_tdcf << "\n";
  os << "min t-DCF (normalized): " << tdcf.normalized_min << "\n";
  os << "C1: " << tdcf.c1 << "  C2: " << tdcf.c2 << "\n";

  std::map<std::string, std::vector<Trial>> by_attack;
  std::vector<Trial> bona;
  for (const auto& t : trials)
    (t.bonafide ? bona : by_attack[t.attack_id]).push_back(t);
  for (auto& [attack, spoofs] : by_attack) {
    auto subset = bona;
    subset.insert(subset.end(), spoofs.begin(), spoofs.end());
    auto sub_eer = compute_eer(subset);
    os << "attack " << attack << ": EER " << std::setprecision(4) << 100.0 * sub_eer.eer << "% ("
       << spoofs.size() << " trials)\n";
  }
  return os.str();
}

}  // namespace eabn
