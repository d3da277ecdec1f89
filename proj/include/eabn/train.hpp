#pragma once

// Optimization loop: Adam with warmup / inverse-square-root decay,
// epoch management, and dev-EER model selection.

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "eabn/checkpoint.hpp"
#include "eabn/dsp.hpp"
#include "eabn/losses.hpp"
#include "eabn/model.hpp"
#include "eabn/scoring.hpp"

namespace eabn {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  int warmup_steps = 1000;
  double peak_lr = 1e-3;  // the printed 1e-9 base is selectable via config
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  uint64_t seed = 0;
  LossWeights loss;

  void validate() const {
    if (epochs < 1) throw TensorError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw TensorError("TrainConfig: batch size must be >= 1");
    if (warmup_steps < 1) throw TensorError("TrainConfig: warmup must be >= 1");
    if (peak_lr <= 0) throw TensorError("TrainConfig: peak lr must be positive");
  }
};

// peak * min(step/warmup, sqrt(warmup/step)): linear ramp, then 1/sqrt decay
inline double lr_at_step(int64_t step, int64_t warmup, double peak) {
  if (step < 1) throw TensorError("lr_at_step: step must be >= 1");
  if (warmup < 1) throw TensorError("lr_at_step: warmup must be >= 1");
  double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

template <typename T>
struct OptimizerState {
  double beta1 = 0.9, beta2 = 0.98, eps = 1e-8;
  int64_t step = 0;
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments;  // m, v
};

template <typename T>
using NamedParam = std::pair<std::string, Tensor<T>>;

// scales all gradients so the global norm is at most max_norm
template <typename T>
double clip_gradients(std::vector<NamedParam<T>>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, t] : params)
    for (T g : t.grad()) sq += static_cast<double>(g) * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    T s = static_cast<T>(max_norm / norm);
    for (auto& [name, t] : params)
      for (T& g : t.grad()) g *= s;
  }
  return norm;
}

// standard bias-corrected Adam update; increments the step counter
template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, OptimizerState<T>& state, double lr) {
  ++state.step;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    if (!t.requires_grad()) throw TensorError("adam_step: parameter '" + name + "' has no gradient");
    auto& [m, v] = state.moments[name];
    if (m.empty()) {
      m.assign(t.numel(), T(0));
      v.assign(t.numel(), T(0));
    }
    auto& g = t.grad();
    auto& x = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      m[i] = static_cast<T>(state.beta1 * m[i] + (1 - state.beta1) * g[i]);
      v[i] = static_cast<T>(state.beta2 * v[i] + (1 - state.beta2) * g[i] * g[i]);
      double mh = m[i] / bc1, vh = v[i] / bc2;
      x[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + state.eps));
    }
  }
}

// one 4 s segment with its label, ready for batching
struct TrainSample {
  FeatureMatrix feat;
  int label = 0;  // kLabelSpoof / kLabelBonafide
};

// all segments of one utterance, for utterance-level scoring
struct UttSamples {
  std::string utt_id;
  std::string attack_id = "-";
  int label = 0;
  std::vector<FeatureMatrix> segments;
};

// mean over segments of log p_bonafide - log p_spoof (perception head)
double score_utterance(EabnModel<float>& model, const std::vector<FeatureMatrix>& segments);

std::vector<Trial> score_utterances(EabnModel<float>& model,
                                    const std::vector<UttSamples>& utts);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, l_tc = 0, l_focal = 0, l_ab = 0;
  double dev_eer = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int best_epoch = 0;
  double best_dev_eer = 1.0;
  std::vector<NamedTensor> best_state;
};

// runs the full loop; per-epoch TSV lines go to `log` if non-null:
// epoch, train_loss, l_tc, l_focal, l_ab, dev_eer, lr
TrainResult train(EabnModel<float>& model, ClassCenters<float>& centers,
                  const std::vector<TrainSample>& train_set,
                  const std::vector<UttSamples>& dev_set, const TrainConfig& cfg,
                  std::ostream* log);

}  // namespace eabn
