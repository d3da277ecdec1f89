#include "eabn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

namespace eabn {

namespace {

Tensor<float> batch_tensor(const std::vector<TrainSample>& set, const std::vector<size_t>& ids,
                           size_t begin, size_t end) {
  int64_t rows = set[ids[begin]].feat.rows, cols = set[ids[begin]].feat.cols;
  int64_t n = static_cast<int64_t>(end - begin);
  std::vector<float> data;
  data.reserve(n * rows * cols);
  for (size_t i = begin; i < end; ++i) {
    const auto& f = set[ids[i]].feat;
    if (f.rows != rows || f.cols != cols)
      throw TensorError("train: mixed feature shapes in one batch");
    data.insert(data.end(), f.values.begin(), f.values.end());
  }
  return Tensor<float>::from_data({n, 1, rows, cols}, std::move(data));
}

}  // namespace

double score_utterance(EabnModel<float>& model, const std::vector<FeatureMatrix>& segments) {
  if (segments.empty()) throw TensorError("score_utterance: no segments");
  double acc = 0;
  for (const auto& f : segments) {
    auto x = Tensor<float>::from_data({1, 1, f.rows, f.cols}, f.values);
    auto out = model.forward(x, false);
    double pb = std::max(static_cast<double>(out.pb_probs.data()[kLabelBonafide]), kProbFloor);
    double ps = std::max(static_cast<double>(out.pb_probs.data()[kLabelSpoof]), kProbFloor);
    acc += std::log(pb) - std::log(ps);
  }
  return acc / static_cast<double>(segments.size());
}

std::vector<Trial> score_utterances(EabnModel<float>& model,
                                    const std::vector<UttSamples>& utts) {
  // forward in batches; per-sample results are identical to one-at-a-time
  // evaluation, this only amortizes the op overhead
  constexpr size_t kBatch = 16;
  std::vector<std::pair<size_t, const FeatureMatrix*>> flat;
  for (size_t u = 0; u < utts.size(); ++u) {
    if (utts[u].segments.empty())
      throw TensorError("score_utterances: utterance '" + utts[u].utt_id + "' has no segments");
    for (const auto& f : utts[u].segments) flat.emplace_back(u, &f);
  }
  std::vector<double> acc(utts.size(), 0.0);
  for (size_t b = 0; b < flat.size(); b += kBatch) {
    size_t e = std::min(flat.size(), b + kBatch);
    int64_t rows = flat[b].second->rows, cols = flat[b].second->cols;
    std::vector<float> data;
    data.reserve((e - b) * rows * cols);
    for (size_t i = b; i < e; ++i) {
      if (flat[i].second->rows != rows || flat[i].second->cols != cols)
        throw TensorError("score_utterances: mixed feature shapes");
      data.insert(data.end(), flat[i].second->values.begin(), flat[i].second->values.end());
    }
    auto x = Tensor<float>::from_data({static_cast<int64_t>(e - b), 1, rows, cols},
                                      std::move(data));
    auto out = model.forward(x, false);
    for (size_t i = b; i < e; ++i) {
      const float* p = out.pb_probs.data().data() + (i - b) * 2;
      double pb = std::max(static_cast<double>(p[kLabelBonafide]), kProbFloor);
      double ps = std::max(static_cast<double>(p[kLabelSpoof]), kProbFloor);
      acc[flat[i].first] += std::log(pb) - std::log(ps);
    }
  }
  std::vector<Trial> trials;
  trials.reserve(utts.size());
  for (size_t u = 0; u < utts.size(); ++u)
    trials.push_back({utts[u].utt_id, utts[u].attack_id, utts[u].label == kLabelBonafide,
                      acc[u] / static_cast<double>(utts[u].segments.size())});
  return trials;
}

TrainResult train(EabnModel<float>& model, ClassCenters<float>& centers,
                  const std::vector<TrainSample>& train_set,
                  const std::vector<UttSamples>& dev_set, const TrainConfig& cfg,
                  std::ostream* log) {
  cfg.validate();
  if (train_set.empty()) throw TensorError("train: empty training set");
  if (dev_set.empty()) throw TensorError("train: empty dev set");

  std::vector<NamedParam<float>> params;
  model.visit([&](const std::string& name, Tensor<float>& t, bool trainable) {
    if (trainable) params.emplace_back(name, t);
  });
  params.emplace_back("centers", centers.tensor());

  OptimizerState<float> opt;
  opt.beta1 = cfg.adam_beta1;
  opt.beta2 = cfg.adam_beta2;
  opt.eps = cfg.adam_eps;

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  TrainResult result;
  int64_t global_step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochStats stats;
    stats.epoch = epoch;
    int64_t batches = 0;
    for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
      size_t e = std::min(order.size(), b + cfg.batch_size);
      auto x = batch_tensor(train_set, order, b, e);
      std::vector<int> labels;
      labels.reserve(e - b);
      for (size_t i = b; i < e; ++i) labels.push_back(train_set[order[i]].label);

      auto out = model.forward(x, true);
      auto loss = combined_loss(out, labels, cfg.loss, centers);
      double total = static_cast<double>(loss.total.item());
      if (!std::isfinite(total))
        throw TensorError("train: non-finite loss at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(batches));

      model.zero_grad();
      centers.tensor().zero_grad();
      loss.total.backward();
      clip_gradients(params, cfg.clip_norm);
      ++global_step;
      double lr = lr_at_step(global_step, cfg.warmup_steps, cfg.peak_lr);
      adam_step(params, opt, lr);

      stats.train_loss += total;
      stats.l_tc += loss.l_tc;
      stats.l_focal += loss.l_focal;
      stats.l_ab += loss.l_ab;
      ++batches;
      stats.lr = lr;
    }
    stats.train_loss /= batches;
    stats.l_tc /= batches;
    stats.l_focal /= batches;
    stats.l_ab /= batches;

    stats.dev_eer = compute_eer(score_utterances(model, dev_set)).eer;
    result.log.push_back(stats);
    if (log)
      *log << stats.epoch << '\t' << stats.train_loss << '\t' << stats.l_tc << '\t'
           << stats.l_focal << '\t' << stats.l_ab << '\t' << stats.dev_eer << '\t' << stats.lr
           << '\n'
           << std::flush;

    if (result.best_state.empty() || stats.dev_eer < result.best_dev_eer) {
      result.best_dev_eer = stats.dev_eer;
      result.best_epoch = epoch;
      result.best_state = collect_named(model, &centers);
    }
  }
  return result;
}

}  // namespace eabn
