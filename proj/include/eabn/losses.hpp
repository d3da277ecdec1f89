#pragma once

// Combined training loss: triplet center loss on the embeddings plus a
// focal term on the perception head, plus a weighted cross-entropy on the
// attention head:  L_total = [L_tc + lambda_focal * L_focal] + lambda_ab * L_ab.

#include <array>
#include <random>

#include "eabn/model.hpp"
#include "eabn/tensor.hpp"

namespace eabn {

inline constexpr int kLabelSpoof = 0;
inline constexpr int kLabelBonafide = 1;

struct LossWeights {
  double lambda_ab = 0.1;
  double lambda_focal = 0.005;
  double margin = 32.0;
  double focal_exponent = 0.005;  // exponent as printed; see config for overrides
  // per-class weights, index 0 = spoof, 1 = bonafide; defaults assume
  // balanced data, inverse-frequency weights are set from the protocol
  std::array<double, 2> focal_alpha = {1.0, 1.0};
  std::array<double, 2> ce_weights = {1.0, 1.0};

  // inverse class frequency, normalized to mean 1
  void set_class_counts(int64_t n_spoof, int64_t n_bonafide) {
    double ws = n_spoof > 0 ? 1.0 / n_spoof : 0.0;
    double wb = n_bonafide > 0 ? 1.0 / n_bonafide : 0.0;
    double norm = 2.0 / (ws + wb);
    ce_weights = {ws * norm, wb * norm};
    focal_alpha = ce_weights;
  }
};

// trainable class centers in the embedding space
template <typename T>
class ClassCenters {
 public:
  ClassCenters() = default;
  ClassCenters(int64_t dim, uint64_t seed) : dim_(dim) {
    centers_ = Tensor<T>::zeros({2, dim}, true);
    std::mt19937 rng(static_cast<uint32_t>(seed));
    init_normal(centers_, rng, T(1));
  }
  Tensor<T>& tensor() { return centers_; }
  const Tensor<T>& tensor() const { return centers_; }
  int64_t dim() const { return dim_; }

 private:
  int64_t dim_ = 0;
  Tensor<T> centers_;
};

inline constexpr double kProbFloor = 1e-7;

// -alpha_t * (1 - p_t)^exponent * log(p_t), batch mean; p_t is the
// probability assigned to the true class, clamped below at 1e-7
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, const std::vector<int>& labels,
                     const std::array<double, 2>& alpha, double exponent) {
  auto pt = clamp_min(pick_class(probs, labels), T(kProbFloor));
  // (1 - p)^g is evaluated on 1-p clamped to keep pow differentiable at p=1
  auto one_minus = clamp_min(add_scalar(scale(pt, T(-1)), T(1)), T(kProbFloor));
  auto weighted = mul(pow_scalar(one_minus, T(exponent)), log_op(pt));
  std::vector<T> av(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) av[i] = static_cast<T>(alpha[labels[i]]);
  auto aw = Tensor<T>::from_data({static_cast<int64_t>(labels.size())}, av);
  return scale(mean(mul(aw, weighted)), T(-1));
}

// hinge form: max(0, D(f, c_label) - min_{j != label} D(f, c_j) + m) with
// squared Euclidean D; batch mean; gradients reach both the embeddings and
// the centers
template <typename T>
Tensor<T> triplet_center_loss(const Tensor<T>& embeddings, const std::vector<int>& labels,
                              ClassCenters<T>& centers, double margin) {
  int64_t n = embeddings.dim(0);
  if (static_cast<int64_t>(labels.size()) != n)
    throw TensorError("triplet_center_loss: label count mismatch");
  std::vector<int> others(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) others[i] = 1 - labels[i];

  auto own = select_rows(centers.tensor(), labels);
  auto other = select_rows(centers.tensor(), others);
  auto d_own = sum_cols(mul(sub(embeddings, own), sub(embeddings, own)));
  auto d_other = sum_cols(mul(sub(embeddings, other), sub(embeddings, other)));
  auto hinge = relu(add_scalar(sub(d_own, d_other), T(margin)));
  return mean(hinge);
}

// -w_label * log(p_label), batch mean
template <typename T>
Tensor<T> weighted_ce(const Tensor<T>& probs, const std::vector<int>& labels,
                      const std::array<double, 2>& class_weights) {
  auto pt = clamp_min(pick_class(probs, labels), T(kProbFloor));
  std::vector<T> wv(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) wv[i] = static_cast<T>(class_weights[labels[i]]);
  auto w = Tensor<T>::from_data({static_cast<int64_t>(labels.size())}, wv);
  return scale(mean(mul(w, log_op(pt))), T(-1));
}

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double l_tc = 0, l_focal = 0, l_ab = 0;
};

template <typename T>
LossBreakdown<T> combined_loss(const EabnOutput<T>& out, const std::vector<int>& labels,
                               const LossWeights& w, ClassCenters<T>& centers) {
  auto l_tc = triplet_center_loss(out.embedding, labels, centers, w.margin);
  auto l_focal = focal_loss(out.pb_probs, labels, w.focal_alpha, w.focal_exponent);
  auto l_ab = weighted_ce(out.ab_probs, labels, w.ce_weights);
  auto total = add(add(l_tc, scale(l_focal, T(w.lambda_focal))), scale(l_ab, T(w.lambda_ab)));
  return {total, static_cast<double>(l_tc.item()), static_cast<double>(l_focal.item()),
          static_cast<double>(l_ab.item())};
}

}  // namespace eabn
