#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "eabn/config.hpp"
#include "eabn/train.hpp"

using namespace eabn;
namespace fs = std::filesystem;
using F = Tensor<float>;

namespace {

FeatureMatrix class_feature(int label, uint32_t seed, int64_t rows = 12, int64_t cols = 16) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.3f);
  FeatureMatrix f;
  f.rows = rows;
  f.cols = cols;
  f.kind = FeatureKind::kLfcc;
  f.values.resize(rows * cols);
  float base = label == kLabelBonafide ? 1.0f : -1.0f;
  for (auto& v : f.values) v = base + noise(rng);
  return f;
}

}  // namespace

TEST_CASE("lr_at_step: junction, ramp, and decay") {
  CHECK(lr_at_step(1000, 1000, 2e-3) == doctest::Approx(2e-3));
  CHECK(lr_at_step(1, 1000, 1.0) == doctest::Approx(1e-3));
  CHECK(lr_at_step(4000, 1000, 1.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(lr_at_step(0, 1000, 1.0), TensorError);

  // continuous at the junction and strictly decreasing afterwards
  CHECK(lr_at_step(999, 1000, 1.0) == doctest::Approx(0.999));
  CHECK(lr_at_step(1001, 1000, 1.0) == doctest::Approx(std::sqrt(1000.0 / 1001.0)));
  double prev = lr_at_step(1000, 1000, 1.0);
  for (int64_t s = 1001; s < 1100; ++s) {
    double lr = lr_at_step(s, 1000, 1.0);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
  auto p = F::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
  std::vector<NamedParam<float>> params = {{"p", p}};
  OptimizerState<float> state;
  adam_step(params, state, 0.1);
  CHECK(p.data() == std::vector<float>{1.0f, -2.0f, 0.5f});
  CHECK(state.step == 1);
}

TEST_CASE("adam_step: hand-computed first step and asymptotic magnitude") {
  auto p = F::from_data({1}, {0.0f}, true);
  p.grad()[0] = 1.0f;
  std::vector<NamedParam<float>> params = {{"p", p}};
  OptimizerState<float> state;
  adam_step(params, state, 0.1);
  // m-hat = v-hat = 1 after bias correction -> step of -lr
  CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-5));

  // constant gradient: per-step movement approaches lr * sign(g)
  for (int i = 0; i < 500; ++i) {
    p.grad()[0] = 1.0f;
    adam_step(params, state, 0.1);
  }
  float before = p.data()[0];
  p.grad()[0] = 1.0f;
  adam_step(params, state, 0.1);
  CHECK(before - p.data()[0] == doctest::Approx(0.1).epsilon(1e-3));
}

TEST_CASE("adam_step rejects parameters without gradients by name") {
  auto p = F::from_data({1}, {0.0f}, false);
  std::vector<NamedParam<float>> params = {{"pb.stem.weight", p}};
  OptimizerState<float> state;
  CHECK_THROWS_WITH_AS(adam_step(params, state, 0.1), doctest::Contains("pb.stem.weight"),
                       TensorError);
}

TEST_CASE("clip_gradients caps the global norm") {
  auto a = F::from_data({2}, {0.0f, 0.0f}, true);
  auto b = F::from_data({1}, {0.0f}, true);
  a.grad() = {30.0f, 40.0f};
  b.grad() = {0.0f};
  std::vector<NamedParam<float>> params = {{"a", a}, {"b", b}};
  CHECK(clip_gradients(params, 5.0) == doctest::Approx(50.0));
  CHECK(a.grad()[0] == doctest::Approx(3.0));
  CHECK(a.grad()[1] == doctest::Approx(4.0));

  a.grad() = {0.3f, 0.4f};
  clip_gradients(params, 5.0);
  CHECK(a.grad()[0] == doctest::Approx(0.3f));
}

TEST_CASE("single-batch overfit drives the combined loss near zero") {
  EabnModel<float> model(tiny_config(), 12, 16, 3);
  ClassCenters<float> centers(model.config().embedding_dim, 4);
  std::vector<TrainSample> samples;
  for (int i = 0; i < 8; ++i)
    samples.push_back({class_feature(i % 2, 100 + i), i % 2});

  std::vector<NamedParam<float>> params;
  model.visit([&](const std::string& name, Tensor<float>& t, bool trainable) {
    if (trainable) params.emplace_back(name, t);
  });
  params.emplace_back("centers", centers.tensor());
  OptimizerState<float> opt;
  LossWeights w;
  std::vector<int> labels;
  std::vector<float> data;
  for (const auto& s : samples) {
    labels.push_back(s.label);
    data.insert(data.end(), s.feat.values.begin(), s.feat.values.end());
  }
  auto x = F::from_data({8, 1, 12, 16}, data);

  double final_loss = 1e9;
  for (int step = 1; step <= 200; ++step) {
    auto out = model.forward(x, true);
    auto loss = combined_loss(out, labels, w, centers);
    final_loss = loss.total.item();
    model.zero_grad();
    centers.tensor().zero_grad();
    loss.total.backward();
    clip_gradients(params, 5.0);
    adam_step(params, opt, lr_at_step(step, 50, 0.01));
  }
  CHECK(final_loss <= 0.1);
}

TEST_CASE("train loop: logging, best-epoch selection, reproducibility") {
  auto build_set = [&](int n, int seed_base) {
    std::vector<TrainSample> s;
    for (int i = 0; i < n; ++i) s.push_back({class_feature(i % 2, seed_base + i), i % 2});
    return s;
  };
  std::vector<UttSamples> dev;
  for (int i = 0; i < 8; ++i) {
    UttSamples u;
    u.utt_id = "dev" + std::to_string(i);
    u.label = i % 2;
    u.attack_id = i % 2 ? "-" : "A01";
    u.segments = {class_feature(i % 2, 900 + i)};
    dev.push_back(std::move(u));
  }

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.warmup_steps = 10;
  cfg.peak_lr = 5e-3;
  cfg.seed = 1;

  auto run = [&]() {
    EabnModel<float> model(tiny_config(), 12, 16, 5);
    ClassCenters<float> centers(model.config().embedding_dim, 6);
    std::ostringstream log;
    auto r = train(model, centers, build_set(24, 0), dev, cfg, &log);
    return std::make_pair(r, log.str());
  };
  auto [r1, log1] = run();
  auto [r2, log2] = run();

  CHECK(log1 == log2);  // bitwise reproducibility
  REQUIRE(r1.log.size() == 3);
  double min_eer = 1e9;
  for (const auto& e : r1.log) {
    CHECK(e.dev_eer >= 0.0);
    CHECK(e.dev_eer <= 1.0);
    CHECK(std::isfinite(e.train_loss));
    min_eer = std::min(min_eer, e.dev_eer);
  }
  CHECK(r1.best_dev_eer == min_eer);
  CHECK_FALSE(r1.best_state.empty());

  // log format: 7 tab-separated fields per line
  std::istringstream ls(log1);
  std::string line;
  int lines = 0;
  while (std::getline(ls, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), '\t') == 6);
  }
  CHECK(lines == 3);

  TrainConfig bad = cfg;
  bad.epochs = 0;
  EabnModel<float> model(tiny_config(), 12, 16, 5);
  ClassCenters<float> centers(model.config().embedding_dim, 6);
  CHECK_THROWS_AS(train(model, centers, build_set(8, 0), dev, bad, nullptr), TensorError);
}

TEST_CASE("score_utterance: mean contract and rejection of empty input") {
  EabnModel<float> model(tiny_config(), 12, 16, 7);
  auto a = class_feature(0, 1), b = class_feature(1, 2);
  double sa = score_utterance(model, {a});
  double sb = score_utterance(model, {b});
  CHECK(score_utterance(model, {a, b}) == doctest::Approx((sa + sb) / 2).epsilon(1e-6));
  CHECK_THROWS_AS(score_utterance(model, {}), TensorError);
}

TEST_CASE("checkpoint round trip is byte-exact and restores the model") {
  auto dir = fs::temp_directory_path() / "eabn_test_ckpt";
  fs::create_directories(dir);
  auto path = (dir / "m.ckpt").string();

  EabnModel<float> model(tiny_config(), 12, 16, 11);
  ClassCenters<float> centers(model.config().embedding_dim, 12);
  auto named = collect_named(model, &centers);
  save_checkpoint(path, named);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == named.size());
  for (size_t i = 0; i < named.size(); ++i) {
    CHECK(loaded[i].name == named[i].name);
    CHECK(loaded[i].dims == named[i].dims);
    CHECK(loaded[i].data == named[i].data);
  }

  // byte-exact: saving the loaded state reproduces the file
  auto path2 = (dir / "m2.ckpt").string();
  save_checkpoint(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  // perturb the model, then restore
  auto x = F::from_data({1, 1, 12, 16}, class_feature(0, 5).values);
  auto before = model.forward(x, false).pb_probs.data();
  model.visit([](const std::string&, Tensor<float>& t, bool trainable) {
    if (trainable)
      for (auto& v : t.data()) v += 0.05f;
  });
  apply_checkpoint(model, &centers, load_checkpoint(path));
  auto after = model.forward(x, false).pb_probs.data();
  CHECK(before == after);

  // corrupt and mismatched files are rejected
  std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
  junk << "EABNxxxx";
  junk.close();
  CHECK_THROWS_AS(load_checkpoint((dir / "junk.ckpt").string()), TensorError);

  EabnModel<float> other(tiny_config(), 12, 16, 13);
  auto wrong = collect_named(other, nullptr);  // missing centers
  CHECK_THROWS_AS(apply_checkpoint(model, &centers, wrong), TensorError);
  fs::remove_all(dir);
}

TEST_CASE("config parsing: sections, comments, types, and errors") {
  std::istringstream in(
      "# training setup\n"
      "[optimizer]\n"
      "peak_lr = 0.001\n"
      "warmup = 1000  # steps\n"
      "[data]\n"
      "feature = lfcc\n"
      "augment = on\n");
  auto cfg = Config::parse(in);
  CHECK(cfg.get("optimizer", "peak_lr") == "0.001");
  CHECK(cfg.get_double("optimizer", "peak_lr", 0) == doctest::Approx(0.001));
  CHECK(cfg.get_int("optimizer", "warmup", 0) == 1000);
  CHECK(cfg.get("data", "feature") == "lfcc");
  CHECK(cfg.get_bool("data", "augment", false));
  CHECK(cfg.get_or("data", "missing", "dflt") == "dflt");
  CHECK(cfg.get_double("data", "absent", 2.5) == 2.5);
  CHECK_THROWS_WITH_AS(cfg.get("data", "absent"), doctest::Contains("[data] absent"),
                       TensorError);
  CHECK_THROWS_AS(cfg.get_int("data", "feature", 0), TensorError);

  std::istringstream bad1("[unterminated\n");
  CHECK_THROWS_WITH_AS(Config::parse(bad1), doctest::Contains("line 1"), TensorError);
  std::istringstream bad2("[s]\nno_equals_here\n");
  CHECK_THROWS_WITH_AS(Config::parse(bad2), doctest::Contains("line 2"), TensorError);
}
