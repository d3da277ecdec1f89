// eabn: anti-spoofing toolkit command line.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "eabn/checkpoint.hpp"
#include "eabn/config.hpp"
#include "eabn/dataio.hpp"
#include "eabn/dsp.hpp"
#include "eabn/losses.hpp"
#include "eabn/model.hpp"
#include "eabn/scoring.hpp"
#include "eabn/train.hpp"

namespace fs = std::filesystem;
using namespace eabn;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

BackboneConfig model_by_name(const std::string& name) {
  if (name == "a0") return efficientnet_a0();
  if (name == "b0") return efficientnet_b0();
  if (name == "se-res2net50") return se_res2net50();
  if (name == "tiny") return tiny_config();
  throw UsageError("unknown model '" + name + "' (expected a0, b0, se-res2net50, or tiny)");
}

std::pair<int64_t, int64_t> parse_input_dims(const std::string& s) {
  auto x = s.find('x');
  if (x == std::string::npos) throw UsageError("bad --input '" + s + "', expected HxW");
  try {
    int64_t h = std::stoll(s.substr(0, x)), w = std::stoll(s.substr(x + 1));
    if (h < 1 || w < 1) throw UsageError("bad --input '" + s + "'");
    return {h, w};
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("bad --input '" + s + "', expected HxW");
  }
}

FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "logpowspec") return FeatureKind::kLogPowSpec;
  if (s == "lfcc") return FeatureKind::kLfcc;
  throw UsageError("unknown feature '" + s + "' (expected logpowspec or lfcc)");
}

// all .feat segments of one utterance, in segment order
std::vector<FeatureMatrix> load_segments(const fs::path& dir, const std::string& utt_id) {
  std::vector<FeatureMatrix> segments;
  for (int idx = 0;; ++idx) {
    fs::path p = dir / (utt_id + "__" + std::to_string(idx) + ".feat");
    if (!fs::exists(p)) break;
    auto f = read_feature(p.string());
    f.source_id = utt_id;
    f.segment_index = idx;
    segments.push_back(std::move(f));
  }
  if (segments.empty())
    throw TensorError("no feature files for utterance '" + utt_id + "' in " + dir.string());
  return segments;
}

std::vector<ProtocolEntry> load_protocol(const std::string& path, Partition partition) {
  std::ifstream in(path);
  if (!in) throw TensorError("cannot open protocol '" + path + "'");
  return parse_protocol(in, partition);
}

// atomic single-file write: stream into <path>.tmp, rename on success
class AtomicFile {
 public:
  explicit AtomicFile(const std::string& path) : path_(path), tmp_(path + ".tmp"), out_(tmp_) {
    if (!out_) throw TensorError("cannot open '" + tmp_ + "' for writing");
  }
  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      fs::remove(tmp_, ec);
    }
  }
  std::ostream& stream() { return out_; }
  void commit() {
    out_.close();
    if (!out_) throw TensorError("write failed for '" + tmp_ + "'");
    fs::rename(tmp_, path_);
    committed_ = true;
  }

 private:
  std::string path_, tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

int cmd_gen_toy(const std::string& out_dir, int n_bonafide, int n_spoof, double duration,
                uint64_t seed) {
  ToySpec spec;
  spec.n_bonafide = n_bonafide;
  spec.n_spoof = n_spoof;
  spec.duration_seconds = duration;
  spec.seed = seed;
  gen_toy_dataset(spec, out_dir);
  std::cout << "wrote " << (n_bonafide + n_spoof) << " utterances to " << out_dir << "\n";
  return 0;
}

int cmd_extract(const std::string& protocol_path, const std::string& audio_dir,
                const std::string& out_dir, const std::string& feature, bool augment,
                int workers, uint64_t seed) {
  auto kind = parse_feature_kind(feature);
  auto entries = load_protocol(protocol_path, Partition::kTrain);
  fs::create_directories(out_dir);

  AugmentPolicy policy;
  policy.rng_seed = seed;

  auto process = [&](const ProtocolEntry& e) {
    auto w = read_wav((fs::path(audio_dir) / (e.utt_id + ".wav")).string());
    auto segs = segment_4s(w);
    for (size_t i = 0; i < segs.size(); ++i) {
      auto f = kind == FeatureKind::kLogPowSpec ? log_pow_spec(segs[i]) : lfcc(segs[i]);
      f.source_id = e.utt_id;
      f.segment_index = static_cast<int>(i);
      if (augment) f = spec_augment(f, policy);
      write_feature(
          (fs::path(out_dir) / (e.utt_id + "__" + std::to_string(i) + ".feat")).string(), f);
    }
  };

  if (workers <= 1) {
    for (const auto& e : entries) process(e);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        try {
          for (size_t i = next++; i < entries.size(); i = next++) process(entries[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::cout << "extracted " << feature << " features for " << entries.size()
            << " utterances to " << out_dir << "\n";
  return 0;
}

std::vector<UttSamples> group_by_utterance(const std::vector<ProtocolEntry>& entries,
                                           const fs::path& feature_dir) {
  std::vector<UttSamples> utts;
  for (const auto& e : entries) {
    UttSamples u;
    u.utt_id = e.utt_id;
    u.attack_id = e.attack_id;
    u.label = e.bonafide ? kLabelBonafide : kLabelSpoof;
    u.segments = load_segments(feature_dir, e.utt_id);
    utts.push_back(std::move(u));
  }
  return utts;
}

int cmd_train(const std::string& config_path, uint64_t cli_seed, bool seed_given) {
  auto cfg = Config::parse_file(config_path);

  fs::path feature_dir = cfg.get("data", "feature_dir");
  auto train_entries = load_protocol(cfg.get("data", "protocol_train"), Partition::kTrain);
  auto dev_entries = load_protocol(cfg.get("data", "protocol_dev"), Partition::kDev);
  if (train_entries.empty()) throw TensorError("empty training protocol");

  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("optimizer", "epochs", 40));
  tc.batch_size = static_cast<int>(cfg.get_int("optimizer", "batch_size", 64));
  tc.warmup_steps = static_cast<int>(cfg.get_int("schedule", "warmup_steps", 1000));
  tc.peak_lr = cfg.get_double("schedule", "peak_lr", 1e-3);
  tc.adam_beta1 = cfg.get_double("optimizer", "beta1", 0.9);
  tc.adam_beta2 = cfg.get_double("optimizer", "beta2", 0.98);
  tc.seed = seed_given ? cli_seed : static_cast<uint64_t>(cfg.get_int("optimizer", "seed", 0));
  tc.loss.lambda_ab = cfg.get_double("loss", "lambda_ab", 0.1);
  tc.loss.lambda_focal = cfg.get_double("loss", "lambda_focal", 0.005);
  tc.loss.margin = cfg.get_double("loss", "margin", 32.0);
  tc.loss.focal_exponent = cfg.get_double("loss", "focal_exponent", 0.005);

  int64_t n_spoof = 0, n_bona = 0;
  std::vector<TrainSample> train_set;
  for (const auto& e : train_entries) {
    int label = e.bonafide ? kLabelBonafide : kLabelSpoof;
    (e.bonafide ? n_bona : n_spoof)++;
    for (auto& f : load_segments(feature_dir, e.utt_id))
      train_set.push_back({std::move(f), label});
  }
  tc.loss.set_class_counts(n_spoof, n_bona);
  auto dev_set = group_by_utterance(dev_entries, feature_dir);

  auto backbone = model_by_name(cfg.get_or("model", "name", "a0"));
  int64_t in_h = train_set.front().feat.rows, in_w = train_set.front().feat.cols;
  EabnModel<float> model(backbone, in_h, in_w, tc.seed + 1);
  ClassCenters<float> centers(backbone.embedding_dim, tc.seed + 2);

  std::string ckpt_path = cfg.get("output", "checkpoint");
  std::string log_path = cfg.get("output", "log");

  AtomicFile log_file(log_path);
  auto result = train(model, centers, train_set, dev_set, tc, &log_file.stream());
  log_file.commit();
  save_checkpoint(ckpt_path + ".tmp", result.best_state);
  fs::rename(ckpt_path + ".tmp", ckpt_path);
  std::cout << "best epoch " << result.best_epoch << ", dev EER "
            << 100.0 * result.best_dev_eer << "%\n";
  return 0;
}

int cmd_score(const std::string& ckpt_path, const std::string& feature_dir,
              const std::string& protocol_path, const std::string& out_path,
              const std::string& model_name) {
  auto entries = load_protocol(protocol_path, Partition::kEval);
  if (entries.empty()) throw TensorError("empty protocol '" + protocol_path + "'");
  auto utts = group_by_utterance(entries, feature_dir);

  auto backbone = model_by_name(model_name);
  int64_t in_h = utts.front().segments.front().rows;
  int64_t in_w = utts.front().segments.front().cols;
  EabnModel<float> model(backbone, in_h, in_w);
  ClassCenters<float> centers(backbone.embedding_dim, 0);
  apply_checkpoint(model, &centers, load_checkpoint(ckpt_path));

  auto trials = score_utterances(model, utts);
  AtomicFile out(out_path);
  write_scores(out.stream(), trials);
  out.commit();
  std::cout << "scored " << trials.size() << " utterances to " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& score_path, const std::string& tdcf_path) {
  std::ifstream in(score_path);
  if (!in) throw TensorError("cannot open score file '" + score_path + "'");
  auto trials = parse_scores(in);

  TdcfParams p;
  p.p_miss_asv = 0.05;
  p.p_fa_asv = 0.01;
  p.p_miss_spoof_asv = 0.5;
  if (!tdcf_path.empty()) {
    auto cfg = Config::parse_file(tdcf_path);
    p.pi_tar = cfg.get_double("tdcf", "pi_tar", p.pi_tar);
    p.pi_non = cfg.get_double("tdcf", "pi_non", p.pi_non);
    p.pi_spoof = cfg.get_double("tdcf", "pi_spoof", p.pi_spoof);
    p.c_miss_asv = cfg.get_double("tdcf", "c_miss_asv", p.c_miss_asv);
    p.c_fa_asv = cfg.get_double("tdcf", "c_fa_asv", p.c_fa_asv);
    p.c_miss_cm = cfg.get_double("tdcf", "c_miss_cm", p.c_miss_cm);
    p.c_fa_cm = cfg.get_double("tdcf", "c_fa_cm", p.c_fa_cm);
    p.p_miss_asv = cfg.get_double("tdcf", "p_miss_asv", p.p_miss_asv);
    p.p_fa_asv = cfg.get_double("tdcf", "p_fa_asv", p.p_fa_asv);
    p.p_miss_spoof_asv = cfg.get_double("tdcf", "p_miss_spoof_asv", p.p_miss_spoof_asv);
  }
  std::cout << evaluation_report(trials, p);
  return 0;
}

int cmd_export_masks(const std::string& ckpt_path, const std::string& feature_dir,
                     const std::string& protocol_path, const std::string& prefix,
                     const std::string& mode, const std::string& model_name) {
  if (mode != "single" && mode != "class-average")
    throw UsageError("unknown --mode '" + mode + "' (expected single or class-average)");
  auto entries = load_protocol(protocol_path, Partition::kEval);
  if (entries.empty()) throw TensorError("empty protocol '" + protocol_path + "'");

  auto backbone = model_by_name(model_name);
  auto first = load_segments(feature_dir, entries.front().utt_id);
  EabnModel<float> model(backbone, first.front().rows, first.front().cols);
  ClassCenters<float> centers(backbone.embedding_dim, 0);
  apply_checkpoint(model, &centers, load_checkpoint(ckpt_path));

  auto parent = fs::path(prefix).parent_path();
  if (!parent.empty()) fs::create_directories(parent);

  std::vector<Mask> masks;
  for (const auto& e : entries) {
    for (const auto& f : load_segments(feature_dir, e.utt_id)) {
      auto x = Tensor<float>::from_data({1, 1, f.rows, f.cols}, f.values);
      auto out = model.forward(x, false);
      masks.push_back({out.mask.data(), f.rows, f.cols, e.attack_id});
      if (mode == "single") break;
    }
    if (mode == "single") break;
  }
  export_mask(masks, mode == "class-average", prefix);
  std::cout << "exported " << masks.size() << " mask(s) to " << prefix << "*\n";
  return 0;
}

int cmd_describe(const std::string& model_name, const std::string& input) {
  auto [h, w] = parse_input_dims(input);
  std::cout << describe(model_by_name(model_name), h, w);
  return 0;
}

int cmd_count(const std::string& model_name, const std::string& input) {
  auto [h, w] = parse_input_dims(input);
  EabnModel<float> model(model_by_name(model_name), h, w);
  std::cout << "model: " << model.config().name << "\n";
  std::cout << "input: " << h << "x" << w << "\n";
  std::cout << "parameters: " << model.count_params() << "\n";
  std::cout << "flops: " << model.count_flops() << "  (1 MAC = 2 FLOPs)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EABN anti-spoofing toolkit"};
  app.require_subcommand(1);
  uint64_t seed = 0;
  bool seed_given = false;
  app.add_option("--seed", seed, "global RNG seed (default 0)")
      ->each([&](const std::string&) { seed_given = true; });

  auto* gen = app.add_subcommand("gen-toy", "generate the synthetic toy dataset");
  std::string out_dir;
  int n_bonafide = 200, n_spoof = 1800;
  double duration = 2.0;
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--bonafide", n_bonafide, "bonafide count");
  gen->add_option("--spoof", n_spoof, "spoof count");
  gen->add_option("--duration", duration, "utterance length in seconds");

  auto* ext = app.add_subcommand("extract", "extract features from audio");
  std::string protocol, audio_dir, feat_dir, feature = "lfcc";
  bool augment = false;
  int workers = 1;
  ext->add_option("--protocol", protocol, "protocol file")->required();
  ext->add_option("--audio", audio_dir, "audio directory")->required();
  ext->add_option("--out", feat_dir, "output feature directory")->required();
  ext->add_option("--feature", feature, "logpowspec or lfcc");
  ext->add_flag("--augment", augment, "apply SpecAugment");
  ext->add_option("--workers", workers, "parallel workers");

  auto* trn = app.add_subcommand("train", "train a model from a config file");
  std::string config_path;
  trn->add_option("--config", config_path, "training config")->required();

  auto* sco = app.add_subcommand("score", "score utterances with a checkpoint");
  std::string ckpt, score_out, model_name = "a0";
  sco->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  sco->add_option("--features", feat_dir, "feature directory")->required();
  sco->add_option("--protocol", protocol, "protocol file")->required();
  sco->add_option("--out", score_out, "output score file")->required();
  sco->add_option("--model", model_name, "backbone name");

  auto* eva = app.add_subcommand("evaluate", "EER / t-DCF report from a score file");
  std::string tdcf_path;
  eva->add_option("--scores", score_out, "score file")->required();
  eva->add_option("--tdcf", tdcf_path, "t-DCF parameter file");

  auto* exm = app.add_subcommand("export-masks", "export attention masks");
  std::string mask_prefix, mask_mode = "class-average";
  exm->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  exm->add_option("--features", feat_dir, "feature directory")->required();
  exm->add_option("--protocol", protocol, "protocol file")->required();
  exm->add_option("--out", mask_prefix, "output path prefix")->required();
  exm->add_option("--mode", mask_mode, "single or class-average");
  exm->add_option("--model", model_name, "backbone name");

  auto* des = app.add_subcommand("describe", "print the architecture");
  std::string input_dims = "60x400";
  des->add_option("--model", model_name, "backbone name");
  des->add_option("--input", input_dims, "input size HxW");

  auto* cnt = app.add_subcommand("count", "parameter and FLOP report");
  cnt->add_option("--model", model_name, "backbone name");
  cnt->add_option("--input", input_dims, "input size HxW");

  for (auto* sub : {gen, ext, trn, sco, eva, exm, des, cnt}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_toy(out_dir, n_bonafide, n_spoof, duration, seed);
    if (ext->parsed())
      return cmd_extract(protocol, audio_dir, feat_dir, feature, augment, workers, seed);
    if (trn->parsed()) return cmd_train(config_path, seed, seed_given);
    if (sco->parsed()) return cmd_score(ckpt, feat_dir, protocol, score_out, model_name);
    if (eva->parsed()) return cmd_evaluate(score_out, tdcf_path);
    if (exm->parsed())
      return cmd_export_masks(ckpt, feat_dir, protocol, mask_prefix, mask_mode, model_name);
    if (des->parsed()) return cmd_describe(model_name, input_dims);
    if (cnt->parsed()) return cmd_count(model_name, input_dims);
    std::cerr << "no command given\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TensorError& e) {
    std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    if (msg.find("non-finite") != std::string::npos || msg.find("NaN") != std::string::npos)
      return kExitNumeric;
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
