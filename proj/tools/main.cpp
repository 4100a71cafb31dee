// Command-line surface: train, detect, register, verify, eval-registration,
// eval-verification, synth-data, visualize. Exit codes: 0 success, 1 domain
// failure (e.g., --strict registration that Failed), 2 usage/config errors.

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "retinamatch/cache.hpp"
#include "retinamatch/checkpoint.hpp"
#include "retinamatch/config.hpp"
#include "retinamatch/data.hpp"
#include "retinamatch/matching.hpp"
#include "retinamatch/metrics.hpp"
#include "retinamatch/trainer.hpp"
#include "retinamatch/viz.hpp"

namespace fs = std::filesystem;
using namespace retina;

namespace {

// ---------------------------------------------------------------------------
// shared option plumbing

struct CommonOpts {
  std::string config_path;
  int64_t seed = -1;  // negative: keep the config file / default seed
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "config file ([train]/[pke]/[match]/[metrics])");
  cmd->add_option("--seed", o.seed, "seed override for every random draw")
      ->check(CLI::NonNegativeNumber);
}

RunConfig make_run_config(const CommonOpts& o) {
  RunConfig rc;
  if (!o.config_path.empty()) apply_config_file(o.config_path, rc);
  if (o.seed >= 0) {
    rc.train.seed = uint64_t(o.seed);
    rc.match.seed = uint64_t(o.seed);
  }
  return rc;
}

struct MatchOverrides {
  int nms_window = -1;
  double nms_threshold = -1.0;
  double ratio = -1.0;
  bool mutual = false;
  std::string method;
  double reproj_px = -1.0;
  int target_size = -1;  // working resolution; 0 keeps native, -1 uses config
};

void add_match_overrides(CLI::App* cmd, MatchOverrides& o) {
  cmd->add_option("--nms-window", o.nms_window, "NMS window in px");
  cmd->add_option("--nms-threshold", o.nms_threshold, "detection probability threshold");
  cmd->add_option("--ratio", o.ratio, "Lowe ratio (1 disables)");
  cmd->add_flag("--mutual", o.mutual, "require mutual nearest neighbors");
  cmd->add_option("--method", o.method, "homography estimator: lmeds or ransac");
  cmd->add_option("--reproj-px", o.reproj_px, "verification reprojection tolerance");
  cmd->add_option("--target-size", o.target_size,
                  "working resolution (0 keeps native, default: train input_size)");
}

void apply_match_overrides(const MatchOverrides& o, RunConfig& rc) {
  if (o.nms_window >= 0) rc.match.nms_window = o.nms_window;
  if (o.nms_threshold >= 0) rc.match.nms_threshold = o.nms_threshold;
  if (o.ratio >= 0) rc.match.ratio = o.ratio;
  if (o.mutual) rc.match.mutual = true;
  if (!o.method.empty()) {
    if (o.method == "lmeds")
      rc.match.method = EstimatorMethod::LeastMedianOfSquares;
    else if (o.method == "ransac")
      rc.match.method = EstimatorMethod::Ransac;
    else
      throw ConfigError("--method must be lmeds or ransac, got '" + o.method + "'");
  }
  if (o.reproj_px >= 0) rc.match.reproj_px = o.reproj_px;
}

int working_size(const MatchOverrides& o, const RunConfig& rc) {
  return o.target_size >= 0 ? o.target_size : rc.train.input_size;
}

Model load_model_or_die(const std::string& path) {
  try {
    return Model::load(path);
  } catch (const CheckpointError& e) {
    throw ConfigError("cannot load model '" + path + "': " + e.what());
  } catch (const IoError& e) {
    throw ConfigError("cannot load model '" + path + "': " + e.what());
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  return os;
}

// Ordered parallel map: each index writes its own slot, output order is fixed
// regardless of scheduling, so reports stay byte-identical across runs.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  const int threads = std::max(1, jobs);
  if (threads == 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[size_t(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// All unique images referenced by a pair list, with features, extracted once.
struct PairInputs {
  std::vector<std::string> names;
  std::map<std::string, size_t> index;
  std::vector<ImageGrid> images;
  std::vector<Features> features;
};

PairInputs extract_pair_inputs(const PairList& pairs, const std::string& images_dir,
                               const Model& m, const RunConfig& rc, int target_size, int jobs) {
  PairInputs in;
  for (const Pair& p : pairs)
    for (const std::string& name : {p.a, p.b})
      if (!in.index.count(name)) {
        in.index[name] = in.names.size();
        in.names.push_back(name);
      }
  in.images.resize(in.names.size());
  in.features.resize(in.names.size());
  const FeatureCache cache = FeatureCache::from_env();
  parallel_for(in.names.size(), jobs, [&](size_t i) {
    const fs::path path = fs::path(images_dir) / in.names[i];
    in.images[i] = load_image(path.string(), target_size);
    in.features[i] = cache.get_or_extract(in.images[i], m, rc.match);
  });
  return in;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  CommonOpts common;
  std::string labels_path, out_dir;
  std::vector<std::string> unlabeled;
  int epochs = -1;
  double lr = -1.0;
  int input_size = -1;
  int descriptor_dim = -1;
  int base_channels = -1;
  int warmup = -1;
};

int run_train(const TrainArgs& a) {
  RunConfig rc = make_run_config(a.common);
  if (a.epochs > 0) rc.train.max_epochs = a.epochs;
  if (a.lr > 0) rc.train.lr = a.lr;
  if (a.input_size > 0) rc.train.input_size = a.input_size;
  if (a.descriptor_dim > 0) rc.train.model.descriptor_dim = a.descriptor_dim;
  if (a.base_channels > 0) rc.train.model.base_channels = a.base_channels;
  if (a.warmup >= 0) rc.train.pke.warmup_epochs = a.warmup;
  rc.train.out_dir = a.out_dir;

  const LabelFile lf = load_labels(a.labels_path);
  if (lf.w <= 0 || lf.h <= 0) throw ConfigError("label file declares a non-positive image size");
  const fs::path base = fs::path(a.labels_path).parent_path();
  const int n = rc.train.input_size;

  std::vector<TrainImage> images;
  for (const auto& [file, kps] : lf.images) {
    TrainImage ti;
    ti.name = file;
    ti.image = load_image((base / file).string(), n);
    ti.labeled = true;
    for (const Keypoint& kp : kps) {
      Keypoint s;
      s.x = std::clamp(int(std::lround(double(kp.x) * n / lf.w)), 0, n - 1);
      s.y = std::clamp(int(std::lround(double(kp.y) * n / lf.h)), 0, n - 1);
      s.score = 1.f;
      ti.y0.push_back(s);
    }
    images.push_back(std::move(ti));
  }
  for (const std::string& file : a.unlabeled) {
    TrainImage ti;
    ti.name = file;
    ti.image = load_image(file, n);
    ti.labeled = false;
    images.push_back(std::move(ti));
  }

  Trainer trainer(rc.train, std::move(images));
  const std::vector<EpochStats> stats = trainer.fit();
  const EpochStats& last = stats.back();
  std::cout << "trained " << stats.size() << " epochs; final total loss " << fmt(last.total)
            << ", mean |Y_t| " << fmt(last.mean_yt) << "\n"
            << "model written to " << a.out_dir << "/model.ckpt\n";
  return 0;
}

// ---------------------------------------------------------------------------
// detect

struct DetectArgs {
  CommonOpts common;
  MatchOverrides match;
  std::string image_path, model_path, out_path;
};

int run_detect(const DetectArgs& a) {
  RunConfig rc = make_run_config(a.common);
  apply_match_overrides(a.match, rc);
  const Model m = load_model_or_die(a.model_path);
  const ImageGrid img = load_image(a.image_path, working_size(a.match, rc));
  const Features f = extract_features(img, m, rc.match);

  LabelFile lf;
  lf.w = img.native_w;
  lf.h = img.native_h;
  KeypointSet native;
  for (const Keypoint& kp : f.kps) {
    Keypoint s;
    s.x = std::clamp(int(std::lround(kp.x * img.scale_x())), 0, lf.w - 1);
    s.y = std::clamp(int(std::lround(kp.y * img.scale_y())), 0, lf.h - 1);
    s.score = kp.score;
    native.push_back(s);
  }
  lf.images.emplace_back(fs::path(a.image_path).filename().string(), std::move(native));
  save_labels(a.out_path, lf);
  std::cout << "detected " << f.kps.size() << " keypoints -> " << a.out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// register

struct RegisterArgs {
  CommonOpts common;
  MatchOverrides match;
  std::string query_path, ref_path, model_path, out_path;
  bool strict = false;
};

int run_register(const RegisterArgs& a) {
  RunConfig rc = make_run_config(a.common);
  apply_match_overrides(a.match, rc);
  const Model m = load_model_or_die(a.model_path);
  const int n = working_size(a.match, rc);
  const ImageGrid q = load_image(a.query_path, n);
  const ImageGrid r = load_image(a.ref_path, n);
  const RegistrationResult res = register_pair(q, r, m, rc.match);

  if (!a.out_path.empty()) {
    std::ofstream os = open_out(a.out_path);
    os << "query,reference,status,matches,inliers,"
          "h00,h01,h02,h10,h11,h12,h20,h21,h22\n";
    os << a.query_path << "," << a.ref_path << ","
       << (res.status == RegStatus::Fitted ? "Fitted" : "Failed") << "," << res.match_count << ","
       << res.inlier_count;
    if (res.status == RegStatus::Fitted) {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) os << "," << fmt17(res.H.m(i, j));
    } else {
      os << ",,,,,,,,,";
    }
    os << "\n";
  }
  std::cout << (res.status == RegStatus::Fitted ? "Fitted" : "Failed") << ": "
            << res.match_count << " matches, " << res.inlier_count << " inliers\n";
  return res.status == RegStatus::Fitted || !a.strict ? 0 : 1;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  CommonOpts common;
  MatchOverrides match;
  std::string query_path, ref_path, model_path, out_path;
  int threshold = -1;
  bool strict = false;
};

int run_verify(const VerifyArgs& a) {
  RunConfig rc = make_run_config(a.common);
  apply_match_overrides(a.match, rc);
  if (a.threshold >= 0) rc.verify_threshold = a.threshold;
  const Model m = load_model_or_die(a.model_path);
  const int n = working_size(a.match, rc);
  const ImageGrid q = load_image(a.query_path, n);
  const ImageGrid r = load_image(a.ref_path, n);
  const VerificationResult res = verify_pair(q, r, m, rc.verify_threshold, rc.match);

  if (!a.out_path.empty()) {
    std::ofstream os = open_out(a.out_path);
    os << "query,reference,accept,surviving,threshold\n";
    os << a.query_path << "," << a.ref_path << "," << (res.accept ? 1 : 0) << ","
       << res.surviving << "," << res.threshold << "\n";
  }
  std::cout << (res.accept ? "accept" : "reject") << ": " << res.surviving
            << " surviving matches (threshold " << res.threshold << ")\n";
  return res.accept || !a.strict ? 0 : 1;
}

// ---------------------------------------------------------------------------
// eval-registration

struct EvalRegArgs {
  CommonOpts common;
  MatchOverrides match;
  std::string pairs_path, model_path, images_dir, out_path;
  int jobs = 1;
};

int run_eval_registration(const EvalRegArgs& a) {
  RunConfig rc = make_run_config(a.common);
  apply_match_overrides(a.match, rc);
  const Model m = load_model_or_die(a.model_path);
  const PairList pairs = load_pair_manifest(a.pairs_path);
  if (pairs.empty()) throw ConfigError("pair manifest is empty: " + a.pairs_path);
  const fs::path manifest_dir = fs::path(a.pairs_path).parent_path();
  for (const Pair& p : pairs)
    if (p.control_path.empty())
      throw ConfigError("eval-registration: pair " + p.a + "," + p.b +
                        " has no control-point file");

  const PairInputs in =
      extract_pair_inputs(pairs, a.images_dir, m, rc, working_size(a.match, rc), a.jobs);

  struct Row {
    RegStatus status = RegStatus::Failed;
    double mee = 0, mae = 0;
    RegistrationOutcome outcome = RegistrationOutcome::Failed;
  };
  std::vector<Row> rows(pairs.size());
  parallel_for(pairs.size(), a.jobs, [&](size_t i) {
    const Pair& p = pairs[i];
    const size_t qi = in.index.at(p.a), ri = in.index.at(p.b);
    const RegistrationResult res =
        register_features(in.features[qi], in.features[ri], in.images[qi], in.images[ri], rc.match);
    fs::path ctrl(p.control_path);
    if (ctrl.is_relative()) ctrl = manifest_dir / ctrl;
    const std::vector<ControlPair> truth = load_control_points(ctrl.string());
    Row& row = rows[i];
    row.status = res.status;
    if (res.status == RegStatus::Fitted) {
      const RegistrationErrors err = registration_errors(res.H, truth);
      row.mee = err.mee;
      row.mae = err.mae;
      row.outcome = classify_outcome(true, err.mee, err.mae, rc.metrics.mee_threshold,
                                     rc.metrics.mae_threshold);
    } else {
      row.mee = row.mae = std::numeric_limits<double>::infinity();
    }
  });

  int failed = 0, inaccurate = 0, acceptable = 0;
  std::vector<double> mees;
  for (const Row& r : rows) {
    mees.push_back(r.outcome == RegistrationOutcome::Failed
                       ? std::numeric_limits<double>::infinity()
                       : r.mee);
    switch (r.outcome) {
      case RegistrationOutcome::Failed: ++failed; break;
      case RegistrationOutcome::Inaccurate: ++inaccurate; break;
      case RegistrationOutcome::Acceptable: ++acceptable; break;
    }
  }
  const double auc = acceptance_auc(mees, rc.metrics.auc_max_threshold);

  std::ofstream os = open_out(a.out_path);
  os << "query,reference,status,mee,mae,outcome\n";
  for (size_t i = 0; i < pairs.size(); ++i) {
    const Row& r = rows[i];
    os << pairs[i].a << "," << pairs[i].b << ","
       << (r.status == RegStatus::Fitted ? "Fitted" : "Failed") << "," << fmt(r.mee) << ","
       << fmt(r.mae) << "," << to_string(r.outcome) << "\n";
  }
  const std::string summary = "pairs=" + std::to_string(pairs.size()) +
                              " failed=" + std::to_string(failed) +
                              " inaccurate=" + std::to_string(inaccurate) +
                              " acceptable=" + std::to_string(acceptable) + " auc=" + fmt(auc);
  os << "# " << summary << "\n";
  std::cout << summary << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-verification

struct EvalVerArgs {
  CommonOpts common;
  MatchOverrides match;
  std::string pairs_path, model_path, images_dir, out_path, det_path;
  int threshold = -1;
  int jobs = 1;
};

int run_eval_verification(const EvalVerArgs& a) {
  RunConfig rc = make_run_config(a.common);
  apply_match_overrides(a.match, rc);
  if (a.threshold >= 0) rc.verify_threshold = a.threshold;
  const Model m = load_model_or_die(a.model_path);
  const PairList pairs = load_pair_manifest(a.pairs_path);
  if (pairs.empty()) throw ConfigError("pair manifest is empty: " + a.pairs_path);
  for (const Pair& p : pairs)
    if (!p.control_path.empty())
      throw ConfigError("eval-verification: pair " + p.a + "," + p.b +
                        " is a registration row; label it genuine or impostor");

  const PairInputs in =
      extract_pair_inputs(pairs, a.images_dir, m, rc, working_size(a.match, rc), a.jobs);

  std::vector<int> surviving(pairs.size());
  parallel_for(pairs.size(), a.jobs, [&](size_t i) {
    const Pair& p = pairs[i];
    const size_t qi = in.index.at(p.a), ri = in.index.at(p.b);
    surviving[i] = verify_features(in.features[qi], in.features[ri], in.images[qi], in.images[ri],
                                   rc.verify_threshold, rc.match)
                       .surviving;
  });

  ScoreSet scores;
  int false_accepts = 0, false_rejects = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    (pairs[i].genuine ? scores.genuine : scores.impostor).push_back(double(surviving[i]));
    const bool accept = surviving[i] >= rc.verify_threshold;
    if (pairs[i].genuine && !accept) ++false_rejects;
    if (!pairs[i].genuine && accept) ++false_accepts;
  }
  const EerResult eer = compute_eer(scores);

  std::ofstream os = open_out(a.out_path);
  os << "metric,value\n";
  os << "eer," << fmt(eer.eer) << "\n";
  os << "eer_threshold," << fmt(eer.threshold) << "\n";
  os << "genuine_pairs," << scores.genuine.size() << "\n";
  os << "impostor_pairs," << scores.impostor.size() << "\n";
  os << "accept_threshold," << rc.verify_threshold << "\n";
  os << "false_accepts," << false_accepts << "\n";
  os << "false_rejects," << false_rejects << "\n";
  os << "polarity_warning," << (eer.polarity_warning ? 1 : 0) << "\n";

  if (!a.det_path.empty()) {
    std::ofstream det = open_out(a.det_path);
    det << "threshold,far,frr\n";
    for (const DetPoint& p : eer.curve)
      det << fmt(p.threshold) << "," << fmt(p.far) << "," << fmt(p.frr) << "\n";
  }
  std::cout << "EER " << fmt(eer.eer * 100.0) << "% at threshold " << fmt(eer.threshold) << " ("
            << scores.genuine.size() << " genuine, " << scores.impostor.size() << " impostor)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// synth-data

struct SynthArgs {
  CommonOpts common;
  std::string out_dir;
  int count = 8;
  int size = 256;
  int depth = 5;
};

int run_synth_data(const SynthArgs& a) {
  fs::create_directories(a.out_dir);
  const uint64_t base_seed = a.common.seed >= 0 ? uint64_t(a.common.seed) : 0;
  LabelFile lf;
  lf.w = a.size;
  lf.h = a.size;
  for (int i = 0; i < a.count; ++i) {
    SynthConfig cfg;
    cfg.size = a.size;
    cfg.depth = a.depth;
    cfg.seed = base_seed + uint64_t(i);
    const SynthImage s = synth_vasculature(cfg);
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%03d.png", i);
    save_image((fs::path(a.out_dir) / name).string(), s.image);
    lf.images.emplace_back(name, s.bifurcations);
  }
  save_labels((fs::path(a.out_dir) / "labels.json").string(), lf);
  std::cout << "wrote " << a.count << " images + labels.json to " << a.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// visualize

struct VizArgs {
  CommonOpts common;
  MatchOverrides match;
  std::string query_path, ref_path, model_path, out_path;
  bool lines = false;
};

int run_visualize(const VizArgs& a) {
  RunConfig rc = make_run_config(a.common);
  apply_match_overrides(a.match, rc);
  const Model m = load_model_or_die(a.model_path);
  const int n = working_size(a.match, rc);
  const ImageGrid q = load_image(a.query_path, n);
  const ImageGrid r = load_image(a.ref_path, n);
  RegistrationDetails details;
  register_pair(q, r, m, rc.match, &details);

  OverlayOptions opts;
  opts.draw_lines = a.lines;
  render_overlay(q, r, details.kq, details.kr, details.matches.matches, details.matches.inliers,
                 a.out_path, opts);
  const OverlayCounts counts = overlay_counts(details.matches.matches, details.matches.inliers);
  std::cout << "overlay with " << counts.green << " inlier and " << counts.red
            << " outlier matches -> " << a.out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retinal keypoint detection, description, registration and verification"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on labeled images");
  train_cmd->add_option("--labels", train_args.labels_path, "label JSON with Y0 keypoints")
      ->required();
  train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
  train_cmd->add_option("--unlabeled", train_args.unlabeled, "extra images without labels");
  train_cmd->add_option("--epochs", train_args.epochs, "override max_epochs");
  train_cmd->add_option("--lr", train_args.lr, "override learning rate");
  train_cmd->add_option("--input-size", train_args.input_size, "working resolution");
  train_cmd->add_option("--descriptor-dim", train_args.descriptor_dim, "descriptor channels");
  train_cmd->add_option("--base-channels", train_args.base_channels, "encoder width");
  train_cmd->add_option("--warmup", train_args.warmup, "label-expansion warmup epochs");
  add_common(train_cmd, train_args.common);

  DetectArgs detect_args;
  CLI::App* detect_cmd = app.add_subcommand("detect", "detect keypoints, emit label JSON");
  detect_cmd->add_option("image", detect_args.image_path, "input image")->required();
  detect_cmd->add_option("--model", detect_args.model_path, "model checkpoint")->required();
  detect_cmd->add_option("--out", detect_args.out_path, "output label JSON")->required();
  add_match_overrides(detect_cmd, detect_args.match);
  add_common(detect_cmd, detect_args.common);

  RegisterArgs register_args;
  CLI::App* register_cmd = app.add_subcommand("register", "fit a query->reference homography");
  register_cmd->add_option("query", register_args.query_path, "query image")->required();
  register_cmd->add_option("reference", register_args.ref_path, "reference image")->required();
  register_cmd->add_option("--model", register_args.model_path, "model checkpoint")->required();
  register_cmd->add_option("--out", register_args.out_path, "result CSV");
  register_cmd->add_flag("--strict", register_args.strict, "exit 1 when registration fails");
  add_match_overrides(register_cmd, register_args.match);
  add_common(register_cmd, register_args.common);

  VerifyArgs verify_args;
  CLI::App* verify_cmd = app.add_subcommand("verify", "accept/reject an identity claim");
  verify_cmd->add_option("query", verify_args.query_path, "query image")->required();
  verify_cmd->add_option("reference", verify_args.ref_path, "reference image")->required();
  verify_cmd->add_option("--model", verify_args.model_path, "model checkpoint")->required();
  verify_cmd->add_option("--out", verify_args.out_path, "result CSV");
  verify_cmd->add_option("--threshold", verify_args.threshold, "surviving-match accept bar");
  verify_cmd->add_flag("--strict", verify_args.strict, "exit 1 on reject");
  add_match_overrides(verify_cmd, verify_args.match);
  add_common(verify_cmd, verify_args.common);

  EvalRegArgs evalreg_args;
  CLI::App* evalreg_cmd =
      app.add_subcommand("eval-registration", "registration metrics over a pair manifest");
  evalreg_cmd->add_option("--pairs", evalreg_args.pairs_path, "manifest CSV")->required();
  evalreg_cmd->add_option("--model", evalreg_args.model_path, "model checkpoint")->required();
  evalreg_cmd->add_option("--images-dir", evalreg_args.images_dir, "image directory")->required();
  evalreg_cmd->add_option("--out", evalreg_args.out_path, "report CSV")->required();
  evalreg_cmd->add_option("--jobs", evalreg_args.jobs, "worker threads")
      ->check(CLI::PositiveNumber);
  add_match_overrides(evalreg_cmd, evalreg_args.match);
  add_common(evalreg_cmd, evalreg_args.common);

  EvalVerArgs evalver_args;
  CLI::App* evalver_cmd =
      app.add_subcommand("eval-verification", "FAR/FRR sweep + EER over a pair manifest");
  evalver_cmd->add_option("--pairs", evalver_args.pairs_path, "manifest CSV")->required();
  evalver_cmd->add_option("--model", evalver_args.model_path, "model checkpoint")->required();
  evalver_cmd->add_option("--images-dir", evalver_args.images_dir, "image directory")->required();
  evalver_cmd->add_option("--out", evalver_args.out_path, "report CSV")->required();
  evalver_cmd->add_option("--det", evalver_args.det_path, "DET curve CSV");
  evalver_cmd->add_option("--threshold", evalver_args.threshold, "surviving-match accept bar");
  evalver_cmd->add_option("--jobs", evalver_args.jobs, "worker threads")
      ->check(CLI::PositiveNumber);
  add_match_overrides(evalver_cmd, evalver_args.match);
  add_common(evalver_cmd, evalver_args.common);

  SynthArgs synth_args;
  CLI::App* synth_cmd =
      app.add_subcommand("synth-data", "generate synthetic vasculature images + labels");
  synth_cmd->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth_cmd->add_option("--count", synth_args.count, "number of images")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth_args.size, "canvas size in px");
  synth_cmd->add_option("--depth", synth_args.depth, "vessel tree depth");
  add_common(synth_cmd, synth_args.common);

  VizArgs viz_args;
  CLI::App* viz_cmd = app.add_subcommand("visualize", "render a match overlay");
  viz_cmd->add_option("query", viz_args.query_path, "query image")->required();
  viz_cmd->add_option("reference", viz_args.ref_path, "reference image")->required();
  viz_cmd->add_option("--model", viz_args.model_path, "model checkpoint")->required();
  viz_cmd->add_option("--out", viz_args.out_path, "output image")->required();
  viz_cmd->add_flag("--lines", viz_args.lines, "connect matched dots");
  add_match_overrides(viz_cmd, viz_args.match);
  add_common(viz_cmd, viz_args.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_args);
    if (detect_cmd->parsed()) return run_detect(detect_args);
    if (register_cmd->parsed()) return run_register(register_args);
    if (verify_cmd->parsed()) return run_verify(verify_args);
    if (evalreg_cmd->parsed()) return run_eval_registration(evalreg_args);
    if (evalver_cmd->parsed()) return run_eval_verification(evalver_args);
    if (synth_cmd->parsed()) return run_synth_data(synth_args);
    if (viz_cmd->parsed()) return run_visualize(viz_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // unreachable with require_subcommand(1)
}
