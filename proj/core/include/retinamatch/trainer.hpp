#pragma once

// Joint training loop: photometric augmentation, per-image homography
// sampling, the per-epoch label-expansion hook, Adam optimization with
// global-norm gradient clipping, stats emission and deterministic
// checkpoint/resume. One optimizer step per image (batch size 1).

#include <string>
#include <utility>
#include <vector>

#include "retinamatch/geometry.hpp"
#include "retinamatch/model.hpp"
#include "retinamatch/pke.hpp"
#include "retinamatch/rng.hpp"
#include "retinamatch/types.hpp"

namespace retina {

struct AugmentConfig {
  double prob = 0.5;  // independent coin per augmentation
  double blur_sigma_max = 2.0;
  Interval contrast{0.7, 1.3};
  double illumination = 0.15;  // additive shift, symmetric
};

struct TrainConfig {
  int input_size = 768;  // square, divisible by 16
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 1;
  int max_epochs = 150;
  double margin = 1.0;
  double label_sigma = 2.0;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables
  int checkpoint_every = 25;
  uint64_t seed = 0;
  ModelConfig model;
  HomographySamplerConfig sampler;
  PkeConfig pke;
  AugmentConfig augment;
  std::string out_dir;  // checkpoints + stats CSV land here; empty = no files
};

/// Throws ConfigError unless input_size is divisible by 16, lr > 0 and
/// max_epochs >= 1 (plus the model config's own constraints).
void validate(const TrainConfig& cfg);

struct TrainImage {
  ImageGrid image;  // values in [0,1], input_size x input_size
  KeypointSet y0;   // initial labels in input-resolution coords; may be empty
  bool labeled = false;
  std::string name;
};

struct EpochStats {
  int epoch = 0;
  double clf = 0.0;  // mean over labeled images
  double geo = 0.0;  // mean over all images
  double des = 0.0;
  double total = 0.0;
  double mean_yt = 0.0;  // mean |Y_t| over labeled images
  double seconds = 0.0;  // wall time; the one non-deterministic column
};

std::string stats_csv_header();
std::string to_csv_row(const EpochStats& s);

/// Separable Gaussian blur with replicated borders; sigma <= 0 is a copy.
Grid gaussian_blur(const Grid& g, double sigma);

/// Each step fires with independent probability cfg.prob, drawing its
/// parameter only when it fires: blur sigma in [0, blur_sigma_max], contrast
/// scale about mid-gray 0.5, additive illumination shift. Output clamped to
/// [0,1]. Draw order is fixed (blur coin, sigma, contrast coin, scale,
/// illumination coin, shift) so a saved rng state replays exactly.
ImageGrid augment(const ImageGrid& img, Rng& rng, const AugmentConfig& cfg);

/// Adam moments in Model::params() order, bias-corrected.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<float>> m, v;

  static AdamState init(Model& model, double beta1, double beta2);
  /// One update from the gradients currently held by the model.
  void apply(Model& model, double lr);
};

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm; returns the pre-clip norm.
double clip_gradients(Model& model, double max_norm);

/// One shuffled pass over the images; an optimizer step per image. Labeled
/// images run the expansion hook once epoch >= pke.warmup_epochs (sharing
/// the step's forward passes) and contribute all loss terms; unlabeled
/// images skip the classification term. Throws Error naming the image and
/// the offending component when any loss turns non-finite.
EpochStats train_epoch(Model& model, const std::vector<TrainImage>& images, LabelStore& store,
                       AdamState& opt, Rng& rng, const TrainConfig& cfg, int epoch);

/// Owns model + optimizer + rng + label store and drives epochs. State files
/// are a superset of a model checkpoint, so Model::load() accepts them too.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::vector<TrainImage> images);

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  LabelStore& labels() { return store_; }
  const TrainConfig& config() const { return cfg_; }
  int epochs_done() const { return epoch_; }
  const std::vector<EpochStats>& history() const { return history_; }

  EpochStats run_epoch();
  /// Runs until max_epochs; writes out_dir/stats.csv and periodic
  /// checkpoints when out_dir is set. Returns stats of the epochs it ran.
  std::vector<EpochStats> fit();

  void save_state(const std::string& path) const;
  static Trainer load_state(const std::string& path, const TrainConfig& cfg,
                            std::vector<TrainImage> images);

 private:
  TrainConfig cfg_;
  std::vector<TrainImage> images_;
  Model model_;
  LabelStore store_;
  AdamState adam_;
  Rng rng_;
  int epoch_ = 0;
  std::vector<EpochStats> history_;
};

/// Convenience wrapper: builds a Trainer over labeled + unlabeled and fits.
std::pair<Model, std::vector<EpochStats>> fit(const TrainConfig& cfg,
                                              const std::vector<TrainImage>& labeled,
                                              const std::vector<TrainImage>& unlabeled = {});

}  // namespace retina
