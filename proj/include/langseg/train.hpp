#pragma once

// Two-stage training: schedule presets, first-order adaptive-moment
// optimization over the parameter store, the seeded training loop with
// patch-hiding on pseudo-labeled samples, task-dispatched evaluation,
// single-image inference, and single-file checkpoints.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "langseg/data.hpp"
#include "langseg/losses.hpp"
#include "langseg/model.hpp"
#include "langseg/util.hpp"

namespace langseg {

// Learning-rate decay point: epochs strictly after `epoch` (1-based) run at
// learning_rate * factor.
struct LrDecay {
  int epoch = 0;
  double factor = 1.0;
};

struct TrainConfig {
  int stage = 1;  // 1: pseudo data only; 2: supervised + pseudo mix
  double learning_rate = 5e-5;
  int epochs = 5;
  std::optional<LrDecay> lr_decay;
  double backbone_lr_factor = 0.1;
  int batch_size = 4;
  std::uint64_t seed = 0;
  double w_bce = 1.0;  // loss weights
  double w_dice = 1.0;
  int hide_patch = 16;    // patch-hiding tile size (pseudo samples only)
  double hide_prob = 0.2;  // per-tile hiding probability
  double pseudo_ratio = 1.0;  // stage-2 pseudo samples per supervised sample
  int steps_per_epoch = 0;    // 0 = one pass over the training pool

  void validate() const;  // throws std::invalid_argument on broken invariants
  static TrainConfig from_config(const Config& c);
  Config to_config() const;
};

// Stage presets: stage 1 = {lr 5e-5, 5 epochs, no decay}, stage 2 =
// {lr 1e-4, 15 epochs, x0.1 after epoch 10}; both with backbone factor 0.1.
// Any other stage throws.
TrainConfig make_schedule(int stage);

// Effective learning rate for a 1-based epoch index under cfg's decay rule.
double epoch_lr(const TrainConfig& cfg, int epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer over a ParamStore. Moment buffers are kept in
// store order (which is also the checkpoint order). Parameters flagged as
// backbone are updated at lr * backbone_factor.
class Adam {
 public:
  explicit Adam(nn::ParamStore& ps, AdamConfig cfg = {});

  // One update from the gradients currently accumulated in the store.
  void step(double lr, double backbone_factor);

  std::int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<nn::Tensor>& m() const { return m_; }
  const std::vector<nn::Tensor>& v() const { return v_; }

  // Checkpoint restore; sizes must match the store.
  void restore(std::int64_t t, std::vector<nn::Tensor> m,
               std::vector<nn::Tensor> v);

 private:
  nn::ParamStore* ps_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<nn::Tensor> m_, v_;
};

// One optimizer update from one batch (pointers into the caller's pool).
// Pseudo-source samples pass through patch hiding driven by `rng` with the
// given per-channel fill; supervised samples are fed unmodified. Returns the
// batch-mean loss. Throws std::runtime_error on a non-finite loss.
LossValue train_step(UniModel& model, Adam& opt,
                     const std::vector<const Triplet*>& batch,
                     const TrainConfig& cfg, double lr,
                     const std::array<double, 3>& hide_fill,
                     std::mt19937_64& rng);

// Image preparation for one training sample: identity for supervised
// sources, patch hiding for pseudo sources. Exposed for direct testing.
Image prepare_sample(const Triplet& t, const TrainConfig& cfg,
                     const std::array<double, 3>& hide_fill,
                     std::mt19937_64& rng);

struct TrainLog {
  std::vector<double> step_loss;   // total loss per optimizer step
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

// Full seeded training run. Stage 1 draws from `pseudo` only (supervised
// pool ignored); stage 2 mixes supervised and pseudo samples at
// pseudo_ratio : 1 (pseudo pool may be empty, leaving pure supervised
// training). Sampling, shuffling, and patch hiding all derive from
// cfg.seed, so a rerun reproduces the loss curve exactly.
TrainLog train_run(UniModel& model, Adam& opt,
                   const std::vector<Triplet>& supervised,
                   const std::vector<Triplet>& pseudo, const TrainConfig& cfg,
                   const std::function<void(int epoch, int step,
                                            const LossValue&)>& on_step = {});

struct MetricReport {
  Task task = Task::RIS;
  std::string metric;  // "oIoU", "mIoU", "F_mean", "J&F"
  double value = 0.0;
  int count = 0;  // samples scored (frames, for video)
};

// Probability-map oracle stand-in for a model: maps a triplet to per-pixel
// foreground probabilities (h*w, 1).
using ProbPredictor = std::function<nn::Tensor(const Triplet&)>;

// Task-dispatched evaluation: RIS/OVS pool per-query masks into overall
// IoU; SS/PS compute mean IoU over caption-defined classes; SOD averages
// the adaptive F-measure; video triplets are grouped by video id and scored
// with the region/contour average. Throws when `data` is empty or contains
// a triplet of a different task.
MetricReport evaluate(const ProbPredictor& predict,
                      const std::vector<Triplet>& data, Task task);
MetricReport evaluate(const UniModel& model, const std::vector<Triplet>& data,
                      Task task);

// Single forward pass; the mask has the image's spatial shape. The image
// dims must be divisible by 32 and the caption must tokenize to at least
// one word.
Mask infer(const UniModel& model, const Image& img, const std::string& caption);

// Single-file checkpoint: model config text + hash, epoch counter, every
// parameter tensor in store order, and (optionally) optimizer state.
// Loading rebuilds the model from the stored config and restores parameter
// bytes exactly, so forward outputs are bit-identical.
void save_checkpoint(const std::string& path, const UniModel& model,
                     const Adam* opt, int epoch);

struct CheckpointBundle {
  ModelConfig config;
  std::string config_hash;
  int epoch = 0;
  std::unique_ptr<UniModel> model;
  std::unique_ptr<Adam> opt;  // null when the file carries no optimizer state
};

CheckpointBundle load_checkpoint(const std::string& path);

}  // namespace langseg
