#pragma once

// Training losses (pixel BCE + Dice), the patch-hiding augmentation, and
// the evaluation metrics (IoU / oIoU / mIoU, adaptive F-measure, J&F).
// Numeric versions operate on plain grids; *_node variants build the same
// expressions on a Tape for gradient-based training.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "langseg/data.hpp"
#include "langseg/image.hpp"
#include "langseg/tape.hpp"
#include "langseg/tensor.hpp"

namespace langseg {

inline constexpr double kProbEps = 1e-7;  // BCE probability clamp

struct LossValue {
  double total = 0.0;
  double bce = 0.0;
  double dice = 0.0;
};

// Mean over pixels of -[t*log(p) + (1-t)*log(1-p)], p clamped to
// [kProbEps, 1-kProbEps]. prob must have target.h * target.w elements.
double bce_loss(const nn::Tensor& prob, const Mask& target);

// 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s) with smoothing s = 1.
double dice_loss(const nn::Tensor& prob, const Mask& target);

LossValue combined_loss(const nn::Tensor& prob, const Mask& target,
                        double w_bce = 1.0, double w_dice = 1.0);

// Differentiable versions; each returns a (1,1) scalar node.
nn::Tape::Ref bce_loss_node(nn::Tape& t, nn::Tape::Ref prob, const Mask& target);
nn::Tape::Ref dice_loss_node(nn::Tape& t, nn::Tape::Ref prob, const Mask& target);
nn::Tape::Ref combined_loss_node(nn::Tape& t, nn::Tape::Ref prob,
                                 const Mask& target, double w_bce = 1.0,
                                 double w_dice = 1.0);

// Intersection-over-union of binary masks; both-empty is defined as 1.
double iou(const Mask& pred, const Mask& target);

struct MaskPair {
  Mask pred;
  Mask target;
};

// Overall IoU: pooled intersection / pooled union over the whole set.
double oiou(const std::vector<MaskPair>& pairs);

// Mean IoU: mean over distinct class labels of the per-class pooled IoU.
// `classes` is parallel to `pairs`.
double miou(const std::vector<MaskPair>& pairs,
            const std::vector<std::string>& classes);

// Adaptive-threshold F-measure: binarize prob at min(2*mean(prob), 1),
// F = (1+b2)*P*R / (b2*P + R) with b2 = 0.3; any zero denominator gives 0.
double f_measure(const nn::Tensor& prob, const Mask& target);

// 1-pixel morphological edge: foreground pixels with a background (or
// out-of-canvas) 4-neighbor.
Mask boundary_1px(const Mask& m);

// Boundary F-measure with 1-pixel match tolerance (Chebyshev distance).
// Both boundaries empty -> 1; exactly one empty -> 0.
double boundary_f(const Mask& pred, const Mask& target);

struct JFReport {
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
};

// Video metric: J = mean per-frame IoU, F = mean per-frame boundary F,
// J&F = their average. Frame counts and shapes must match.
JFReport j_and_f(const std::vector<Mask>& pred, const std::vector<Mask>& target);

// Per-channel mean pixel value over a dataset, in [0,255].
std::array<double, 3> dataset_mean(const std::vector<Triplet>& data);

// Replaces each patch x patch tile independently with the (rounded)
// per-channel fill value with probability p_hide. Image dims must be
// divisible by patch. Targets are never touched.
Image hide_and_seek(const Image& img, int patch, double p_hide,
                    std::mt19937_64& rng, const std::array<double, 3>& fill);

}  // namespace langseg
