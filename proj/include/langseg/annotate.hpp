#pragma once

// Automatic annotation: pluggable perception stages with exact "oracle"
// implementations that recover shape-world scenes from rendered pixels,
// three pseudo-labeling routes (box-labeled, mask-relabel, unlabeled), and
// match-score filtering. Noisy oracle variants inject controlled mask and
// caption corruption so the filter's effect is measurable.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "langseg/data.hpp"
#include "langseg/image.hpp"
#include "langseg/shape_world.hpp"

namespace langseg {

// Half-open pixel rectangle [r0, r1) x [c0, c1).
struct Box {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  int height() const { return r1 - r0; }
  int width() const { return c1 - c0; }
};

// Tight bounding box of a shape, and the crop of an image under a box.
Box shape_box(const Shape& s);
Image crop_image(const Image& img, const Box& b);

// Reconstructs the exact scene — kind, color, center, size, and border
// width per shape — from a rendered image alone (connected components +
// exact re-rasterization). An all-background image yields an empty scene;
// anything that is not a shape-world rendering throws std::invalid_argument.
Scene recover_scene(const Image& img);

// Grounds a caption against a known scene: full query grammar plus the bare
// "{color} {kind}" instance form (union over matching shapes). Returns an
// empty mask when the caption matches nothing or is ambiguous where the
// grammar demands uniqueness.
Mask ground_caption(const Scene& scene, const std::string& caption);

// ---------------------------------------------------------------------------
// Stage interfaces. Every stage is deterministic: oracles are pure, noisy
// variants derive all randomness from their constructor seed.

class Tagger {
 public:
  virtual ~Tagger() = default;
  virtual std::vector<std::string> tags(const Image& img) = 0;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Box> detect(const Image& img, const std::string& tag) = 0;
};

class MaskGenerator {
 public:
  virtual ~MaskGenerator() = default;
  virtual Mask segment(const Image& img, const Box& box) = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption(const Image& img) = 0;
};

class Grounder {
 public:
  virtual ~Grounder() = default;
  virtual Mask ground(const Image& img, const std::string& caption) = 0;
};

// Match score in [0, 1] between a caption and a mask on an image.
class MatchScorer {
 public:
  virtual ~MatchScorer() = default;
  virtual double score(const Image& img, const Mask& mask,
                       const std::string& caption) = 0;
};

// ---------------------------------------------------------------------------
// Oracle stages: exact perception via recover_scene.

// Tags = shape kinds present, in kind-enum order, deduplicated.
class OracleTagger : public Tagger {
 public:
  std::vector<std::string> tags(const Image& img) override;
};

// Tight bounding boxes of the shapes of the tagged kind, in scene order.
class OracleDetector : public Detector {
 public:
  std::vector<Box> detect(const Image& img, const std::string& tag) override;
};

// Full-image mask of the shape overlapping the box most; empty when the box
// covers no shape.
class OracleMaskGenerator : public MaskGenerator {
 public:
  Mask segment(const Image& img, const Box& box) override;
};

// Single visible shape -> "{color} {kind}"; several -> "the largest {color}
// {kind}" of the unique largest shape; nothing recoverable -> "object".
class OracleCaptioner : public Captioner {
 public:
  std::string caption(const Image& img) override;
};

class OracleGrounder : public Grounder {
 public:
  Mask ground(const Image& img, const std::string& caption) override;
};

// score = IoU(mask, grounded reference); 0 whenever the caption grounds to
// nothing (an empty reference never certifies a mask).
class OracleMatchScorer : public MatchScorer {
 public:
  double score(const Image& img, const Mask& mask,
               const std::string& caption) override;
};

// ---------------------------------------------------------------------------
// Noisy oracle variants.

struct NoiseConfig {
  double mask_corrupt_prob = 0.2;  // chance a segment() call is corrupted
  int radius = 6;                  // Chebyshev dilation/erosion radius
  double caption_swap_prob = 0.0;  // chance the caption's color word is swapped
};

// Oracle masks, but each call is corrupted with probability
// mask_corrupt_prob by a Chebyshev dilation or erosion (direction seeded).
class NoisyMaskGenerator : public MaskGenerator {
 public:
  NoisyMaskGenerator(const NoiseConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed) {}
  Mask segment(const Image& img, const Box& box) override;

 private:
  OracleMaskGenerator oracle_;
  NoiseConfig cfg_;
  std::mt19937_64 rng_;
};

// Oracle captions, but with probability caption_swap_prob the color word is
// replaced by a different color.
class NoisyCaptioner : public Captioner {
 public:
  NoisyCaptioner(const NoiseConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed) {}
  std::string caption(const Image& img) override;

 private:
  OracleCaptioner oracle_;
  NoiseConfig cfg_;
  std::mt19937_64 rng_;
};

Mask dilate_mask(const Mask& m, int radius);
Mask erode_mask(const Mask& m, int radius);

// ---------------------------------------------------------------------------
// Routes and filtering.

struct PseudoBatch {
  std::vector<Triplet> triplets;
  std::string route;                  // "box" | "mask" | "unlabeled"
  std::vector<std::string> drop_log;  // one reason per dropped candidate
};

// Box-labeled data: per box, segment -> caption the crop -> score. Throws
// std::invalid_argument on a zero-area or out-of-bounds box.
PseudoBatch run_box_route(const Image& img, const std::vector<Box>& boxes,
                          MaskGenerator& masks, Captioner& captions,
                          MatchScorer& scorer);

// Relabel from scratch: tag -> detect per tag -> segment per box; one
// triplet per tag with the union mask and the category prompt "all {tag}".
PseudoBatch run_mask_route(const Image& img, Tagger& tagger, Detector& det,
                           MaskGenerator& masks, MatchScorer& scorer);

// Unlabeled data: caption the image, ground the caption; an empty grounding
// drops the candidate with a logged reason.
PseudoBatch run_unlabeled_route(const Image& img, Captioner& captions,
                                Grounder& grounder, MatchScorer& scorer);

// Re-scores every triplet and keeps exactly those with score >= tau, in
// input order, recording the score on each kept triplet. Scores live in
// [0, 1], so tau = 0 keeps everything and tau > 1 keeps nothing.
PseudoBatch filter_triplets(const PseudoBatch& batch, MatchScorer& scorer,
                            double tau);

}  // namespace langseg
