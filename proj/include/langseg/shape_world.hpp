#pragma once

// Deterministic synthetic scenes of colored geometric shapes with an
// analytic ground-truth mask for every query granularity (category,
// referring, salient, part). Pixel membership is integer-exact — no
// anti-aliasing — so every oracle is reproducible bit-for-bit.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "langseg/data.hpp"
#include "langseg/image.hpp"

namespace langseg {

enum class ShapeKind { circle, square, triangle };
enum class ShapeColor { red, green, blue, yellow };

std::string kind_name(ShapeKind k);
std::string color_name(ShapeColor c);
std::optional<ShapeKind> kind_from_string(const std::string& s);
std::optional<ShapeColor> color_from_string(const std::string& s);

// One shape. `size` is the half-extent in pixels (circle radius, square
// half-side, triangle half-height); `border` the border-ring width.
struct Shape {
  ShapeKind kind = ShapeKind::circle;
  ShapeColor color = ShapeColor::red;
  int row = 0, col = 0;  // center
  int size = 0;
  int border = 0;  // invariant: size >= 2*border
};

struct Scene {
  std::uint64_t seed = 0;
  int h = 0, w = 0;
  std::vector<Shape> shapes;
};

struct SceneConfig {
  int h = 64, w = 64;
  int min_shapes = 1, max_shapes = 3;
  int min_size = 8, max_size = 14;
  int min_border = 3, max_border = 5;
};

enum class Granularity { category, referring, salient, part };
enum class Relation { none, left_of, right_of, above, below };

// A structured predicate that renders to exactly one caption.
struct Query {
  Granularity granularity = Granularity::category;
  std::optional<ShapeKind> kind;          // category / part / referring
  std::optional<ShapeColor> color;        // color category (OVS) / referring
  std::optional<std::string> part;        // "border" | "interior"
  std::optional<std::string> superlative; // "largest" | "smallest"
  Relation relation = Relation::none;
  std::optional<ShapeKind> ref_kind;      // reference shape of a relation
};

// Exact pixel membership of the full shape region.
bool shape_contains(const Shape& s, int r, int c);
// Interior = pixels whose whole Chebyshev-`border` neighborhood stays inside
// the shape; border ring = shape minus interior.
bool shape_interior_contains(const Shape& s, int r, int c);
Mask shape_mask(const Scene& scene, const Shape& s);
std::int64_t shape_area(const Shape& s);

// Deterministic generation; throws std::invalid_argument when the config
// cannot fit (needs 2*min_size + 3 <= min(h, w)) and std::runtime_error if
// placement keeps failing. Exactly one shape attains the maximum area.
Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

// Renders on a black background: border pixels at full color intensity,
// interior pixels dimmed, so kind/color/part are all recoverable from the
// image alone.
Image render_scene(const Scene& scene);

// Ground-truth oracle. Referring queries throw std::invalid_argument when
// they match zero or more than one shape.
Mask rasterize_mask(const Scene& scene, const Query& query);

// Caption of a query via the task templates; referring captions are built
// from the selector ("the red circle", "the largest square", "the circle
// left of the square").
std::string query_caption(const Query& q);
// Inverse of query_caption over the full grammar; nullopt if unparseable.
std::optional<Query> parse_caption(const std::string& caption);

// All queries legal on this scene for one task (referring queries that are
// ambiguous on the scene are skipped).
std::vector<Query> enumerate_queries(const Scene& scene, Task task);

// One supervised triplet per legal (task, query) pair; paths left empty for
// the caller to assign. RVOS is excluded here (videos are built separately).
std::vector<Triplet> scene_to_triplets(const Scene& scene,
                                       const std::vector<Task>& tasks);

// A video = one scene re-rendered over `frames` frames with the shape
// centers jittered by at most `jitter` pixels per frame (sizes unchanged, so
// every non-relational selector keeps its validity).
std::vector<Scene> make_video(std::uint64_t seed, const SceneConfig& cfg,
                              int frames, int jitter);

// Per-frame triplets for one video-level query.
std::vector<Triplet> video_to_triplets(const std::vector<Scene>& frames,
                                       const Query& query,
                                       const std::string& video_id);

// Generates `count` scenes (and, when RVOS is requested, `count` videos),
// writes images/masks/manifest under out_dir, and returns the manifest path.
std::string write_corpus(const std::string& out_dir, std::uint64_t seed,
                         int count, const SceneConfig& cfg,
                         const std::vector<Task>& tasks);

}  // namespace langseg
