#include "langseg/annotate.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <deque>
#include <set>
#include <sstream>
#include <stdexcept>

#include "langseg/losses.hpp"
#include "langseg/util.hpp"

namespace langseg {

namespace {

constexpr std::uint8_t kBorderLevel = 255;
constexpr std::uint8_t kInteriorLevel = 140;

std::vector<int> active_channels(const Image& img, int r, int c) {
  std::vector<int> on;
  for (int ch = 0; ch < 3; ++ch)
    if (img.at(r, c, ch) != 0) on.push_back(ch);
  return on;
}

ShapeColor color_from_channels(const std::vector<int>& on) {
  if (on == std::vector<int>{0}) return ShapeColor::red;
  if (on == std::vector<int>{1}) return ShapeColor::green;
  if (on == std::vector<int>{2}) return ShapeColor::blue;
  if (on == std::vector<int>{0, 1}) return ShapeColor::yellow;
  throw std::invalid_argument("pixel colors do not match any shape color");
}

struct Component {
  std::vector<std::pair<int, int>> pixels;
  std::vector<bool> is_border;  // parallel to pixels
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;  // inclusive bounds
  ShapeColor color = ShapeColor::red;
};

Component trace_component(const Image& img, std::vector<std::uint8_t>& seen,
                          int sr, int sc) {
  Component comp;
  comp.r0 = comp.r1 = sr;
  comp.c0 = comp.c1 = sc;
  const std::vector<int> on = active_channels(img, sr, sc);
  comp.color = color_from_channels(on);

  std::deque<std::pair<int, int>> queue{{sr, sc}};
  seen[static_cast<std::size_t>(sr) * img.w + sc] = 1;
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    if (active_channels(img, r, c) != on)
      throw std::invalid_argument("shape region mixes colors");
    const std::uint8_t level = img.at(r, c, on[0]);
    for (int ch : on)
      if (img.at(r, c, ch) != level)
        throw std::invalid_argument("shape pixel has uneven channel levels");
    if (level != kBorderLevel && level != kInteriorLevel)
      throw std::invalid_argument("shape pixel at an unknown intensity");

    comp.pixels.emplace_back(r, c);
    comp.is_border.push_back(level == kBorderLevel);
    comp.r0 = std::min(comp.r0, r);
    comp.r1 = std::max(comp.r1, r);
    comp.c0 = std::min(comp.c0, c);
    comp.c1 = std::max(comp.c1, c);

    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= img.h || nc < 0 || nc >= img.w) continue;
      std::uint8_t& mark = seen[static_cast<std::size_t>(nr) * img.w + nc];
      if (mark) continue;
      if (active_channels(img, nr, nc).empty()) continue;
      mark = 1;
      queue.emplace_back(nr, nc);
    }
  }
  return comp;
}

Shape shape_from_component(const Component& comp) {
  const int side = comp.r1 - comp.r0 + 1;
  if (side != comp.c1 - comp.c0 + 1 || side % 2 == 0)
    throw std::invalid_argument("shape bounding box is not an odd square");
  Shape s;
  s.color = comp.color;
  s.size = (side - 1) / 2;
  s.row = comp.r0 + s.size;
  s.col = comp.c0 + s.size;

  std::set<std::pair<int, int>> member(comp.pixels.begin(), comp.pixels.end());
  bool found = false;
  for (ShapeKind k :
       {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle}) {
    s.kind = k;
    bool match = true;
    for (int r = comp.r0; r <= comp.r1 && match; ++r)
      for (int c = comp.c0; c <= comp.c1 && match; ++c)
        if (shape_contains(s, r, c) != (member.count({r, c}) > 0))
          match = false;
    if (match) {
      found = true;
      break;
    }
  }
  if (!found)
    throw std::invalid_argument("pixel region matches no shape kind");

  for (int b = 0; b <= s.size; ++b) {
    s.border = b;
    bool match = true;
    for (std::size_t i = 0; i < comp.pixels.size() && match; ++i) {
      const auto [r, c] = comp.pixels[i];
      if (shape_interior_contains(s, r, c) != !comp.is_border[i]) match = false;
    }
    if (match) return s;
  }
  throw std::invalid_argument("border ring matches no border width");
}

Mask union_masks(Mask acc, const Mask& add) {
  if (acc.h != add.h || acc.w != add.w)
    throw std::invalid_argument("mask union: shape mismatch");
  for (std::size_t i = 0; i < acc.v.size(); ++i)
    acc.v[i] = acc.v[i] || add.v[i];
  return acc;
}

std::vector<std::string> lower_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(
          static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

void check_box(const Image& img, const Box& b) {
  if (b.height() <= 0 || b.width() <= 0)
    throw std::invalid_argument("degenerate box has zero area");
  if (b.r0 < 0 || b.c0 < 0 || b.r1 > img.h || b.c1 > img.w)
    throw std::invalid_argument("box exceeds image bounds");
}

Triplet make_pseudo(const Image& img, Mask mask, std::string caption,
                    Task task, Source source, double score) {
  Triplet t;
  t.image = img;
  t.mask = std::move(mask);
  t.caption = std::move(caption);
  t.task = task;
  t.source = source;
  t.score = score;
  return t;
}

}  // namespace

Box shape_box(const Shape& s) {
  return Box{s.row - s.size, s.col - s.size, s.row + s.size + 1,
             s.col + s.size + 1};
}

Image crop_image(const Image& img, const Box& b) {
  check_box(img, b);
  Image out(b.height(), b.width());
  for (int r = 0; r < out.h; ++r)
    for (int c = 0; c < out.w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = img.at(b.r0 + r, b.c0 + c, ch);
  return out;
}

Scene recover_scene(const Image& img) {
  Scene scene;
  scene.h = img.h;
  scene.w = img.w;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(img.h) * img.w, 0);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) {
      if (seen[static_cast<std::size_t>(r) * img.w + c]) continue;
      if (active_channels(img, r, c).empty()) continue;
      scene.shapes.push_back(
          shape_from_component(trace_component(img, seen, r, c)));
    }
  return scene;
}

Mask ground_caption(const Scene& scene, const std::string& caption) {
  if (const auto q = parse_caption(caption)) {
    try {
      return rasterize_mask(scene, *q);
    } catch (const std::invalid_argument&) {
      return Mask(scene.h, scene.w);  // unmatched or ambiguous reference
    }
  }
  // Bare "{color} {kind}" instance form: union over matching shapes.
  const std::vector<std::string> words = lower_words(caption);
  Mask out(scene.h, scene.w);
  if (words.size() != 2) return out;
  const auto color = color_from_string(words[0]);
  const auto kind = kind_from_string(words[1]);
  if (!color || !kind) return out;
  for (const Shape& s : scene.shapes)
    if (s.color == *color && s.kind == *kind)
      out = union_masks(std::move(out), shape_mask(scene, s));
  return out;
}

std::vector<std::string> OracleTagger::tags(const Image& img) {
  const Scene scene = recover_scene(img);
  std::vector<std::string> out;
  for (ShapeKind k :
       {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle}) {
    for (const Shape& s : scene.shapes)
      if (s.kind == k) {
        out.push_back(kind_name(k));
        break;
      }
  }
  return out;
}

std::vector<Box> OracleDetector::detect(const Image& img,
                                        const std::string& tag) {
  const auto kind = kind_from_string(tag);
  if (!kind) return {};
  const Scene scene = recover_scene(img);
  std::vector<Box> out;
  for (const Shape& s : scene.shapes)
    if (s.kind == *kind) out.push_back(shape_box(s));
  return out;
}

Mask OracleMaskGenerator::segment(const Image& img, const Box& box) {
  check_box(img, box);
  const Scene scene = recover_scene(img);
  const Shape* best = nullptr;
  std::int64_t best_overlap = 0;
  for (const Shape& s : scene.shapes) {
    std::int64_t overlap = 0;
    for (int r = std::max(box.r0, s.row - s.size);
         r < std::min(box.r1, s.row + s.size + 1); ++r)
      for (int c = std::max(box.c0, s.col - s.size);
           c < std::min(box.c1, s.col + s.size + 1); ++c)
        overlap += shape_contains(s, r, c) ? 1 : 0;
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = &s;
    }
  }
  if (!best) return Mask(img.h, img.w);
  return shape_mask(scene, *best);
}

std::string OracleCaptioner::caption(const Image& img) {
  Scene scene;
  try {
    scene = recover_scene(img);
  } catch (const std::invalid_argument&) {
    return "object";  // not a clean rendering; grounds to nothing downstream
  }
  if (scene.shapes.empty()) return "object";
  if (scene.shapes.size() == 1) {
    const Shape& s = scene.shapes[0];
    return color_name(s.color) + " " + kind_name(s.kind);
  }
  const Shape* largest = &scene.shapes[0];
  for (const Shape& s : scene.shapes)
    if (shape_area(s) > shape_area(*largest)) largest = &s;
  return "the largest " + color_name(largest->color) + " " +
         kind_name(largest->kind);
}

Mask OracleGrounder::ground(const Image& img, const std::string& caption) {
  try {
    return ground_caption(recover_scene(img), caption);
  } catch (const std::invalid_argument&) {
    return Mask(img.h, img.w);
  }
}

double OracleMatchScorer::score(const Image& img, const Mask& mask,
                                const std::string& caption) {
  Mask ref;
  try {
    ref = ground_caption(recover_scene(img), caption);
  } catch (const std::invalid_argument&) {
    return 0.0;
  }
  if (ref.area() == 0) return 0.0;
  return iou(mask, ref);
}

Mask dilate_mask(const Mask& m, int radius) {
  Mask out(m.h, m.w);
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c) {
      bool on = false;
      for (int dr = -radius; dr <= radius && !on; ++dr)
        for (int dc = -radius; dc <= radius && !on; ++dc) {
          const int nr = r + dr, nc = c + dc;
          if (nr >= 0 && nr < m.h && nc >= 0 && nc < m.w && m.at(nr, nc))
            on = true;
        }
      out.at(r, c) = on ? 1 : 0;
    }
  return out;
}

Mask erode_mask(const Mask& m, int radius) {
  Mask out(m.h, m.w);
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c) {
      bool on = m.at(r, c) != 0;
      for (int dr = -radius; dr <= radius && on; ++dr)
        for (int dc = -radius; dc <= radius && on; ++dc) {
          const int nr = r + dr, nc = c + dc;
          if (nr < 0 || nr >= m.h || nc < 0 || nc >= m.w || !m.at(nr, nc))
            on = false;
        }
      out.at(r, c) = on ? 1 : 0;
    }
  return out;
}

Mask NoisyMaskGenerator::segment(const Image& img, const Box& box) {
  Mask m = oracle_.segment(img, box);
  // Both draws happen unconditionally so the call sequence alone determines
  // the random stream, independent of outcomes.
  const double u = unit_double(rng_);
  const bool dilate = (rng_() & 1) != 0;
  if (u < cfg_.mask_corrupt_prob)
    m = dilate ? dilate_mask(m, cfg_.radius) : erode_mask(m, cfg_.radius);
  return m;
}

std::string NoisyCaptioner::caption(const Image& img) {
  std::string text = oracle_.caption(img);
  const double u = unit_double(rng_);
  const int offset = 1 + int_range(rng_, 0, 2);  // 1..3: always a new color
  if (u >= cfg_.caption_swap_prob) return text;

  static const std::array<const char*, 4> colors = {"red", "green", "blue",
                                                    "yellow"};
  std::vector<std::string> words = lower_words(text);
  for (std::string& w : words) {
    for (std::size_t i = 0; i < colors.size(); ++i)
      if (w == colors[i]) {
        w = colors[(i + offset) % colors.size()];
        std::string swapped = words[0];
        for (std::size_t j = 1; j < words.size(); ++j)
          swapped += " " + words[j];
        return swapped;
      }
  }
  return text;  // no color word to corrupt
}

PseudoBatch run_box_route(const Image& img, const std::vector<Box>& boxes,
                          MaskGenerator& masks, Captioner& captions,
                          MatchScorer& scorer) {
  PseudoBatch batch;
  batch.route = "box";
  for (const Box& b : boxes) {
    check_box(img, b);
    Mask m = masks.segment(img, b);
    std::string caption = captions.caption(crop_image(img, b));
    const double s = scorer.score(img, m, caption);
    batch.triplets.push_back(make_pseudo(img, std::move(m), std::move(caption),
                                         Task::RIS, Source::pseudo_box, s));
  }
  return batch;
}

PseudoBatch run_mask_route(const Image& img, Tagger& tagger, Detector& det,
                           MaskGenerator& masks, MatchScorer& scorer) {
  PseudoBatch batch;
  batch.route = "mask";
  for (const std::string& tag : tagger.tags(img)) {
    const std::vector<Box> boxes = det.detect(img, tag);
    if (boxes.empty()) {
      batch.drop_log.push_back("tag '" + tag + "': no detections");
      continue;
    }
    Mask m(img.h, img.w);
    for (const Box& b : boxes) m = union_masks(std::move(m), masks.segment(img, b));
    std::string caption = render_prompt(Task::SS, tag);
    const double s = scorer.score(img, m, caption);
    batch.triplets.push_back(make_pseudo(img, std::move(m), std::move(caption),
                                         Task::SS, Source::pseudo_mask, s));
  }
  return batch;
}

PseudoBatch run_unlabeled_route(const Image& img, Captioner& captions,
                                Grounder& grounder, MatchScorer& scorer) {
  PseudoBatch batch;
  batch.route = "unlabeled";
  std::string caption = captions.caption(img);
  Mask m = grounder.ground(img, caption);
  if (m.area() == 0) {
    batch.drop_log.push_back("caption '" + caption +
                             "' grounded to an empty mask");
    return batch;
  }
  const double s = scorer.score(img, m, caption);
  batch.triplets.push_back(make_pseudo(img, std::move(m), std::move(caption),
                                       Task::RIS, Source::pseudo_unlabeled, s));
  return batch;
}

PseudoBatch filter_triplets(const PseudoBatch& batch, MatchScorer& scorer,
                            double tau) {
  PseudoBatch out;
  out.route = batch.route;
  out.drop_log = batch.drop_log;
  for (const Triplet& t : batch.triplets) {
    const double s = scorer.score(t.image, t.mask, t.caption);
    if (s >= tau) {
      out.triplets.push_back(t);
      out.triplets.back().score = s;
    } else {
      char line[160];
      std::snprintf(line, sizeof line, "score %.4f below threshold %.4f: %s",
                    s, tau, t.caption.c_str());
      out.drop_log.emplace_back(line);
    }
  }
  return out;
}

}  // namespace langseg
