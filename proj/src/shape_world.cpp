#include "langseg/shape_world.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "langseg/util.hpp"

namespace langseg {

std::string kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  throw std::logic_error("unreachable kind");
}

std::string color_name(ShapeColor c) {
  switch (c) {
    case ShapeColor::red: return "red";
    case ShapeColor::green: return "green";
    case ShapeColor::blue: return "blue";
    case ShapeColor::yellow: return "yellow";
  }
  throw std::logic_error("unreachable color");
}

std::optional<ShapeKind> kind_from_string(const std::string& s) {
  if (s == "circle") return ShapeKind::circle;
  if (s == "square") return ShapeKind::square;
  if (s == "triangle") return ShapeKind::triangle;
  return std::nullopt;
}

std::optional<ShapeColor> color_from_string(const std::string& s) {
  if (s == "red") return ShapeColor::red;
  if (s == "green") return ShapeColor::green;
  if (s == "blue") return ShapeColor::blue;
  if (s == "yellow") return ShapeColor::yellow;
  return std::nullopt;
}

bool shape_contains(const Shape& s, int r, int c) {
  const int dr = r - s.row, dc = c - s.col;
  switch (s.kind) {
    case ShapeKind::circle:
      return dr * dr + dc * dc <= s.size * s.size;
    case ShapeKind::square:
      return std::max(std::abs(dr), std::abs(dc)) <= s.size;
    case ShapeKind::triangle: {
      // Apex at (row - size, col), base spanning the full width at row + size.
      if (dr < -s.size || dr > s.size) return false;
      const int d = dr + s.size;  // rows below the apex
      return 2 * std::abs(dc) <= d;
    }
  }
  return false;
}

bool shape_interior_contains(const Shape& s, int r, int c) {
  for (int er = -s.border; er <= s.border; ++er)
    for (int ec = -s.border; ec <= s.border; ++ec)
      if (!shape_contains(s, r + er, c + ec)) return false;
  return true;
}

Mask shape_mask(const Scene& scene, const Shape& s) {
  Mask m(scene.h, scene.w);
  for (int r = std::max(0, s.row - s.size); r <= std::min(scene.h - 1, s.row + s.size); ++r)
    for (int c = std::max(0, s.col - s.size); c <= std::min(scene.w - 1, s.col + s.size); ++c)
      if (shape_contains(s, r, c)) m.at(r, c) = 1;
  return m;
}

std::int64_t shape_area(const Shape& s) {
  std::int64_t n = 0;
  for (int r = s.row - s.size; r <= s.row + s.size; ++r)
    for (int c = s.col - s.size; c <= s.col + s.size; ++c)
      if (shape_contains(s, r, c)) ++n;
  return n;
}

namespace {

bool placement_ok(const Shape& s, const std::vector<Shape>& placed) {
  for (const Shape& o : placed) {
    const int d = std::max(std::abs(s.row - o.row), std::abs(s.col - o.col));
    if (d < s.size + o.size + 2) return false;  // keep a >=2 pixel gap
  }
  return true;
}

bool unique_max_area(const std::vector<Shape>& shapes) {
  std::int64_t best = -1;
  int count = 0;
  for (const Shape& s : shapes) {
    const std::int64_t a = shape_area(s);
    if (a > best) {
      best = a;
      count = 1;
    } else if (a == best) {
      ++count;
    }
  }
  return count == 1;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  if (cfg.min_shapes < 1 || cfg.max_shapes < cfg.min_shapes)
    throw std::invalid_argument("shape count range empty");
  if (cfg.h < 32 || cfg.w < 32)
    throw std::invalid_argument("canvas must be at least 32x32");
  const int canvas = std::min(cfg.h, cfg.w);
  if (2 * cfg.min_size + 3 > canvas)
    throw std::invalid_argument("config infeasible: shapes cannot fit the canvas");
  const int max_fit = (canvas - 3) / 2;

  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 200; ++attempt) {
    Scene scene;
    scene.seed = seed;
    scene.h = cfg.h;
    scene.w = cfg.w;
    const int n = int_range(rng, cfg.min_shapes, cfg.max_shapes);
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      Shape s;
      s.kind = static_cast<ShapeKind>(int_range(rng, 0, 2));
      s.color = static_cast<ShapeColor>(int_range(rng, 0, 3));
      s.size = int_range(rng, cfg.min_size, std::min(cfg.max_size, max_fit));
      const int bmax = std::min(cfg.max_border, s.size / 2);
      const int bmin = std::min(cfg.min_border, bmax);
      s.border = int_range(rng, bmin, bmax);
      ok = false;
      for (int t = 0; t < 200; ++t) {
        s.row = int_range(rng, s.size + 1, cfg.h - s.size - 2);
        s.col = int_range(rng, s.size + 1, cfg.w - s.size - 2);
        if (placement_ok(s, scene.shapes)) {
          scene.shapes.push_back(s);
          ok = true;
          break;
        }
      }
    }
    if (ok && unique_max_area(scene.shapes)) return scene;
  }
  throw std::runtime_error("scene placement failed; loosen the config");
}

Image render_scene(const Scene& scene) {
  Image img(scene.h, scene.w);
  for (const Shape& s : scene.shapes) {
    int ch0 = 0, ch1 = -1;
    switch (s.color) {
      case ShapeColor::red: ch0 = 0; break;
      case ShapeColor::green: ch0 = 1; break;
      case ShapeColor::blue: ch0 = 2; break;
      case ShapeColor::yellow: ch0 = 0; ch1 = 1; break;
    }
    for (int r = std::max(0, s.row - s.size);
         r <= std::min(scene.h - 1, s.row + s.size); ++r)
      for (int c = std::max(0, s.col - s.size);
           c <= std::min(scene.w - 1, s.col + s.size); ++c) {
        if (!shape_contains(s, r, c)) continue;
        const std::uint8_t v = shape_interior_contains(s, r, c) ? 140 : 255;
        img.at(r, c, ch0) = v;
        if (ch1 >= 0) img.at(r, c, ch1) = v;
      }
  }
  return img;
}

namespace {

// Fully-separated center-box relations; `a rel b` means every pixel of `a`
// lies strictly on that side of every pixel of `b`.
bool relation_holds(const Shape& a, Relation rel, const Shape& b) {
  switch (rel) {
    case Relation::left_of: return a.col + a.size < b.col - b.size;
    case Relation::right_of: return a.col - a.size > b.col + b.size;
    case Relation::above: return a.row + a.size < b.row - b.size;
    case Relation::below: return a.row - a.size > b.row + b.size;
    case Relation::none: return false;
  }
  return false;
}

std::string relation_phrase(Relation rel) {
  switch (rel) {
    case Relation::left_of: return "left of";
    case Relation::right_of: return "right of";
    case Relation::above: return "above";
    case Relation::below: return "below";
    case Relation::none: break;
  }
  throw std::logic_error("no phrase for Relation::none");
}

// Index of the unique shape a referring query selects; throws on 0 or >1.
int referring_match(const Scene& scene, const Query& q) {
  std::vector<int> hits;
  if (q.superlative) {
    std::vector<int> candidates;
    for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
      const Shape& s = scene.shapes[i];
      if (q.kind && s.kind != *q.kind) continue;
      if (q.color && s.color != *q.color) continue;
      candidates.push_back(static_cast<int>(i));
    }
    if (candidates.empty())
      throw std::invalid_argument("referring query matches no shape");
    const bool largest = *q.superlative == "largest";
    std::int64_t best = largest ? -1 : (1LL << 60);
    int count = 0, pick = -1;
    for (int i : candidates) {
      const std::int64_t a = shape_area(scene.shapes[i]);
      if ((largest && a > best) || (!largest && a < best)) {
        best = a;
        pick = i;
        count = 1;
      } else if (a == best) {
        ++count;
      }
    }
    if (count != 1)
      throw std::invalid_argument("referring query is ambiguous (area tie)");
    return pick;
  }
  if (q.relation != Relation::none) {
    int ref = -1;
    for (std::size_t i = 0; i < scene.shapes.size(); ++i)
      if (scene.shapes[i].kind == *q.ref_kind) {
        if (ref >= 0)
          throw std::invalid_argument("referring query is ambiguous (reference)");
        ref = static_cast<int>(i);
      }
    if (ref < 0) throw std::invalid_argument("referring query matches no shape");
    for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
      if (static_cast<int>(i) == ref) continue;
      const Shape& s = scene.shapes[i];
      if (q.kind && s.kind != *q.kind) continue;
      if (relation_holds(s, q.relation, scene.shapes[ref]))
        hits.push_back(static_cast<int>(i));
    }
  } else {
    for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
      const Shape& s = scene.shapes[i];
      if (q.kind && s.kind != *q.kind) continue;
      if (q.color && s.color != *q.color) continue;
      hits.push_back(static_cast<int>(i));
    }
  }
  if (hits.empty()) throw std::invalid_argument("referring query matches no shape");
  if (hits.size() > 1) throw std::invalid_argument("referring query is ambiguous");
  return hits[0];
}

int salient_index(const Scene& scene) {
  std::int64_t best = -1;
  int pick = -1, count = 0;
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    const std::int64_t a = shape_area(scene.shapes[i]);
    if (a > best) {
      best = a;
      pick = static_cast<int>(i);
      count = 1;
    } else if (a == best) {
      ++count;
    }
  }
  if (count != 1) throw std::invalid_argument("salient query is ambiguous (area tie)");
  return pick;
}

void add_shape_region(Mask& m, const Scene& scene, const Shape& s,
                      const std::optional<std::string>& part) {
  for (int r = std::max(0, s.row - s.size);
       r <= std::min(scene.h - 1, s.row + s.size); ++r)
    for (int c = std::max(0, s.col - s.size);
         c <= std::min(scene.w - 1, s.col + s.size); ++c) {
      if (!shape_contains(s, r, c)) continue;
      if (part) {
        const bool inner = shape_interior_contains(s, r, c);
        if ((*part == "interior") != inner) continue;
      }
      m.at(r, c) = 1;
    }
}

}  // namespace

Mask rasterize_mask(const Scene& scene, const Query& query) {
  Mask m(scene.h, scene.w);
  switch (query.granularity) {
    case Granularity::category:
      if (!query.kind && !query.color)
        throw std::invalid_argument("category query needs a kind or color");
      for (const Shape& s : scene.shapes) {
        if (query.kind && s.kind != *query.kind) continue;
        if (query.color && s.color != *query.color) continue;
        add_shape_region(m, scene, s, std::nullopt);
      }
      return m;
    case Granularity::part:
      if (!query.kind || !query.part)
        throw std::invalid_argument("part query needs kind and part name");
      for (const Shape& s : scene.shapes)
        if (s.kind == *query.kind) add_shape_region(m, scene, s, query.part);
      return m;
    case Granularity::salient:
      add_shape_region(m, scene, scene.shapes[salient_index(scene)], std::nullopt);
      return m;
    case Granularity::referring:
      add_shape_region(m, scene, scene.shapes[referring_match(scene, query)],
                       std::nullopt);
      return m;
  }
  throw std::logic_error("unreachable granularity");
}

std::string query_caption(const Query& q) {
  switch (q.granularity) {
    case Granularity::category:
      if (q.kind) return render_prompt(Task::SS, kind_name(*q.kind));
      return render_prompt(Task::OVS, color_name(*q.color));
    case Granularity::part:
      return render_prompt(Task::PS, kind_name(*q.kind) + " " + *q.part);
    case Granularity::salient:
      return render_prompt(Task::SOD, std::nullopt);
    case Granularity::referring: {
      std::string phrase = "the ";
      if (q.superlative) {
        phrase += *q.superlative;
        if (q.color) phrase += " " + color_name(*q.color);
        phrase += " " + kind_name(*q.kind);
      } else if (q.relation != Relation::none) {
        phrase += kind_name(*q.kind) + " " + relation_phrase(q.relation) +
                  " the " + kind_name(*q.ref_kind);
      } else {
        phrase += color_name(*q.color) + " " + kind_name(*q.kind);
      }
      return render_prompt(Task::RIS, phrase);
    }
  }
  throw std::logic_error("unreachable granularity");
}

std::optional<Query> parse_caption(const std::string& caption) {
  std::vector<std::string> w;
  {
    std::istringstream in(caption);
    std::string tok;
    while (in >> tok) w.push_back(tok);
  }
  Query q;
  if (caption == "the most salient object") {
    q.granularity = Granularity::salient;
    return q;
  }
  if (w.size() >= 2 && w[0] == "all") {
    if (w.size() == 2) {
      q.granularity = Granularity::category;
      if (auto k = kind_from_string(w[1])) {
        q.kind = k;
        return q;
      }
      if (auto c = color_from_string(w[1])) {
        q.color = c;
        return q;
      }
      return std::nullopt;
    }
    if (w.size() == 3 && (w[2] == "border" || w[2] == "interior")) {
      if (auto k = kind_from_string(w[1])) {
        q.granularity = Granularity::part;
        q.kind = k;
        q.part = w[2];
        return q;
      }
    }
    return std::nullopt;
  }
  if (w.empty() || w[0] != "the") return std::nullopt;
  q.granularity = Granularity::referring;
  if (w.size() >= 3 && (w[1] == "largest" || w[1] == "smallest")) {
    q.superlative = w[1];
    if (w.size() == 3) {
      q.kind = kind_from_string(w[2]);
      return q.kind ? std::optional<Query>(q) : std::nullopt;
    }
    if (w.size() == 4) {
      q.color = color_from_string(w[2]);
      q.kind = kind_from_string(w[3]);
      return (q.color && q.kind) ? std::optional<Query>(q) : std::nullopt;
    }
    return std::nullopt;
  }
  if (w.size() == 3) {
    q.color = color_from_string(w[1]);
    q.kind = kind_from_string(w[2]);
    return (q.color && q.kind) ? std::optional<Query>(q) : std::nullopt;
  }
  // "the <kind> left|right of the <kind>" / "the <kind> above|below the <kind>"
  if (w.size() == 6 && (w[2] == "left" || w[2] == "right") && w[3] == "of" &&
      w[4] == "the") {
    q.kind = kind_from_string(w[1]);
    q.ref_kind = kind_from_string(w[5]);
    q.relation = w[2] == "left" ? Relation::left_of : Relation::right_of;
    return (q.kind && q.ref_kind) ? std::optional<Query>(q) : std::nullopt;
  }
  if (w.size() == 5 && (w[2] == "above" || w[2] == "below") && w[3] == "the") {
    q.kind = kind_from_string(w[1]);
    q.ref_kind = kind_from_string(w[4]);
    q.relation = w[2] == "above" ? Relation::above : Relation::below;
    return (q.kind && q.ref_kind) ? std::optional<Query>(q) : std::nullopt;
  }
  return std::nullopt;
}

namespace {

bool query_valid(const Scene& scene, const Query& q) {
  try {
    rasterize_mask(scene, q);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

std::vector<ShapeKind> kinds_present(const Scene& scene) {
  std::vector<ShapeKind> out;
  for (ShapeKind k :
       {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle}) {
    for (const Shape& s : scene.shapes)
      if (s.kind == k) {
        out.push_back(k);
        break;
      }
  }
  return out;
}

std::vector<ShapeColor> colors_present(const Scene& scene) {
  std::vector<ShapeColor> out;
  for (ShapeColor c : {ShapeColor::red, ShapeColor::green, ShapeColor::blue,
                       ShapeColor::yellow}) {
    for (const Shape& s : scene.shapes)
      if (s.color == c) {
        out.push_back(c);
        break;
      }
  }
  return out;
}

}  // namespace

std::vector<Query> enumerate_queries(const Scene& scene, Task task) {
  std::vector<Query> out;
  auto add_if_valid = [&](const Query& q) {
    if (query_valid(scene, q)) out.push_back(q);
  };
  switch (task) {
    case Task::SS:
      for (ShapeKind k : kinds_present(scene)) {
        Query q;
        q.granularity = Granularity::category;
        q.kind = k;
        out.push_back(q);
      }
      break;
    case Task::OVS:
      for (ShapeColor c : colors_present(scene)) {
        Query q;
        q.granularity = Granularity::category;
        q.color = c;
        out.push_back(q);
      }
      break;
    case Task::PS:
      for (ShapeKind k : kinds_present(scene))
        for (const char* part : {"border", "interior"}) {
          Query q;
          q.granularity = Granularity::part;
          q.kind = k;
          q.part = part;
          out.push_back(q);
        }
      break;
    case Task::SOD: {
      Query q;
      q.granularity = Granularity::salient;
      out.push_back(q);
      break;
    }
    case Task::RIS:
    case Task::RVOS: {
      for (ShapeKind k : kinds_present(scene)) {
        for (ShapeColor c : colors_present(scene)) {
          Query q;
          q.granularity = Granularity::referring;
          q.kind = k;
          q.color = c;
          add_if_valid(q);
        }
        for (const char* sup : {"largest", "smallest"}) {
          Query q;
          q.granularity = Granularity::referring;
          q.kind = k;
          q.superlative = sup;
          add_if_valid(q);
        }
      }
      if (task == Task::RIS) {  // relations are not jitter-stable, RIS only
        for (ShapeKind a : kinds_present(scene))
          for (ShapeKind b : kinds_present(scene))
            for (Relation rel : {Relation::left_of, Relation::right_of,
                                 Relation::above, Relation::below}) {
              Query q;
              q.granularity = Granularity::referring;
              q.kind = a;
              q.ref_kind = b;
              q.relation = rel;
              add_if_valid(q);
            }
      }
      break;
    }
  }
  return out;
}

std::vector<Triplet> scene_to_triplets(const Scene& scene,
                                       const std::vector<Task>& tasks) {
  std::vector<Triplet> out;
  const Image img = render_scene(scene);
  for (Task task : tasks) {
    if (task == Task::RVOS) continue;  // videos are built via make_video
    for (const Query& q : enumerate_queries(scene, task)) {
      Triplet t;
      t.image = img;
      t.mask = rasterize_mask(scene, q);
      t.caption = query_caption(q);
      t.task = task;
      t.source = Source::supervised;
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Scene> make_video(std::uint64_t seed, const SceneConfig& cfg,
                              int frames, int jitter) {
  if (frames < 1) throw std::invalid_argument("video needs at least one frame");
  std::vector<Scene> out;
  const Scene base = generate_scene(seed, cfg);
  out.push_back(base);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int f = 1; f < frames; ++f) {
    Scene frame = base;
    bool ok = true;
    for (std::size_t i = 0; i < frame.shapes.size() && ok; ++i) {
      Shape& s = frame.shapes[i];
      ok = false;
      for (int t = 0; t < 50; ++t) {
        Shape cand = base.shapes[i];
        cand.row += int_range(rng, -jitter, jitter);
        cand.col += int_range(rng, -jitter, jitter);
        if (cand.row < cand.size + 1 || cand.row > cfg.h - cand.size - 2 ||
            cand.col < cand.size + 1 || cand.col > cfg.w - cand.size - 2)
          continue;
        std::vector<Shape> others;
        for (std::size_t j = 0; j < frame.shapes.size(); ++j)
          if (j != i) others.push_back(j < i ? frame.shapes[j] : base.shapes[j]);
        if (!placement_ok(cand, others)) continue;
        s = cand;
        ok = true;
        break;
      }
    }
    out.push_back(ok ? frame : base);  // fall back to the base layout
  }
  return out;
}

std::vector<Triplet> video_to_triplets(const std::vector<Scene>& frames,
                                       const Query& query,
                                       const std::string& video_id) {
  std::vector<Triplet> out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    Triplet t;
    t.image = render_scene(frames[f]);
    t.mask = rasterize_mask(frames[f], query);
    t.caption = query_caption(query);
    t.task = Task::RVOS;
    t.source = Source::supervised;
    t.video_id = video_id;
    t.frame_index = static_cast<int>(f);
    out.push_back(std::move(t));
  }
  return out;
}

std::string write_corpus(const std::string& out_dir, std::uint64_t seed,
                         int count, const SceneConfig& cfg,
                         const std::vector<Task>& tasks) {
  std::vector<Task> image_tasks;
  bool want_video = false;
  for (Task t : tasks) {
    if (t == Task::RVOS)
      want_video = true;
    else
      image_tasks.push_back(t);
  }
  std::vector<Triplet> all;
  char buf[64];
  for (int i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = seed ^ (0x9e3779b97f4a7c15ULL * (i + 1));
    if (!image_tasks.empty()) {
      const Scene scene = generate_scene(scene_seed, cfg);
      auto ts = scene_to_triplets(scene, image_tasks);
      for (std::size_t qi = 0; qi < ts.size(); ++qi) {
        std::snprintf(buf, sizeof(buf), "images/scene%05d.png", i);
        ts[qi].image_path = buf;
        std::snprintf(buf, sizeof(buf), "masks/scene%05d_q%02d.png", i,
                      static_cast<int>(qi));
        ts[qi].mask_path = buf;
        all.push_back(std::move(ts[qi]));
      }
    }
    if (want_video) {
      const std::uint64_t vseed = scene_seed ^ 0x5851f42d4c957f2dULL;
      const auto frames = make_video(vseed, cfg, 3, 2);
      auto queries = enumerate_queries(frames[0], Task::RVOS);
      if (queries.empty()) continue;
      std::mt19937_64 pick_rng(vseed + 1);
      const Query q = queries[int_range(pick_rng, 0,
                                        static_cast<int>(queries.size()) - 1)];
      std::snprintf(buf, sizeof(buf), "vid%05d", i);
      auto ts = video_to_triplets(frames, q, buf);
      for (auto& t : ts) {
        t.image_path = "images/" + video_frame_name(t.video_id, t.frame_index);
        std::snprintf(buf, sizeof(buf), "masks/%s_f%02d_m.png",
                      t.video_id.c_str(), t.frame_index);
        t.mask_path = buf;
        all.push_back(std::move(t));
      }
    }
  }
  const std::string manifest = path_join(out_dir, "manifest.jsonl");
  write_manifest(all, manifest);
  return manifest;
}

}  // namespace langseg
