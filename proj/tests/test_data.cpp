#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "langseg/data.hpp"
#include "langseg/image.hpp"
#include "langseg/util.hpp"

using namespace langseg;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test run.
std::string scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("langseg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(h, w);
  for (auto& v : img.px) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

Mask checker_mask(int h, int w) {
  Mask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.at(r, c) = static_cast<std::uint8_t>((r + c) & 1);
  return m;
}

Triplet sample_triplet(int h, int w, std::uint64_t seed) {
  Triplet t;
  t.image = random_image(h, w, seed);
  t.mask = checker_mask(h, w);
  t.caption = "all circle";
  t.task = Task::SS;
  t.source = Source::supervised;
  return t;
}

}  // namespace

TEST_CASE("task and source names round-trip; unknown strings rejected") {
  for (Task t : {Task::RIS, Task::RVOS, Task::SS, Task::OVS, Task::PS, Task::SOD})
    CHECK(task_from_string(task_name(t)) == t);
  for (Source s : {Source::supervised, Source::pseudo_box, Source::pseudo_mask,
                   Source::pseudo_unlabeled})
    CHECK(source_from_string(source_name(s)) == s);
  CHECK_THROWS(task_from_string("segmentation"));
  CHECK_THROWS(task_from_string("ris"));
  CHECK_THROWS(source_from_string("gold"));
  CHECK(!is_pseudo(Source::supervised));
  CHECK(is_pseudo(Source::pseudo_box));
  CHECK(is_pseudo(Source::pseudo_mask));
  CHECK(is_pseudo(Source::pseudo_unlabeled));
}

TEST_CASE("prompt templates per task") {
  CHECK(render_prompt(Task::SS, "cat") == "all cat");
  CHECK(render_prompt(Task::OVS, "red") == "all red");
  CHECK(render_prompt(Task::PS, "circle border") == "all circle border");
  CHECK(render_prompt(Task::SOD, std::nullopt) == "the most salient object");
  CHECK(render_prompt(Task::RIS, "the man in red") == "the man in red");
  CHECK(render_prompt(Task::RVOS, "the largest blue square") ==
        "the largest blue square");
  // Multi-word payloads are slotted in verbatim.
  CHECK(render_prompt(Task::SS, "traffic light") == "all traffic light");

  CHECK_THROWS(render_prompt(Task::SS, std::nullopt));
  CHECK_THROWS(render_prompt(Task::OVS, std::nullopt));
  CHECK_THROWS(render_prompt(Task::PS, std::nullopt));
  CHECK_THROWS(render_prompt(Task::RIS, std::nullopt));
  CHECK_THROWS(render_prompt(Task::RVOS, std::nullopt));
  CHECK_THROWS(render_prompt(Task::SOD, "anything"));

  // Every non-SOD prompt contains its payload as a substring.
  for (Task t : {Task::RIS, Task::RVOS, Task::SS, Task::OVS, Task::PS}) {
    const std::string payload = "zebra crossing";
    CHECK(render_prompt(t, payload).find(payload) != std::string::npos);
  }
}

TEST_CASE("triplet validation catches each invariant violation") {
  Triplet ok = sample_triplet(64, 64, 1);
  CHECK(validate_triplet(ok) == TripletIssue::ok);

  Triplet bad = ok;
  bad.mask = checker_mask(32, 32);
  CHECK(validate_triplet(bad) == TripletIssue::shape_mismatch);

  bad = ok;
  bad.caption.clear();
  CHECK(validate_triplet(bad) == TripletIssue::empty_caption);

  bad = ok;
  bad.mask.at(3, 3) = 7;
  CHECK(validate_triplet(bad) == TripletIssue::nonbinary_mask);

  bad = ok;  // supervised triplets must not carry a score
  bad.score = 0.5;
  CHECK(validate_triplet(bad) == TripletIssue::score_presence_violation);

  bad = ok;  // pseudo triplets must carry one
  bad.source = Source::pseudo_mask;
  CHECK(validate_triplet(bad) == TripletIssue::score_presence_violation);
  bad.score = 0.7;
  CHECK(validate_triplet(bad) == TripletIssue::ok);
  bad.score = 1.5;  // and it must be a probability
  CHECK(validate_triplet(bad) == TripletIssue::score_presence_violation);
  bad.score = -0.1;
  CHECK(validate_triplet(bad) == TripletIssue::score_presence_violation);

  CHECK(issue_name(TripletIssue::shape_mismatch) == "shape_mismatch");
  CHECK(issue_name(TripletIssue::empty_caption) == "empty_caption");
  CHECK(issue_name(TripletIssue::nonbinary_mask) == "nonbinary_mask");
  CHECK(issue_name(TripletIssue::score_presence_violation) ==
        "score_presence_violation");
}

TEST_CASE("png round-trip is bit-exact and masks store foreground as 255") {
  const std::string dir = scratch_dir("png_roundtrip");
  const Image img = random_image(37, 23, 99);
  write_png_rgb(path_join(dir, "img.png"), img);
  CHECK(read_png_rgb(path_join(dir, "img.png")) == img);

  Mask m = checker_mask(16, 16);
  write_png_mask(path_join(dir, "m.png"), m);
  CHECK(read_png_mask(path_join(dir, "m.png")) == m);

  // On disk the foreground must be 255: read the gray PNG as RGB and check.
  const Image as_rgb = read_png_rgb(path_join(dir, "m.png"));
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const std::uint8_t want = m.at(r, c) ? 255 : 0;
      CHECK(as_rgb.at(r, c, 0) == want);
      CHECK(as_rgb.at(r, c, 1) == want);
      CHECK(as_rgb.at(r, c, 2) == want);
    }
}

TEST_CASE("manifest round-trip preserves every field") {
  const std::string dir = scratch_dir("manifest_roundtrip");
  std::vector<Triplet> ts;

  Triplet a = sample_triplet(24, 32, 11);
  a.image_path = "images/a.png";
  a.mask_path = "masks/a.png";
  ts.push_back(a);

  Triplet b = sample_triplet(24, 32, 12);
  b.caption = "the red circle";
  b.task = Task::RIS;
  b.source = Source::pseudo_box;
  b.score = 0.875;
  b.image_path = "images/b.png";
  b.mask_path = "masks/b.png";
  ts.push_back(b);

  Triplet c = sample_triplet(24, 32, 13);
  c.caption = "the most salient object";
  c.task = Task::SOD;
  c.source = Source::pseudo_unlabeled;
  c.score = 0.25;
  c.image_path = "images/c.png";
  c.mask_path = "masks/c.png";
  ts.push_back(c);

  const std::string manifest = path_join(dir, "manifest.jsonl");
  write_manifest(ts, manifest);
  const auto back = load_manifest(manifest);
  REQUIRE(back.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CAPTURE(i);
    CHECK(back[i].image == ts[i].image);
    CHECK(back[i].mask == ts[i].mask);
    CHECK(back[i].caption == ts[i].caption);
    CHECK(back[i].task == ts[i].task);
    CHECK(back[i].source == ts[i].source);
    CHECK(back[i].score == ts[i].score);
    CHECK(back[i].image_path == ts[i].image_path);
    CHECK(back[i].mask_path == ts[i].mask_path);
  }
}

TEST_CASE("empty manifest is a single header line and loads as empty") {
  const std::string dir = scratch_dir("manifest_empty");
  const std::string manifest = path_join(dir, "manifest.jsonl");
  write_manifest({}, manifest);
  CHECK(load_manifest(manifest).empty());

  std::ifstream f(manifest);
  std::string line;
  int lines = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 1);  // header only
}

TEST_CASE("manifest schema violations raise parse errors") {
  const std::string dir = scratch_dir("manifest_schema");
  const std::string manifest = path_join(dir, "manifest.jsonl");

  // Record missing "caption".
  write_file(manifest,
             "{\"format\":\"langseg-manifest\",\"version\":1}\n"
             "{\"image\":\"i.png\",\"mask\":\"m.png\",\"task\":\"SS\","
             "\"source\":\"supervised\",\"score\":null}\n");
  CHECK_THROWS_WITH_AS(load_manifest(manifest),
                       doctest::Contains("parse_error"), std::runtime_error);

  // Record with an unexpected extra key.
  write_file(manifest,
             "{\"format\":\"langseg-manifest\",\"version\":1}\n"
             "{\"image\":\"i.png\",\"mask\":\"m.png\",\"caption\":\"x\","
             "\"task\":\"SS\",\"source\":\"supervised\",\"score\":null,"
             "\"extra\":1}\n");
  CHECK_THROWS_WITH_AS(load_manifest(manifest),
                       doctest::Contains("parse_error"), std::runtime_error);

  // Missing header.
  write_file(manifest, "");
  CHECK_THROWS(load_manifest(manifest));
  write_file(manifest, "{\"other\":true}\n");
  CHECK_THROWS(load_manifest(manifest));

  // Invalid triplets are rejected at write time with the issue named.
  Triplet bad = sample_triplet(8, 8, 5);
  bad.caption.clear();
  bad.image_path = "images/x.png";
  bad.mask_path = "masks/x.png";
  CHECK_THROWS_WITH_AS(write_manifest({bad}, manifest),
                       doctest::Contains("empty_caption"),
                       std::invalid_argument);
}

TEST_CASE("video frame filename convention round-trips") {
  CHECK(video_frame_name("vid00003", 7) == "vid00003_f07.png");
  std::string id;
  int frame = -1;
  CHECK(parse_video_frame_name("images/vid00003_f07.png", id, frame));
  CHECK(id == "vid00003");
  CHECK(frame == 7);
  CHECK(parse_video_frame_name("vid1_f12.png", id, frame));
  CHECK(id == "vid1");
  CHECK(frame == 12);
  CHECK(!parse_video_frame_name("images/scene00001.png", id, frame));
  CHECK(!parse_video_frame_name("images/vid_fxx.png", id, frame));

  // RVOS records recover video identity from the image filename on load.
  const std::string dir = scratch_dir("manifest_video");
  Triplet t = sample_triplet(16, 16, 3);
  t.caption = "the red circle";
  t.task = Task::RVOS;
  t.image_path = "images/" + video_frame_name("vid00001", 2);
  t.mask_path = "masks/vid00001_f02_m.png";
  const std::string manifest = path_join(dir, "manifest.jsonl");
  write_manifest({t}, manifest);
  const auto back = load_manifest(manifest);
  REQUIRE(back.size() == 1);
  CHECK(back[0].video_id == "vid00001");
  CHECK(back[0].frame_index == 2);
}

TEST_CASE("corpus fingerprint tracks content, not merely the manifest text") {
  const std::string dir1 = scratch_dir("corpus_sha_a");
  const std::string dir2 = scratch_dir("corpus_sha_b");
  Triplet t = sample_triplet(16, 16, 21);
  t.image_path = "images/a.png";
  t.mask_path = "masks/a.png";
  write_manifest({t}, path_join(dir1, "manifest.jsonl"));
  write_manifest({t}, path_join(dir2, "manifest.jsonl"));
  const std::string h1 = corpus_sha256(path_join(dir1, "manifest.jsonl"));
  CHECK(h1 == corpus_sha256(path_join(dir2, "manifest.jsonl")));
  CHECK(h1.size() == 64);

  // Flip one pixel in the stored image; the manifest text is unchanged but
  // the fingerprint must move.
  Triplet t2 = t;
  t2.image.at(0, 0, 0) ^= 1;
  write_manifest({t2}, path_join(dir2, "manifest.jsonl"));
  CHECK(h1 != corpus_sha256(path_join(dir2, "manifest.jsonl")));
}
