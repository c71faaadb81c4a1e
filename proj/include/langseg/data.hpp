#pragma once

// Unified triplet data model: task taxonomy, prompt templating, validation,
// and JSONL manifest persistence shared by every pipeline stage.

#include <optional>
#include <string>
#include <vector>

#include "langseg/image.hpp"

namespace langseg {

// The six task kinds. Unknown names are rejected at parse time.
enum class Task { RIS, RVOS, SS, OVS, PS, SOD };

// Provenance of a triplet's mask/caption.
enum class Source { supervised, pseudo_box, pseudo_mask, pseudo_unlabeled };

std::string task_name(Task t);
Task task_from_string(const std::string& s);  // throws on unknown
std::string source_name(Source s);
Source source_from_string(const std::string& s);  // throws on unknown
bool is_pseudo(Source s);

// One training/eval record. Images and masks are held in memory; the path
// fields give their on-disk locations relative to the owning manifest.
// Video triplets (RVOS) carry a video id and frame index recovered from the
// image filename convention "<video_id>_f<frame>.png".
struct Triplet {
  Image image;
  Mask mask;
  std::string caption;
  Task task = Task::RIS;
  Source source = Source::supervised;
  std::optional<double> score;  // present iff source is pseudo_*
  std::string image_path;       // relative path, e.g. "images/t00012.png"
  std::string mask_path;
  std::string video_id;         // empty for non-video triplets
  int frame_index = -1;
};

// Task-specific captions: SS/OVS/PS fill "all {}", SOD is the fixed phrase
// "the most salient object" (payload forbidden), RIS/RVOS pass the caption
// through verbatim.
std::string render_prompt(Task task, const std::optional<std::string>& payload);

enum class TripletIssue {
  ok,
  shape_mismatch,
  empty_caption,
  nonbinary_mask,
  score_presence_violation,
};
std::string issue_name(TripletIssue i);
TripletIssue validate_triplet(const Triplet& t);

// JSON Lines manifest. First line is a format header; each record line has
// exactly the keys {image, mask, caption, task, source, score} with paths
// relative to the manifest's directory. write_manifest also writes each
// triplet's PNGs; load_manifest reads them back and validates every record.
void write_manifest(const std::vector<Triplet>& triplets, const std::string& path);
std::vector<Triplet> load_manifest(const std::string& path);

// SHA-256 over the manifest bytes plus every referenced PNG, in record
// order — a corpus fingerprint that is a pure function of its content.
std::string corpus_sha256(const std::string& manifest_path);

// Filename convention helpers for video frames.
std::string video_frame_name(const std::string& video_id, int frame_index);
bool parse_video_frame_name(const std::string& path, std::string& video_id,
                            int& frame_index);

}  // namespace langseg
