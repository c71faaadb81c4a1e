#include "langseg/data.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "langseg/util.hpp"

namespace langseg {

using nlohmann::json;

namespace {
constexpr const char* kManifestHeader =
    R"({"format":"langseg-manifest","version":1})";
}

std::string task_name(Task t) {
  switch (t) {
    case Task::RIS: return "RIS";
    case Task::RVOS: return "RVOS";
    case Task::SS: return "SS";
    case Task::OVS: return "OVS";
    case Task::PS: return "PS";
    case Task::SOD: return "SOD";
  }
  throw std::logic_error("unreachable task");
}

Task task_from_string(const std::string& s) {
  if (s == "RIS") return Task::RIS;
  if (s == "RVOS") return Task::RVOS;
  if (s == "SS") return Task::SS;
  if (s == "OVS") return Task::OVS;
  if (s == "PS") return Task::PS;
  if (s == "SOD") return Task::SOD;
  throw std::invalid_argument("unknown task: " + s);
}

std::string source_name(Source s) {
  switch (s) {
    case Source::supervised: return "supervised";
    case Source::pseudo_box: return "pseudo_box";
    case Source::pseudo_mask: return "pseudo_mask";
    case Source::pseudo_unlabeled: return "pseudo_unlabeled";
  }
  throw std::logic_error("unreachable source");
}

Source source_from_string(const std::string& s) {
  if (s == "supervised") return Source::supervised;
  if (s == "pseudo_box") return Source::pseudo_box;
  if (s == "pseudo_mask") return Source::pseudo_mask;
  if (s == "pseudo_unlabeled") return Source::pseudo_unlabeled;
  throw std::invalid_argument("unknown source: " + s);
}

bool is_pseudo(Source s) { return s != Source::supervised; }

std::string render_prompt(Task task, const std::optional<std::string>& payload) {
  switch (task) {
    case Task::SS:
    case Task::OVS:
    case Task::PS:
      if (!payload) throw std::invalid_argument("category payload required");
      return "all " + *payload;
    case Task::SOD:
      if (payload) throw std::invalid_argument("SOD takes no payload");
      return "the most salient object";
    case Task::RIS:
    case Task::RVOS:
      if (!payload) throw std::invalid_argument("caption payload required");
      return *payload;
  }
  throw std::logic_error("unreachable task");
}

std::string issue_name(TripletIssue i) {
  switch (i) {
    case TripletIssue::ok: return "ok";
    case TripletIssue::shape_mismatch: return "shape_mismatch";
    case TripletIssue::empty_caption: return "empty_caption";
    case TripletIssue::nonbinary_mask: return "nonbinary_mask";
    case TripletIssue::score_presence_violation: return "score_presence_violation";
  }
  throw std::logic_error("unreachable issue");
}

TripletIssue validate_triplet(const Triplet& t) {
  if (t.image.h != t.mask.h || t.image.w != t.mask.w)
    return TripletIssue::shape_mismatch;
  if (t.caption.empty()) return TripletIssue::empty_caption;
  if (!t.mask.binary()) return TripletIssue::nonbinary_mask;
  const bool needs_score = is_pseudo(t.source);
  if (needs_score != t.score.has_value()) return TripletIssue::score_presence_violation;
  if (t.score && (*t.score < 0.0 || *t.score > 1.0))
    return TripletIssue::score_presence_violation;
  return TripletIssue::ok;
}

std::string video_frame_name(const std::string& video_id, int frame_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_f%02d", frame_index);
  return video_id + buf + ".png";
}

bool parse_video_frame_name(const std::string& path, std::string& video_id,
                            int& frame_index) {
  std::string stem = std::filesystem::path(path).stem().string();
  const std::size_t pos = stem.rfind("_f");
  if (pos == std::string::npos || pos + 2 >= stem.size()) return false;
  const std::string digits = stem.substr(pos + 2);
  for (char c : digits)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  video_id = stem.substr(0, pos);
  frame_index = std::stoi(digits);
  return true;
}

void write_manifest(const std::vector<Triplet>& triplets, const std::string& path) {
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const TripletIssue issue = validate_triplet(triplets[i]);
    if (issue != TripletIssue::ok)
      throw std::invalid_argument("triplet " + std::to_string(i) +
                                  " invalid: " + issue_name(issue));
    if (triplets[i].image_path.empty() || triplets[i].mask_path.empty())
      throw std::invalid_argument("triplet " + std::to_string(i) +
                                  " missing relative image/mask path");
  }
  const std::string dir = parent_dir(path);
  ensure_dir(dir);
  std::string text = std::string(kManifestHeader) + "\n";
  for (const auto& t : triplets) {
    ensure_dir(parent_dir(path_join(dir, t.image_path)));
    ensure_dir(parent_dir(path_join(dir, t.mask_path)));
    write_png_rgb(path_join(dir, t.image_path), t.image);
    write_png_mask(path_join(dir, t.mask_path), t.mask);
    json rec;
    rec["image"] = t.image_path;
    rec["mask"] = t.mask_path;
    rec["caption"] = t.caption;
    rec["task"] = task_name(t.task);
    rec["source"] = source_name(t.source);
    if (t.score)
      rec["score"] = *t.score;
    else
      rec["score"] = nullptr;
    text += rec.dump();
    text += "\n";
  }
  write_file(path, text);
}

std::vector<Triplet> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  const std::string dir = parent_dir(path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("manifest parse_error: empty file (missing header)");
  {
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object() ||
        header.value("format", "") != "langseg-manifest")
      throw std::runtime_error("manifest parse_error: bad header line");
  }
  std::vector<Triplet> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    const std::string where = "manifest line " + std::to_string(lineno);
    if (rec.is_discarded() || !rec.is_object())
      throw std::runtime_error(where + ": parse_error");
    for (const char* key : {"image", "mask", "caption", "task", "source", "score"})
      if (!rec.contains(key))
        throw std::runtime_error(where + ": parse_error: missing key '" +
                                 std::string(key) + "'");
    if (rec.size() != 6)
      throw std::runtime_error(where + ": parse_error: unexpected extra keys");
    Triplet t;
    t.image_path = rec["image"].get<std::string>();
    t.mask_path = rec["mask"].get<std::string>();
    t.caption = rec["caption"].get<std::string>();
    t.task = task_from_string(rec["task"].get<std::string>());
    t.source = source_from_string(rec["source"].get<std::string>());
    if (!rec["score"].is_null()) t.score = rec["score"].get<double>();
    t.image = read_png_rgb(path_join(dir, t.image_path));
    t.mask = read_png_mask(path_join(dir, t.mask_path));
    if (t.task == Task::RVOS)
      parse_video_frame_name(t.image_path, t.video_id, t.frame_index);
    const TripletIssue issue = validate_triplet(t);
    if (issue != TripletIssue::ok)
      throw std::runtime_error(where + ": invalid triplet: " + issue_name(issue));
    out.push_back(std::move(t));
  }
  return out;
}

std::string corpus_sha256(const std::string& manifest_path) {
  Sha256 h;
  h.update(read_file(manifest_path));
  const std::string dir = parent_dir(manifest_path);
  for (const auto& t : load_manifest(manifest_path)) {
    h.update(read_file(path_join(dir, t.image_path)));
    h.update(read_file(path_join(dir, t.mask_path)));
  }
  return h.hex();
}

}  // namespace langseg
