// langseg — command-line surface for the language-guided segmentation
// pipeline: synthetic corpus generation, pseudo-annotation with score
// filtering, two-stage training, task-dispatched evaluation, and
// single-image inference.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "langseg/annotate.hpp"
#include "langseg/data.hpp"
#include "langseg/image.hpp"
#include "langseg/kernels.hpp"
#include "langseg/model.hpp"
#include "langseg/shape_world.hpp"
#include "langseg/train.hpp"
#include "langseg/util.hpp"

namespace {

using namespace langseg;

std::vector<Task> parse_tasks(const std::string& csv) {
  std::vector<Task> tasks;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) tasks.push_back(task_from_string(item));
  }
  if (tasks.empty()) throw std::invalid_argument("no tasks given");
  return tasks;
}

std::optional<Box> mask_bbox(const Mask& m) {
  int r0 = m.h, c0 = m.w, r1 = -1, c1 = -1;
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c)
      if (m.at(r, c)) {
        r0 = std::min(r0, r);
        c0 = std::min(c0, c);
        r1 = std::max(r1, r);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) return std::nullopt;
  return Box{r0, c0, r1 + 1, c1 + 1};
}

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed, int count,
                 int canvas, const std::string& tasks_csv,
                 const SceneConfig& base) {
  SceneConfig sc = base;
  sc.h = sc.w = canvas;
  const std::string manifest =
      write_corpus(out_dir, seed, count, sc, parse_tasks(tasks_csv));
  std::cout << "manifest " << manifest << "\n";
  std::cout << "corpus_sha256 " << corpus_sha256(manifest) << "\n";
  return 0;
}

int cmd_annotate(const std::string& route, const std::string& stages,
                 double noise, int noise_radius, double caption_noise,
                 double threshold, std::uint64_t seed,
                 const std::string& in_manifest,
                 const std::string& out_manifest) {
  const std::vector<Triplet> records = load_manifest(in_manifest);
  // Unique images in first-appearance order; box route keeps one weak box
  // (the mask's bounding box) per input record.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const Triplet*>> by_image;
  for (const Triplet& t : records) {
    auto [it, fresh] = by_image.try_emplace(t.image_path);
    if (fresh) order.push_back(t.image_path);
    it->second.push_back(&t);
  }

  NoiseConfig ncfg;
  ncfg.mask_corrupt_prob = noise;
  ncfg.radius = noise_radius;
  ncfg.caption_swap_prob = caption_noise;
  const bool noisy = stages == "noisy-oracle";
  OracleTagger tagger;
  OracleDetector detector;
  OracleMaskGenerator oracle_masks;
  NoisyMaskGenerator noisy_masks(ncfg, seed);
  OracleCaptioner oracle_captions;
  NoisyCaptioner noisy_captions(ncfg, seed + 1);
  OracleGrounder grounder;
  OracleMatchScorer scorer;
  MaskGenerator& masks =
      noisy ? static_cast<MaskGenerator&>(noisy_masks) : oracle_masks;
  Captioner& captions =
      noisy ? static_cast<Captioner&>(noisy_captions) : oracle_captions;

  PseudoBatch all;
  all.route = route;
  for (const std::string& path : order) {
    const Image& img = by_image[path].front()->image;
    PseudoBatch batch;
    if (route == "box") {
      std::vector<Box> boxes;
      for (const Triplet* t : by_image[path]) {
        if (auto b = mask_bbox(t->mask))
          boxes.push_back(*b);
        else
          all.drop_log.push_back("record on '" + path + "' has an empty mask");
      }
      batch = run_box_route(img, boxes, masks, captions, scorer);
    } else if (route == "mask") {
      batch = run_mask_route(img, tagger, detector, masks, scorer);
    } else {
      batch = run_unlabeled_route(img, captions, grounder, scorer);
    }
    for (Triplet& t : batch.triplets) all.triplets.push_back(std::move(t));
    for (std::string& d : batch.drop_log) all.drop_log.push_back(std::move(d));
  }

  PseudoBatch kept = filter_triplets(all, scorer, threshold);
  int idx = 0;
  for (Triplet& t : kept.triplets) {
    char name[64];
    std::snprintf(name, sizeof name, "a%05d", idx++);
    t.image_path = std::string("images/") + name + ".png";
    t.mask_path = std::string("masks/") + name + ".png";
  }
  write_manifest(kept.triplets, out_manifest);
  std::cout << "generated " << all.triplets.size() << "\n";
  std::cout << "kept " << kept.triplets.size() << "\n";
  std::cout << "dropped " << kept.drop_log.size() << "\n";
  for (const std::string& d : kept.drop_log) std::cout << "drop: " << d << "\n";
  std::cout << "manifest " << out_manifest << "\n";
  std::cout << "corpus_sha256 " << corpus_sha256(out_manifest) << "\n";
  return 0;
}

int cmd_filter(const std::string& in_manifest, const std::string& out_manifest,
               double threshold) {
  PseudoBatch batch;
  batch.triplets = load_manifest(in_manifest);
  batch.route = "filter";
  OracleMatchScorer scorer;
  PseudoBatch kept = filter_triplets(batch, scorer, threshold);
  // The filter stamps its score on every survivor; scores are only legal on
  // pseudo-source records, so supervised records shed them again.
  for (Triplet& t : kept.triplets)
    if (!is_pseudo(t.source)) t.score.reset();
  write_manifest(kept.triplets, out_manifest);
  std::cout << "kept " << kept.triplets.size() << " of "
            << batch.triplets.size() << "\n";
  for (const std::string& d : kept.drop_log) std::cout << "drop: " << d << "\n";
  std::cout << "manifest " << out_manifest << "\n";
  return 0;
}

int cmd_train(int stage, const std::string& config_path,
              const std::string& out_flag) {
  const Config file = Config::from_file(config_path);

  // The stage schedule provides the defaults; explicit config keys override.
  Config merged = make_schedule(stage).to_config();
  for (const auto& [k, v] : file.entries()) merged.set(k, v);
  merged.set("stage", std::to_string(stage));
  const TrainConfig tc = TrainConfig::from_config(merged);
  const ModelConfig mc = ModelConfig::from_config(file);

  std::vector<Triplet> supervised, pseudo;
  if (file.has("supervised_manifest"))
    supervised = load_manifest(file.get_str("supervised_manifest"));
  if (file.has("pseudo_manifest"))
    pseudo = load_manifest(file.get_str("pseudo_manifest"));

  const std::uint64_t model_seed =
      static_cast<std::uint64_t>(file.get_int("model_seed", 0));
  UniModel model(mc, model_seed);
  Adam opt(model.params());

  const std::size_t pool_total =
      tc.stage == 1 ? pseudo.size() : supervised.size() + pseudo.size();
  const int steps_per_epoch =
      tc.steps_per_epoch > 0
          ? tc.steps_per_epoch
          : static_cast<int>((pool_total + tc.batch_size - 1) /
                             static_cast<std::size_t>(tc.batch_size));

  std::cout << "stage " << tc.stage << " lr " << tc.learning_rate << " epochs "
            << tc.epochs << " steps_per_epoch " << steps_per_epoch << "\n";
  std::cout << "supervised " << supervised.size() << " pseudo "
            << pseudo.size() << " parameters "
            << model.params().total_size() << " kernels "
            << kernels::active_backend() << "\n";

  double epoch_sum = 0.0;
  int epoch_steps = 0;
  const auto on_step = [&](int epoch, int step, const LossValue& lv) {
    (void)step;
    epoch_sum += lv.total;
    if (++epoch_steps == steps_per_epoch) {
      std::printf("epoch %d lr %g loss %.6f\n", epoch,
                  epoch_lr(tc, epoch), epoch_sum / epoch_steps);
      std::fflush(stdout);
      epoch_sum = 0.0;
      epoch_steps = 0;
    }
  };
  train_run(model, opt, supervised, pseudo, tc, on_step);

  const std::string out =
      !out_flag.empty() ? out_flag
                        : file.get_str("out_checkpoint", "model.ckpt");
  save_checkpoint(out, model, &opt, tc.epochs);
  std::cout << "checkpoint " << out << "\n";
  std::cout << "config_hash " << mc.hash() << "\n";
  return 0;
}

int cmd_eval(const std::string& task_str, const std::string& manifest,
             const std::string& ckpt_path, const std::string& report_path,
             const std::string& json_path) {
  const Task task = task_from_string(task_str);
  const CheckpointBundle ckpt = load_checkpoint(ckpt_path);
  const std::vector<Triplet> data = load_manifest(manifest);
  const MetricReport rep = evaluate(*ckpt.model, data, task);

  Config flat;
  flat.set("task", task_name(rep.task));
  flat.set("metric", rep.metric);
  {
    std::ostringstream os;
    os.precision(17);
    os << rep.value;
    flat.set("value", os.str());
  }
  flat.set("count", std::to_string(rep.count));
  flat.set("checkpoint_hash", ckpt.config_hash);
  std::cout << flat.canonical();
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw std::runtime_error("cannot write report: " + report_path);
    out << flat.canonical();
  }
  if (!json_path.empty()) {
    nlohmann::json j;
    j["task"] = task_name(rep.task);
    j["metric"] = rep.metric;
    j["value"] = rep.value;
    j["count"] = rep.count;
    j["checkpoint_hash"] = ckpt.config_hash;
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write json: " + json_path);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_infer(const std::string& image_path, const std::string& caption,
              const std::string& ckpt_path, const std::string& out_path) {
  const CheckpointBundle ckpt = load_checkpoint(ckpt_path);
  const Image img = read_png_rgb(image_path);
  const Mask mask = infer(*ckpt.model, img, caption);
  write_png_mask(out_path, mask);
  std::int64_t fg = 0;
  for (auto v : mask.v) fg += v ? 1 : 0;
  std::cout << "mask " << out_path << "\n";
  std::cout << "foreground " << fg << " of " << mask.v.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"language-guided universal segmentation pipeline"};
  app.require_subcommand(1);
  int rc = 0;

  // gen-data
  auto* gen = app.add_subcommand(
      "gen-data", "generate a synthetic corpus (PNG images/masks + manifest)");
  std::string gd_out;
  std::uint64_t gd_seed = 1;
  int gd_count = 32, gd_canvas = 64;
  std::string gd_tasks = "RIS,SS,OVS,PS,SOD";
  SceneConfig gd_scene;
  gen->add_option("--out-dir", gd_out, "output directory")->required();
  gen->add_option("--seed", gd_seed, "generation seed");
  gen->add_option("--count", gd_count, "number of scenes");
  gen->add_option("--canvas", gd_canvas, "square canvas size (divisible by 32)");
  gen->add_option("--tasks", gd_tasks, "comma-separated task list");
  gen->add_option("--min-shapes", gd_scene.min_shapes, "min shapes per scene");
  gen->add_option("--max-shapes", gd_scene.max_shapes, "max shapes per scene");
  gen->add_option("--min-size", gd_scene.min_size, "min shape half-extent");
  gen->add_option("--max-size", gd_scene.max_size, "max shape half-extent");
  gen->add_option("--min-border", gd_scene.min_border, "min border width");
  gen->add_option("--max-border", gd_scene.max_border, "max border width");
  gen->callback([&] {
    rc = cmd_gen_data(gd_out, gd_seed, gd_count, gd_canvas, gd_tasks, gd_scene);
  });

  // annotate
  auto* ann = app.add_subcommand(
      "annotate", "produce filtered pseudo-label triplets from a manifest");
  std::string an_route, an_stages = "oracle", an_in, an_out;
  double an_noise = 0.2, an_capnoise = 0.0, an_tau = 0.5;
  int an_radius = 6;
  std::uint64_t an_seed = 1;
  ann->add_option("--route", an_route, "annotation route")
      ->required()
      ->check(CLI::IsMember({"box", "mask", "unlabeled"}));
  ann->add_option("--stages", an_stages, "stage implementations")
      ->check(CLI::IsMember({"oracle", "noisy-oracle"}));
  ann->add_option("--noise", an_noise, "mask corruption probability");
  ann->add_option("--noise-radius", an_radius, "mask corruption radius");
  ann->add_option("--caption-noise", an_capnoise,
                  "caption attribute swap probability");
  ann->add_option("--threshold", an_tau, "score filter threshold");
  ann->add_option("--seed", an_seed, "noise seed");
  ann->add_option("--in-manifest", an_in, "input manifest")->required();
  ann->add_option("--out-manifest", an_out, "output manifest")->required();
  ann->callback([&] {
    rc = cmd_annotate(an_route, an_stages, an_noise, an_radius, an_capnoise,
                      an_tau, an_seed, an_in, an_out);
  });

  // filter
  auto* flt = app.add_subcommand(
      "filter", "re-score a manifest and keep records above a threshold");
  std::string fl_in, fl_out;
  double fl_tau = 0.5;
  flt->add_option("--in-manifest", fl_in, "input manifest")->required();
  flt->add_option("--out-manifest", fl_out, "output manifest")->required();
  flt->add_option("--threshold", fl_tau, "score filter threshold");
  flt->callback([&] { rc = cmd_filter(fl_in, fl_out, fl_tau); });

  // train
  auto* trn = app.add_subcommand("train", "run one training stage");
  int tr_stage = 0;
  std::string tr_config, tr_out;
  trn->add_option("--stage", tr_stage, "training stage (1 or 2)")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  trn->add_option("--config", tr_config, "flat key/value config file")
      ->required();
  trn->add_option("--out", tr_out, "checkpoint output path");
  trn->callback([&] { rc = cmd_train(tr_stage, tr_config, tr_out); });

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string ev_task, ev_manifest, ev_ckpt, ev_report, ev_json;
  evl->add_option("--task", ev_task, "task name")->required();
  evl->add_option("--manifest", ev_manifest, "evaluation manifest")->required();
  evl->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  evl->add_option("--report", ev_report, "flat key/value report output path");
  evl->add_option("--json", ev_json, "JSON summary output path");
  evl->callback([&] {
    rc = cmd_eval(ev_task, ev_manifest, ev_ckpt, ev_report, ev_json);
  });

  // infer
  auto* inf = app.add_subcommand("infer", "segment one image with a caption");
  std::string in_image, in_caption, in_ckpt, in_out;
  inf->add_option("--image", in_image, "input PNG image")->required();
  inf->add_option("--caption", in_caption, "referring caption")->required();
  inf->add_option("--checkpoint", in_ckpt, "checkpoint path")->required();
  inf->add_option("--out", in_out, "output mask PNG")->required();
  inf->callback([&] { rc = cmd_infer(in_image, in_caption, in_ckpt, in_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
