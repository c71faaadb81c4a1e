#include "langseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "langseg/kernels.hpp"

namespace langseg {

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2)
    throw std::invalid_argument("training stage must be 1 or 2, got " +
                                std::to_string(stage));
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (lr_decay) {
    if (lr_decay->epoch < 0)
      throw std::invalid_argument("lr_decay epoch must be >= 0");
    if (!(lr_decay->factor > 0.0 && lr_decay->factor <= 1.0))
      throw std::invalid_argument("lr_decay factor must be in (0,1]");
  }
  if (!(backbone_lr_factor > 0.0 && backbone_lr_factor <= 1.0))
    throw std::invalid_argument("backbone_lr_factor must be in (0,1]");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (w_bce < 0.0 || w_dice < 0.0)
    throw std::invalid_argument("loss weights must be >= 0");
  if (w_bce == 0.0 && w_dice == 0.0)
    throw std::invalid_argument("at least one loss weight must be positive");
  if (hide_patch < 1) throw std::invalid_argument("hide_patch must be >= 1");
  if (hide_prob < 0.0 || hide_prob > 1.0)
    throw std::invalid_argument("hide_prob must be in [0,1]");
  if (pseudo_ratio < 0.0)
    throw std::invalid_argument("pseudo_ratio must be >= 0");
  if (steps_per_epoch < 0)
    throw std::invalid_argument("steps_per_epoch must be >= 0");
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.stage = static_cast<int>(c.get_int("stage", t.stage));
  t.learning_rate = c.get_double("learning_rate", t.learning_rate);
  t.epochs = static_cast<int>(c.get_int("epochs", t.epochs));
  if (c.has("lr_decay_epoch")) {
    LrDecay d;
    d.epoch = static_cast<int>(c.get_int("lr_decay_epoch"));
    d.factor = c.get_double("lr_decay_factor");
    t.lr_decay = d;
  }
  t.backbone_lr_factor =
      c.get_double("backbone_lr_factor", t.backbone_lr_factor);
  t.batch_size = static_cast<int>(c.get_int("batch_size", t.batch_size));
  t.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
  t.w_bce = c.get_double("w_bce", t.w_bce);
  t.w_dice = c.get_double("w_dice", t.w_dice);
  t.hide_patch = static_cast<int>(c.get_int("hide_patch", t.hide_patch));
  t.hide_prob = c.get_double("hide_prob", t.hide_prob);
  t.pseudo_ratio = c.get_double("pseudo_ratio", t.pseudo_ratio);
  t.steps_per_epoch =
      static_cast<int>(c.get_int("steps_per_epoch", t.steps_per_epoch));
  t.validate();
  return t;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Config TrainConfig::to_config() const {
  Config c;
  c.set("stage", std::to_string(stage));
  c.set("learning_rate", fmt_double(learning_rate));
  c.set("epochs", std::to_string(epochs));
  if (lr_decay) {
    c.set("lr_decay_epoch", std::to_string(lr_decay->epoch));
    c.set("lr_decay_factor", fmt_double(lr_decay->factor));
  }
  c.set("backbone_lr_factor", fmt_double(backbone_lr_factor));
  c.set("batch_size", std::to_string(batch_size));
  c.set("seed", std::to_string(seed));
  c.set("w_bce", fmt_double(w_bce));
  c.set("w_dice", fmt_double(w_dice));
  c.set("hide_patch", std::to_string(hide_patch));
  c.set("hide_prob", fmt_double(hide_prob));
  c.set("pseudo_ratio", fmt_double(pseudo_ratio));
  c.set("steps_per_epoch", std::to_string(steps_per_epoch));
  return c;
}

TrainConfig make_schedule(int stage) {
  TrainConfig cfg;
  if (stage == 1) {
    cfg.stage = 1;
    cfg.learning_rate = 5e-5;
    cfg.epochs = 5;
    cfg.lr_decay.reset();
  } else if (stage == 2) {
    cfg.stage = 2;
    cfg.learning_rate = 1e-4;
    cfg.epochs = 15;
    cfg.lr_decay = LrDecay{10, 0.1};
  } else {
    throw std::invalid_argument("unknown training stage " +
                                std::to_string(stage) + " (expected 1 or 2)");
  }
  cfg.backbone_lr_factor = 0.1;
  return cfg;
}

double epoch_lr(const TrainConfig& cfg, int epoch) {
  if (epoch < 1) throw std::invalid_argument("epoch index is 1-based");
  double lr = cfg.learning_rate;
  if (cfg.lr_decay && epoch > cfg.lr_decay->epoch) lr *= cfg.lr_decay->factor;
  return lr;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(nn::ParamStore& ps, AdamConfig cfg) : ps_(&ps), cfg_(cfg) {
  m_.reserve(ps.all().size());
  v_.reserve(ps.all().size());
  for (const auto& p : ps.all()) {
    m_.push_back(nn::Tensor::zeros(p->value.shape()));
    v_.push_back(nn::Tensor::zeros(p->value.shape()));
  }
}

void Adam::step(double lr, double backbone_factor) {
  if (lr < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  if (!(backbone_factor > 0.0 && backbone_factor <= 1.0))
    throw std::invalid_argument("backbone factor must be in (0,1]");
  ++t_;
  const double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto& params = ps_->all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Param& p = *params[i];
    const double plr = p.backbone ? lr * backbone_factor : lr;
    kernels::adam_step(static_cast<std::size_t>(p.value.size()),
                       p.value.data(), p.grad.data(), m_[i].data(),
                       v_[i].data(), plr, cfg_.beta1, cfg_.beta2, cfg_.eps,
                       bias1, bias2);
  }
}

void Adam::restore(std::int64_t t, std::vector<nn::Tensor> m,
                   std::vector<nn::Tensor> v) {
  const auto& params = ps_->all();
  if (t < 0) throw std::invalid_argument("optimizer step count must be >= 0");
  if (m.size() != params.size() || v.size() != params.size())
    throw std::invalid_argument("optimizer state size does not match store");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!m[i].same_shape(params[i]->value) ||
        !v[i].same_shape(params[i]->value))
      throw std::invalid_argument("optimizer state shape mismatch at '" +
                                  params[i]->name + "'");
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---------------------------------------------------------------------------
// Training steps

Image prepare_sample(const Triplet& t, const TrainConfig& cfg,
                     const std::array<double, 3>& hide_fill,
                     std::mt19937_64& rng) {
  if (!is_pseudo(t.source)) return t.image;
  return hide_and_seek(t.image, cfg.hide_patch, cfg.hide_prob, rng, hide_fill);
}

LossValue train_step(UniModel& model, Adam& opt,
                     const std::vector<const Triplet*>& batch,
                     const TrainConfig& cfg, double lr,
                     const std::array<double, 3>& hide_fill,
                     std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  model.params().zero_grads();
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossValue mean;
  for (const Triplet* tp : batch) {
    const Image img = prepare_sample(*tp, cfg, hide_fill, rng);
    nn::Tape tape;
    const UniModel::Forward f = model.forward(tape, img, tp->caption);
    const nn::Tape::Ref loss =
        combined_loss_node(tape, f.prob, tp->mask, cfg.w_bce, cfg.w_dice);
    const LossValue lv =
        combined_loss(tape.val(f.prob), tp->mask, cfg.w_bce, cfg.w_dice);
    if (!std::isfinite(lv.total)) {
      std::ostringstream os;
      os << "non-finite training loss (total=" << lv.total
         << ", bce=" << lv.bce << ", dice=" << lv.dice << ", caption=\""
         << tp->caption << "\")";
      throw std::runtime_error(os.str());
    }
    mean.total += lv.total * inv;
    mean.bce += lv.bce * inv;
    mean.dice += lv.dice * inv;
    tape.backward(loss);
    tape.accumulate_param_grads(inv);  // batch-mean gradient
  }
  opt.step(lr, cfg.backbone_lr_factor);
  return mean;
}

namespace {

// Validates a training pool and returns pointer views into it.
std::vector<const Triplet*> pool_view(const std::vector<Triplet>& data,
                                      const char* pool_name) {
  std::vector<const Triplet*> out;
  out.reserve(data.size());
  for (const Triplet& t : data) {
    const TripletIssue issue = validate_triplet(t);
    if (issue != TripletIssue::ok)
      throw std::invalid_argument(std::string(pool_name) +
                                  " pool has an invalid triplet: " +
                                  issue_name(issue));
    out.push_back(&t);
  }
  return out;
}

}  // namespace

TrainLog train_run(UniModel& model, Adam& opt,
                   const std::vector<Triplet>& supervised,
                   const std::vector<Triplet>& pseudo, const TrainConfig& cfg,
                   const std::function<void(int epoch, int step,
                                            const LossValue&)>& on_step) {
  cfg.validate();
  const std::vector<const Triplet*> sup = pool_view(supervised, "supervised");
  const std::vector<const Triplet*> pse = pool_view(pseudo, "pseudo");
  if (cfg.stage == 1 && pse.empty())
    throw std::invalid_argument("stage 1 trains on pseudo-labeled data only, "
                                "but the pseudo pool is empty");
  if (cfg.stage == 2 && sup.empty())
    throw std::invalid_argument("stage 2 requires supervised data");

  const std::size_t pool_total =
      cfg.stage == 1 ? pse.size() : sup.size() + pse.size();
  const int steps_per_epoch =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : static_cast<int>((pool_total + cfg.batch_size - 1) /
                             static_cast<std::size_t>(cfg.batch_size));

  // Patch hiding fills with the mean of the data it will be applied to.
  const std::array<double, 3> fill =
      pseudo.empty() ? std::array<double, 3>{0.0, 0.0, 0.0}
                     : dataset_mean(pseudo);

  std::mt19937_64 rng(cfg.seed);
  TrainLog log;
  log.step_loss.reserve(static_cast<std::size_t>(cfg.epochs) *
                        static_cast<std::size_t>(steps_per_epoch));
  const double p_pseudo = cfg.pseudo_ratio / (1.0 + cfg.pseudo_ratio);
  int global_step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = epoch_lr(cfg, epoch);
    double epoch_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<const Triplet*> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b) {
        const std::vector<const Triplet*>* pool = &sup;
        if (cfg.stage == 1) {
          pool = &pse;
        } else if (!pse.empty() && unit_double(rng) < p_pseudo) {
          pool = &pse;
        }
        const int idx = int_range(rng, 0, static_cast<int>(pool->size()) - 1);
        batch.push_back((*pool)[static_cast<std::size_t>(idx)]);
      }
      const LossValue lv =
          train_step(model, opt, batch, cfg, lr, fill, rng);
      log.step_loss.push_back(lv.total);
      epoch_sum += lv.total;
      ++global_step;
      if (on_step) on_step(epoch, global_step, lv);
    }
    log.epoch_loss.push_back(epoch_sum / steps_per_epoch);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation

MetricReport evaluate(const ProbPredictor& predict,
                      const std::vector<Triplet>& data, Task task) {
  if (data.empty())
    throw std::invalid_argument("no triplets to evaluate");
  for (const Triplet& t : data) {
    if (t.task != task)
      throw std::invalid_argument(
          "manifest record with task '" + task_name(t.task) +
          "' does not match the requested task '" + task_name(task) + "'");
  }
  MetricReport rep;
  rep.task = task;
  rep.count = static_cast<int>(data.size());
  switch (task) {
    case Task::RIS:
    case Task::OVS: {
      std::vector<MaskPair> pairs;
      pairs.reserve(data.size());
      for (const Triplet& t : data)
        pairs.push_back(
            {mask_from_prob(predict(t), t.image.h, t.image.w), t.mask});
      rep.metric = "oIoU";
      rep.value = oiou(pairs);
      break;
    }
    case Task::SS:
    case Task::PS: {
      std::vector<MaskPair> pairs;
      std::vector<std::string> classes;
      pairs.reserve(data.size());
      classes.reserve(data.size());
      for (const Triplet& t : data) {
        pairs.push_back(
            {mask_from_prob(predict(t), t.image.h, t.image.w), t.mask});
        classes.push_back(t.caption);
      }
      rep.metric = "mIoU";
      rep.value = miou(pairs, classes);
      break;
    }
    case Task::SOD: {
      double sum = 0.0;
      for (const Triplet& t : data) sum += f_measure(predict(t), t.mask);
      rep.metric = "F_mean";
      rep.value = sum / static_cast<double>(data.size());
      break;
    }
    case Task::RVOS: {
      std::map<std::string, std::vector<const Triplet*>> videos;
      for (const Triplet& t : data) {
        if (t.video_id.empty())
          throw std::invalid_argument(
              "video evaluation requires a video id on every triplet");
        videos[t.video_id].push_back(&t);
      }
      double sum = 0.0;
      for (auto& [id, frames] : videos) {
        std::sort(frames.begin(), frames.end(),
                  [](const Triplet* a, const Triplet* b) {
                    return a->frame_index < b->frame_index;
                  });
        std::vector<Mask> pred, target;
        pred.reserve(frames.size());
        target.reserve(frames.size());
        for (const Triplet* t : frames) {
          pred.push_back(
              mask_from_prob(predict(*t), t->image.h, t->image.w));
          target.push_back(t->mask);
        }
        sum += j_and_f(pred, target).jf;
      }
      rep.metric = "J&F";
      rep.value = sum / static_cast<double>(videos.size());
      break;
    }
  }
  return rep;
}

MetricReport evaluate(const UniModel& model, const std::vector<Triplet>& data,
                      Task task) {
  ProbPredictor predict = [&model](const Triplet& t) {
    nn::Tape tape;
    const UniModel::Forward f = model.forward(tape, t.image, t.caption);
    return tape.val(f.prob);
  };
  return evaluate(predict, data, task);
}

Mask infer(const UniModel& model, const Image& img,
           const std::string& caption) {
  return model.predict(img, caption);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'L', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_pod(std::ostream& out, T v) {
  put_bytes(out, &v, sizeof(T));
}

void put_str(std::ostream& out, const std::string& s) {
  put_pod<std::uint64_t>(out, s.size());
  put_bytes(out, s.data(), s.size());
}

void put_tensor(std::ostream& out, const nn::Tensor& t) {
  const auto& shape = t.shape();
  put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) put_pod<std::int32_t>(out, d);
  put_bytes(out, t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
}

void get_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("truncated checkpoint file");
}

template <typename T>
T get_pod(std::istream& in) {
  T v;
  get_bytes(in, &v, sizeof(T));
  return v;
}

std::string get_str(std::istream& in, std::uint64_t max_len = 1u << 20) {
  const std::uint64_t n = get_pod<std::uint64_t>(in);
  if (n > max_len) throw std::runtime_error("corrupt checkpoint string length");
  std::string s(n, '\0');
  get_bytes(in, s.data(), n);
  return s;
}

nn::Tensor get_tensor(std::istream& in) {
  const std::uint32_t ndims = get_pod<std::uint32_t>(in);
  if (ndims == 0 || ndims > 4)
    throw std::runtime_error("corrupt checkpoint tensor rank");
  std::vector<int> shape(ndims);
  for (auto& d : shape) {
    d = get_pod<std::int32_t>(in);
    if (d < 0 || d > (1 << 24))
      throw std::runtime_error("corrupt checkpoint tensor dim");
  }
  nn::Tensor t(shape);
  get_bytes(in, t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const UniModel& model,
                     const Adam* opt, int epoch) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot open checkpoint for writing: " + path);
  put_bytes(out, kMagic, sizeof(kMagic));
  put_pod<std::uint32_t>(out, kVersion);
  const Config cfg = model.config().to_config();
  put_str(out, cfg.canonical());
  put_str(out, cfg.hash());
  put_pod<std::int64_t>(out, epoch);
  const auto& params = model.params().all();
  put_pod<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    put_str(out, p->name);
    put_tensor(out, p->value);
  }
  put_pod<std::uint8_t>(out, opt ? 1 : 0);
  if (opt) {
    put_pod<double>(out, opt->config().beta1);
    put_pod<double>(out, opt->config().beta2);
    put_pod<double>(out, opt->config().eps);
    put_pod<std::int64_t>(out, opt->steps_taken());
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_tensor(out, opt->m()[i]);
      put_tensor(out, opt->v()[i]);
    }
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  get_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint32_t version = get_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  const std::string cfg_text = get_str(in);
  const std::string stored_hash = get_str(in);
  const Config cfg = Config::from_string(cfg_text);
  if (cfg.hash() != stored_hash)
    throw std::runtime_error("checkpoint config hash mismatch (corrupt file?)");

  CheckpointBundle bundle;
  bundle.config = ModelConfig::from_config(cfg);
  bundle.config_hash = stored_hash;
  bundle.epoch = static_cast<int>(get_pod<std::int64_t>(in));
  bundle.model = std::make_unique<UniModel>(bundle.config, /*seed=*/0);

  const auto& params = bundle.model->params().all();
  const std::uint64_t n_params = get_pod<std::uint64_t>(in);
  if (n_params != params.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (const auto& p : params) {
    const std::string name = get_str(in);
    if (name != p->name)
      throw std::runtime_error("checkpoint parameter order mismatch: '" +
                               name + "' vs '" + p->name + "'");
    nn::Tensor t = get_tensor(in);
    if (!t.same_shape(p->value))
      throw std::runtime_error("checkpoint shape mismatch at '" + name + "'");
    p->value = std::move(t);
  }
  const std::uint8_t has_opt = get_pod<std::uint8_t>(in);
  if (has_opt) {
    AdamConfig acfg;
    acfg.beta1 = get_pod<double>(in);
    acfg.beta2 = get_pod<double>(in);
    acfg.eps = get_pod<double>(in);
    const std::int64_t t = get_pod<std::int64_t>(in);
    std::vector<nn::Tensor> m, v;
    m.reserve(params.size());
    v.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.push_back(get_tensor(in));
      v.push_back(get_tensor(in));
    }
    bundle.opt = std::make_unique<Adam>(bundle.model->params(), acfg);
    bundle.opt->restore(t, std::move(m), std::move(v));
  }
  return bundle;
}

}  // namespace langseg
