#include "langseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "langseg/util.hpp"

namespace langseg {

using nn::Tensor;

namespace {

void check_shapes(const Tensor& prob, const Mask& target) {
  if (prob.size() != static_cast<std::int64_t>(target.v.size()))
    throw std::invalid_argument("prob/target element counts differ");
}

void check_shapes(const Mask& a, const Mask& b) {
  if (a.h != b.h || a.w != b.w)
    throw std::invalid_argument("mask shapes differ");
}

Tensor mask_to_tensor(const Mask& m, const std::vector<int>& shape) {
  Tensor t(shape);
  for (std::size_t i = 0; i < m.v.size(); ++i)
    t[i] = static_cast<double>(m.v[i]);
  return t;
}

}  // namespace

double bce_loss(const Tensor& prob, const Mask& target) {
  check_shapes(prob, target);
  double acc = 0.0;
  for (std::size_t i = 0; i < target.v.size(); ++i) {
    const double p = std::clamp(prob[i], kProbEps, 1.0 - kProbEps);
    const double t = static_cast<double>(target.v[i]);
    acc += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return acc / static_cast<double>(target.v.size());
}

double dice_loss(const Tensor& prob, const Mask& target) {
  check_shapes(prob, target);
  const double s = 1.0;
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < target.v.size(); ++i) {
    const double t = static_cast<double>(target.v[i]);
    inter += prob[i] * t;
    psum += prob[i];
    tsum += t;
  }
  return 1.0 - (2.0 * inter + s) / (psum + tsum + s);
}

LossValue combined_loss(const Tensor& prob, const Mask& target, double w_bce,
                        double w_dice) {
  LossValue v;
  v.bce = bce_loss(prob, target);
  v.dice = dice_loss(prob, target);
  v.total = w_bce * v.bce + w_dice * v.dice;
  return v;
}

nn::Tape::Ref bce_loss_node(nn::Tape& t, nn::Tape::Ref prob, const Mask& target) {
  const auto& pv = t.val(prob);
  check_shapes(pv, target);
  Tensor tgt = mask_to_tensor(target, pv.shape());
  Tensor one_minus(tgt.shape());
  for (std::int64_t i = 0; i < tgt.size(); ++i) one_minus[i] = 1.0 - tgt[i];
  const auto tpos = t.constant(std::move(tgt));
  const auto tneg = t.constant(std::move(one_minus));

  const auto pc = t.clamp(prob, kProbEps, 1.0 - kProbEps);
  // 1 - p via scale/shift keeps the expression fully differentiable.
  const auto pneg = t.add_scalar(t.scale(pc, -1.0), 1.0);
  const auto ll = t.add(t.mul(tpos, t.log(pc)), t.mul(tneg, t.log(pneg)));
  return t.scale(t.mean_all(ll), -1.0);
}

nn::Tape::Ref dice_loss_node(nn::Tape& t, nn::Tape::Ref prob, const Mask& target) {
  const auto& pv = t.val(prob);
  check_shapes(pv, target);
  Tensor tgt = mask_to_tensor(target, pv.shape());
  double tsum = 0.0;
  for (std::int64_t i = 0; i < tgt.size(); ++i) tsum += tgt[i];
  const auto tref = t.constant(std::move(tgt));
  const auto inter = t.sum_all(t.mul(prob, tref));
  const auto psum = t.sum_all(prob);
  const double s = 1.0;
  const auto num = t.add_scalar(t.scale(inter, 2.0), s);
  const auto den = t.add_scalar(psum, tsum + s);
  const auto coeff = t.div(num, den);
  return t.add_scalar(t.scale(coeff, -1.0), 1.0);
}

nn::Tape::Ref combined_loss_node(nn::Tape& t, nn::Tape::Ref prob,
                                 const Mask& target, double w_bce,
                                 double w_dice) {
  return t.add(t.scale(bce_loss_node(t, prob, target), w_bce),
               t.scale(dice_loss_node(t, prob, target), w_dice));
}

double iou(const Mask& pred, const Mask& target) {
  check_shapes(pred, target);
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    inter += pred.v[i] & target.v[i];
    uni += pred.v[i] | target.v[i];
  }
  if (uni == 0) return 1.0;  // both empty
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double oiou(const std::vector<MaskPair>& pairs) {
  std::int64_t inter = 0, uni = 0;
  for (const auto& p : pairs) {
    check_shapes(p.pred, p.target);
    for (std::size_t i = 0; i < p.pred.v.size(); ++i) {
      inter += p.pred.v[i] & p.target.v[i];
      uni += p.pred.v[i] | p.target.v[i];
    }
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const std::vector<MaskPair>& pairs,
            const std::vector<std::string>& classes) {
  if (pairs.size() != classes.size())
    throw std::invalid_argument("pairs/classes length mismatch");
  if (pairs.empty()) throw std::invalid_argument("miou over empty set");
  std::map<std::string, std::vector<MaskPair>> by_class;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    by_class[classes[i]].push_back(pairs[i]);
  double acc = 0.0;
  for (const auto& [cls, group] : by_class) acc += oiou(group);
  return acc / static_cast<double>(by_class.size());
}

double f_measure(const Tensor& prob, const Mask& target) {
  check_shapes(prob, target);
  double mean = 0.0;
  for (std::int64_t i = 0; i < prob.size(); ++i) mean += prob[i];
  mean /= static_cast<double>(prob.size());
  const double thr = std::min(2.0 * mean, 1.0);
  std::int64_t tp = 0, npred = 0, ntgt = 0;
  for (std::size_t i = 0; i < target.v.size(); ++i) {
    const bool p = prob[static_cast<std::int64_t>(i)] >= thr;
    const bool t = target.v[i] != 0;
    tp += (p && t) ? 1 : 0;
    npred += p ? 1 : 0;
    ntgt += t ? 1 : 0;
  }
  if (npred == 0 || ntgt == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(npred);
  const double recall = static_cast<double>(tp) / static_cast<double>(ntgt);
  const double b2 = 0.3;
  const double den = b2 * precision + recall;
  if (den == 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / den;
}

Mask boundary_1px(const Mask& m) {
  Mask out(m.h, m.w);
  auto bg = [&](int r, int c) {
    return r < 0 || r >= m.h || c < 0 || c >= m.w || m.at(r, c) == 0;
  };
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c)
      if (m.at(r, c) &&
          (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1)))
        out.at(r, c) = 1;
  return out;
}

double boundary_f(const Mask& pred, const Mask& target) {
  check_shapes(pred, target);
  const Mask bp = boundary_1px(pred);
  const Mask bt = boundary_1px(target);
  std::int64_t np = 0, nt = 0;
  for (auto v : bp.v) np += v;
  for (auto v : bt.v) nt += v;
  if (np == 0 && nt == 0) return 1.0;
  if (np == 0 || nt == 0) return 0.0;
  auto near_any = [](const Mask& other, int r, int c) {
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr >= 0 && rr < other.h && cc >= 0 && cc < other.w &&
            other.at(rr, cc))
          return true;
      }
    return false;
  };
  std::int64_t matched_p = 0, matched_t = 0;
  for (int r = 0; r < pred.h; ++r)
    for (int c = 0; c < pred.w; ++c) {
      if (bp.at(r, c) && near_any(bt, r, c)) ++matched_p;
      if (bt.at(r, c) && near_any(bp, r, c)) ++matched_t;
    }
  const double precision = static_cast<double>(matched_p) / static_cast<double>(np);
  const double recall = static_cast<double>(matched_t) / static_cast<double>(nt);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

JFReport j_and_f(const std::vector<Mask>& pred, const std::vector<Mask>& target) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("frame sequences must match and be non-empty");
  JFReport rep;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    rep.j += iou(pred[i], target[i]);
    rep.f += boundary_f(pred[i], target[i]);
  }
  rep.j /= static_cast<double>(pred.size());
  rep.f /= static_cast<double>(pred.size());
  rep.jf = 0.5 * (rep.j + rep.f);
  return rep;
}

std::array<double, 3> dataset_mean(const std::vector<Triplet>& data) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::int64_t count = 0;
  for (const Triplet& t : data) {
    for (int r = 0; r < t.image.h; ++r)
      for (int c = 0; c < t.image.w; ++c)
        for (int ch = 0; ch < 3; ++ch) sum[ch] += t.image.at(r, c, ch);
    count += static_cast<std::int64_t>(t.image.h) * t.image.w;
  }
  if (count == 0) return {0.0, 0.0, 0.0};
  for (double& v : sum) v /= static_cast<double>(count);
  return sum;
}

Image hide_and_seek(const Image& img, int patch, double p_hide,
                    std::mt19937_64& rng, const std::array<double, 3>& fill) {
  if (patch <= 0 || img.h % patch != 0 || img.w % patch != 0)
    throw std::invalid_argument("image dims must be divisible by patch size");
  std::array<std::uint8_t, 3> fill8;
  for (int ch = 0; ch < 3; ++ch)
    fill8[ch] = static_cast<std::uint8_t>(
        std::clamp<long>(std::lround(fill[ch]), 0, 255));
  Image out = img;
  for (int pr = 0; pr < img.h / patch; ++pr)
    for (int pc = 0; pc < img.w / patch; ++pc) {
      if (unit_double(rng) >= p_hide) continue;
      for (int r = pr * patch; r < (pr + 1) * patch; ++r)
        for (int c = pc * patch; c < (pc + 1) * patch; ++c)
          for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = fill8[ch];
    }
  return out;
}

}  // namespace langseg
