#include "adaseg/setloss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "adaseg/ops.hpp"

namespace adaseg::loss {

namespace ag = adaseg::ag;

double saturation_bound(const LossWeights& w, int hw, int num_classes) {
  // residuals of a prediction pinned at +-logit_clamp: per-pixel BCE is
  // softplus(-clamp), dice picks up at most ~4*sigmoid(-clamp)*hw, class CE
  // leaves exp(-2*clamp) per wrong class
  const double eps = 1.0 / (1.0 + std::exp(w.logit_clamp));
  const double bce_sat = std::log1p(std::exp(-w.logit_clamp));
  return w.lambda_cls * num_classes * std::exp(-2.0 * w.logit_clamp) +
         w.lambda_bce * bce_sat + w.lambda_dice * 4.0 * eps * hw + 1e-12;
}

TargetSet TargetSet::from_semantic(const std::vector<int>& gt, int h, int w, int num_classes) {
  if (static_cast<int>(gt.size()) != h * w)
    throw std::runtime_error("target set: mask size mismatch");
  TargetSet ts;
  ts.h = h;
  ts.w = w;
  ts.valid.assign(gt.size(), 0.0);
  std::vector<int> first(static_cast<std::size_t>(num_classes), -1);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kUnlabeled) continue;
    if (gt[i] < 0 || gt[i] >= num_classes)
      throw std::runtime_error("target set: class id out of range");
    ts.valid[i] = 1.0;
    if (first[static_cast<std::size_t>(gt[i])] < 0)
      first[static_cast<std::size_t>(gt[i])] = static_cast<int>(ts.targets.size());
  }
  // stable order: by class id
  for (int c = 0; c < num_classes; ++c)
    if (first[static_cast<std::size_t>(c)] >= 0) {
      Target t;
      t.class_id = c;
      t.mask.assign(gt.size(), 0.0);
      for (std::size_t i = 0; i < gt.size(); ++i)
        if (gt[i] == c) t.mask[i] = 1.0;
      ts.targets.push_back(std::move(t));
    }
  return ts;
}

MatchResult hungarian(const std::vector<double>& cost, int n, int m) {
  if (m > n) throw std::runtime_error("hungarian: more columns than rows");
  for (double v : cost)
    if (!std::isfinite(v)) throw std::runtime_error("hungarian: non-finite cost entry");

  // shortest augmenting path with potentials; rows of the internal problem
  // are the m columns (targets), columns are the n rows (queries)
  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto a = [&](int t, int q) { return cost[static_cast<std::size_t>(q) * m + t]; };

  std::vector<double> u(static_cast<std::size_t>(m) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= m; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  MatchResult r;
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] != 0)
      r.pairs.emplace_back(j - 1, p[static_cast<std::size_t>(j)] - 1);
  std::sort(r.pairs.begin(), r.pairs.end(),
            [](const auto& x, const auto& y) { return x.second < y.second; });
  return r;
}

namespace {

double clamp_val(double z, double c) { return std::min(c, std::max(-c, z)); }

double stable_softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double stable_sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

std::vector<double> match_cost(const ag::Tensor& class_logits, const ag::Tensor& mask_logits,
                               const TargetSet& targets, const LossWeights& w) {
  if (targets.targets.empty()) throw std::runtime_error("match_cost: empty target set");
  const int q_count = class_logits.shape()[0];
  const int c1 = class_logits.shape()[1];
  const int hw = targets.h * targets.w;
  if (mask_logits.numel() != static_cast<std::int64_t>(q_count) * hw)
    throw std::runtime_error("match_cost: mask grid mismatch " + ag::shape_str(mask_logits.shape()));
  const int t_count = static_cast<int>(targets.targets.size());

  double n_valid = 0;
  for (double v : targets.valid) n_valid += v;
  if (n_valid <= 0) throw std::runtime_error("match_cost: no valid pixel");

  std::vector<double> cost(static_cast<std::size_t>(q_count) * t_count);
  for (int q = 0; q < q_count; ++q) {
    // log softmax over clamped class logits
    std::vector<double> lp(static_cast<std::size_t>(c1));
    double mx = -1e300;
    for (int c = 0; c < c1; ++c) {
      lp[static_cast<std::size_t>(c)] = clamp_val(class_logits.at(q * c1 + c), w.logit_clamp);
      mx = std::max(mx, lp[static_cast<std::size_t>(c)]);
    }
    double lse = 0;
    for (int c = 0; c < c1; ++c) lse += std::exp(lp[static_cast<std::size_t>(c)] - mx);
    lse = mx + std::log(lse);

    for (int t = 0; t < t_count; ++t) {
      const Target& tgt = targets.targets[static_cast<std::size_t>(t)];
      double bce = 0, inter = 0, psum = 0, gsum = 0;
      for (int i = 0; i < hw; ++i) {
        const double z = clamp_val(mask_logits.at(static_cast<std::int64_t>(q) * hw + i), w.logit_clamp);
        const double valid = targets.valid[static_cast<std::size_t>(i)];
        const double g = tgt.mask[static_cast<std::size_t>(i)];
        const double prob = stable_sigmoid(z);
        bce += valid * (stable_softplus(z) - g * z);
        inter += valid * prob * g;
        psum += valid * prob;
        gsum += valid * g;
      }
      bce /= n_valid;
      const double dice = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
      const double ce = lse - lp[static_cast<std::size_t>(tgt.class_id)];
      cost[static_cast<std::size_t>(q) * t_count + t] =
          w.lambda_cls * ce + w.lambda_bce * bce + w.lambda_dice * dice;
    }
  }
  return cost;
}

LossBreakdown segm_loss(const ag::Tensor& class_logits, const ag::Tensor& mask_logits,
                        const TargetSet& targets, const LossWeights& w) {
  const int q_count = class_logits.shape()[0];
  const int c1 = class_logits.shape()[1];
  const int no_object = c1 - 1;
  const int hw = targets.h * targets.w;

  LossBreakdown out;
  ag::Tensor logp = ag::log_softmax_lastdim(ag::clamp(class_logits, -w.logit_clamp, w.logit_clamp));

  if (targets.targets.empty()) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(q_count));
    for (int q = 0; q < q_count; ++q) idx[static_cast<std::size_t>(q)] = static_cast<std::int64_t>(q) * c1 + no_object;
    ag::Tensor ce = ag::neg(ag::mean_all(ag::take(logp, idx)));
    out.cls = ag::mul_scalar(ce, w.no_object_weight);
    out.bce = ag::Tensor::scalar(0.0);
    out.dice = ag::Tensor::scalar(0.0);
    out.total = ag::mul_scalar(out.cls, w.lambda_cls);
    return out;
  }

  auto cost = match_cost(class_logits, mask_logits, targets, w);
  const int t_count = static_cast<int>(targets.targets.size());
  if (t_count <= q_count) {
    out.match = hungarian(cost, q_count, t_count);
  } else {
    // more targets than queries: assign every query a distinct target by
    // matching the transposed problem; surplus targets stay unmatched
    std::vector<double> tr(static_cast<std::size_t>(t_count) * q_count);
    for (int q = 0; q < q_count; ++q)
      for (int t = 0; t < t_count; ++t)
        tr[static_cast<std::size_t>(t) * q_count + q] = cost[static_cast<std::size_t>(q) * t_count + t];
    auto swapped = hungarian(tr, t_count, q_count);
    for (auto [t, q] : swapped.pairs) out.match.pairs.emplace_back(q, t);
    std::sort(out.match.pairs.begin(), out.match.pairs.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
  }

  std::vector<char> matched(static_cast<std::size_t>(q_count), 0);
  std::vector<std::int64_t> cls_idx;
  std::vector<double> cls_weight;
  for (const auto& [q, t] : out.match.pairs) {
    matched[static_cast<std::size_t>(q)] = 1;
    cls_idx.push_back(static_cast<std::int64_t>(q) * c1 + targets.targets[static_cast<std::size_t>(t)].class_id);
    cls_weight.push_back(1.0);
  }
  for (int q = 0; q < q_count; ++q)
    if (!matched[static_cast<std::size_t>(q)]) {
      cls_idx.push_back(static_cast<std::int64_t>(q) * c1 + no_object);
      cls_weight.push_back(w.no_object_weight);
    }
  ag::Tensor wt = ag::Tensor::from({static_cast<int>(cls_weight.size())}, cls_weight);
  out.cls = ag::mul_scalar(ag::neg(ag::sum_all(ag::mul(ag::take(logp, cls_idx), wt))),
                           1.0 / static_cast<double>(q_count));

  // matched masks gathered into [P, hw]
  const int pcount = static_cast<int>(out.match.pairs.size());
  std::vector<std::int64_t> mask_idx(static_cast<std::size_t>(pcount) * hw);
  std::vector<double> tgt_vals(static_cast<std::size_t>(pcount) * hw);
  std::vector<double> valid_vals(static_cast<std::size_t>(pcount) * hw);
  double n_valid = 0;
  for (double v : targets.valid) n_valid += v;
  for (int p = 0; p < pcount; ++p) {
    const auto [q, t] = out.match.pairs[static_cast<std::size_t>(p)];
    for (int i = 0; i < hw; ++i) {
      mask_idx[static_cast<std::size_t>(p) * hw + i] = static_cast<std::int64_t>(q) * hw + i;
      tgt_vals[static_cast<std::size_t>(p) * hw + i] = targets.targets[static_cast<std::size_t>(t)].mask[static_cast<std::size_t>(i)];
      valid_vals[static_cast<std::size_t>(p) * hw + i] = targets.valid[static_cast<std::size_t>(i)];
    }
  }
  ag::Tensor z = ag::reshape(ag::take(ag::reshape(mask_logits, {q_count, hw}), mask_idx), {pcount, hw});
  z = ag::clamp(z, -w.logit_clamp, w.logit_clamp);
  ag::Tensor tgt = ag::Tensor::from({pcount, hw}, tgt_vals);
  ag::Tensor valid = ag::Tensor::from({pcount, hw}, valid_vals);

  ag::Tensor bce_map = ag::mul(valid, ag::sub(ag::softplus(z), ag::mul(tgt, z)));
  out.bce = ag::mul_scalar(ag::sum_all(bce_map), 1.0 / (n_valid * pcount));

  ag::Tensor prob = ag::mul(ag::sigmoid(z), valid);
  ag::Tensor tgt_masked = ag::mul(tgt, valid);
  ag::Tensor inter = ag::rowsum(ag::mul(prob, tgt_masked));        // [P,1]
  ag::Tensor psum = ag::rowsum(prob);
  ag::Tensor gsum = ag::rowsum(tgt_masked);
  ag::Tensor dice_per = ag::sub(ag::Tensor::full({pcount, 1}, 1.0),
                                ag::div(ag::add_scalar(ag::mul_scalar(inter, 2.0), 1.0),
                                        ag::add_scalar(ag::add(psum, gsum), 1.0)));
  out.dice = ag::mean_all(dice_per);

  out.total = ag::add(ag::add(ag::mul_scalar(out.cls, w.lambda_cls),
                              ag::mul_scalar(out.bce, w.lambda_bce)),
                      ag::mul_scalar(out.dice, w.lambda_dice));
  return out;
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : c_(num_classes), m_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

void ConfusionMatrix::add(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw std::runtime_error("metrics: map size mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == TargetSet::kUnlabeled) continue;
    if (gt[i] < 0 || gt[i] >= c_ || pred[i] < 0 || pred[i] >= c_)
      throw std::runtime_error("metrics: class id out of range");
    ++m_[static_cast<std::size_t>(gt[i]) * c_ + pred[i]];
    ++total_;
  }
}

MetricReport ConfusionMatrix::report() const {
  if (total_ == 0) throw std::runtime_error("metrics: ground truth entirely unlabeled");
  double iou_sum = 0, acc_sum = 0, fw = 0, correct = 0;
  int present = 0;
  for (int c = 0; c < c_; ++c) {
    std::int64_t tp = m_[static_cast<std::size_t>(c) * c_ + c], row = 0, col = 0;
    for (int j = 0; j < c_; ++j) {
      row += m_[static_cast<std::size_t>(c) * c_ + j];
      col += m_[static_cast<std::size_t>(j) * c_ + c];
    }
    correct += static_cast<double>(tp);
    if (row == 0) continue;
    ++present;
    const double denom = static_cast<double>(row + col - tp);
    const double iou = denom > 0 ? static_cast<double>(tp) / denom : 0.0;
    iou_sum += iou;
    acc_sum += static_cast<double>(tp) / static_cast<double>(row);
    fw += (static_cast<double>(row) / static_cast<double>(total_)) * iou;
  }
  MetricReport r;
  r.miou = 100.0 * iou_sum / present;
  r.macc = 100.0 * acc_sum / present;
  r.fwiou = 100.0 * fw;
  r.pacc = 100.0 * correct / static_cast<double>(total_);
  return r;
}

MetricReport metrics(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return cm.report();
}

}  // namespace adaseg::loss
