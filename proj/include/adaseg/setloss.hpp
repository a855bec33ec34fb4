#pragma once

#include <utility>
#include <vector>

#include "adaseg/tensor.hpp"

// Hungarian-matched set-prediction loss over query outputs, and the four
// semantic segmentation metrics. Matching indices are computed from plain
// values and treated as constants; gradients flow through the loss terms only.
namespace adaseg::loss {

struct LossWeights {
  double lambda_cls = 2.0;
  double lambda_bce = 5.0;
  double lambda_dice = 5.0;
  double no_object_weight = 0.1;
  double logit_clamp = 20.0;
};

// conservative bound on the total loss of a saturated perfect prediction
// (logits pinned at +-logit_clamp) on an hw-pixel mask grid
double saturation_bound(const LossWeights& w, int hw, int num_classes);

struct Target {
  int class_id = 0;
  std::vector<double> mask;  // {0,1} on the h x w grid
};

// One target per class present in a semantic mask; `valid` excludes unlabeled.
struct TargetSet {
  int h = 0, w = 0;
  std::vector<Target> targets;
  std::vector<double> valid;

  static constexpr int kUnlabeled = 255;
  static TargetSet from_semantic(const std::vector<int>& gt, int h, int w, int num_classes);
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query, target), injective both ways
};

// Minimum-cost injective assignment of all m columns of an n x m matrix,
// n >= m. Throws on non-finite entries.
MatchResult hungarian(const std::vector<double>& cost, int n, int m);

// cost(q, t) from the three loss terms, computed on plain values
// (detached from the graph). Throws if targets is empty.
std::vector<double> match_cost(const ag::Tensor& class_logits, const ag::Tensor& mask_logits,
                               const TargetSet& targets, const LossWeights& w);

struct LossBreakdown {
  ag::Tensor cls, bce, dice, total;
  MatchResult match;
};

// class_logits: [Q, C+1], mask_logits: [Q, h, w]
LossBreakdown segm_loss(const ag::Tensor& class_logits, const ag::Tensor& mask_logits,
                        const TargetSet& targets, const LossWeights& w);

struct MetricReport {
  double miou = 0, fwiou = 0, macc = 0, pacc = 0;  // percentages
};

// Streaming confusion matrix; unlabeled ground-truth pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);
  void add(const std::vector<int>& pred, const std::vector<int>& gt);
  MetricReport report() const;  // throws if no labeled pixel was added
  std::int64_t total() const { return total_; }

 private:
  int c_;
  std::vector<std::int64_t> m_;  // [gt][pred]
  std::int64_t total_ = 0;
};

// single-pair convenience used by the per-image metric variant
MetricReport metrics(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes);

}  // namespace adaseg::loss
