#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adaseg/dataset.hpp"
#include "adaseg/fusion.hpp"
#include "adaseg/params.hpp"
#include "adaseg/segmodel.hpp"
#include "adaseg/setloss.hpp"

// Adaptive learning engine: the inner step updates a masked subset of the
// segmentation parameters by the gradient of the learned loss; the outer
// objective scores frame 0 with the adapted parameters and trains both
// parameter sets through the inner step (second order by default).
namespace adaseg::adapt {

enum class Variant { Full, Small, Tiny };
enum class Policy { SingleFrame, Random, BestLoss };

const char* variant_name(Variant v);
const char* policy_name(Policy p);
std::optional<Variant> parse_variant(const std::string& s);
std::optional<Policy> parse_policy(const std::string& s);

// per-group trainable/adaptive flags for the model-part ablations
struct VariantMask {
  std::vector<std::string> frozen;    // not trained by the outer optimizer
  std::vector<std::string> adaptive;  // updated by the inner step

  bool is_trainable(const std::string& group) const;
  bool is_adaptive(const std::string& group) const;
  static VariantMask for_variant(Variant v);
};

struct AdaptConfig {
  double alpha = 1e-3;    // inner step size
  int inner_steps = 1;    // gradient steps per inference
  int frame_steps = 1;    // additional frames acquired by actions (1 or 4)
  int meta_order = 2;     // 1: detached inner gradient, 2: full second order
  Variant variant = Variant::Full;
  Policy policy = Policy::Random;
  bool adapt_on_inference = true;
  double epsilon_start = 1.0, epsilon_end = 0.1;  // BestLoss exploration anneal
};

struct Runtime {
  model::ModelConfig model;
  fusion::FusionConfig fusion;  // expected_frames kept = frame_steps + 1
  loss::LossWeights weights;
  AdaptConfig adapt;

  void finalize();  // derives fusion source dims and sequence length
};

// ---- inner step ---------------------------------------------------------

// theta' = theta - alpha * d(learned_loss)/d(theta) on adaptive groups only;
// the result shares non-adaptive entries with theta. With create_graph the
// update stays differentiable in theta and phi. Throws on non-finite
// gradients, naming the group.
nn::ParamSet inner_adapt(const nn::ParamSet& theta, const nn::ParamSet& phi, const Runtime& rt,
                         const std::vector<ag::Tensor>& frame_images, bool create_graph,
                         double* learned_loss_out = nullptr);

// ---- optimizer ----------------------------------------------------------

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int t = 0;
  std::vector<std::vector<double>> m, v;  // aligned with theta entries then phi entries

  void init(const nn::ParamSet& theta, const nn::ParamSet& phi);
  // applies clipped updates; grads vectors align with the entries of each set,
  // empty tensors mark parameters without gradient
  void step(nn::ParamSet& theta, nn::ParamSet& phi, const std::vector<ag::Tensor>& g_theta,
            const std::vector<ag::Tensor>& g_phi, double lr_model, double lr_fusion,
            double clip_norm, const VariantMask& mask);
};

// ---- inference ----------------------------------------------------------

struct InferResult {
  std::vector<int> map;             // frame-0 semantic map at full resolution
  loss::MetricReport report;        // per-image metrics vs frame-0 ground truth
  std::vector<int> node_path;       // visited node ids, root first
  std::vector<env::Action> actions;
  double learned_loss = 0;
  bool adapted = false;
};

// Selects frame_steps additional frames by the policy, adapts (unless
// disabled, alpha == 0, or SingleFrame), predicts frame 0 with the adapted
// parameters and leaves theta untouched. Throws if the tree is shallower
// than the requested steps. forced_first overrides the policy's first action
// (used by the exhaustive-average diagnostic).
InferResult infer(const nn::ParamSet& theta, const nn::ParamSet& phi, const Runtime& rt,
                  const env::ActionTreePoint& pt, Rng policy_rng,
                  const env::Action* forced_first = nullptr);

// ---- training -----------------------------------------------------------

struct TrainConfig {
  int epochs = 50;
  int batch = 16;
  double lr_model = 1e-5;
  double lr_fusion = 1e-4;
  double clip_norm = 1.0;
  double action_loss_weight = 1.0;  // BestLoss CE term
  double aux_weight = 0.0;          // auxiliary fusion heads, off by default
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  loss::MetricReport val;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int best_epoch = 0;  // max val fwIoU, earliest on ties
  std::string checkpoint_path;
};

struct OuterStepStats {
  double loss = 0;      // mean total outer loss over the batch
  double grad_norm = 0;  // pre-clip global norm
};

// One optimizer update over a batch of points (gradient accumulation across
// the batch). epoch_frac in [0,1] drives the BestLoss epsilon anneal.
OuterStepStats outer_step(nn::ParamSet& theta, nn::ParamSet& phi, Adam& opt, const Runtime& rt,
                          const TrainConfig& tc, const env::Dataset& ds,
                          const std::vector<int>& point_indices, double epoch_frac, Rng& rng);

TrainResult train(const env::Dataset& ds, Runtime rt, const TrainConfig& tc,
                  const std::string& out_dir);

struct EvalResult {
  loss::MetricReport global;                 // dataset-level confusion matrix
  double per_image_miou = 0;                 // mean of per-point mIoU (diagnostic)
  std::vector<InferResult> per_point;
};

EvalResult evaluate(const nn::ParamSet& theta, const nn::ParamSet& phi, const Runtime& rt,
                    const env::Dataset& ds, const std::string& split, std::uint64_t seed);

// frame-0 target set at mask resolution (nearest subsample of the stored mask)
loss::TargetSet frame_targets(const env::Frame& f, const model::ModelConfig& cfg);

// checkpoint helpers: model + fusion + optimizer state + meta
void save_run_checkpoint(const std::string& path, const nn::ParamSet& theta,
                         const nn::ParamSet& phi, const Adam& opt,
                         const std::map<std::string, std::string>& meta);
struct LoadedRun {
  nn::ParamSet theta, phi;
  Adam opt;
  std::map<std::string, std::string> meta;
};
LoadedRun load_run_checkpoint(const std::string& path);

}  // namespace adaseg::adapt
