#include "adaseg/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "adaseg/ops.hpp"

namespace adaseg::adapt {

namespace ag = adaseg::ag;
using nn::ParamSet;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::Small: return "small";
    case Variant::Tiny: return "tiny";
  }
  return "?";
}

const char* policy_name(Policy p) {
  switch (p) {
    case Policy::SingleFrame: return "single_frame";
    case Policy::Random: return "random";
    case Policy::BestLoss: return "best_loss";
  }
  return "?";
}

std::optional<Variant> parse_variant(const std::string& s) {
  for (Variant v : {Variant::Full, Variant::Small, Variant::Tiny})
    if (s == variant_name(v)) return v;
  return std::nullopt;
}

std::optional<Policy> parse_policy(const std::string& s) {
  for (Policy p : {Policy::SingleFrame, Policy::Random, Policy::BestLoss})
    if (s == policy_name(p)) return p;
  return std::nullopt;
}

bool VariantMask::is_trainable(const std::string& group) const {
  return std::find(frozen.begin(), frozen.end(), group) == frozen.end();
}

bool VariantMask::is_adaptive(const std::string& group) const {
  return std::find(adaptive.begin(), adaptive.end(), group) != adaptive.end();
}

VariantMask VariantMask::for_variant(Variant v) {
  VariantMask m;
  switch (v) {
    case Variant::Full:
      m.adaptive = model::model_groups();
      break;
    case Variant::Small:
      m.adaptive = {model::kPixelDecoder, model::kTransformerBlock, model::kMultistageDecoder,
                    model::kClassHead, model::kMaskHead};
      break;
    case Variant::Tiny:
      m.frozen = {model::kBackbone, model::kPixelDecoder, model::kTaskMlp};
      m.adaptive = {model::kTransformerBlock, model::kMultistageDecoder, model::kClassHead,
                    model::kMaskHead};
      break;
  }
  return m;
}

void Runtime::finalize() {
  const auto arch = fusion;  // keep the architectural knobs
  fusion = fusion::FusionConfig::from_model(model);
  fusion.width = arch.width;
  fusion.layers = arch.layers;
  fusion.heads = arch.heads;
  fusion.latents = arch.latents;
  fusion.max_frames = std::max(arch.max_frames, adapt.frame_steps + 1);
  fusion.embedder = arch.embedder;
  fusion.loss_head_init = arch.loss_head_init;
  fusion.expected_frames = adapt.frame_steps + 1;
  fusion.mode =
      adapt.policy == Policy::BestLoss ? fusion::FusionMode::Causal : arch.mode;
}

// ---- inner step ---------------------------------------------------------

nn::ParamSet inner_adapt(const ParamSet& theta, const ParamSet& phi, const Runtime& rt,
                         const std::vector<ag::Tensor>& frame_images, bool create_graph,
                         double* learned_loss_out) {
  const auto mask = VariantMask::for_variant(rt.adapt.variant);
  ParamSet cur = theta;  // shallow copy: entries share impls until replaced

  for (int step = 0; step < std::max(1, rt.adapt.inner_steps); ++step) {
    std::vector<model::SegOutput> outs;
    outs.reserve(frame_images.size());
    for (const auto& img : frame_images) outs.push_back(model::forward(cur, rt.model, img));
    auto seq = fusion::embed_frames(phi, rt.fusion, outs);
    auto fo = fusion::fuse(phi, rt.fusion, seq);
    if (learned_loss_out) *learned_loss_out = fo.learned_loss.item();

    if (rt.adapt.alpha == 0.0) continue;  // zero step size: parameters pass through

    std::vector<std::size_t> idx;
    std::vector<ag::Tensor> wrt;
    for (std::size_t i = 0; i < cur.entries().size(); ++i) {
      const auto& e = cur.entries()[i];
      if (mask.is_adaptive(e.group) && e.t.requires_grad()) {
        idx.push_back(i);
        wrt.push_back(e.t);
      }
    }
    if (wrt.empty()) continue;

    auto grads = ag::backward(fo.learned_loss, wrt, create_graph);
    for (std::size_t k = 0; k < grads.size(); ++k)
      for (double g : grads[k].data())
        if (!std::isfinite(g))
          throw std::runtime_error("inner_adapt: non-finite gradient in group " +
                                   cur.entries()[idx[k]].group);

    ParamSet next = cur;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      ag::Tensor g = create_graph ? grads[k] : grads[k].detach();
      next.entries()[idx[k]].t =
          ag::sub(cur.entries()[idx[k]].t, ag::mul_scalar(g, rt.adapt.alpha));
    }
    cur = std::move(next);
  }
  return cur;
}

// ---- optimizer ----------------------------------------------------------

void Adam::init(const ParamSet& theta, const ParamSet& phi) {
  t = 0;
  m.clear();
  v.clear();
  for (const auto* set : {&theta, &phi})
    for (const auto& e : set->entries()) {
      m.emplace_back(e.t.data().size(), 0.0);
      v.emplace_back(e.t.data().size(), 0.0);
    }
}

void Adam::step(ParamSet& theta, ParamSet& phi, const std::vector<ag::Tensor>& g_theta,
                const std::vector<ag::Tensor>& g_phi, double lr_model, double lr_fusion,
                double clip_norm, const VariantMask& mask) {
  if (m.empty()) init(theta, phi);
  double sq = 0;
  for (const auto* grads : {&g_theta, &g_phi})
    for (const auto& g : *grads)
      if (g.defined())
        for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  const double scale = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  ++t;
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);

  std::size_t slot = 0;
  auto update = [&](ParamSet& ps, const std::vector<ag::Tensor>& grads, double lr, bool check_mask) {
    for (std::size_t i = 0; i < ps.entries().size(); ++i, ++slot) {
      auto& e = ps.entries()[i];
      if (!grads[i].defined()) continue;
      if (check_mask && !mask.is_trainable(e.group)) continue;
      auto& mm = m[slot];
      auto& vv = v[slot];
      auto& data = e.t.leaf_data();
      const auto& g = grads[i].data();
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double gj = g[j] * scale;
        mm[j] = beta1 * mm[j] + (1 - beta1) * gj;
        vv[j] = beta2 * vv[j] + (1 - beta2) * gj * gj;
        data[j] -= lr * (mm[j] / bc1) / (std::sqrt(vv[j] / bc2) + eps);
      }
    }
  };
  update(theta, g_theta, lr_model, true);
  update(phi, g_phi, lr_fusion, false);
}

// ---- targets ------------------------------------------------------------

loss::TargetSet frame_targets(const env::Frame& f, const model::ModelConfig& cfg) {
  const int m = cfg.mask_size();
  const int stride = f.width / m;
  std::vector<int> small(static_cast<std::size_t>(m) * m);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x)
      small[static_cast<std::size_t>(y) * m + x] =
          f.mask[static_cast<std::size_t>(y * stride) * f.width + x * stride];
  return loss::TargetSet::from_semantic(small, m, m, cfg.classes);
}

// ---- path selection -----------------------------------------------------

namespace {

std::vector<int> gt_full(const env::Frame& f) { return f.mask; }

env::Action argmax_action(const ag::Tensor& logits) {
  int best = 0;
  for (int i = 1; i < 5; ++i)
    if (logits.at(i) > logits.at(best)) best = i;
  return env::kAllActions[static_cast<std::size_t>(best)];
}

// fusion action logits over the frames seen so far (causal mode)
ag::Tensor prefix_action_logits(const ParamSet& theta, const ParamSet& phi, const Runtime& rt,
                                const std::vector<ag::Tensor>& prefix_images) {
  std::vector<model::SegOutput> outs;
  for (const auto& img : prefix_images) outs.push_back(model::forward(theta, rt.model, img));
  auto seq = fusion::embed_frames(phi, rt.fusion, outs);
  return fusion::fuse(phi, rt.fusion, seq).action_logits;
}

struct PathChoice {
  std::vector<int> node_ids;  // root first
  std::vector<env::Action> actions;
};

PathChoice choose_path(const env::ActionTreePoint& pt, const ParamSet& theta, const ParamSet& phi,
                       const Runtime& rt, Rng& rng, const env::Action* forced_first = nullptr) {
  const int steps = rt.adapt.policy == Policy::SingleFrame ? 0 : rt.adapt.frame_steps;
  if (steps > pt.depth)
    throw std::runtime_error("policy exhaustion: tree depth " + std::to_string(pt.depth) +
                             " < requested steps " + std::to_string(steps));
  PathChoice pc;
  pc.node_ids.push_back(0);
  std::vector<ag::Tensor> prefix;
  if (rt.adapt.policy == Policy::BestLoss && steps > 0)
    prefix.push_back(model::image_to_tensor(pt.root().frame));
  int cur = 0;
  for (int k = 0; k < steps; ++k) {
    env::Action a;
    if (forced_first && k == 0) {
      a = *forced_first;
    } else if (rt.adapt.policy == Policy::Random) {
      a = env::kAllActions[static_cast<std::size_t>(rng.uniform_int(0, 4))];
    } else {  // BestLoss: fusion action head over the prefix
      ag::GradGuard off(false);
      a = argmax_action(prefix_action_logits(theta, phi, rt, prefix));
    }
    cur = pt.child_id(cur, a);
    pc.node_ids.push_back(cur);
    pc.actions.push_back(a);
    if (rt.adapt.policy == Policy::BestLoss)
      prefix.push_back(model::image_to_tensor(pt.nodes[static_cast<std::size_t>(cur)].frame));
  }
  return pc;
}

std::vector<ag::Tensor> path_images(const env::ActionTreePoint& pt, const std::vector<int>& ids) {
  std::vector<ag::Tensor> imgs;
  for (int id : ids) imgs.push_back(model::image_to_tensor(pt.nodes[static_cast<std::size_t>(id)].frame));
  return imgs;
}

}  // namespace

// ---- inference ----------------------------------------------------------

InferResult infer(const ParamSet& theta, const ParamSet& phi, const Runtime& rt,
                  const env::ActionTreePoint& pt, Rng policy_rng,
                  const env::Action* forced_first) {
  if (pt.root().frame.width != rt.model.image_size)
    throw std::runtime_error("infer: dataset frame size does not match model config");

  auto pc = choose_path(pt, theta, phi, rt, policy_rng, forced_first);
  InferResult res;
  res.node_path = pc.node_ids;
  res.actions = pc.actions;

  ParamSet adapted = theta;
  const bool want_adapt = rt.adapt.adapt_on_inference && rt.adapt.policy != Policy::SingleFrame &&
                          rt.adapt.alpha != 0.0 && pc.node_ids.size() > 1;
  if (want_adapt) {
    auto images = path_images(pt, pc.node_ids);
    adapted = inner_adapt(theta, phi, rt, images, /*create_graph=*/false, &res.learned_loss);
    res.adapted = true;
  }

  ag::GradGuard off(false);
  auto out0 = model::forward(adapted, rt.model, model::image_to_tensor(pt.root().frame));
  res.map = model::semantic_map(out0, rt.model);
  res.report = loss::metrics(res.map, gt_full(pt.root().frame), rt.model.classes);
  return res;
}

// ---- training -----------------------------------------------------------

namespace {

struct WrtIndex {
  std::vector<ag::Tensor> wrt;          // trainable tensors, theta then phi
  std::vector<std::size_t> theta_slots;  // entry index per wrt item
  std::vector<std::size_t> phi_slots;
};

WrtIndex trainable_index(ParamSet& theta, ParamSet& phi, const VariantMask& mask) {
  WrtIndex w;
  for (std::size_t i = 0; i < theta.entries().size(); ++i) {
    const auto& e = theta.entries()[i];
    if (mask.is_trainable(e.group) && e.t.requires_grad()) {
      w.wrt.push_back(e.t);
      w.theta_slots.push_back(i);
    }
  }
  for (std::size_t i = 0; i < phi.entries().size(); ++i) {
    w.wrt.push_back(phi.entries()[i].t);
    w.phi_slots.push_back(i);
  }
  return w;
}

// loss graph for one training point; exploration data for BestLoss
struct PointLoss {
  ag::Tensor total;
};

PointLoss point_loss(const ParamSet& theta, const ParamSet& phi, const Runtime& rt,
                     const TrainConfig& tc, const env::ActionTreePoint& pt, double epsilon,
                     Rng& rng) {
  const bool second_order = rt.adapt.meta_order == 2;

  const env::Action* forced = nullptr;
  env::Action forced_storage{};
  ag::Tensor action_ce;

  if (rt.adapt.policy == Policy::BestLoss) {
    const bool explore = rng.uniform() < epsilon;
    if (explore) {
      // score all first-level siblings by ground-truth loss of their
      // adapted trajectory; cross-entropy toward the best one
      const auto targets0 = frame_targets(pt.root().frame, rt.model);
      double best_val = 0;
      int best_a = -1;
      for (int ai = 0; ai < 5; ++ai) {
        Runtime sub = rt;
        sub.adapt.frame_steps = 1;
        sub.fusion.expected_frames = 2;
        const int child = pt.child_id(0, env::kAllActions[static_cast<std::size_t>(ai)]);
        auto images = path_images(pt, {0, child});
        auto adapted = inner_adapt(theta, phi, sub, images, /*create_graph=*/false);
        ag::GradGuard off(false);
        auto out0 = model::forward(adapted, sub.model, images[0]);
        const double val =
            loss::segm_loss(out0.class_logits, out0.mask_logits, targets0, rt.weights).total.item();
        if (best_a < 0 || val < best_val) {
          best_val = val;
          best_a = ai;
        }
      }
      // CE on the root-prefix action head
      auto root_img = model::image_to_tensor(pt.root().frame);
      ag::Tensor logits = prefix_action_logits(theta, phi, rt, {root_img});
      ag::Tensor logp = ag::log_softmax_lastdim(ag::reshape(logits, {1, 5}));
      action_ce = ag::neg(ag::reshape(ag::take(logp, {static_cast<std::int64_t>(best_a)}), {1}));
      // explore the tree with a uniformly random first action
      forced_storage = env::kAllActions[static_cast<std::size_t>(rng.uniform_int(0, 4))];
      forced = &forced_storage;
    }
  }

  auto pc = choose_path(pt, theta, phi, rt, rng, forced);
  auto images = path_images(pt, pc.node_ids);

  ParamSet adapted = theta;
  if (rt.adapt.policy != Policy::SingleFrame && rt.adapt.alpha != 0.0 && images.size() > 1)
    adapted = inner_adapt(theta, phi, rt, images, second_order);

  auto out0 = model::forward(adapted, rt.model, images[0]);
  const auto targets0 = frame_targets(pt.root().frame, rt.model);
  auto lb = loss::segm_loss(out0.class_logits, out0.mask_logits, targets0, rt.weights);

  PointLoss pl;
  pl.total = lb.total;
  if (action_ce.defined() && tc.action_loss_weight > 0)
    pl.total = ag::add(pl.total, ag::mul_scalar(action_ce, tc.action_loss_weight));
  if (tc.aux_weight > 0 && rt.adapt.policy != Policy::SingleFrame && images.size() > 1) {
    std::vector<model::SegOutput> outs;
    for (const auto& img : images) outs.push_back(model::forward(theta, rt.model, img));
    auto fo = fusion::fuse(phi, rt.fusion, fusion::embed_frames(phi, rt.fusion, outs));
    auto aux = loss::segm_loss(fo.aux_logits, fo.aux_masks, targets0, rt.weights);
    pl.total = ag::add(pl.total, ag::mul_scalar(aux.total, tc.aux_weight));
  }
  return pl;
}

}  // namespace

OuterStepStats outer_step(ParamSet& theta, ParamSet& phi, Adam& opt, const Runtime& rt,
                          const TrainConfig& tc, const env::Dataset& ds,
                          const std::vector<int>& point_indices, double epoch_frac, Rng& rng) {
  if (point_indices.empty()) throw std::runtime_error("outer_step: empty batch");
  const auto mask = VariantMask::for_variant(rt.adapt.variant);
  auto widx = trainable_index(theta, phi, mask);

  const double epsilon =
      rt.adapt.epsilon_start + (rt.adapt.epsilon_end - rt.adapt.epsilon_start) * epoch_frac;

  std::vector<std::vector<double>> acc(widx.wrt.size());
  for (std::size_t i = 0; i < widx.wrt.size(); ++i)
    acc[i].assign(widx.wrt[i].data().size(), 0.0);

  OuterStepStats stats;
  const double inv = 1.0 / static_cast<double>(point_indices.size());
  for (int idx : point_indices) {
    auto pl = point_loss(theta, phi, rt, tc, ds.points[static_cast<std::size_t>(idx)], epsilon, rng);
    const double val = pl.total.item();
    if (!std::isfinite(val))
      throw std::runtime_error("outer_step: non-finite loss on point " +
                               std::to_string(ds.points[static_cast<std::size_t>(idx)].point_id));
    stats.loss += val * inv;
    auto grads = ag::backward(ag::mul_scalar(pl.total, inv), widx.wrt);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto& g = grads[i].data();
      for (std::size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
    }
  }

  // hand the accumulated batch gradients to Adam, aligned with the entries
  std::vector<ag::Tensor> g_theta(theta.entries().size());
  std::vector<ag::Tensor> g_phi(phi.entries().size());
  std::size_t k = 0;
  double sq = 0;
  for (std::size_t slot : widx.theta_slots) {
    for (double x : acc[k]) sq += x * x;
    g_theta[slot] = ag::Tensor::from(theta.entries()[slot].t.shape(), std::move(acc[k]));
    ++k;
  }
  for (std::size_t slot : widx.phi_slots) {
    for (double x : acc[k]) sq += x * x;
    g_phi[slot] = ag::Tensor::from(phi.entries()[slot].t.shape(), std::move(acc[k]));
    ++k;
  }
  stats.grad_norm = std::sqrt(sq);
  opt.step(theta, phi, g_theta, g_phi, tc.lr_model, tc.lr_fusion, tc.clip_norm, mask);
  return stats;
}

EvalResult evaluate(const ParamSet& theta, const ParamSet& phi, const Runtime& rt,
                    const env::Dataset& ds, const std::string& split, std::uint64_t seed) {
  EvalResult ev;
  loss::ConfusionMatrix cm(rt.model.classes);
  Rng root(seed);
  int n = 0;
  double miou_sum = 0;
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    const auto& pt = ds.points[i];
    if (pt.split != split) continue;
    auto res = infer(theta, phi, rt, pt, root.fork(static_cast<std::uint64_t>(pt.point_id) + 1));
    cm.add(res.map, pt.root().frame.mask);
    miou_sum += res.report.miou;
    ev.per_point.push_back(std::move(res));
    ++n;
  }
  if (n == 0) throw std::runtime_error("evaluate: no points in split '" + split + "'");
  ev.global = cm.report();
  ev.per_image_miou = miou_sum / n;
  return ev;
}

void save_run_checkpoint(const std::string& path, const ParamSet& theta, const ParamSet& phi,
                         const Adam& opt, const std::map<std::string, std::string>& meta) {
  nn::Checkpoint ck;
  ck.meta = meta;
  ck.meta["opt_t"] = std::to_string(opt.t);
  ck.sets["model"] = theta.clone(true);
  ck.sets["fusion"] = phi.clone(true);

  ParamSet om, ov;
  std::size_t slot = 0;
  for (const auto* set : {&theta, &phi}) {
    for (const auto& e : set->entries()) {
      if (slot < opt.m.size()) {
        om.add((set == &theta ? "model/" : "fusion/") + e.group, e.name,
               ag::Tensor::from(e.t.shape(), opt.m[slot]));
        ov.add((set == &theta ? "model/" : "fusion/") + e.group, e.name,
               ag::Tensor::from(e.t.shape(), opt.v[slot]));
      }
      ++slot;
    }
  }
  ck.sets["opt_m"] = std::move(om);
  ck.sets["opt_v"] = std::move(ov);
  ck.save(path);
}

LoadedRun load_run_checkpoint(const std::string& path) {
  auto ck = nn::Checkpoint::load(path);
  LoadedRun run;
  run.meta = ck.meta;
  run.theta = std::move(ck.sets.at("model"));
  run.phi = std::move(ck.sets.at("fusion"));
  run.opt.t = ck.meta.count("opt_t") ? std::stoi(ck.meta.at("opt_t")) : 0;
  if (ck.sets.count("opt_m")) {
    for (const auto& e : ck.sets.at("opt_m").entries()) run.opt.m.push_back(e.t.data());
    for (const auto& e : ck.sets.at("opt_v").entries()) run.opt.v.push_back(e.t.data());
  }
  return run;
}

TrainResult train(const env::Dataset& ds, Runtime rt, const TrainConfig& tc,
                  const std::string& out_dir) {
  namespace fs = std::filesystem;
  rt.finalize();
  fs::create_directories(out_dir);

  std::vector<int> train_idx;
  for (std::size_t i = 0; i < ds.points.size(); ++i)
    if (ds.points[i].split == "train") train_idx.push_back(static_cast<int>(i));
  if (train_idx.empty()) throw std::runtime_error("train: dataset has no train split");

  ParamSet theta = model::init_params(rt.model, tc.seed);
  ParamSet phi = fusion::init_fusion(rt.fusion, tc.seed ^ 0x9e3779b9ULL);
  const auto mask = VariantMask::for_variant(rt.adapt.variant);
  for (auto& e : theta.entries())
    if (!mask.is_trainable(e.group)) e.t.set_requires_grad(false);

  Adam opt;
  opt.init(theta, phi);

  TrainResult result;
  result.checkpoint_path = (fs::path(out_dir) / "best.ckpt").string();
  double best_fwiou = -1.0;

  std::ofstream log_file(fs::path(out_dir) / "train_log.txt");
  log_file << "# variant " << variant_name(rt.adapt.variant) << "\n";
  log_file << "# policy " << policy_name(rt.adapt.policy) << "\n";
  log_file << "# frame_steps " << rt.adapt.frame_steps << "\n";
  log_file << "# meta_order " << rt.adapt.meta_order << "\n";
  log_file << "# frozen";
  for (const auto& g : mask.frozen) log_file << " " << g;
  log_file << "\n# adaptive";
  for (const auto& g : mask.adaptive) log_file << " " << g;
  log_file << "\n";

  Rng seed_root(tc.seed);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng erng = seed_root.fork(static_cast<std::uint64_t>(epoch) + 0xE0);
    std::vector<int> order = train_idx;
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(erng.uniform_int(0, i))]);

    const double epoch_frac = tc.epochs > 1 ? static_cast<double>(epoch) / (tc.epochs - 1) : 1.0;
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tc.batch)) {
      std::vector<int> chunk(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(
                                                 std::min(order.size(), at + static_cast<std::size_t>(tc.batch))));
      auto stats = outer_step(theta, phi, opt, rt, tc, ds, chunk, epoch_frac, erng);
      loss_sum += stats.loss;
      ++batches;
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_loss = loss_sum / std::max(1, batches);
    es.val = evaluate(theta, phi, rt, ds, "val", tc.seed ^ 0x5EEDULL).global;
    result.log.push_back(es);

    char line[256];
    std::snprintf(line, sizeof(line), "%d\t%.6f\t%.4f\t%.4f\t%.4f\t%.4f", es.epoch, es.train_loss,
                  es.val.miou, es.val.fwiou, es.val.macc, es.val.pacc);
    log_file << line << "\n";
    log_file.flush();

    if (es.val.fwiou > best_fwiou) {
      best_fwiou = es.val.fwiou;
      result.best_epoch = epoch;
      std::map<std::string, std::string> meta;
      meta["epoch"] = std::to_string(epoch);
      meta["val_fwiou"] = std::to_string(es.val.fwiou);
      meta["variant"] = variant_name(rt.adapt.variant);
      meta["policy"] = policy_name(rt.adapt.policy);
      save_run_checkpoint(result.checkpoint_path, theta, phi, opt, meta);
    }
  }
  return result;
}

}  // namespace adaseg::adapt
