#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "adaseg/adapt.hpp"
#include "adaseg/ops.hpp"
#include "gradcheck.hpp"

using adaseg::Rng;
using adaseg::ag::Tensor;
namespace ag = adaseg::ag;
namespace ad = adaseg::adapt;
namespace env = adaseg::env;
namespace fus = adaseg::fusion;
namespace model = adaseg::model;
namespace fs = std::filesystem;

namespace {

ad::Runtime mini_runtime(ad::Policy policy = ad::Policy::Random, double alpha = 1e-2) {
  ad::Runtime rt;
  rt.model.queries = 4;
  rt.model.classes = 4;
  rt.model.width = 16;
  rt.model.heads = 2;
  rt.model.stages = 1;
  rt.model.image_size = 16;
  rt.fusion.width = 16;
  rt.fusion.layers = 1;
  rt.fusion.heads = 2;
  rt.fusion.latents = 4;
  rt.fusion.embedder = fus::EmbedderVariant::Vanilla;
  rt.adapt.policy = policy;
  rt.adapt.alpha = alpha;
  rt.finalize();
  return rt;
}

env::EnvConfig mini_env(const ad::Runtime& rt) {
  env::EnvConfig cfg;
  cfg.camera.width = cfg.camera.height = rt.model.image_size;
  cfg.class_count = rt.model.classes;
  cfg.min_visible_classes = 2;
  return cfg;
}

env::Dataset mini_dataset(const ad::Runtime& rt, int n_train, int n_val, int depth = 1,
                          std::uint64_t seed = 500) {
  auto ecfg = mini_env(rt);
  env::Dataset ds;
  for (int i = 0; i < n_train + n_val; ++i) {
    auto g = env::generate_scene(seed + static_cast<std::uint64_t>(i), ecfg);
    auto pt = env::build_point(g.scene, g.scene.root, depth, ecfg.camera, ecfg.step);
    pt.point_id = i;
    pt.split = i < n_train ? "train" : "val";
    ds.points.push_back(std::move(pt));
  }
  return ds;
}

std::vector<Tensor> point_images(const env::ActionTreePoint& pt, std::vector<int> ids) {
  std::vector<Tensor> out;
  for (int id : ids) out.push_back(model::image_to_tensor(pt.nodes[static_cast<std::size_t>(id)].frame));
  return out;
}

}  // namespace

TEST_CASE("variant masks match the model-part table") {
  auto full = ad::VariantMask::for_variant(ad::Variant::Full);
  for (const auto& g : model::model_groups()) {
    CHECK(full.is_trainable(g));
    CHECK(full.is_adaptive(g));
  }

  auto small = ad::VariantMask::for_variant(ad::Variant::Small);
  for (const auto& g : model::model_groups()) CHECK(small.is_trainable(g));
  CHECK_FALSE(small.is_adaptive(model::kBackbone));
  CHECK_FALSE(small.is_adaptive(model::kTaskMlp));
  CHECK(small.is_adaptive(model::kPixelDecoder));
  CHECK(small.is_adaptive(model::kTransformerBlock));
  CHECK(small.is_adaptive(model::kMultistageDecoder));

  auto tiny = ad::VariantMask::for_variant(ad::Variant::Tiny);
  CHECK_FALSE(tiny.is_trainable(model::kBackbone));
  CHECK_FALSE(tiny.is_trainable(model::kPixelDecoder));
  CHECK_FALSE(tiny.is_trainable(model::kTaskMlp));
  CHECK(tiny.is_trainable(model::kTransformerBlock));
  CHECK_FALSE(tiny.is_adaptive(model::kBackbone));
  CHECK(tiny.is_adaptive(model::kMultistageDecoder));
}

TEST_CASE("inner step: zero alpha and constant loss leave parameters bit-exact") {
  auto rt = mini_runtime();
  auto theta = model::init_params(rt.model, 1);
  auto phi = fus::init_fusion(rt.fusion, 2);
  auto ds = mini_dataset(rt, 1, 0);
  auto images = point_images(ds.points[0], {0, 1});

  {
    auto rt0 = rt;
    rt0.adapt.alpha = 0.0;
    auto adapted = ad::inner_adapt(theta, phi, rt0, images, false);
    for (std::size_t i = 0; i < theta.entries().size(); ++i)
      CHECK(adapted.entries()[i].t.impl() == theta.entries()[i].t.impl());
  }

  {
    auto phi0 = phi.clone(true);
    fus::zero_loss_head(phi0);
    double ll = 0;
    auto adapted = ad::inner_adapt(theta, phi0, rt, images, false, &ll);
    CHECK(ll == doctest::Approx(std::log(2.0)));
    for (std::size_t i = 0; i < theta.entries().size(); ++i)
      CHECK(adapted.entries()[i].t.data() == theta.entries()[i].t.data());
  }
}

TEST_CASE("inner step touches exactly the adaptive groups") {
  auto rt = mini_runtime();
  rt.adapt.variant = ad::Variant::Tiny;
  auto theta = model::init_params(rt.model, 3);
  auto phi = fus::init_fusion(rt.fusion, 4);
  auto ds = mini_dataset(rt, 1, 0, 1, 600);
  auto images = point_images(ds.points[0], {0, 2});

  auto adapted = ad::inner_adapt(theta, phi, rt, images, false);
  auto mask = ad::VariantMask::for_variant(ad::Variant::Tiny);
  std::map<std::string, bool> group_changed;
  for (std::size_t i = 0; i < theta.entries().size(); ++i) {
    const auto& e = theta.entries()[i];
    const auto& a = adapted.entries()[i];
    if (!mask.is_adaptive(e.group)) {
      // non-adaptive entries pass through as the same tensor
      CHECK(a.t.impl() == e.t.impl());
    } else {
      group_changed[e.group] |= (a.t.data() != e.t.data());
    }
  }
  for (const auto& g : mask.adaptive) {
    INFO("adaptive group ", g);
    CHECK(group_changed[g]);
  }
}

TEST_CASE("infer: alpha = 0 and adaptation-off are bit-identical to the baseline") {
  auto rt = mini_runtime();
  auto theta = model::init_params(rt.model, 5);
  auto phi = fus::init_fusion(rt.fusion, 6);
  auto ds = mini_dataset(rt, 1, 0, 1, 700);
  const auto& pt = ds.points[0];

  // plain forward baseline
  ag::GradGuard off(false);
  auto out0 = model::forward(theta, rt.model, model::image_to_tensor(pt.root().frame));
  auto base_map = model::semantic_map(out0, rt.model);

  auto rt_alpha0 = rt;
  rt_alpha0.adapt.alpha = 0.0;
  auto r1 = ad::infer(theta, phi, rt_alpha0, pt, Rng(9));
  CHECK(r1.map == base_map);
  CHECK_FALSE(r1.adapted);

  auto rt_off = rt;
  rt_off.adapt.adapt_on_inference = false;
  auto r2 = ad::infer(theta, phi, rt_off, pt, Rng(9));
  CHECK(r2.map == base_map);

  auto rt_single = rt;
  rt_single.adapt.policy = ad::Policy::SingleFrame;
  rt_single.finalize();
  auto r3 = ad::infer(theta, phi, rt_single, pt, Rng(9));
  CHECK(r3.map == base_map);
  CHECK(r3.node_path == std::vector<int>{0});
  CHECK(r3.actions.empty());

  // with adaptation on and generic phi the map may change, but theta must not
  const auto before = theta.checksum();
  auto r4 = ad::infer(theta, phi, rt, pt, Rng(9));
  CHECK(theta.checksum() == before);
  CHECK(r4.adapted);
}

TEST_CASE("infer: consecutive points do not leak state") {
  auto rt = mini_runtime();
  auto theta = model::init_params(rt.model, 7);
  auto phi = fus::init_fusion(rt.fusion, 8);
  auto ds = mini_dataset(rt, 2, 0, 1, 800);

  auto rt_single = rt;
  rt_single.adapt.policy = ad::Policy::SingleFrame;
  rt_single.finalize();

  // fresh single-frame result on point 1
  auto fresh = ad::infer(theta, phi, rt_single, ds.points[1], Rng(1));
  // adaptation on point 0 first, then the same single-frame inference
  (void)ad::infer(theta, phi, rt, ds.points[0], Rng(2));
  auto after = ad::infer(theta, phi, rt_single, ds.points[1], Rng(1));
  CHECK(fresh.map == after.map);
}

TEST_CASE("policy exhaustion raises") {
  auto rt = mini_runtime();
  rt.adapt.frame_steps = 2;
  rt.finalize();
  auto theta = model::init_params(rt.model, 9);
  auto phi = fus::init_fusion(rt.fusion, 10);
  auto ds = mini_dataset(rt, 1, 0, 1, 900);
  CHECK_THROWS_WITH_AS(ad::infer(theta, phi, rt, ds.points[0], Rng(3)),
                       doctest::Contains("exhaustion"), std::runtime_error);
}

TEST_CASE("random policy is reproducible; dataset size mismatch rejected") {
  auto rt = mini_runtime();
  auto theta = model::init_params(rt.model, 11);
  auto phi = fus::init_fusion(rt.fusion, 12);
  auto ds = mini_dataset(rt, 1, 0, 1, 1000);
  auto a = ad::infer(theta, phi, rt, ds.points[0], Rng(77));
  auto b = ad::infer(theta, phi, rt, ds.points[0], Rng(77));
  CHECK(a.node_path == b.node_path);
  CHECK(a.map == b.map);

  ad::Runtime big = rt;
  big.model.image_size = 32;
  big.finalize();
  auto theta_big = model::init_params(big.model, 13);
  auto phi_big = fus::init_fusion(big.fusion, 13);
  CHECK_THROWS_WITH_AS(ad::infer(theta_big, phi_big, big, ds.points[0], Rng(1)),
                       doctest::Contains("frame size"), std::runtime_error);
}

TEST_CASE("meta order controls the fusion gradient path") {
  auto rt = mini_runtime();
  auto theta = model::init_params(rt.model, 15);
  auto phi = fus::init_fusion(rt.fusion, 16);
  auto ds = mini_dataset(rt, 1, 0, 1, 1100);
  const auto& pt = ds.points[0];
  auto images = point_images(pt, {0, 3});
  auto targets = ad::frame_targets(pt.root().frame, rt.model);

  auto phi_grad_norm = [&](int meta_order) {
    auto rt2 = rt;
    rt2.adapt.meta_order = meta_order;
    auto adapted = ad::inner_adapt(theta, phi, rt2, images, /*create_graph=*/meta_order == 2);
    auto out0 = model::forward(adapted, rt2.model, images[0]);
    auto lb = adaseg::loss::segm_loss(out0.class_logits, out0.mask_logits, targets, rt.weights);
    std::vector<Tensor> wrt;
    for (auto& e : phi.entries()) wrt.push_back(e.t);
    auto grads = ag::backward(lb.total, wrt);
    double n = 0;
    for (const auto& g : grads)
      for (double v : g.data()) n += v * v;
    return std::sqrt(n);
  };

  CHECK(phi_grad_norm(2) > 1e-12);
  CHECK(phi_grad_norm(1) == 0.0);
}

TEST_CASE("outer meta-gradient matches finite differences on a 3-parameter probe") {
  auto rt = mini_runtime();
  rt.adapt.meta_order = 2;
  rt.adapt.alpha = 1e-2;
  auto theta = model::init_params(rt.model, 17);
  auto phi = fus::init_fusion(rt.fusion, 18);
  auto ds = mini_dataset(rt, 1, 0, 1, 1200);
  const auto& pt = ds.points[0];
  auto images = point_images(pt, {0, 4});
  auto targets = ad::frame_targets(pt.root().frame, rt.model);

  auto outer_loss = [&]() {
    auto adapted = ad::inner_adapt(theta, phi, rt, images, /*create_graph=*/true);
    auto out0 = model::forward(adapted, rt.model, images[0]);
    return adaseg::loss::segm_loss(out0.class_logits, out0.mask_logits, targets, rt.weights).total;
  };

  struct Probe {
    const char* group;
    const char* name;
    std::size_t elem;
  };
  const Probe probes[] = {{fus::kLossDecoder, "fc2_b", 0},
                          {fus::kLossDecoder, "fc1_w", 3},
                          {fus::kImageEmbedder, "frame_embed", 5}};

  Tensor loss = outer_loss();
  std::vector<Tensor> wrt;
  for (const auto& p : probes) wrt.push_back(phi.at(p.group, p.name));
  auto grads = ag::backward(loss, wrt);

  const double h = 1e-5;
  for (std::size_t i = 0; i < 3; ++i) {
    auto& data = phi.at(probes[i].group, probes[i].name).leaf_data();
    const double orig = data[probes[i].elem];
    data[probes[i].elem] = orig + h;
    const double fp = outer_loss().item();
    data[probes[i].elem] = orig - h;
    const double fm = outer_loss().item();
    data[probes[i].elem] = orig;
    const double fd = (fp - fm) / (2 * h);
    const double an = grads[i].at(static_cast<std::int64_t>(probes[i].elem));
    INFO("probe ", i, " fd ", fd, " analytic ", an);
    CHECK(gradcheck::rel_err(an, fd) < 1e-3);
  }
}

TEST_CASE("outer step with zero alpha reduces to supervised fine-tuning") {
  auto rt = mini_runtime(ad::Policy::Random, 0.0);
  auto ds = mini_dataset(rt, 4, 0, 1, 1300);
  ad::TrainConfig tc;
  tc.batch = 4;
  tc.lr_model = 1e-3;
  tc.lr_fusion = 1e-3;

  auto run_once = [&](ad::Policy policy) {
    auto rt2 = rt;
    rt2.adapt.policy = policy;
    rt2.finalize();
    auto theta = model::init_params(rt2.model, 21);
    auto phi = fus::init_fusion(rt2.fusion, 22);
    const auto phi_before = phi.checksum();
    ad::Adam opt;
    opt.init(theta, phi);
    Rng rng(5);
    auto stats = ad::outer_step(theta, phi, opt, rt2, tc, ds, {0, 1, 2, 3}, 0.0, rng);
    CHECK(std::isfinite(stats.loss));
    CHECK(phi.checksum() == phi_before);  // no gradient reaches the fusion module
    return theta.checksum();
  };

  // frame choice is irrelevant when alpha = 0: random == single-frame updates
  CHECK(run_once(ad::Policy::Random) == run_once(ad::Policy::SingleFrame));
}

TEST_CASE("gradient clipping bounds the applied update") {
  auto rt = mini_runtime();
  auto theta = model::init_params(rt.model, 23);
  auto phi = fus::init_fusion(rt.fusion, 24);
  ad::Adam opt;
  opt.init(theta, phi);

  // a huge synthetic gradient on one tensor
  std::vector<Tensor> g_theta(theta.entries().size()), g_phi(phi.entries().size());
  g_theta[0] = Tensor::full(theta.entries()[0].t.shape(), 1e9);
  const auto before = theta.entries()[0].t.data();
  opt.step(theta, phi, g_theta, g_phi, 1e-3, 1e-3, 1.0, ad::VariantMask::for_variant(ad::Variant::Full));
  double delta = 0;
  for (std::size_t j = 0; j < before.size(); ++j)
    delta = std::max(delta, std::fabs(theta.entries()[0].t.data()[j] - before[j]));
  // Adam with clipped unit-norm gradient moves each weight at most ~lr
  CHECK(delta < 2e-3);
}

TEST_CASE("training smoke run: logs, checkpoint, determinism") {
  auto rt = mini_runtime(ad::Policy::Random, 1e-2);
  auto ds = mini_dataset(rt, 6, 2, 1, 1400);
  ad::TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 3;
  tc.lr_model = 3e-4;
  tc.lr_fusion = 1e-3;
  tc.seed = 41;

  const auto dir1 = fs::temp_directory_path() / "adaseg_train_smoke1";
  const auto dir2 = fs::temp_directory_path() / "adaseg_train_smoke2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  auto res1 = ad::train(ds, rt, tc, dir1.string());
  REQUIRE(res1.log.size() == 2);
  double min_loss = 1e300;
  for (const auto& es : res1.log) {
    CHECK(std::isfinite(es.train_loss));
    min_loss = std::min(min_loss, es.train_loss);
  }
  CHECK(min_loss <= res1.log[0].train_loss);

  // best-checkpoint selection: max val fwIoU, earliest on ties
  int expect_best = 0;
  double best = -1;
  for (const auto& es : res1.log)
    if (es.val.fwiou > best) {
      best = es.val.fwiou;
      expect_best = es.epoch;
    }
  CHECK(res1.best_epoch == expect_best);

  auto loaded = ad::load_run_checkpoint(res1.checkpoint_path);
  CHECK(loaded.meta.at("epoch") == std::to_string(res1.best_epoch));
  CHECK(loaded.theta.total_params() == model::expected_param_count(rt.model));

  // rerun reproduces the log bit-exactly
  auto res2 = ad::train(ds, rt, tc, dir2.string());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir1 / "train_log.txt") == slurp(dir2 / "train_log.txt"));
  CHECK(slurp(dir1 / "best.ckpt") == slurp(dir2 / "best.ckpt"));

  // the loaded checkpoint evaluates identically to the in-memory result
  auto rt_eval = rt;
  rt_eval.finalize();
  auto ev1 = ad::evaluate(loaded.theta, loaded.phi, rt_eval, ds, "val", 99);
  auto ev2 = ad::evaluate(loaded.theta, loaded.phi, rt_eval, ds, "val", 99);
  CHECK(ev1.global.miou == ev2.global.miou);
  CHECK(ev1.per_point.size() == 2);
}

TEST_CASE("frozen groups never move during training") {
  auto rt = mini_runtime(ad::Policy::Random, 1e-2);
  rt.adapt.variant = ad::Variant::Tiny;
  auto ds = mini_dataset(rt, 4, 1, 1, 1500);
  ad::TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 2;
  tc.lr_model = 1e-3;
  tc.lr_fusion = 1e-3;
  tc.seed = 43;

  const auto dir = fs::temp_directory_path() / "adaseg_train_tiny";
  fs::remove_all(dir);
  auto res = ad::train(ds, rt, tc, dir.string());
  auto loaded = ad::load_run_checkpoint(res.checkpoint_path);

  auto fresh = model::init_params(rt.model, tc.seed);
  for (const char* g : {model::kBackbone, model::kPixelDecoder, model::kTaskMlp}) {
    INFO("frozen group ", g);
    CHECK(loaded.theta.checksum(g) == fresh.checksum(g));
  }
  bool any_moved = false;
  for (const char* g : {model::kTransformerBlock, model::kMultistageDecoder}) {
    if (loaded.theta.checksum(g) != fresh.checksum(g)) any_moved = true;
  }
  CHECK(any_moved);
}

TEST_CASE("frame targets subsample the stored mask") {
  auto rt = mini_runtime();
  env::Frame f;
  f.width = f.height = 16;
  f.rgb.assign(3 * 256, 0);
  f.mask.assign(256, env::kUnlabeled);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x) f.mask[static_cast<std::size_t>(y) * 16 + x] = 2;
  auto ts = ad::frame_targets(f, rt.model);
  REQUIRE(ts.targets.size() == 1);
  CHECK(ts.targets[0].class_id == 2);
  CHECK(ts.h == 4);
  // top half labeled, bottom half unlabeled
  double valid = 0;
  for (double v : ts.valid) valid += v;
  CHECK(valid == 8.0);
}
