#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "adaseg/dataset.hpp"
#include "adaseg/envsim.hpp"

namespace env = adaseg::env;
using env::Action;
using env::AgentPose;
using env::Vec3;
namespace fs = std::filesystem;

namespace {

bool frames_equal(const env::Frame& a, const env::Frame& b) {
  return a.width == b.width && a.height == b.height && a.rgb == b.rgb && a.mask == b.mask;
}

bool poses_equal(const AgentPose& a, const AgentPose& b) {
  return a.yaw_deg == b.yaw_deg && a.pitch_deg == b.pitch_deg && a.position.x == b.position.x &&
         a.position.y == b.position.y && a.position.z == b.position.z;
}

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// independent first-hit oracle for axis-aligned boxes and spheres, written
// against the plain geometric definitions
struct OracleHit {
  double t = 1e300;
  int label = env::kUnlabeled;
};

OracleHit oracle_cast(const env::SceneSpec& s, Vec3 o, Vec3 d) {
  OracleHit best;
  for (const auto& ob : s.objects) {
    if (ob.shape == env::Primitive::Sphere) {
      // geometric form: project center on ray
      const Vec3 oc = ob.center - o;
      const double tc = dot(oc, d);
      const double d2 = dot(oc, oc) - tc * tc;
      const double r2 = ob.size.x * ob.size.x;
      if (d2 > r2) continue;
      const double dt = std::sqrt(r2 - d2);
      for (double t : {tc - dt, tc + dt}) {
        if (t > 1e-9 && t < best.t) {
          best.t = t;
          best.label = ob.class_id;
          break;
        }
      }
    } else if (ob.shape == env::Primitive::Box && ob.yaw_deg == 0.0) {
      // test each of the six face planes for a hit within the face rectangle
      const double lo[3] = {ob.center.x - ob.size.x, ob.center.y - ob.size.y, ob.center.z - ob.size.z};
      const double hi[3] = {ob.center.x + ob.size.x, ob.center.y + ob.size.y, ob.center.z + ob.size.z};
      const double ov[3] = {o.x, o.y, o.z}, dv[3] = {d.x, d.y, d.z};
      for (int ax = 0; ax < 3; ++ax) {
        for (double plane : {lo[ax], hi[ax]}) {
          if (dv[ax] == 0) continue;
          const double t = (plane - ov[ax]) / dv[ax];
          if (t <= 1e-9 || t >= best.t) continue;
          bool inside = true;
          for (int other = 0; other < 3; ++other) {
            if (other == ax) continue;
            const double p = ov[other] + t * dv[other];
            if (p < lo[other] - 1e-12 || p > hi[other] + 1e-12) inside = false;
          }
          if (inside) {
            best.t = t;
            best.label = ob.class_id;
          }
        }
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("pose algebra examples") {
  env::StepConfig step;
  AgentPose p;  // origin, yaw 0 (facing +x), pitch 0

  CHECK(env::apply(Action::TurnLeft, p, step).yaw_deg == 30.0);
  CHECK(env::apply(Action::TurnRight, p, step).yaw_deg == 330.0);
  CHECK(env::apply(Action::LookUp, p, step).pitch_deg == 30.0);

  auto back = env::apply(Action::MoveBackward, p, step);
  CHECK(back.position.x == doctest::Approx(-0.25));
  CHECK(back.position.y == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(back.position.z == doctest::Approx(0.0));

  // inverses away from clamps
  auto lr = env::apply(Action::TurnRight, env::apply(Action::TurnLeft, p, step), step);
  CHECK(poses_equal(lr, p));
  auto ud = env::apply(Action::LookDown, env::apply(Action::LookUp, p, step), step);
  CHECK(poses_equal(ud, p));

  // 12 lefts return to the same yaw
  AgentPose q = p;
  for (int i = 0; i < 12; ++i) q = env::apply(Action::TurnLeft, q, step);
  CHECK(q.yaw_deg == p.yaw_deg);

  // pitch clamps at +-60
  AgentPose high = p;
  for (int i = 0; i < 5; ++i) high = env::apply(Action::LookUp, high, step);
  CHECK(high.pitch_deg == 60.0);
  for (int i = 0; i < 9; ++i) high = env::apply(Action::LookDown, high, step);
  CHECK(high.pitch_deg == -60.0);
}

TEST_CASE("action names round-trip") {
  for (Action a : env::kAllActions) {
    auto parsed = env::parse_action(env::action_name(a));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == a);
  }
  CHECK_FALSE(env::parse_action("sprint").has_value());
}

TEST_CASE("scene generation is deterministic") {
  env::EnvConfig cfg;
  auto a = env::generate_scene(1234, cfg);
  auto b = env::generate_scene(1234, cfg);
  REQUIRE(a.scene.objects.size() == b.scene.objects.size());
  CHECK(poses_equal(a.scene.root, b.scene.root));
  for (std::size_t i = 0; i < a.scene.objects.size(); ++i) {
    const auto& x = a.scene.objects[i];
    const auto& y = b.scene.objects[i];
    CHECK(x.class_id == y.class_id);
    CHECK(x.shape == y.shape);
    CHECK(x.center.x == y.center.x);
    CHECK(x.size.x == y.size.x);
    CHECK(x.yaw_deg == y.yaw_deg);
    CHECK(x.albedo.x == y.albedo.x);
  }
  auto fa = env::render(a.scene, a.scene.root, cfg.camera);
  auto fb = env::render(b.scene, b.scene.root, cfg.camera);
  CHECK(frames_equal(fa, fb));
}

TEST_CASE("forced object count") {
  env::EnvConfig cfg;
  cfg.objects_min = cfg.objects_max = 5;
  auto g = env::generate_scene(77, cfg);
  CHECK(g.scene.objects.size() == 5);
}

TEST_CASE("seed sweep: every scene shows at least 3 classes from the root") {
  env::EnvConfig cfg;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto g = env::generate_scene(seed, cfg);
    auto f = env::render(g.scene, g.scene.root, cfg.camera);
    // per-pixel label counting oracle
    std::vector<char> seen(static_cast<std::size_t>(cfg.class_count), 0);
    int distinct = 0;
    for (int m : f.mask)
      if (m != env::kUnlabeled && !seen[static_cast<std::size_t>(m)]) {
        seen[static_cast<std::size_t>(m)] = 1;
        ++distinct;
      }
    CHECK(distinct >= cfg.min_visible_classes);
  }
}

TEST_CASE("single panel filling the view masks every pixel") {
  env::SceneSpec s;
  s.seed = 0;
  s.class_count = 4;
  s.room_min = {-6, -6, 0};
  s.room_max = {6, 6, 4};
  for (auto& w : s.wall_albedo) w = {0.4, 0.4, 0.4};
  env::SceneObject panel;
  panel.class_id = 2;
  panel.shape = env::Primitive::Panel;
  panel.center = {2.0, 0.0, 1.0};
  panel.size = {5.0, 0.02, 1.9};  // wide along local x, thin local y
  panel.yaw_deg = 90.0;           // local x -> world y, facing the camera
  panel.albedo = {0.2, 0.7, 0.3};
  s.objects.push_back(panel);
  s.root = {{0, 0, 1.0}, 0.0, 0.0};

  env::CameraConfig cam;
  auto f = env::render(s, s.root, cam);
  for (int m : f.mask) CHECK(m == 2);
}

TEST_CASE("turn left then right re-renders bit-identically") {
  env::EnvConfig cfg;
  auto g = env::generate_scene(5, cfg);
  auto f0 = env::render(g.scene, g.scene.root, cfg.camera);
  AgentPose p = env::apply(Action::TurnRight, env::apply(Action::TurnLeft, g.scene.root, cfg.step), cfg.step);
  auto f1 = env::render(g.scene, p, cfg.camera);
  CHECK(frames_equal(f0, f1));
}

TEST_CASE("mask agrees with an independent intersection oracle") {
  // axis-aligned boxes and spheres only, so the oracle stays exact
  env::SceneSpec s;
  s.seed = 0;
  s.class_count = 6;
  s.room_min = {-5, -5, 0};
  s.room_max = {5, 5, 3};
  for (auto& w : s.wall_albedo) w = {0.35, 0.35, 0.35};
  adaseg::Rng rng(99);
  for (int i = 0; i < 12; ++i) {
    env::SceneObject ob;
    ob.class_id = i % 6;
    ob.albedo = {0.5, 0.5, 0.5};
    if (i % 2 == 0) {
      ob.shape = env::Primitive::Sphere;
      const double r = rng.uniform(0.2, 0.6);
      ob.size = {r, r, r};
      ob.center = {rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(r, 2.0)};
    } else {
      ob.shape = env::Primitive::Box;
      ob.size = {rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.8)};
      ob.yaw_deg = 0.0;
      ob.center = {rng.uniform(-4, 4), rng.uniform(-4, 4), ob.size.z};
    }
    s.objects.push_back(ob);
  }
  s.root = {{0, 0, 0.9}, 35.0, -5.0};

  env::CameraConfig cam;
  auto f = env::render(s, s.root, cam);

  // rebuild each pixel ray exactly as the renderer defines it
  const Vec3 fwd = env::view_dir(s.root);
  const Vec3 right = env::normalize(env::cross(fwd, {0, 0, 1}));
  const Vec3 up = env::cross(right, fwd);
  const double half_w = std::tan(cam.hfov_deg / 2.0 * 3.14159265358979323846 / 180.0);
  const double half_h = half_w * cam.height / cam.width;
  int disagreements = 0;
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      const double nx = (2.0 * (px + 0.5) / cam.width - 1.0) * half_w;
      const double ny = (1.0 - 2.0 * (py + 0.5) / cam.height) * half_h;
      const Vec3 dir = env::normalize(fwd + right * nx + up * ny);
      OracleHit oh = oracle_cast(s, s.root.position, dir);
      const int got = f.mask[static_cast<std::size_t>(py) * cam.width + px];
      // the oracle has no room, so unlabeled pixels are "no object hit"
      const int expect = oh.label;
      if (expect != got) ++disagreements;
    }
  CHECK(disagreements == 0);

  // histogram equality follows
  std::vector<int> hist_render(7, 0), hist_oracle(7, 0);
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      const double nx = (2.0 * (px + 0.5) / cam.width - 1.0) * half_w;
      const double ny = (1.0 - 2.0 * (py + 0.5) / cam.height) * half_h;
      const Vec3 dir = env::normalize(fwd + right * nx + up * ny);
      const int got = f.mask[static_cast<std::size_t>(py) * cam.width + px];
      hist_render[got == env::kUnlabeled ? 6 : static_cast<std::size_t>(got)]++;
      OracleHit oh = oracle_cast(s, s.root.position, dir);
      hist_oracle[oh.label == env::kUnlabeled ? 6 : static_cast<std::size_t>(oh.label)]++;
    }
  CHECK(hist_render == hist_oracle);
}

TEST_CASE("render is invariant to object list order") {
  env::EnvConfig cfg;
  auto g = env::generate_scene(21, cfg);
  auto f0 = env::render(g.scene, g.scene.root, cfg.camera);
  env::SceneSpec reversed = g.scene;
  std::reverse(reversed.objects.begin(), reversed.objects.end());
  auto f1 = env::render(reversed, reversed.root, cfg.camera);
  CHECK(frames_equal(f0, f1));
}

TEST_CASE("build_point tree shape") {
  env::EnvConfig cfg;
  cfg.camera.width = cfg.camera.height = 16;
  auto g = env::generate_scene(3, cfg);

  auto p1 = env::build_point(g.scene, g.scene.root, 1, cfg.camera, cfg.step);
  CHECK(p1.nodes.size() == 6);

  auto p2 = env::build_point(g.scene, g.scene.root, 2, cfg.camera, cfg.step);
  CHECK(p2.nodes.size() == 31);

  for (std::size_t i = 1; i < p2.nodes.size(); ++i) {
    const auto& nd = p2.nodes[i];
    REQUIRE(nd.action.has_value());
    const auto& parent = p2.nodes[static_cast<std::size_t>(nd.parent)];
    CHECK(poses_equal(nd.pose, env::apply(*nd.action, parent.pose, cfg.step)));
  }
  // child lookup follows the 5-ary heap layout
  CHECK(p2.child_id(0, Action::TurnLeft) == 1);
  CHECK(p2.child_id(0, Action::MoveBackward) == 5);
  CHECK(p2.child_id(1, Action::TurnLeft) == 6);
  CHECK_THROWS_AS(p2.child_id(6, Action::TurnLeft), std::runtime_error);
}

TEST_CASE("dataset round-trip and validation") {
  env::EnvConfig cfg;
  cfg.camera.width = cfg.camera.height = 24;
  env::Dataset ds;
  for (int i = 0; i < 3; ++i) {
    auto g = env::generate_scene(static_cast<std::uint64_t>(100 + i), cfg);
    auto pt = env::build_point(g.scene, g.scene.root, 1, cfg.camera, cfg.step);
    pt.point_id = i;
    pt.split = i < 2 ? "train" : "val";
    ds.points.push_back(std::move(pt));
  }

  const fs::path dir = temp_dir("adaseg_ds_roundtrip");
  env::write_dataset(ds, dir.string());
  CHECK(env::validate_dataset(dir.string(), cfg.step) == 18);

  auto back = env::read_dataset(dir.string());
  REQUIRE(back.points.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& a = ds.points[i];
    const auto& b = back.points[i];
    CHECK(a.point_id == b.point_id);
    CHECK(a.split == b.split);
    CHECK(a.scene_seed == b.scene_seed);
    REQUIRE(a.nodes.size() == b.nodes.size());
    for (std::size_t n = 0; n < a.nodes.size(); ++n) {
      CHECK(frames_equal(a.nodes[n].frame, b.nodes[n].frame));
      CHECK(poses_equal(a.nodes[n].pose, b.nodes[n].pose));
      CHECK(a.nodes[n].parent == b.nodes[n].parent);
    }
  }

  // frame consistency: re-render from the stored pose and scene seed
  auto g0 = env::generate_scene(back.points[0].scene_seed, cfg);
  for (const auto& nd : back.points[0].nodes) {
    auto re = env::render(g0.scene, nd.pose, cfg.camera);
    CHECK(frames_equal(re, nd.frame));
  }

  // corrupt a pose: validation must name the point
  {
    std::ifstream in(dir / "manifest.txt");
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto pos = all.find("turn_left");
    REQUIRE(pos != std::string::npos);
    // manifest field after action is yaw; replace its first digit
    auto yaw_pos = all.find(' ', pos) + 1;
    all[yaw_pos] = all[yaw_pos] == '9' ? '8' : '9';
    std::ofstream out(dir / "manifest.txt");
    out << all;
  }
  CHECK_THROWS_WITH_AS(env::validate_dataset(dir.string(), cfg.step),
                       doctest::Contains("apply"), std::runtime_error);
}

TEST_CASE("dataset errors name the offending file") {
  env::EnvConfig cfg;
  cfg.camera.width = cfg.camera.height = 16;
  auto g = env::generate_scene(55, cfg);
  env::Dataset ds;
  auto pt = env::build_point(g.scene, g.scene.root, 1, cfg.camera, cfg.step);
  pt.point_id = 0;
  pt.split = "train";
  ds.points.push_back(std::move(pt));
  const fs::path dir = temp_dir("adaseg_ds_errors");
  env::write_dataset(ds, dir.string());

  fs::remove(dir / "images" / "0_3.ppm");
  CHECK_THROWS_WITH_AS(env::read_dataset(dir.string()), doctest::Contains("0_3.ppm"),
                       std::runtime_error);
}

TEST_CASE("occlusion mode plants a single revealing action") {
  env::EnvConfig cfg;
  cfg.occlusion_mode = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = env::generate_scene(seed, cfg);
    REQUIRE(g.reveal_action.has_value());
    REQUIRE(g.hidden_class == cfg.class_count - 1);

    auto count_hidden = [&](const AgentPose& p) {
      auto f = env::render(g.scene, p, cfg.camera);
      int n = 0;
      for (int m : f.mask) n += (m == g.hidden_class);
      return n;
    };
    const int sliver = count_hidden(g.scene.root);
    CHECK(sliver > 0);
    const int revealed = count_hidden(env::apply(*g.reveal_action, g.scene.root, cfg.step));
    CHECK(revealed >= 3 * sliver);
    for (Action a : env::kAllActions) {
      if (a == *g.reveal_action) continue;
      CHECK(count_hidden(env::apply(a, g.scene.root, cfg.step)) < 2 * sliver);
    }
  }
}

TEST_CASE("full-scale split generation completes and validates") {
  // full-scale point counts at reduced resolution to keep the test quick
  env::EnvConfig cfg;
  cfg.camera.width = cfg.camera.height = 32;
  cfg.min_visible_classes = 2;
  env::Dataset ds;
  const int n_train = 1160, n_val = 144;
  ds.points.resize(n_train + n_val);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n_train + n_val; ++i) {
    const std::uint64_t scene_seed = adaseg::Rng(31).fork(static_cast<std::uint64_t>(i)).next_u64();
    auto g = env::generate_scene(scene_seed, cfg);
    auto pt = env::build_point(g.scene, g.scene.root, 1, cfg.camera, cfg.step);
    pt.point_id = i;
    pt.scene_seed = scene_seed;
    pt.split = i < n_train ? "train" : "val";
    ds.points[static_cast<std::size_t>(i)] = std::move(pt);
  }
  const fs::path dir = temp_dir("adaseg_ds_fullscale");
  env::write_dataset(ds, dir.string());
  CHECK(env::validate_dataset(dir.string(), cfg.step) == (n_train + n_val) * 6);
  int train_count = 0, val_count = 0;
  auto back = env::read_dataset(dir.string());
  for (const auto& pt : back.points) (pt.split == "train" ? train_count : val_count)++;
  CHECK(train_count == 1160);
  CHECK(val_count == 144);
  fs::remove_all(dir);
}
