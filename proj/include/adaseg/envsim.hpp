#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adaseg/rng.hpp"

// Procedural indoor scenes rendered by a deterministic CPU ray caster over
// analytic primitives, with pixel-perfect semantic masks. Rendering is a pure
// function of (scene, pose, camera); rows are ray-cast in parallel.
namespace adaseg::env {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b);
Vec3 operator-(Vec3 a, Vec3 b);
Vec3 operator*(Vec3 a, double s);
double dot(Vec3 a, Vec3 b);
Vec3 cross(Vec3 a, Vec3 b);
Vec3 normalize(Vec3 a);

enum class Primitive { Box, Cylinder, Sphere, Panel };

struct SceneObject {
  int class_id = 0;
  Primitive shape = Primitive::Box;
  Vec3 center;
  Vec3 size;        // box/panel: half extents; cylinder: (radius, _, half height); sphere: (radius, _, _)
  double yaw_deg = 0;  // rotation about the vertical axis
  Vec3 albedo;
};

struct AgentPose {
  Vec3 position;
  double yaw_deg = 0;    // normalized to [0, 360)
  double pitch_deg = 0;  // clamped to [-60, 60]
};

struct SceneSpec {
  std::uint64_t seed = 0;
  Vec3 room_min, room_max;
  std::vector<SceneObject> objects;
  int class_count = 0;
  std::array<Vec3, 6> wall_albedo;  // -x, +x, -y, +y, floor, ceiling
  Vec3 light_color = {1.0, 1.0, 1.0};  // per-scene illumination tint
  double ambient = 0.45;
  AgentPose root;
};

enum class Action { TurnLeft, TurnRight, LookUp, LookDown, MoveBackward };
inline constexpr std::array<Action, 5> kAllActions = {
    Action::TurnLeft, Action::TurnRight, Action::LookUp, Action::LookDown,
    Action::MoveBackward};

const char* action_name(Action a);
std::optional<Action> parse_action(const std::string& name);

struct CameraConfig {
  int width = 64, height = 64;
  double hfov_deg = 42.0;
};

struct StepConfig {
  double rotation_deg = 30.0;
  double move_step = 0.25;
  double pitch_min = -60.0, pitch_max = 60.0;
};

// Scene generation knobs. `occlusion_mode` plants one extra-class object that
// only one action fully reveals (a sliver shows at a frame-0 edge).
struct EnvConfig {
  double room_extent_min = 5.0, room_extent_max = 8.0;
  double room_height_min = 2.6, room_height_max = 3.4;
  int objects_min = 7, objects_max = 12;
  int class_count = 8;
  double camera_height = 0.88;
  int min_visible_classes = 3;
  int resample_budget = 100;
  bool occlusion_mode = false;
  CameraConfig camera;
  StepConfig step;
};

constexpr int kUnlabeled = 255;

struct Frame {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height
  std::vector<int> mask;          // class id or kUnlabeled
};

Vec3 view_dir(const AgentPose& pose);

AgentPose apply(Action a, const AgentPose& pose, const StepConfig& cfg);

// Deterministic scene; guarantees >= min_visible_classes distinct object
// classes in the root view, resampling the layout up to resample_budget
// times before throwing. In occlusion mode the scene carries the planted
// object's class and the revealing action.
struct GeneratedScene {
  SceneSpec scene;
  std::optional<Action> reveal_action;  // occlusion mode only
  int hidden_class = -1;
};
GeneratedScene generate_scene(std::uint64_t seed, const EnvConfig& cfg);

Frame render(const SceneSpec& scene, const AgentPose& pose, const CameraConfig& cam);

// first-hit query for a single ray; exposed for the test oracles
struct Hit {
  double t = 0;
  int label = kUnlabeled;
};
Hit cast_ray(const SceneSpec& scene, Vec3 origin, Vec3 dir);

}  // namespace adaseg::env
