#include "adaseg/envsim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace adaseg::env {

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Vec3 normalize(Vec3 a) {
  const double n = std::sqrt(dot(a, a));
  return {a.x / n, a.y / n, a.z / n};
}

namespace {
constexpr double kPi = 3.14159265358979323846;
double deg2rad(double d) { return d * kPi / 180.0; }
}  // namespace

const char* action_name(Action a) {
  switch (a) {
    case Action::TurnLeft: return "turn_left";
    case Action::TurnRight: return "turn_right";
    case Action::LookUp: return "look_up";
    case Action::LookDown: return "look_down";
    case Action::MoveBackward: return "move_backward";
  }
  return "?";
}

std::optional<Action> parse_action(const std::string& name) {
  for (Action a : kAllActions)
    if (name == action_name(a)) return a;
  return std::nullopt;
}

Vec3 view_dir(const AgentPose& pose) {
  const double cy = std::cos(deg2rad(pose.yaw_deg)), sy = std::sin(deg2rad(pose.yaw_deg));
  const double cp = std::cos(deg2rad(pose.pitch_deg)), sp = std::sin(deg2rad(pose.pitch_deg));
  return {cp * cy, cp * sy, sp};
}

AgentPose apply(Action a, const AgentPose& pose, const StepConfig& cfg) {
  AgentPose out = pose;
  switch (a) {
    case Action::TurnLeft: out.yaw_deg += cfg.rotation_deg; break;
    case Action::TurnRight: out.yaw_deg -= cfg.rotation_deg; break;
    case Action::LookUp: out.pitch_deg += cfg.rotation_deg; break;
    case Action::LookDown: out.pitch_deg -= cfg.rotation_deg; break;
    case Action::MoveBackward: out.position = out.position - view_dir(pose) * cfg.move_step; break;
  }
  out.yaw_deg = std::fmod(out.yaw_deg, 360.0);
  if (out.yaw_deg < 0) out.yaw_deg += 360.0;
  out.pitch_deg = std::min(cfg.pitch_max, std::max(cfg.pitch_min, out.pitch_deg));
  return out;
}

namespace {

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
  int label = kUnlabeled;
  Vec3 albedo;
};

// exit point of a ray starting inside the room box; labels which wall
void hit_room(const SceneSpec& s, Vec3 o, Vec3 d, RayHit& best) {
  double t_exit = std::numeric_limits<double>::infinity();
  int face = -1;
  const double lo[3] = {s.room_min.x, s.room_min.y, s.room_min.z};
  const double hi[3] = {s.room_max.x, s.room_max.y, s.room_max.z};
  const double ov[3] = {o.x, o.y, o.z};
  const double dv[3] = {d.x, d.y, d.z};
  for (int ax = 0; ax < 3; ++ax) {
    if (dv[ax] == 0.0) continue;
    const double plane = dv[ax] > 0 ? hi[ax] : lo[ax];
    const double t = (plane - ov[ax]) / dv[ax];
    if (t < t_exit) {
      t_exit = t;
      face = ax * 2 + (dv[ax] > 0 ? 1 : 0);  // -x:0 +x:1 -y:2 +y:3 floor:4 ceil:5
    }
  }
  if (face >= 0 && t_exit < best.t && t_exit > 0) {
    best.t = t_exit;
    best.label = kUnlabeled;
    static const Vec3 normals[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    best.normal = normals[face];
    // wall_albedo order: -x, +x, -y, +y, floor, ceiling
    static const int albedo_index[6] = {0, 1, 2, 3, 4, 5};
    best.albedo = s.wall_albedo[static_cast<std::size_t>(albedo_index[face])];
  }
}

// oriented box (also panels); ray transformed into the box frame
void hit_box(const SceneObject& ob, Vec3 o, Vec3 d, RayHit& best) {
  const double c = std::cos(deg2rad(-ob.yaw_deg)), sn = std::sin(deg2rad(-ob.yaw_deg));
  const Vec3 ol = {(o.x - ob.center.x) * c - (o.y - ob.center.y) * sn,
                   (o.x - ob.center.x) * sn + (o.y - ob.center.y) * c, o.z - ob.center.z};
  const Vec3 dl = {d.x * c - d.y * sn, d.x * sn + d.y * c, d.z};
  const double lo[3] = {-ob.size.x, -ob.size.y, -ob.size.z};
  const double hi[3] = {ob.size.x, ob.size.y, ob.size.z};
  const double ov[3] = {ol.x, ol.y, ol.z};
  const double dv[3] = {dl.x, dl.y, dl.z};
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int enter_axis = -1, exit_axis = -1;
  double enter_sign = 0, exit_sign = 0;
  for (int ax = 0; ax < 3; ++ax) {
    if (dv[ax] == 0.0) {
      if (ov[ax] < lo[ax] || ov[ax] > hi[ax]) return;
      continue;
    }
    double ta = (lo[ax] - ov[ax]) / dv[ax];
    double tb = (hi[ax] - ov[ax]) / dv[ax];
    double sign = dv[ax] > 0 ? -1.0 : 1.0;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      enter_axis = ax;
      enter_sign = sign;
    }
    if (tb < t1) {
      t1 = tb;
      exit_axis = ax;
      exit_sign = -sign;
    }
    if (t0 > t1) return;
  }
  // first surface crossing: entry face, or exit face when starting inside
  double t_hit;
  int axis;
  double sign;
  if (enter_axis >= 0 && t0 > 1e-9) {
    t_hit = t0;
    axis = enter_axis;
    sign = enter_sign;
  } else if (exit_axis >= 0 && t1 > 1e-9) {
    t_hit = t1;
    axis = exit_axis;
    sign = exit_sign;
  } else {
    return;
  }
  if (t_hit >= best.t) return;
  Vec3 nl = {0, 0, 0};
  (axis == 0 ? nl.x : axis == 1 ? nl.y : nl.z) = sign;
  // rotate the local normal back to world
  const double cw = std::cos(deg2rad(ob.yaw_deg)), sw = std::sin(deg2rad(ob.yaw_deg));
  best.t = t_hit;
  best.normal = {nl.x * cw - nl.y * sw, nl.x * sw + nl.y * cw, nl.z};
  best.label = ob.class_id;
  best.albedo = ob.albedo;
}

void hit_sphere(const SceneObject& ob, Vec3 o, Vec3 d, RayHit& best) {
  const Vec3 oc = o - ob.center;
  const double r = ob.size.x;
  const double b = dot(oc, d);
  const double cq = dot(oc, oc) - r * r;
  const double disc = b * b - cq;
  if (disc < 0) return;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= 1e-9) t = -b + sq;
  if (t <= 1e-9 || t >= best.t) return;
  best.t = t;
  best.normal = normalize(o + d * t - ob.center);
  best.label = ob.class_id;
  best.albedo = ob.albedo;
}

void hit_cylinder(const SceneObject& ob, Vec3 o, Vec3 d, RayHit& best) {
  const double r = ob.size.x, hh = ob.size.z;
  const double ox = o.x - ob.center.x, oy = o.y - ob.center.y, oz = o.z - ob.center.z;
  // lateral surface
  const double a = d.x * d.x + d.y * d.y;
  if (a > 1e-12) {
    const double b = ox * d.x + oy * d.y;
    const double cq = ox * ox + oy * oy - r * r;
    const double disc = b * b - a * cq;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / a, (-b + sq) / a}) {
        if (t <= 1e-9 || t >= best.t) continue;
        const double z = oz + d.z * t;
        if (z < -hh || z > hh) continue;
        best.t = t;
        best.normal = normalize({ox + d.x * t, oy + d.y * t, 0});
        best.label = ob.class_id;
        best.albedo = ob.albedo;
        break;
      }
    }
  }
  // caps
  if (std::fabs(d.z) > 1e-12) {
    for (double zcap : {-hh, hh}) {
      const double t = (zcap - oz) / d.z;
      if (t <= 1e-9 || t >= best.t) continue;
      const double x = ox + d.x * t, y = oy + d.y * t;
      if (x * x + y * y > r * r) continue;
      best.t = t;
      best.normal = {0, 0, zcap > 0 ? 1.0 : -1.0};
      best.label = ob.class_id;
      best.albedo = ob.albedo;
    }
  }
}

RayHit trace(const SceneSpec& scene, Vec3 o, Vec3 d) {
  RayHit best;
  hit_room(scene, o, d, best);
  for (const auto& ob : scene.objects) {
    switch (ob.shape) {
      case Primitive::Box:
      case Primitive::Panel: hit_box(ob, o, d, best); break;
      case Primitive::Sphere: hit_sphere(ob, o, d, best); break;
      case Primitive::Cylinder: hit_cylinder(ob, o, d, best); break;
    }
  }
  return best;
}

const Vec3 kLightDir = normalize({-0.35, 0.2, -0.91});

std::uint8_t shade_channel(double albedo, double light) {
  const double v = albedo * light;
  const double q = v <= 0 ? 0 : v >= 1 ? 255.0 : v * 255.0;
  return static_cast<std::uint8_t>(q + 0.5);
}

}  // namespace

Hit cast_ray(const SceneSpec& scene, Vec3 origin, Vec3 dir) {
  RayHit h = trace(scene, origin, dir);
  return {h.t, h.label};
}

Frame render(const SceneSpec& scene, const AgentPose& pose, const CameraConfig& cam) {
  Frame f;
  f.width = cam.width;
  f.height = cam.height;
  f.rgb.assign(static_cast<std::size_t>(3) * cam.width * cam.height, 0);
  f.mask.assign(static_cast<std::size_t>(cam.width) * cam.height, kUnlabeled);

  const Vec3 fwd = view_dir(pose);
  const Vec3 up0 = {0, 0, 1};
  const Vec3 right = normalize(cross(fwd, up0));
  const Vec3 cam_up = cross(right, fwd);
  const double half_w = std::tan(deg2rad(cam.hfov_deg / 2.0));
  const double half_h = half_w * static_cast<double>(cam.height) / cam.width;

#pragma omp parallel for schedule(static)
  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      const double ndc_x = (2.0 * (px + 0.5) / cam.width - 1.0) * half_w;
      const double ndc_y = (1.0 - 2.0 * (py + 0.5) / cam.height) * half_h;
      const Vec3 dir = normalize(fwd + right * ndc_x + cam_up * ndc_y);
      const RayHit h = trace(scene, pose.position, dir);
      const std::size_t pi = static_cast<std::size_t>(py) * cam.width + px;
      if (!std::isfinite(h.t)) continue;  // open scene edge: leave black/unlabeled
      f.mask[pi] = h.label;
      const double diffuse = std::max(0.0, dot(h.normal, kLightDir * -1.0));
      const double light = scene.ambient + (1.0 - scene.ambient) * diffuse;
      f.rgb[3 * pi + 0] = shade_channel(h.albedo.x * scene.light_color.x, light);
      f.rgb[3 * pi + 1] = shade_channel(h.albedo.y * scene.light_color.y, light);
      f.rgb[3 * pi + 2] = shade_channel(h.albedo.z * scene.light_color.z, light);
    }
  }
  return f;
}

namespace {

// fixed hue palette keyed by class id, jittered per object
Vec3 class_albedo(int class_id, Rng& rng) {
  static const Vec3 palette[] = {
      {0.85, 0.25, 0.22}, {0.22, 0.62, 0.86}, {0.28, 0.75, 0.34}, {0.92, 0.78, 0.22},
      {0.72, 0.32, 0.82}, {0.95, 0.52, 0.18}, {0.25, 0.80, 0.75}, {0.88, 0.42, 0.62},
      {0.55, 0.45, 0.25}, {0.35, 0.38, 0.85}, {0.65, 0.85, 0.30}, {0.80, 0.60, 0.50},
  };
  constexpr int n = static_cast<int>(sizeof(palette) / sizeof(palette[0]));
  Vec3 base = palette[class_id % n];
  auto jit = [&](double v) { return std::min(1.0, std::max(0.05, v + rng.uniform(-0.06, 0.06))); };
  return {jit(base.x), jit(base.y), jit(base.z)};
}

SceneObject random_object(int class_id, Rng& rng, const SceneSpec& room) {
  SceneObject ob;
  ob.class_id = class_id;
  ob.albedo = class_albedo(class_id, rng);
  const int shape = rng.uniform_int(0, 3);
  const double margin = 0.4;
  auto place = [&](double half_x, double half_y, double z_center) {
    ob.center.x = rng.uniform(room.room_min.x + half_x + margin, room.room_max.x - half_x - margin);
    ob.center.y = rng.uniform(room.room_min.y + half_y + margin, room.room_max.y - half_y - margin);
    ob.center.z = z_center;
  };
  switch (shape) {
    case 0: {  // box
      ob.shape = Primitive::Box;
      ob.size = {rng.uniform(0.25, 0.55), rng.uniform(0.25, 0.55), rng.uniform(0.25, 0.7)};
      ob.yaw_deg = rng.uniform(0.0, 360.0);
      place(std::max(ob.size.x, ob.size.y) * 1.42, std::max(ob.size.x, ob.size.y) * 1.42, ob.size.z);
      break;
    }
    case 1: {  // cylinder
      ob.shape = Primitive::Cylinder;
      const double r = rng.uniform(0.18, 0.42);
      ob.size = {r, r, rng.uniform(0.3, 0.8)};
      place(r, r, ob.size.z);
      break;
    }
    case 2: {  // sphere
      ob.shape = Primitive::Sphere;
      const double r = rng.uniform(0.22, 0.5);
      ob.size = {r, r, r};
      place(r, r, r + rng.uniform(0.0, 0.6));
      break;
    }
    default: {  // panel: thin vertical slab
      ob.shape = Primitive::Panel;
      ob.size = {rng.uniform(0.4, 0.9), 0.02, rng.uniform(0.4, 0.8)};
      ob.yaw_deg = rng.uniform(0.0, 360.0);
      place(1.0, 1.0, ob.size.z + rng.uniform(0.0, 0.8));
      break;
    }
  }
  return ob;
}

int count_visible_classes(const SceneSpec& scene, const CameraConfig& cam) {
  Frame f = render(scene, scene.root, cam);
  std::vector<char> seen(static_cast<std::size_t>(scene.class_count), 0);
  int distinct = 0;
  for (int m : f.mask)
    if (m != kUnlabeled && !seen[static_cast<std::size_t>(m)]) {
      seen[static_cast<std::size_t>(m)] = 1;
      ++distinct;
    }
  return distinct;
}

int count_class_pixels(const Frame& f, int cls) {
  int n = 0;
  for (int m : f.mask) n += (m == cls);
  return n;
}

}  // namespace

GeneratedScene generate_scene(std::uint64_t seed, const EnvConfig& cfg) {
  for (int attempt = 0; attempt < cfg.resample_budget; ++attempt) {
    Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(attempt) + 0x517cc1b7);

    SceneSpec s;
    s.seed = seed;
    s.class_count = cfg.class_count;
    const double ex = rng.uniform(cfg.room_extent_min, cfg.room_extent_max);
    const double ey = rng.uniform(cfg.room_extent_min, cfg.room_extent_max);
    const double h = rng.uniform(cfg.room_height_min, cfg.room_height_max);
    s.room_min = {-ex / 2, -ey / 2, 0};
    s.room_max = {ex / 2, ey / 2, h};
    for (auto& wa : s.wall_albedo) {
      const double g = rng.uniform(0.30, 0.55);
      wa = {g + rng.uniform(-0.04, 0.04), g + rng.uniform(-0.04, 0.04), g + rng.uniform(-0.04, 0.04)};
    }
    // scene-wide illumination: a mild domain shift per-scene adaptation can absorb
    s.light_color = {rng.uniform(0.82, 1.0), rng.uniform(0.82, 1.0), rng.uniform(0.82, 1.0)};
    s.ambient = rng.uniform(0.40, 0.52);

    const int n_objects = rng.uniform_int(cfg.objects_min, cfg.objects_max);
    const int hidden_class = cfg.occlusion_mode ? cfg.class_count - 1 : -1;
    for (int i = 0; i < n_objects; ++i) {
      // in occlusion mode the last class is reserved for the planted object
      const int cls = cfg.occlusion_mode ? rng.uniform_int(0, cfg.class_count - 2)
                                         : rng.uniform_int(0, cfg.class_count - 1);
      s.objects.push_back(random_object(cls, rng, s));
    }

    // keep the camera clear of object interiors (one backward step included)
    for (int tries = 0; tries < 50; ++tries) {
      s.root.position = {rng.uniform(s.room_min.x + 0.6, s.room_max.x - 0.6),
                         rng.uniform(s.room_min.y + 0.6, s.room_max.y - 0.6), cfg.camera_height};
      bool clear = true;
      for (const auto& ob : s.objects) {
        const double bound = std::max({ob.size.x, ob.size.y, ob.size.z}) * 1.5 + 0.35;
        const double dx = ob.center.x - s.root.position.x, dy = ob.center.y - s.root.position.y;
        if (dx * dx + dy * dy < bound * bound) clear = false;
      }
      if (clear) break;
    }
    s.root.yaw_deg = rng.uniform(0.0, 360.0);
    s.root.pitch_deg = 0.0;

    GeneratedScene out;
    out.hidden_class = hidden_class;

    if (cfg.occlusion_mode) {
      // plant the hidden object so a sliver shows at one frame-0 edge and one
      // rotation action centers it
      const int variant = rng.uniform_int(0, 3);
      static const Action reveals[4] = {Action::TurnLeft, Action::TurnRight, Action::LookUp,
                                        Action::LookDown};
      const Action reveal = reveals[variant];
      out.reveal_action = reveal;

      const double dist = rng.uniform(1.6, 2.2);
      const double half_fov = cfg.camera.hfov_deg / 2.0;     // square frames: vfov == hfov
      const double edge_deg = half_fov + rng.uniform(1.0, 3.0);  // just past the edge
      double az = 0, el = 0;
      switch (reveal) {
        case Action::TurnLeft: az = edge_deg; break;
        case Action::TurnRight: az = -edge_deg; break;
        case Action::LookUp: el = edge_deg; break;
        case Action::LookDown: el = -edge_deg; break;
        default: break;
      }
      const double yaw = s.root.yaw_deg + az;
      const Vec3 dir = {std::cos(deg2rad(el)) * std::cos(deg2rad(yaw)),
                        std::cos(deg2rad(el)) * std::sin(deg2rad(yaw)), std::sin(deg2rad(el))};
      SceneObject hidden;
      hidden.class_id = hidden_class;
      hidden.shape = Primitive::Sphere;
      const double r = dist * std::tan(deg2rad(rng.uniform(5.0, 7.0)));
      hidden.size = {r, r, r};
      hidden.center = s.root.position + dir * dist;
      hidden.albedo = class_albedo(hidden_class, rng);
      // keep it inside the room
      hidden.center.x = std::min(s.room_max.x - r, std::max(s.room_min.x + r, hidden.center.x));
      hidden.center.y = std::min(s.room_max.y - r, std::max(s.room_min.y + r, hidden.center.y));
      hidden.center.z = std::min(s.room_max.z - r, std::max(r, hidden.center.z));
      s.objects.push_back(hidden);
    }

    if (count_visible_classes(s, cfg.camera) < cfg.min_visible_classes) continue;

    if (cfg.occlusion_mode) {
      // the sliver must be present in frame 0 and the reveal must add pixels
      Frame root_f = render(s, s.root, cfg.camera);
      const int sliver = count_class_pixels(root_f, hidden_class);
      const int total = cfg.camera.width * cfg.camera.height;
      if (sliver < total / 200 || sliver > total / 12) continue;
      Frame rev_f = render(s, apply(*out.reveal_action, s.root, cfg.step), cfg.camera);
      if (count_class_pixels(rev_f, hidden_class) < 3 * sliver) continue;
      // no other action may reveal as much
      bool unique = true;
      for (Action a : kAllActions) {
        if (a == *out.reveal_action) continue;
        Frame alt = render(s, apply(a, s.root, cfg.step), cfg.camera);
        if (count_class_pixels(alt, hidden_class) >= 2 * sliver) unique = false;
      }
      if (!unique) continue;
    }

    out.scene = std::move(s);
    return out;
  }
  throw std::runtime_error("generate_scene: resample budget exhausted for seed " +
                           std::to_string(seed));
}

}  // namespace adaseg::env
