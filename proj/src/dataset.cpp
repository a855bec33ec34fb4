#include "adaseg/dataset.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adaseg::env {

namespace fs = std::filesystem;

int ActionTreePoint::node_count(int depth) {
  int total = 1, level = 1;
  for (int d = 0; d < depth; ++d) {
    level *= 5;
    total += level;
  }
  return total;
}

int ActionTreePoint::child_id(int node, Action a) const {
  const int idx = 5 * node + 1 + static_cast<int>(a);
  if (idx >= static_cast<int>(nodes.size()))
    throw std::runtime_error("action tree: node " + std::to_string(node) + " has no children");
  return idx;
}

ActionTreePoint build_point(const SceneSpec& scene, const AgentPose& root_pose, int depth,
                            const CameraConfig& cam, const StepConfig& step) {
  if (depth < 1 || depth > 4) throw std::runtime_error("build_point: depth must be in 1..4");
  ActionTreePoint pt;
  pt.depth = depth;
  pt.scene_seed = scene.seed;
  const int n = ActionTreePoint::node_count(depth);
  pt.nodes.resize(static_cast<std::size_t>(n));
  pt.nodes[0].id = 0;
  pt.nodes[0].parent = -1;
  pt.nodes[0].pose = root_pose;
  for (int i = 0; i < n; ++i) {
    TreeNode& nd = pt.nodes[static_cast<std::size_t>(i)];
    if (i > 0) {
      const int parent = (i - 1) / 5;
      const Action a = kAllActions[static_cast<std::size_t>((i - 1) % 5)];
      nd.id = i;
      nd.parent = parent;
      nd.action = a;
      nd.pose = apply(a, pt.nodes[static_cast<std::size_t>(parent)].pose, step);
    }
    nd.frame = render(scene, nd.pose, cam);
  }
  return pt;
}

void write_ppm(const std::string& path, const Frame& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << f.width << " " << f.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(f.rgb.data()), static_cast<std::streamsize>(f.rgb.size()));
}

void write_pgm_mask(const std::string& path, const Frame& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << f.width << " " << f.height << "\n255\n";
  std::vector<std::uint8_t> bytes(f.mask.size());
  for (std::size_t i = 0; i < f.mask.size(); ++i) bytes[i] = static_cast<std::uint8_t>(f.mask[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

void read_pnm_header(std::ifstream& in, const std::string& path, const char* magic, int& w, int& h) {
  std::string m;
  in >> m;
  if (m != magic) throw std::runtime_error("bad header in " + path);
  int maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("bad header in " + path);
  in.get();  // single whitespace after maxval
}

}  // namespace

Frame read_frame(const std::string& image_path, const std::string& mask_path) {
  Frame f;
  {
    std::ifstream in(image_path, std::ios::binary);
    if (!in) throw std::runtime_error("missing file " + image_path);
    read_pnm_header(in, image_path, "P6", f.width, f.height);
    f.rgb.resize(static_cast<std::size_t>(3) * f.width * f.height);
    in.read(reinterpret_cast<char*>(f.rgb.data()), static_cast<std::streamsize>(f.rgb.size()));
    if (!in) throw std::runtime_error("truncated file " + image_path);
  }
  {
    std::ifstream in(mask_path, std::ios::binary);
    if (!in) throw std::runtime_error("missing file " + mask_path);
    int w = 0, h = 0;
    read_pnm_header(in, mask_path, "P5", w, h);
    if (w != f.width || h != f.height)
      throw std::runtime_error("image/mask size mismatch at " + mask_path);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw std::runtime_error("truncated file " + mask_path);
    f.mask.assign(bytes.begin(), bytes.end());
  }
  return f;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string frame_stem(int point_id, int node_id) {
  return std::to_string(point_id) + "_" + std::to_string(node_id);
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  for (const auto& pt : ds.points) {
    for (const auto& nd : pt.nodes) {
      const std::string stem = frame_stem(pt.point_id, nd.id);
      const std::string img = "images/" + stem + ".ppm";
      const std::string msk = "masks/" + stem + ".pgm";
      write_ppm((fs::path(dir) / img).string(), nd.frame);
      write_pgm_mask((fs::path(dir) / msk).string(), nd.frame);
      manifest << pt.point_id << " " << pt.split << " " << nd.id << " " << nd.parent << " "
               << (nd.action ? action_name(*nd.action) : "none") << " "
               << fmt_double(nd.pose.yaw_deg) << " " << fmt_double(nd.pose.pitch_deg) << " "
               << fmt_double(nd.pose.position.x) << " " << fmt_double(nd.pose.position.y) << " "
               << fmt_double(nd.pose.position.z) << " " << img << " " << msk << "\n";
    }
  }
  // scene seeds, one line per point, so stored frames can be re-rendered
  std::ofstream seeds(fs::path(dir) / "scenes.txt");
  for (const auto& pt : ds.points)
    seeds << pt.point_id << " " << pt.scene_seed << " " << pt.depth << "\n";
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("missing manifest.txt in " + dir);

  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    int point_id, node_id, parent_id;
    std::string split, action_tag, img, msk;
    double yaw, pitch, x, y, z;
    if (!(is >> point_id >> split >> node_id >> parent_id >> action_tag >> yaw >> pitch >> x >>
          y >> z >> img >> msk))
      throw std::runtime_error("malformed manifest line " + std::to_string(line_no) + " in " + dir);

    if (ds.points.empty() || ds.points.back().point_id != point_id) {
      ActionTreePoint pt;
      pt.point_id = point_id;
      pt.split = split;
      ds.points.push_back(std::move(pt));
    }
    ActionTreePoint& pt = ds.points.back();
    if (node_id != static_cast<int>(pt.nodes.size()))
      throw std::runtime_error("manifest: non-sequential node id at line " + std::to_string(line_no));

    TreeNode nd;
    nd.id = node_id;
    nd.parent = parent_id;
    if (action_tag != "none") {
      auto a = parse_action(action_tag);
      if (!a) throw std::runtime_error("manifest: unknown action '" + action_tag + "' at line " +
                                       std::to_string(line_no));
      nd.action = *a;
    }
    nd.pose = {{x, y, z}, yaw, pitch};
    nd.frame = read_frame((fs::path(dir) / img).string(), (fs::path(dir) / msk).string());
    pt.nodes.push_back(std::move(nd));
  }

  // depth and scene seeds
  for (auto& pt : ds.points) {
    int depth = 0;
    while (ActionTreePoint::node_count(depth) < static_cast<int>(pt.nodes.size())) ++depth;
    if (ActionTreePoint::node_count(depth) != static_cast<int>(pt.nodes.size()))
      throw std::runtime_error("dataset: point " + std::to_string(pt.point_id) +
                               " has a partial action tree");
    pt.depth = depth;
  }
  std::ifstream seeds(fs::path(dir) / "scenes.txt");
  if (seeds) {
    int pid, depth;
    std::uint64_t seed;
    std::size_t i = 0;
    while (seeds >> pid >> seed >> depth && i < ds.points.size()) {
      if (ds.points[i].point_id == pid) ds.points[i].scene_seed = seed;
      ++i;
    }
  }
  return ds;
}

int validate_dataset(const std::string& dir, const StepConfig& step) {
  Dataset ds = read_dataset(dir);
  int frames = 0;
  for (const auto& pt : ds.points) {
    for (const auto& nd : pt.nodes) {
      ++frames;
      if (nd.id == 0) {
        if (nd.parent != -1 || nd.action)
          throw std::runtime_error("dataset: bad root node in point " + std::to_string(pt.point_id));
        continue;
      }
      if (!nd.action)
        throw std::runtime_error("dataset: missing action for node " + std::to_string(nd.id) +
                                 " of point " + std::to_string(pt.point_id));
      const TreeNode& parent = pt.nodes[static_cast<std::size_t>(nd.parent)];
      const AgentPose expect = apply(*nd.action, parent.pose, step);
      const bool same = expect.yaw_deg == nd.pose.yaw_deg && expect.pitch_deg == nd.pose.pitch_deg &&
                        expect.position.x == nd.pose.position.x &&
                        expect.position.y == nd.pose.position.y &&
                        expect.position.z == nd.pose.position.z;
      if (!same)
        throw std::runtime_error("dataset: pose of node " + std::to_string(nd.id) + " in point " +
                                 std::to_string(pt.point_id) + " does not equal apply(action, parent)");
      if (nd.frame.width != parent.frame.width || nd.frame.height != parent.frame.height)
        throw std::runtime_error("dataset: frame size mismatch in point " +
                                 std::to_string(pt.point_id));
      for (int m : nd.frame.mask)
        if (m < 0 || (m > 200 && m != kUnlabeled))
          throw std::runtime_error("dataset: invalid mask label in point " +
                                   std::to_string(pt.point_id));
    }
  }
  return frames;
}

}  // namespace adaseg::env
