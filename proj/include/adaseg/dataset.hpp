#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adaseg/envsim.hpp"

// Action-tree dataset: per point, the root frame plus every frame reachable
// by action sequences up to `depth` (full branching factor 5 per level).
// On disk: manifest.txt plus binary PPM images and PGM masks; the layout is
// bit-stable so identical (seed, config) reproduce identical bytes.
namespace adaseg::env {

struct TreeNode {
  int id = 0;           // 5-ary heap order: children of i are 5i+1 .. 5i+5
  int parent = -1;      // -1 for the root
  std::optional<Action> action;  // action leading here from parent
  AgentPose pose;
  Frame frame;
};

struct ActionTreePoint {
  int point_id = 0;
  std::string split;  // train | val | test
  std::uint64_t scene_seed = 0;
  int depth = 1;
  std::vector<TreeNode> nodes;  // breadth-first, node id == index

  const TreeNode& root() const { return nodes.front(); }
  static int node_count(int depth);  // 1 + 5 + ... + 5^depth
  int child_id(int node, Action a) const;
};

ActionTreePoint build_point(const SceneSpec& scene, const AgentPose& root_pose, int depth,
                            const CameraConfig& cam, const StepConfig& step);

// PPM (P6) / PGM (P5) binary image I/O
void write_ppm(const std::string& path, const Frame& f);
void write_pgm_mask(const std::string& path, const Frame& f);
Frame read_frame(const std::string& image_path, const std::string& mask_path);

struct Dataset {
  std::vector<ActionTreePoint> points;
};

// manifest line: point_id split node_id parent_id action_tag yaw pitch x y z
// image_path mask_path
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

// structural validation: well-formed manifest, files present, sizes match,
// child poses equal apply(action, parent pose). Throws with the offending
// path on failure; returns the number of frames checked.
int validate_dataset(const std::string& dir, const StepConfig& step);

}  // namespace adaseg::env
