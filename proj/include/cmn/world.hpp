#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cmn/tensor.hpp"
#include "json.hpp"

namespace cmn {

inline constexpr std::size_t kNumViews = 36;
inline constexpr double kSectorDegrees = 10.0;
inline constexpr std::size_t kDefaultFeatureDim = 32;

// Fixed label sets. Region and object ids index these arrays.
inline constexpr std::array<std::string_view, 8> kRegionNames = {
    "kitchen", "bedroom", "bathroom", "hallway", "lounge", "office", "dining", "laundry"};
inline constexpr std::array<std::string_view, 12> kObjectNames = {
    "towel", "table", "bed", "sofa", "lamp", "sink", "plant", "mirror", "chair", "desk", "tv", "oven"};

int region_id(std::string_view name);
int object_id(std::string_view name);

struct HouseNode {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  int region = 0;
  std::vector<int> objects;  // sorted object ids

  friend bool operator==(const HouseNode&, const HouseNode&) = default;
};

class HouseGraph {
 public:
  HouseGraph() = default;
  HouseGraph(std::string scan_id, std::vector<HouseNode> nodes, std::vector<std::pair<int, int>> edges);

  const std::string& scan_id() const { return scan_id_; }
  const std::vector<HouseNode>& nodes() const { return nodes_; }
  const HouseNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }

  // Neighbors sorted by id.
  const std::vector<int>& neighbors(int id) const { return adjacency_.at(static_cast<std::size_t>(id)); }
  bool adjacent(int a, int b) const;
  double edge_length(int a, int b) const;
  // Bearing in radians, counter-clockwise from +x, in [0, 2*pi).
  double bearing(int from, int to) const;

  // Every (object, node) placement.
  std::vector<std::pair<int, int>> placements() const;

  friend bool operator==(const HouseGraph& a, const HouseGraph& b) {
    return a.scan_id_ == b.scan_id_ && a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  std::string scan_id_;
  std::vector<HouseNode> nodes_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adjacency_;
};

nlohmann::json to_json(const HouseGraph& g);
HouseGraph house_from_json(const nlohmann::json& j);

// object_vocab lists the object ids a house may draw from.
HouseGraph generate_house(std::uint64_t seed, int n_nodes, int n_regions, const std::vector<int>& object_vocab);

// Minimal total edge length; ties resolve to the lexicographically smallest
// node-id sequence.
std::vector<int> shortest_path(const HouseGraph& g, int a, int b);
double path_length(const HouseGraph& g, const std::vector<int>& path);
// Graph distance in meters from every node to `target`.
std::vector<double> distances_to(const HouseGraph& g, int target);
double graph_distance(const HouseGraph& g, int a, int b);

// Sector index of a bearing, 10-degree sectors starting at 0 rad.
std::size_t sector_of(double bearing_rad);

// Channel layout of a panorama row.
struct FeatureLayout {
  static constexpr std::size_t kSceneRegion = 0;   // 8 channels: region seen through the sector
  static constexpr std::size_t kObjects = 8;       // 12 channels: object presence
  static constexpr std::size_t kOwnRegion = 20;    // 8 channels: region of the node itself
  static constexpr std::size_t kNavigable = 28;
  static constexpr std::size_t kDirSin = 29;
  static constexpr std::size_t kDirCos = 30;
  static constexpr std::size_t kTexture = 31;      // seeded noise channels up to F
  static constexpr std::size_t kMinWidth = 31;
  static constexpr double kVisibleRange = 5.0;     // meters
  static constexpr double kNoiseAmplitude = 0.05;
};

// 36 x F canonical panorama; view i looks along sector i in world frame.
Tensor panoramic_features(const HouseGraph& g, int node, std::size_t feature_dim = kDefaultFeatureDim);

// Panorama as seen by an agent facing `heading`: row 0 is the sector that
// contains the heading and direction channels hold the angle relative to it.
Tensor observe(const Tensor& panorama, double heading);
// Row of the observed panorama through which `neighbor` is reached.
std::size_t view_towards(const HouseGraph& g, int node, int neighbor, double heading);

}  // namespace cmn
