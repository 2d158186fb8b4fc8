#include "cmn/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <set>

#include "cmn/errors.hpp"
#include "cmn/rng.hpp"

namespace cmn {

namespace {

constexpr double kGridSpacing = 2.2;
constexpr double kJitter = 0.35;
constexpr double kExtraEdgeProb = 0.5;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[static_cast<std::size_t>(a)] = b;
    return true;
  }
};

double normalize_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0) a += two_pi;
  return a;
}

double sector_center(std::size_t sector) {
  return (static_cast<double>(sector) + 0.5) * kSectorDegrees * std::numbers::pi / 180.0;
}

}  // namespace

int region_id(std::string_view name) {
  for (std::size_t i = 0; i < kRegionNames.size(); ++i)
    if (kRegionNames[i] == name) return static_cast<int>(i);
  throw DataError("unknown region name '" + std::string(name) + "'");
}

int object_id(std::string_view name) {
  for (std::size_t i = 0; i < kObjectNames.size(); ++i)
    if (kObjectNames[i] == name) return static_cast<int>(i);
  throw DataError("unknown object name '" + std::string(name) + "'");
}

HouseGraph::HouseGraph(std::string scan_id, std::vector<HouseNode> nodes, std::vector<std::pair<int, int>> edges)
    : scan_id_(std::move(scan_id)), nodes_(std::move(nodes)), edges_(std::move(edges)) {
  const int n = static_cast<int>(nodes_.size());
  if (n == 0) throw DataError("house " + scan_id_ + ": no nodes");
  for (int i = 0; i < n; ++i) {
    const auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.id != i) throw DataError("house " + scan_id_ + ": node ids must be dense 0..n-1");
    if (node.region < 0 || node.region >= static_cast<int>(kRegionNames.size()))
      throw DataError("house " + scan_id_ + ": bad region label");
    for (int o : node.objects)
      if (o < 0 || o >= static_cast<int>(kObjectNames.size())) throw DataError("house " + scan_id_ + ": bad object");
  }
  adjacency_.assign(static_cast<std::size_t>(n), {});
  std::set<std::pair<int, int>> seen;
  for (auto& [a, b] : edges_) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw DataError("house " + scan_id_ + ": edge endpoint out of range");
    if (a == b) throw DataError("house " + scan_id_ + ": self-loop at node " + std::to_string(a));
    const auto key = std::minmax(a, b);
    if (!seen.insert(key).second) throw DataError("house " + scan_id_ + ": duplicate edge");
    adjacency_[static_cast<std::size_t>(a)].push_back(b);
    adjacency_[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& adj : adjacency_) std::sort(adj.begin(), adj.end());
  for (auto& [a, b] : edges_) {
    if (!(edge_length(a, b) > 0.0)) throw DataError("house " + scan_id_ + ": zero-length edge");
  }
  std::vector<bool> reached(static_cast<std::size_t>(n), false);
  std::vector<int> stack = {0};
  reached[0] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : neighbors(u)) {
      if (!reached[static_cast<std::size_t>(v)]) {
        reached[static_cast<std::size_t>(v)] = true;
        stack.push_back(v);
      }
    }
  }
  if (std::find(reached.begin(), reached.end(), false) != reached.end()) {
    throw DataError("house " + scan_id_ + ": graph is not connected");
  }
}

bool HouseGraph::adjacent(int a, int b) const {
  if (a < 0 || a >= static_cast<int>(nodes_.size())) return false;
  const auto& adj = neighbors(a);
  return std::binary_search(adj.begin(), adj.end(), b);
}

double HouseGraph::edge_length(int a, int b) const {
  const auto& p = node(a);
  const auto& q = node(b);
  return std::hypot(q.x - p.x, q.y - p.y);
}

double HouseGraph::bearing(int from, int to) const {
  const auto& p = node(from);
  const auto& q = node(to);
  return normalize_angle(std::atan2(q.y - p.y, q.x - p.x));
}

std::vector<std::pair<int, int>> HouseGraph::placements() const {
  std::vector<std::pair<int, int>> out;
  for (const auto& n : nodes_)
    for (int o : n.objects) out.emplace_back(o, n.id);
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json to_json(const HouseGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes()) {
    nlohmann::json objects = nlohmann::json::array();
    for (int o : n.objects) objects.push_back(kObjectNames[static_cast<std::size_t>(o)]);
    nodes.push_back({{"id", n.id},
                     {"x", n.x},
                     {"y", n.y},
                     {"region", kRegionNames[static_cast<std::size_t>(n.region)]},
                     {"objects", objects}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : g.edges()) edges.push_back({a, b});
  return {{"scan_id", g.scan_id()}, {"nodes", nodes}, {"edges", edges}};
}

HouseGraph house_from_json(const nlohmann::json& j) {
  try {
    std::vector<HouseNode> nodes;
    for (const auto& jn : j.at("nodes")) {
      HouseNode n;
      n.id = jn.at("id").get<int>();
      n.x = jn.at("x").get<double>();
      n.y = jn.at("y").get<double>();
      n.region = region_id(jn.at("region").get<std::string>());
      for (const auto& o : jn.at("objects")) n.objects.push_back(object_id(o.get<std::string>()));
      std::sort(n.objects.begin(), n.objects.end());
      nodes.push_back(std::move(n));
    }
    std::vector<std::pair<int, int>> edges;
    for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    return HouseGraph(j.at("scan_id").get<std::string>(), std::move(nodes), std::move(edges));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("house json: ") + e.what());
  }
}

HouseGraph generate_house(std::uint64_t seed, int n_nodes, int n_regions, const std::vector<int>& object_vocab) {
  if (n_nodes < 4) throw GenerationError("generate_house: need at least 4 nodes, got " + std::to_string(n_nodes));
  if (n_regions < 2) throw GenerationError("generate_house: need at least 2 regions, got " + std::to_string(n_regions));
  if (n_regions > n_nodes) throw GenerationError("generate_house: more regions than nodes");
  if (n_regions > static_cast<int>(kRegionNames.size())) {
    throw GenerationError("generate_house: at most " + std::to_string(kRegionNames.size()) + " regions supported");
  }
  if (object_vocab.empty()) throw GenerationError("generate_house: empty object vocabulary");
  for (int o : object_vocab)
    if (o < 0 || o >= static_cast<int>(kObjectNames.size())) throw GenerationError("generate_house: bad object id");

  Rng rng(seed);
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_nodes))));
  std::vector<HouseNode> nodes(static_cast<std::size_t>(n_nodes));
  for (int i = 0; i < n_nodes; ++i) {
    auto& n = nodes[static_cast<std::size_t>(i)];
    n.id = i;
    n.x = (i % cols) * kGridSpacing + rng.uniform(-kJitter, kJitter);
    n.y = (i / cols) * kGridSpacing + rng.uniform(-kJitter, kJitter);
  }

  // Random spanning tree over the grid lattice plus a random half of the remaining lattice edges.
  std::vector<std::pair<int, int>> lattice;
  for (int i = 0; i < n_nodes; ++i) {
    if ((i % cols) + 1 < cols && i + 1 < n_nodes) lattice.emplace_back(i, i + 1);
    if (i + cols < n_nodes) lattice.emplace_back(i, i + cols);
  }
  rng.shuffle(lattice);
  DisjointSet ds(n_nodes);
  std::vector<std::pair<int, int>> edges;
  for (const auto& [a, b] : lattice) {
    if (ds.unite(a, b) || rng.bernoulli(kExtraEdgeProb)) edges.emplace_back(a, b);
  }
  std::sort(edges.begin(), edges.end());

  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n_nodes));
  for (const auto& [a, b] : edges) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());

  // Regions grow breadth-first from random seed nodes, so each is contiguous.
  std::vector<int> order(static_cast<std::size_t>(n_nodes));
  for (int i = 0; i < n_nodes; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<int> labels(kRegionNames.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i);
  rng.shuffle(labels);
  std::vector<int> cluster(static_cast<std::size_t>(n_nodes), -1);
  std::queue<int> frontier;
  for (int r = 0; r < n_regions; ++r) {
    cluster[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
    frontier.push(order[static_cast<std::size_t>(r)]);
  }
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    std::vector<int> next = adj[static_cast<std::size_t>(u)];
    rng.shuffle(next);
    for (int v : next) {
      if (cluster[static_cast<std::size_t>(v)] >= 0) continue;
      cluster[static_cast<std::size_t>(v)] = cluster[static_cast<std::size_t>(u)];
      frontier.push(v);
    }
  }
  for (int i = 0; i < n_nodes; ++i) {
    nodes[static_cast<std::size_t>(i)].region = labels[static_cast<std::size_t>(cluster[static_cast<std::size_t>(i)])];
  }

  std::vector<int> vocab = object_vocab;
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  rng.shuffle(vocab);
  const int n_types = std::clamp(n_nodes / 5, 1, static_cast<int>(vocab.size()));
  for (int t = 0; t < n_types; ++t) {
    const int count = std::min(rng.between(2, 4), n_nodes);
    std::vector<int> where = order;
    rng.shuffle(where);
    for (int c = 0; c < count; ++c) {
      nodes[static_cast<std::size_t>(where[static_cast<std::size_t>(c)])].objects.push_back(vocab[static_cast<std::size_t>(t)]);
    }
  }
  for (auto& n : nodes) std::sort(n.objects.begin(), n.objects.end());

  char buf[32];
  std::snprintf(buf, sizeof buf, "scan_%016llx", static_cast<unsigned long long>(seed));
  return HouseGraph(buf, std::move(nodes), std::move(edges));
}

std::vector<double> distances_to(const HouseGraph& g, int target) {
  const std::size_t n = g.size();
  if (target < 0 || static_cast<std::size_t>(target) >= n) throw PathError("distances_to: invalid node");
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[static_cast<std::size_t>(target)] = 0.0;
  pq.emplace(0.0, target);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    for (int v : g.neighbors(u)) {
      const double nd = d + g.edge_length(u, v);
      if (nd < dist[static_cast<std::size_t>(v)]) {
        dist[static_cast<std::size_t>(v)] = nd;
        pq.emplace(nd, v);
      }
    }
  }
  return dist;
}

double graph_distance(const HouseGraph& g, int a, int b) {
  const double d = distances_to(g, b).at(static_cast<std::size_t>(a));
  if (!std::isfinite(d)) throw PathError("graph_distance: nodes are not connected");
  return d;
}

std::vector<int> shortest_path(const HouseGraph& g, int a, int b) {
  const int n = static_cast<int>(g.size());
  if (a < 0 || b < 0 || a >= n || b >= n) throw PathError("shortest_path: invalid endpoint");
  const auto dist = distances_to(g, b);
  if (!std::isfinite(dist[static_cast<std::size_t>(a)])) {
    throw PathError("shortest_path: node " + std::to_string(b) + " unreachable from " + std::to_string(a));
  }
  std::vector<int> path = {a};
  int u = a;
  while (u != b) {
    const double du = dist[static_cast<std::size_t>(u)];
    const double tol = 1e-9 * std::max(1.0, du);
    int next = -1;
    for (int v : g.neighbors(u)) {  // ascending ids: first hit is the lexicographic choice
      if (std::abs(g.edge_length(u, v) + dist[static_cast<std::size_t>(v)] - du) <= tol &&
          dist[static_cast<std::size_t>(v)] < du) {
        next = v;
        break;
      }
    }
    if (next < 0) throw PathError("shortest_path: reconstruction failed");
    path.push_back(next);
    u = next;
  }
  return path;
}

double path_length(const HouseGraph& g, const std::vector<int>& path) {
  double total = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (!g.adjacent(path[i - 1], path[i])) {
      throw PathError("path_length: " + std::to_string(path[i - 1]) + " and " + std::to_string(path[i]) +
                      " are not adjacent");
    }
    total += g.edge_length(path[i - 1], path[i]);
  }
  return total;
}

std::size_t sector_of(double bearing_rad) {
  const double deg = normalize_angle(bearing_rad) * 180.0 / std::numbers::pi;
  return static_cast<std::size_t>(std::floor(deg / kSectorDegrees)) % kNumViews;
}

Tensor panoramic_features(const HouseGraph& g, int node, std::size_t feature_dim) {
  using L = FeatureLayout;
  if (feature_dim < L::kMinWidth) {
    throw DimensionError("panoramic_features: feature width must be at least " + std::to_string(L::kMinWidth));
  }
  const auto& self = g.node(node);
  Tensor out({kNumViews, feature_dim});

  std::array<int, kNumViews> scene_region;
  scene_region.fill(-1);
  std::array<bool, kNumViews> navigable{};
  for (int v : g.neighbors(node)) {  // ascending ids: the first neighbor in a sector names its region
    const std::size_t s = sector_of(g.bearing(node, v));
    navigable[s] = true;
    if (scene_region[s] < 0) scene_region[s] = g.node(v).region;
  }

  const std::uint64_t scan_hash = fnv1a(g.scan_id());
  for (std::size_t view = 0; view < kNumViews; ++view) {
    auto row = out.row(view);
    const int scene = scene_region[view] >= 0 ? scene_region[view] : self.region;
    row[L::kSceneRegion + static_cast<std::size_t>(scene)] = 1.0;
    row[L::kOwnRegion + static_cast<std::size_t>(self.region)] = 1.0;
    for (int o : self.objects) row[L::kObjects + static_cast<std::size_t>(o)] = 1.0;
    row[L::kNavigable] = navigable[view] ? 1.0 : 0.0;
    const double theta = sector_center(view);
    row[L::kDirSin] = std::sin(theta);
    row[L::kDirCos] = std::cos(theta);
    for (std::size_t c = L::kTexture; c < feature_dim; ++c) {
      Rng noise(derive_seed({scan_hash, static_cast<std::uint64_t>(node), view, c}));
      row[c] = noise.uniform(-L::kNoiseAmplitude, L::kNoiseAmplitude);
    }
  }
  for (const auto& other : g.nodes()) {
    if (other.id == node || other.objects.empty()) continue;
    if (g.edge_length(node, other.id) > L::kVisibleRange) continue;
    auto row = out.row(sector_of(g.bearing(node, other.id)));
    for (int o : other.objects) {
      double& slot = row[L::kObjects + static_cast<std::size_t>(o)];
      slot = std::max(slot, 0.5);
    }
  }
  return out;
}

Tensor observe(const Tensor& panorama, double heading) {
  using L = FeatureLayout;
  if (panorama.rank() != 2 || panorama.rows() != kNumViews) {
    throw DimensionError("observe: panorama must have " + std::to_string(kNumViews) + " rows, got " +
                         shape_str(panorama.shape()));
  }
  const std::size_t width = panorama.cols();
  const std::size_t first = sector_of(heading);
  Tensor out({kNumViews, width});
  for (std::size_t i = 0; i < kNumViews; ++i) {
    const std::size_t src = (first + i) % kNumViews;
    auto from = panorama.row(src);
    auto to = out.row(i);
    std::copy(from.begin(), from.end(), to.begin());
    const double rel = sector_center(src) - heading;
    to[L::kDirSin] = std::sin(rel);
    to[L::kDirCos] = std::cos(rel);
  }
  return out;
}

std::size_t view_towards(const HouseGraph& g, int node, int neighbor, double heading) {
  const std::size_t first = sector_of(heading);
  return (sector_of(g.bearing(node, neighbor)) + kNumViews - first) % kNumViews;
}

}  // namespace cmn
