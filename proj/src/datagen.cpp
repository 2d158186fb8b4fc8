#include "cmn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "cmn/errors.hpp"
#include "cmn/rng.hpp"

namespace cmn {

namespace {

const std::vector<std::vector<std::string>> kQuestionTemplates = {
    {"left", "or", "right"}, {"should", "i", "go", "up"}, {"which", "way", "now"}, {"where", "next"}};

std::string turn_word(double relative) {
  const double deg = relative * 180.0 / std::numbers::pi;
  if (std::abs(deg) <= 45.0) return "forward";
  if (deg > 45.0 && deg <= 135.0) return "left";
  if (deg < -45.0 && deg >= -135.0) return "right";
  return "around";
}

// Maps an angle difference into (-pi, pi].
double wrap(double a) {
  while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
  while (a <= -std::numbers::pi) a += 2 * std::numbers::pi;
  return a;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("failed writing " + p.string());
}

std::vector<int> int_list(const nlohmann::json& j) { return j.get<std::vector<int>>(); }

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> tokens = {"<pad>", "<oov>", "<sep>", "where", "is",    "the",  "left",
                                       "or",    "right", "should", "i",    "go",    "up",   "which",
                                       "way",   "now",   "next",  "forward", "around", "back", "into",
                                       "find",  "stop",  "here",  "in"};
    for (auto r : kRegionNames) tokens.emplace_back(r);
    for (auto o : kObjectNames) tokens.emplace_back(o);
    return Vocabulary(std::move(tokens));
  }();
  return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3 || tokens_[kPadToken] != "<pad>" || tokens_[kOovToken] != "<oov>") {
    throw VocabularyError("vocabulary: ids 0 and 1 must be <pad> and <oov>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw VocabularyError("vocabulary: duplicate token " + tokens_[i]);
    }
  }
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kOovToken : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int i : ids) out.push_back(word(i));
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> tokens(j.size());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto id = it.value().get<std::size_t>();
    if (id >= tokens.size() || !tokens[id].empty()) throw VocabularyError("vocabulary json: ids must be dense");
    tokens[id] = it.key();
  }
  return Vocabulary(std::move(tokens));
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::ValSeen: return "val_seen";
    case Split::ValUnseen: return "val_unseen";
    case Split::TestUnseen: return "test_unseen";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  for (Split sp : kAllSplits)
    if (split_name(sp) == s) return sp;
  throw ConfigError("unknown split '" + s + "'");
}

std::string supervision_name(Supervision s) {
  switch (s) {
    case Supervision::Oracle: return "oracle";
    case Supervision::Navigator: return "navigator";
    case Supervision::Mixed: return "mixed";
  }
  return "?";
}

Supervision parse_supervision(const std::string& s) {
  for (Supervision v : {Supervision::Oracle, Supervision::Navigator, Supervision::Mixed})
    if (supervision_name(v) == s) return v;
  throw ConfigError("unknown supervision '" + s + "'");
}

const std::vector<int>& NdhInstance::supervision_path(Supervision s) const {
  switch (s) {
    case Supervision::Oracle: return oracle_path;
    case Supervision::Navigator: return navigator_path;
    case Supervision::Mixed: return mixed_path;
  }
  return oracle_path;
}

nlohmann::json to_json(const NdhInstance& inst) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : inst.rounds) rounds.push_back({{"q", r.q_tokens}, {"r", r.r_tokens}, {"segment", r.segment}});
  return {{"scan_id", inst.scan_id},
          {"t_o", kObjectNames[static_cast<std::size_t>(inst.target_object)]},
          {"p_0", inst.start},
          {"goal_region", kRegionNames[static_cast<std::size_t>(inst.goal_region)]},
          {"rounds", rounds},
          {"oracle_path", inst.oracle_path},
          {"navigator_path", inst.navigator_path},
          {"mixed_path", inst.mixed_path},
          {"split", split_name(inst.split)}};
}

NdhInstance instance_from_json(const nlohmann::json& j) {
  try {
    NdhInstance inst;
    inst.scan_id = j.at("scan_id").get<std::string>();
    inst.target_object = object_id(j.at("t_o").get<std::string>());
    inst.start = j.at("p_0").get<int>();
    inst.goal_region = region_id(j.at("goal_region").get<std::string>());
    for (const auto& r : j.at("rounds")) {
      inst.rounds.push_back({int_list(r.at("q")), int_list(r.at("r")), int_list(r.at("segment"))});
    }
    inst.oracle_path = int_list(j.at("oracle_path"));
    inst.navigator_path = int_list(j.at("navigator_path"));
    inst.mixed_path = int_list(j.at("mixed_path"));
    try {
      inst.split = parse_split(j.at("split").get<std::string>());
    } catch (const ConfigError& e) {
      throw DataError(e.what());
    }
    if (inst.rounds.empty() || inst.oracle_path.empty()) throw DataError("instance json: empty rounds or path");
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("instance json: ") + e.what());
  }
}

DialogText templated_dialog(const std::vector<int>& motion, const HouseGraph& g, int target_object,
                            std::uint64_t seed, double heading, bool mention_target) {
  if (motion.empty()) throw DataError("templated_dialog: empty segment");
  const auto& vocab = Vocabulary::standard();
  Rng rng(seed);
  DialogText out;
  out.q_tokens = vocab.encode(kQuestionTemplates[rng.below(kQuestionTemplates.size())]);

  std::vector<std::string> words;
  if (motion.size() == 1) {
    words = {"stop", "here"};
  } else {
    std::set<int> visited = {motion[0]};
    for (std::size_t i = 1; i < motion.size(); ++i) {
      const int u = motion[i - 1], v = motion[i];
      const double b = g.bearing(u, v);
      if (visited.count(v)) {
        words.insert(words.end(), {"go", "back"});
      } else {
        words.push_back(turn_word(wrap(b - heading)));
      }
      visited.insert(v);
      if (g.node(v).region != g.node(u).region) {
        words.push_back("into");
        words.emplace_back(kRegionNames[static_cast<std::size_t>(g.node(v).region)]);
      }
      heading = b;
    }
    words.insert(words.end(), {"stop", "in"});
    words.emplace_back(kRegionNames[static_cast<std::size_t>(g.node(motion.back()).region)]);
  }
  if (mention_target) {
    words.push_back("find");
    words.emplace_back(kObjectNames[static_cast<std::size_t>(target_object)]);
  }
  if (words.size() > kMaxSentenceTokens) words.resize(kMaxSentenceTokens);
  out.r_tokens = vocab.encode(words);
  return out;
}

std::vector<int> navigator_path(const std::vector<int>& oracle, const HouseGraph& g, std::uint64_t seed,
                                const NavigatorNoise& noise) {
  if (oracle.empty()) throw DataError("navigator_path: empty oracle path");
  Rng rng(seed);
  std::vector<int> out;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const int u = oracle[i];
    out.push_back(u);
    if (i + 1 >= oracle.size() || !rng.bernoulli(noise.detour_prob)) continue;
    const auto& nbrs = g.neighbors(u);
    const int a = nbrs[rng.below(nbrs.size())];
    std::vector<int> onward;
    for (int b : g.neighbors(a))
      if (b != u) onward.push_back(b);
    if (!onward.empty() && rng.bernoulli(0.5)) {
      const int b = onward[rng.below(onward.size())];
      out.insert(out.end(), {a, b, a, u});
    } else {
      out.insert(out.end(), {a, u});
    }
  }
  if (oracle.size() >= 2 && rng.bernoulli(noise.early_stop_prob)) out.pop_back();
  return out;
}

std::vector<int> mixed_path(const std::vector<int>& oracle, const std::vector<int>& navigator) {
  if (oracle.empty() || navigator.empty()) throw DataError("mixed_path: empty path");
  if (oracle.front() != navigator.front()) {
    throw DataError("mixed_path: oracle starts at " + std::to_string(oracle.front()) + " but navigator at " +
                    std::to_string(navigator.front()));
  }
  return navigator.back() == oracle.back() ? navigator : oracle;
}

std::vector<int> round_motion(const NdhInstance& inst, std::size_t t) {
  const auto& seg = inst.rounds.at(t).segment;
  if (t == 0) return seg;
  std::vector<int> motion = {inst.rounds[t - 1].segment.back()};
  motion.insert(motion.end(), seg.begin(), seg.end());
  return motion;
}

double round_heading(const NdhInstance& inst, const HouseGraph& g, std::size_t t) {
  std::size_t start = 0;  // oracle index where round t's motion begins
  for (std::size_t i = 0; i < t; ++i) start += inst.rounds[i].segment.size();
  if (t > 0) start -= 1;
  if (start == 0) return 0.0;
  return g.bearing(inst.oracle_path[start - 1], inst.oracle_path[start]);
}

NdhInstance make_instance(const HouseGraph& g, std::uint64_t seed, RoundsRange rounds, const NavigatorNoise& noise) {
  if (rounds.lo < 1 || rounds.hi < rounds.lo) throw GenerationError("make_instance: invalid rounds range");
  auto placements = g.placements();
  if (placements.empty()) throw GenerationError("make_instance: house " + g.scan_id() + " has no objects");
  Rng rng(seed);
  rng.shuffle(placements);

  NdhInstance inst;
  bool found = false;
  for (const auto& [object, goal] : placements) {
    std::vector<std::vector<int>> options;
    for (int s = 0; s < static_cast<int>(g.size()); ++s) {
      if (s == goal) continue;
      auto path = shortest_path(g, s, goal);
      const int hops = static_cast<int>(path.size()) - 1;
      if (hops >= kMinStartHops && hops <= kMaxStartHops) options.push_back(std::move(path));
    }
    if (options.empty()) continue;
    inst.oracle_path = options[rng.below(options.size())];
    inst.target_object = object;
    inst.start = inst.oracle_path.front();
    inst.goal_region = g.node(goal).region;
    found = true;
    break;
  }
  if (!found) throw GenerationError("make_instance: no start/goal pair in house " + g.scan_id());
  inst.scan_id = g.scan_id();

  const auto& path = inst.oracle_path;
  const int n = static_cast<int>(path.size());
  const int k = rng.between(std::min(rounds.lo, n), std::min(rounds.hi, n));
  std::vector<int> cuts;
  for (int i = 1; i < n; ++i) cuts.push_back(i);
  rng.shuffle(cuts);
  cuts.resize(static_cast<std::size_t>(k - 1));
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(n);
  int begin = 0;
  for (int cut : cuts) {
    DialogRound r;
    r.segment.assign(path.begin() + begin, path.begin() + cut);
    inst.rounds.push_back(std::move(r));
    begin = cut;
  }

  const auto& vocab = Vocabulary::standard();
  for (std::size_t t = 0; t < inst.rounds.size(); ++t) {
    const bool last = t + 1 == inst.rounds.size();
    auto text = templated_dialog(round_motion(inst, t), g, inst.target_object, derive_seed({seed, 17, t}),
                                 round_heading(inst, g, t), last);
    if (t == 0) {
      text.q_tokens = vocab.encode(
          {"where", "is", "the", std::string(kObjectNames[static_cast<std::size_t>(inst.target_object)])});
    }
    inst.rounds[t].q_tokens = std::move(text.q_tokens);
    inst.rounds[t].r_tokens = std::move(text.r_tokens);
  }

  inst.navigator_path = navigator_path(path, g, derive_seed({seed, 29}), noise);
  inst.mixed_path = mixed_path(path, inst.navigator_path);
  return inst;
}

const HouseGraph& Dataset::house(const std::string& scan_id) const {
  for (const auto& h : houses)
    if (h.scan_id() == scan_id) return h;
  throw DataError("dataset: unknown scan " + scan_id);
}

const std::vector<NdhInstance>& Dataset::split(Split s) const {
  static const std::vector<NdhInstance> empty;
  auto it = splits.find(s);
  return it == splits.end() ? empty : it->second;
}

std::map<Split, int> house_counts(int n_houses, const SplitFractions& f) {
  if (n_houses < 4) throw ConfigError("datagen.n_houses: need at least 4 houses for disjoint splits");
  const std::pair<const char*, double> named[] = {{"datagen.split_fractions.train", f.train},
                                                  {"datagen.split_fractions.val_unseen", f.val_unseen},
                                                  {"datagen.split_fractions.test_unseen", f.test_unseen}};
  for (const auto& [key, v] : named) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(std::string(key) + ": fraction must lie in (0, 1)");
  }
  if (std::abs(f.train + f.val_unseen + f.test_unseen - 1.0) > 1e-9) {
    throw ConfigError("datagen.split_fractions: fractions must sum to 1");
  }
  const int vu = std::max(1, static_cast<int>(std::lround(n_houses * f.val_unseen)));
  const int tu = std::max(1, static_cast<int>(std::lround(n_houses * f.test_unseen)));
  const int train = n_houses - vu - tu;
  if (train < 1) throw ConfigError("datagen.n_houses: too few houses to leave any for training");
  return {{Split::Train, train}, {Split::ValUnseen, vu}, {Split::TestUnseen, tu}};
}

Dataset build_dataset(const DatasetConfig& config) {
  const auto counts = house_counts(config.n_houses, config.split_fractions);
  if (config.nodes_min < 4 || config.nodes_max < config.nodes_min) {
    throw ConfigError("world.nodes_min/nodes_max: need 4 <= nodes_min <= nodes_max");
  }
  if (config.regions_min < 2 || config.regions_max < config.regions_min) {
    throw ConfigError("world.regions_min/regions_max: need 2 <= regions_min <= regions_max");
  }
  std::vector<int> object_vocab;
  for (std::size_t i = 0; i < kObjectNames.size(); ++i) object_vocab.push_back(static_cast<int>(i));

  Dataset data;
  for (int i = 0; i < config.n_houses; ++i) {
    const std::uint64_t hseed = derive_seed({config.seed, 1, static_cast<std::uint64_t>(i)});
    Rng sizes(hseed);
    const int n = sizes.between(config.nodes_min, config.nodes_max);
    const int hi = std::min({config.regions_max, n, static_cast<int>(kRegionNames.size())});
    const int regions = sizes.between(std::min(config.regions_min, hi), hi);
    data.houses.push_back(generate_house(hseed, n, regions, object_vocab));
  }

  Rng rng(derive_seed({config.seed, 2}));
  std::vector<int> order(static_cast<std::size_t>(config.n_houses));
  for (int i = 0; i < config.n_houses; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::map<Split, std::vector<int>> members;
  const int vu = counts.at(Split::ValUnseen), tu = counts.at(Split::TestUnseen);
  for (int i = 0; i < config.n_houses; ++i) {
    const Split s = i < vu ? Split::ValUnseen : (i < vu + tu ? Split::TestUnseen : Split::Train);
    members[s].push_back(order[static_cast<std::size_t>(i)]);
  }
  for (auto& [s, idx] : members) std::sort(idx.begin(), idx.end());

  auto generate = [&](Split split, int house, int count, std::uint64_t salt) {
    const auto& g = data.houses[static_cast<std::size_t>(house)];
    for (int j = 0; j < count; ++j) {
      for (int attempt = 0;; ++attempt) {
        try {
          auto inst = make_instance(g, derive_seed({config.seed, salt, static_cast<std::uint64_t>(house),
                                                    static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(attempt)}),
                                    config.rounds, config.noise);
          inst.split = split;
          data.splits[split].push_back(std::move(inst));
          break;
        } catch (const GenerationError&) {
          if (attempt >= 9) throw;
        }
      }
    }
  };
  for (Split s : kAllSplits) data.splits[s];
  for (int h : members[Split::Train]) {
    generate(Split::Train, h, config.instances_per_house, 3);
    generate(Split::ValSeen, h, config.val_seen_per_house, 4);
    data.split_houses[Split::Train].push_back(data.houses[static_cast<std::size_t>(h)].scan_id());
  }
  for (Split s : {Split::ValUnseen, Split::TestUnseen}) {
    for (int h : members[s]) {
      generate(s, h, config.unseen_per_house, s == Split::ValUnseen ? 5 : 6);
      data.split_houses[s].push_back(data.houses[static_cast<std::size_t>(h)].scan_id());
    }
  }
  data.split_houses[Split::ValSeen] = data.split_houses[Split::Train];
  return data;
}

std::string to_jsonl(const std::vector<NdhInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += to_json(inst).dump();
    out += '\n';
  }
  return out;
}

std::vector<NdhInstance> from_jsonl(const std::string& text) {
  std::vector<NdhInstance> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir, const nlohmann::json& config_echo) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json houses = nlohmann::json::array();
  for (const auto& h : data.houses) houses.push_back(to_json(h));
  write_file(dir / "houses.json", houses.dump() + "\n");
  write_file(dir / "vocab.json", Vocabulary::standard().to_json().dump(1) + "\n");
  nlohmann::json counts = nlohmann::json::object(), split_houses = nlohmann::json::object();
  for (Split s : kAllSplits) {
    write_file(dir / (split_name(s) + ".jsonl"), to_jsonl(data.split(s)));
    counts[split_name(s)] = data.split(s).size();
    auto it = data.split_houses.find(s);
    split_houses[split_name(s)] = it == data.split_houses.end() ? std::vector<std::string>{} : it->second;
  }
  nlohmann::json manifest = {{"counts", counts}, {"houses", split_houses}, {"config", config_echo}};
  write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
  Dataset data;
  try {
    for (const auto& h : nlohmann::json::parse(read_file(dir / "houses.json"))) data.houses.push_back(house_from_json(h));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("houses.json: ") + e.what());
  }
  for (Split s : kAllSplits) {
    const auto path = dir / (split_name(s) + ".jsonl");
    data.splits[s] = from_jsonl(read_file(path));
    std::set<std::string> scans;
    for (const auto& inst : data.splits[s]) {
      data.house(inst.scan_id);
      scans.insert(inst.scan_id);
    }
    data.split_houses[s].assign(scans.begin(), scans.end());
  }
  return data;
}

}  // namespace cmn
