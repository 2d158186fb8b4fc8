#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmn/world.hpp"
#include "json.hpp"

namespace cmn {

inline constexpr int kPadToken = 0;
inline constexpr int kOovToken = 1;
inline constexpr int kSepToken = 2;
inline constexpr std::size_t kMaxSentenceTokens = 24;

class Vocabulary {
 public:
  // Fixed synthetic vocabulary: reserved tokens, template words, regions, objects.
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> tokens);

  int id(const std::string& word) const;  // unknown words map to the OOV id
  const std::string& word(int id) const;
  std::size_t size() const { return tokens_.size(); }
  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

enum class Split { Train, ValSeen, ValUnseen, TestUnseen };
inline constexpr std::array<Split, 4> kAllSplits = {Split::Train, Split::ValSeen, Split::ValUnseen,
                                                    Split::TestUnseen};
std::string split_name(Split s);
Split parse_split(const std::string& s);

enum class Supervision { Oracle, Navigator, Mixed };
std::string supervision_name(Supervision s);
Supervision parse_supervision(const std::string& s);

struct DialogRound {
  std::vector<int> q_tokens;
  std::vector<int> r_tokens;
  std::vector<int> segment;

  friend bool operator==(const DialogRound&, const DialogRound&) = default;
};

struct NdhInstance {
  std::string scan_id;
  int target_object = 0;
  int start = 0;
  int goal_region = 0;
  std::vector<DialogRound> rounds;
  std::vector<int> oracle_path;
  std::vector<int> navigator_path;
  std::vector<int> mixed_path;
  Split split = Split::Train;

  const std::vector<int>& supervision_path(Supervision s) const;
  // Node at which round t ends along the oracle path.
  int round_end(std::size_t t) const { return rounds.at(t).segment.back(); }

  friend bool operator==(const NdhInstance&, const NdhInstance&) = default;
};

nlohmann::json to_json(const NdhInstance& inst);
NdhInstance instance_from_json(const nlohmann::json& j);

struct RoundsRange {
  int lo = 1;
  int hi = 5;
};

struct NavigatorNoise {
  double detour_prob = 0.25;
  double early_stop_prob = 0.15;
};

struct DialogText {
  std::vector<int> q_tokens;
  std::vector<int> r_tokens;
};

// `motion` is the node sequence the response describes (first node is where
// the listener stands). `heading` is the direction the listener faces.
DialogText templated_dialog(const std::vector<int>& motion, const HouseGraph& g, int target_object,
                            std::uint64_t seed, double heading = 0.0, bool mention_target = false);

std::vector<int> navigator_path(const std::vector<int>& oracle, const HouseGraph& g, std::uint64_t seed,
                                const NavigatorNoise& noise = {});
std::vector<int> mixed_path(const std::vector<int>& oracle, const std::vector<int>& navigator);

// Hop range between start and goal for generated instances.
inline constexpr int kMinStartHops = 3;
inline constexpr int kMaxStartHops = 6;

NdhInstance make_instance(const HouseGraph& g, std::uint64_t seed, RoundsRange rounds = {},
                          const NavigatorNoise& noise = {});

// Motion described by round t: the previous round's last node followed by the segment.
std::vector<int> round_motion(const NdhInstance& inst, std::size_t t);
// Heading at the start of round t when following the oracle path from heading 0.
double round_heading(const NdhInstance& inst, const HouseGraph& g, std::size_t t);

struct SplitFractions {
  double train = 0.8;
  double val_unseen = 0.1;
  double test_unseen = 0.1;
};

struct DatasetConfig {
  int n_houses = 40;
  int nodes_min = 16;
  int nodes_max = 25;
  int regions_min = 3;
  int regions_max = 5;
  int instances_per_house = 10;
  int val_seen_per_house = 2;
  int unseen_per_house = 10;
  SplitFractions split_fractions;
  RoundsRange rounds;
  NavigatorNoise noise;
  std::uint64_t seed = 1;
};

struct Dataset {
  std::vector<HouseGraph> houses;
  std::map<Split, std::vector<NdhInstance>> splits;
  std::map<Split, std::vector<std::string>> split_houses;

  const HouseGraph& house(const std::string& scan_id) const;
  const std::vector<NdhInstance>& split(Split s) const;
};

// Number of houses per split for `n_houses` under the given fractions.
std::map<Split, int> house_counts(int n_houses, const SplitFractions& f);

Dataset build_dataset(const DatasetConfig& config);

void write_dataset(const Dataset& data, const std::filesystem::path& dir, const nlohmann::json& config_echo);
Dataset read_dataset(const std::filesystem::path& dir);

std::string to_jsonl(const std::vector<NdhInstance>& instances);
std::vector<NdhInstance> from_jsonl(const std::string& text);

}  // namespace cmn
