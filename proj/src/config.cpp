#include "cmn/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <functional>
#include <map>
#include <type_traits>

#include "cmn/errors.hpp"

namespace cmn {

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  model.seed = s;
  train.seed = s;
}

namespace {

using Setter = std::function<void(const nlohmann::json&)>;

template <typename T>
Setter set(T& field) {
  return [&field](const nlohmann::json& v) {
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer");
      if (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<long long>() < 0) {
        throw ConfigError("expected a nonnegative integer");
      }
    }
    field = v.get<T>();
  };
}

void apply_section(const nlohmann::json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = section + "." + it.key();
    auto s = setters.find(it.key());
    if (s == setters.end()) throw ConfigError(key + ": unknown key");
    try {
      s->second(it.value());
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key + ": wrong type");
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
}

std::vector<std::string> split_names(const std::vector<Split>& v) {
  std::vector<std::string> out;
  for (Split s : v) out.push_back(split_name(s));
  return out;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& section = it.key();
    const auto& v = it.value();
    if (section == "seed") {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError("seed: expected a nonnegative integer");
      }
      cfg.seed = v.get<std::uint64_t>();
    } else if (section == "world") {
      apply_section(v, "world", {{"nodes_min", set(cfg.data.nodes_min)},
                                 {"nodes_max", set(cfg.data.nodes_max)},
                                 {"regions_min", set(cfg.data.regions_min)},
                                 {"regions_max", set(cfg.data.regions_max)}});
    } else if (section == "datagen") {
      auto& d = cfg.data;
      apply_section(
          v, "datagen",
          {{"n_houses", set(d.n_houses)},
           {"instances_per_house", set(d.instances_per_house)},
           {"val_seen_per_house", set(d.val_seen_per_house)},
           {"unseen_per_house", set(d.unseen_per_house)},
           {"rounds_min", set(d.rounds.lo)},
           {"rounds_max", set(d.rounds.hi)},
           {"detour_prob", set(d.noise.detour_prob)},
           {"early_stop_prob", set(d.noise.early_stop_prob)},
           {"split_fractions", [&d](const nlohmann::json& f) {
              apply_section(f, "datagen.split_fractions",
                            {{"train", set(d.split_fractions.train)},
                             {"val_unseen", set(d.split_fractions.val_unseen)},
                             {"test_unseen", set(d.split_fractions.test_unseen)}});
            }}});
    } else if (section == "model") {
      if (!v.is_object()) throw ConfigError("model: expected an object");
      nlohmann::json m = cfg.model.to_json();
      for (auto f = v.begin(); f != v.end(); ++f) {
        if (f.key() == "seed") throw ConfigError("model.seed: set the top-level seed instead");
        if (!m.contains(f.key())) throw ConfigError("model." + f.key() + ": unknown key");
        m[f.key()] = f.value();
      }
      cfg.model = ModelConfig::from_json(m);
    } else if (section == "train") {
      auto& t = cfg.train;
      apply_section(v, "train",
                    {{"lr", set(t.lr)},
                     {"decay", set(t.decay)},
                     {"eps", set(t.eps)},
                     {"iterations", set(t.iterations)},
                     {"batch_size", set(t.batch_size)},
                     {"eval_every", set(t.eval_every)},
                     {"max_steps_per_round", set(t.max_steps_per_round)},
                     {"sample", set(t.sample)},
                     {"detach_across_rounds", set(t.detach_across_rounds)},
                     {"eval_limit", set(t.eval_limit)},
                     {"supervision", [&t](const nlohmann::json& s) { t.supervision = parse_supervision(s.get<std::string>()); }},
                     {"select_split", [&t](const nlohmann::json& s) { t.select_split = parse_split(s.get<std::string>()); }},
                     {"eval_splits", [&t](const nlohmann::json& s) {
                        t.eval_splits.clear();
                        for (const auto& name : s) t.eval_splits.push_back(parse_split(name.get<std::string>()));
                      }}});
    } else if (section == "eval") {
      apply_section(v, "eval", {{"threshold_m", set(cfg.threshold_m)}});
    } else {
      throw ConfigError(section + ": unknown section");
    }
  }
  cfg.train.threshold_m = cfg.threshold_m;
  cfg.apply_seed(cfg.seed);
  house_counts(cfg.data.n_houses, cfg.data.split_fractions);
  if (cfg.data.rounds.lo < 1 || cfg.data.rounds.hi < cfg.data.rounds.lo) {
    throw ConfigError("datagen.rounds_min: need 1 <= rounds_min <= rounds_max");
  }
  for (double p : {cfg.data.noise.detour_prob, cfg.data.noise.early_stop_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("datagen.detour_prob/early_stop_prob: must lie in [0, 1]");
  }
  if (cfg.data.instances_per_house < 0 || cfg.data.val_seen_per_house < 0 || cfg.data.unseen_per_house < 0) {
    throw ConfigError("datagen: instance counts must be nonnegative");
  }
  cfg.train.validate();
  return cfg;
}

nlohmann::json to_json(const RunConfig& cfg) {
  const auto& d = cfg.data;
  const auto& t = cfg.train;
  nlohmann::json model = cfg.model.to_json();
  model.erase("seed");
  return {{"seed", cfg.seed},
          {"world",
           {{"nodes_min", d.nodes_min}, {"nodes_max", d.nodes_max}, {"regions_min", d.regions_min},
            {"regions_max", d.regions_max}}},
          {"datagen",
           {{"n_houses", d.n_houses},
            {"instances_per_house", d.instances_per_house},
            {"val_seen_per_house", d.val_seen_per_house},
            {"unseen_per_house", d.unseen_per_house},
            {"rounds_min", d.rounds.lo},
            {"rounds_max", d.rounds.hi},
            {"detour_prob", d.noise.detour_prob},
            {"early_stop_prob", d.noise.early_stop_prob},
            {"split_fractions",
             {{"train", d.split_fractions.train},
              {"val_unseen", d.split_fractions.val_unseen},
              {"test_unseen", d.split_fractions.test_unseen}}}}},
          {"model", model},
          {"train",
           {{"lr", t.lr},
            {"decay", t.decay},
            {"eps", t.eps},
            {"iterations", t.iterations},
            {"batch_size", t.batch_size},
            {"eval_every", t.eval_every},
            {"supervision", supervision_name(t.supervision)},
            {"max_steps_per_round", t.max_steps_per_round},
            {"sample", t.sample},
            {"detach_across_rounds", t.detach_across_rounds},
            {"eval_limit", t.eval_limit},
            {"eval_splits", split_names(t.eval_splits)},
            {"select_split", split_name(t.select_split)}}},
          {"eval", {{"threshold_m", cfg.threshold_m}}}};
}

void apply_override(nlohmann::json& doc, const std::string& key, const std::string& value) {
  if (key.empty() || key.front() == '.' || key.back() == '.') throw ConfigError("override: malformed key '" + key + "'");
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override: malformed key '" + key + "'");
    if (!node->is_object()) throw ConfigError("override: '" + key + "' does not name a config section");
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const char* env, std::uint64_t from_config) {
  if (flag) return *flag;
  if (env != nullptr && *env != '\0') {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0' || *env == '-') {
      throw ConfigError("CMN_SEED: not a nonnegative integer: '" + std::string(env) + "'");
    }
    return v;
  }
  return from_config;
}

}  // namespace cmn
