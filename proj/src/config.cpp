#include "rat/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "rat/errors.hpp"

namespace rat {
namespace {

enum class Kind { uint, real, boolean, choice, uint_list, real_list };

constexpr unsigned kIllustrate = 1u << 0;
constexpr unsigned kVerify = 1u << 1;
constexpr unsigned kTrain = 1u << 2;
constexpr unsigned kAblate = 1u << 3;
constexpr unsigned kRun = kTrain | kAblate;

struct Entry {
  const char* key;
  Kind kind;
  unsigned commands;
  Json fallback;
  std::vector<std::string> choices = {};
};

const std::vector<Entry>& schema() {
  static const std::vector<Entry> entries = {
      // illustrate-gaussian
      {"seed", Kind::uint, kIllustrate | kVerify, 0},
      {"n_samples", Kind::uint, kIllustrate, 2000},
      {"block_size", Kind::uint, kIllustrate, 500},
      {"n_steps", Kind::uint, kIllustrate, 4},
      {"lambda", Kind::real, kIllustrate | kVerify | kRun, 0.1},
      {"theta1_min", Kind::real, kIllustrate, -2.0},
      {"theta1_max", Kind::real, kIllustrate, 2.0},
      {"theta1_points", Kind::uint, kIllustrate, 17},
      {"theta2_min", Kind::real, kIllustrate, -1.5},
      {"theta2_max", Kind::real, kIllustrate, 1.5},
      {"theta2_points", Kind::uint, kIllustrate, 13},
      {"cosine_threshold", Kind::real, kIllustrate, 0.95},
      // verify-kaczmarz
      {"n_systems", Kind::uint, kVerify, 20},
      {"n_rows", Kind::uint, kVerify, 100},
      {"n_cols", Kind::uint, kVerify, 10},
      {"block_size", Kind::uint, kVerify, 2},
      {"n_steps", Kind::uint, kVerify, 200},
      {"n_runs", Kind::uint, kVerify, 200},
      {"sampling", Kind::choice, kVerify, "uniform_with_replacement",
       {"uniform_with_replacement", "shuffled_epoch"}},
      {"mu_samples", Kind::uint, kVerify, 2000},
      {"bound_factor", Kind::real, kVerify, 1.1},
      {"noise_std", Kind::real, kVerify, 0.1},
      {"noise_steps", Kind::uint, kVerify, 2000},
      {"noise_runs", Kind::uint, kVerify, 50},
      {"floor_factor", Kind::real, kVerify, 1.2},
      {"sweep_lambdas", Kind::real_list, kVerify, Json::array({0.01, 0.1, 1.0})},
      {"sweep_rank", Kind::uint, kVerify, 1},
      // train and ablate
      {"seeds", Kind::uint_list, kRun, Json::array({1, 2, 3, 4, 5})},
      {"env", Kind::choice, kRun, "chain", {"chain", "point_mass"}},
      {"method", Kind::choice, kRun, "rat", {"rat", "vanilla_pg", "exact_tnpg", "cg_fvp"}},
      {"shared_ac", Kind::boolean, kRun, false},
      {"updates", Kind::uint, kRun, 30},
      {"rollout_steps", Kind::uint, kRun, 64},
      {"n_envs", Kind::uint, kRun, 8},
      {"chain_states", Kind::uint, kRun, 5},
      {"episode_length", Kind::uint, kRun, 20},
      {"step_limit", Kind::uint, kRun, 100},
      {"hidden", Kind::uint_list, kRun, Json::array({32})},
      {"critic_hidden", Kind::uint_list, kRun, Json::array({32})},
      {"activation", Kind::choice, kRun, "tanh", {"tanh", "relu"}},
      {"initial_log_std", Kind::real, kRun, 0.0},
      {"lr", Kind::real, kRun, 0.05},
      {"clip", Kind::real, kRun, 0.5},
      {"value_lr", Kind::real, kRun, 0.001},
      {"value_clip", Kind::real, kRun, 5.0},
      {"minibatch", Kind::uint, kRun, 128},
      {"epochs_per_update", Kind::uint, kRun, 8},
      {"kaczmarz_iters", Kind::uint, kRun, 0},
      {"mode", Kind::choice, kRun, "interleaved", {"interleaved", "fixed_policy"}},
      {"advantage_source", Kind::choice, kRun, "pre_normalized", {"pre_normalized", "raw"}},
      {"reset_g_per_rollout", Kind::boolean, kRun, true},
      {"transform", Kind::boolean, kRun, true},
      {"clip_enabled", Kind::boolean, kRun, true},
      {"gamma", Kind::real, kRun, 0.99},
      {"gae_lambda", Kind::real, kRun, 0.95},
      {"normalize_obs", Kind::boolean, kRun, true},
      {"popart", Kind::boolean, kRun, true},
      {"cg_iters", Kind::uint, kRun, 10},
      {"eval_episodes", Kind::uint, kRun, 10},
      {"record_wall_time", Kind::boolean, kRun, false},
      // ablate
      {"axis", Kind::choice, kAblate, "no_transform",
       {"batch_size", "kaczmarz_iters", "damping", "no_transform", "no_clip"}},
      {"values", Kind::real_list, kAblate, Json::array()},
  };
  return entries;
}

unsigned command_bit(Command c) {
  switch (c) {
    case Command::illustrate_gaussian: return kIllustrate;
    case Command::verify_kaczmarz: return kVerify;
    case Command::train: return kTrain;
    case Command::ablate: return kAblate;
  }
  return 0;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// Drops a trailing comment, ignoring '#' inside double quotes.
std::string strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

bool is_uint(const Json& v) {
  if (v.is_number_unsigned()) return true;
  if (v.is_number_integer()) return v.get<std::int64_t>() >= 0;
  if (v.is_number_float()) {
    const double d = v.get<double>();
    return std::isfinite(d) && d >= 0.0 && d == std::floor(d) && d < 1.8e19;
  }
  return false;
}

Json coerce(const Entry& e, const Json& v) {
  const std::string key = e.key;
  const auto fail = [&](const std::string& what) { throw ConfigError("config key '" + key + "': " + what); };
  switch (e.kind) {
    case Kind::uint:
      if (!is_uint(v)) fail("expected a non-negative integer");
      return v.is_number_float() ? Json(static_cast<std::uint64_t>(v.get<double>())) : Json(v.get<std::uint64_t>());
    case Kind::real:
      if (!v.is_number()) fail("expected a number");
      if (!std::isfinite(v.get<double>())) fail("expected a finite number");
      return v.get<double>();
    case Kind::boolean:
      if (!v.is_boolean()) fail("expected true or false");
      return v;
    case Kind::choice: {
      if (!v.is_string()) fail("expected a string");
      const auto s = v.get<std::string>();
      for (const auto& c : e.choices) {
        if (c == s) return v;
      }
      std::string options;
      for (const auto& c : e.choices) options += (options.empty() ? "" : ", ") + c;
      fail("'" + s + "' is not one of {" + options + "}");
      return Json();
    }
    case Kind::uint_list: {
      if (!v.is_array()) fail("expected a list of non-negative integers");
      Json out = Json::array();
      for (const auto& x : v) {
        if (!is_uint(x)) fail("expected a list of non-negative integers");
        out.push_back(x.is_number_float() ? static_cast<std::uint64_t>(x.get<double>()) : x.get<std::uint64_t>());
      }
      return out;
    }
    case Kind::real_list: {
      if (!v.is_array()) fail("expected a list of numbers");
      Json out = Json::array();
      for (const auto& x : v) {
        if (!x.is_number() || !std::isfinite(x.get<double>())) fail("expected a list of finite numbers");
        out.push_back(x.get<double>());
      }
      return out;
    }
  }
  return v;
}

}  // namespace

Command parse_command(std::string_view name) {
  if (name == "illustrate-gaussian") return Command::illustrate_gaussian;
  if (name == "verify-kaczmarz") return Command::verify_kaczmarz;
  if (name == "train") return Command::train;
  if (name == "ablate") return Command::ablate;
  throw ConfigError("unknown command '" + std::string(name) + "'");
}

std::string_view command_name(Command c) {
  switch (c) {
    case Command::illustrate_gaussian: return "illustrate-gaussian";
    case Command::verify_kaczmarz: return "verify-kaczmarz";
    case Command::train: return "train";
    case Command::ablate: return "ablate";
  }
  return "";
}

Json parse_config_text(std::string_view text) {
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    try {
      Json j = Json::parse(body);
      if (!j.is_object()) throw ConfigError("config: JSON document must be an object");
      return j;
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
  }
  Json out = Json::object();
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string content = trim(strip_comment(line));
    if (content.empty()) continue;
    const auto where = "config line " + std::to_string(line_no) + ": ";
    if (content.front() == '[') throw ConfigError(where + "tables are not supported; keys are flat");
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + "expected key = value");
    if (out.contains(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      out[key] = Json::parse(value);
    } catch (const Json::parse_error&) {
      throw ConfigError(where + "cannot parse value of '" + key + "'");
    }
  }
  return out;
}

Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(Json& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "': expected key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) throw ConfigError("override '" + std::string(assignment) + "': empty key");
  try {
    cfg[key] = Json::parse(value);
  } catch (const Json::parse_error&) {
    cfg[key] = value;
  }
}

Json resolve_config(Command command, const Json& raw) {
  if (!raw.is_object()) throw ConfigError("config must be a key/value object");
  const unsigned bit = command_bit(command);
  for (const auto& [key, value] : raw.items()) {
    bool known = false;
    for (const auto& e : schema()) known = known || ((e.commands & bit) != 0 && key == e.key);
    if (!known) {
      throw ConfigError("unknown config key '" + key + "' for command " + std::string(command_name(command)));
    }
  }
  Json out = Json::object();
  for (const auto& e : schema()) {
    if ((e.commands & bit) == 0) continue;
    out[e.key] = coerce(e, raw.contains(e.key) ? raw.at(e.key) : e.fallback);
  }
  return out;
}

void apply_seed(Command command, Json& cfg, std::optional<std::uint64_t> flag_seed, const char* env_seed) {
  std::optional<std::uint64_t> seed = flag_seed;
  if (!seed && env_seed != nullptr && *env_seed != '\0') {
    const std::string s = trim(env_seed);
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') throw ConfigError("RAT_SEED must be a non-negative integer");
    seed = v;
  }
  if (!seed) return;
  if (command == Command::train || command == Command::ablate) {
    cfg["seeds"] = Json::array({*seed});
  } else {
    cfg["seed"] = *seed;
  }
}

std::vector<std::string> schema_keys(Command command) {
  std::vector<std::string> keys;
  for (const auto& e : schema()) {
    if ((e.commands & command_bit(command)) != 0) keys.emplace_back(e.key);
  }
  return keys;
}

}  // namespace rat
