#pragma once

// Experiment configuration: a flat key/value document, either TOML-style
// `key = value` lines or a JSON object, validated against a per-command
// schema. Unknown keys and mistyped values raise ConfigError.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rat {

using Json = nlohmann::json;

enum class Command { illustrate_gaussian, verify_kaczmarz, train, ablate };

Command parse_command(std::string_view name);
std::string_view command_name(Command c);

/// Parses config text. JSON when the first non-blank character is '{',
/// otherwise `key = value` lines whose values use JSON scalar/array syntax
/// (numbers, true/false, "strings", [lists]); '#' starts a comment.
Json parse_config_text(std::string_view text);
Json load_config_file(const std::string& path);

/// Applies `key=value`; the value is read as JSON, falling back to a bare string.
void apply_override(Json& cfg, std::string_view assignment);

/// Fills defaults, checks every key against the command's schema and
/// normalizes numeric types. Throws ConfigError.
Json resolve_config(Command command, const Json& raw);

/// Seed precedence: explicit flag, then RAT_SEED, then the config. For train
/// and ablate the chosen seed replaces the `seeds` list with a single entry.
void apply_seed(Command command, Json& cfg, std::optional<std::uint64_t> flag_seed,
                const char* env_seed);

/// Keys accepted by a command, in schema order.
std::vector<std::string> schema_keys(Command command);

}  // namespace rat
