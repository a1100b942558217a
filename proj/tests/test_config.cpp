#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rat/config.hpp"
#include "rat/errors.hpp"

using namespace rat;

TEST_CASE("command names round-trip") {
  for (auto c : {Command::illustrate_gaussian, Command::verify_kaczmarz, Command::train, Command::ablate}) {
    CHECK(parse_command(command_name(c)) == c);
  }
  CHECK_THROWS_AS(parse_command("plot"), ConfigError);
}

TEST_CASE("key = value text") {
  Json j = parse_config_text(R"(
# comment line
env = "point_mass"   # trailing comment
lambda = 0.4
hidden = [16, 16]
popart = false
label = "a # not a comment"
)");
  CHECK(j["env"] == "point_mass");
  CHECK(j["lambda"] == 0.4);
  CHECK(j["hidden"] == Json::array({16, 16}));
  CHECK(j["popart"] == false);
  CHECK(j["label"] == "a # not a comment");
}

TEST_CASE("JSON text") {
  Json j = parse_config_text(R"({"lr": 0.1, "seeds": [3]})");
  CHECK(j["lr"] == 0.1);
  CHECK_THROWS_AS(parse_config_text("{not json"), ConfigError);
}

TEST_CASE("malformed text is rejected") {
  CHECK_THROWS_AS(parse_config_text("[table]\nx = 1"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("x 1"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("x = 1\nx = 2"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("x = bare"), ConfigError);
  CHECK_THROWS_AS(load_config_file("/nonexistent/config.toml"), ConfigError);
}

TEST_CASE("resolve fills defaults and checks types") {
  Json r = resolve_config(Command::train, Json::object());
  CHECK(r["method"] == "rat");
  CHECK(r["seeds"] == Json::array({1, 2, 3, 4, 5}));
  CHECK(r["lambda"] == 0.1);
  CHECK(r["epochs_per_update"] == 8);
  CHECK_FALSE(r.contains("axis"));
  CHECK(resolve_config(Command::ablate, Json::object())["axis"] == "no_transform");

  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"n_systems", 3}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"updates", -1}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"updates", 1.5}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"lambda", "big"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"method", "ppo"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"popart", 1}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Command::train, Json{{"seeds", Json::array({1, -2})}}), ConfigError);

  Json whole = resolve_config(Command::train, Json{{"updates", 4.0}, {"lr", 1}});
  CHECK(whole["updates"].is_number_unsigned());
  CHECK(whole["lr"].is_number_float());
}

TEST_CASE("resolving a resolved config is a fixed point") {
  for (auto c : {Command::illustrate_gaussian, Command::verify_kaczmarz, Command::train, Command::ablate}) {
    Json r = resolve_config(c, Json::object());
    CHECK(resolve_config(c, r) == r);
    CHECK(r.size() == schema_keys(c).size());
  }
}

TEST_CASE("overrides") {
  Json cfg = Json::object();
  apply_override(cfg, "lambda=0.3");
  apply_override(cfg, "env=point_mass");
  apply_override(cfg, "hidden=[8,8]");
  apply_override(cfg, " method = \"cg_fvp\" ");
  CHECK(cfg["lambda"] == 0.3);
  CHECK(cfg["env"] == "point_mass");
  CHECK(cfg["hidden"] == Json::array({8, 8}));
  CHECK(cfg["method"] == "cg_fvp");
  CHECK_THROWS_AS(apply_override(cfg, "lambda"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "=3"), ConfigError);
}

TEST_CASE("seed precedence: flag, then environment, then config") {
  Json cfg{{"seed", 5}};
  apply_seed(Command::verify_kaczmarz, cfg, std::nullopt, nullptr);
  CHECK(cfg["seed"] == 5);
  apply_seed(Command::verify_kaczmarz, cfg, std::nullopt, "9");
  CHECK(cfg["seed"] == 9);
  apply_seed(Command::verify_kaczmarz, cfg, 12, "9");
  CHECK(cfg["seed"] == 12);

  Json run{{"seeds", Json::array({1, 2})}};
  apply_seed(Command::train, run, std::nullopt, "");
  CHECK(run["seeds"] == Json::array({1, 2}));
  apply_seed(Command::train, run, std::nullopt, "7");
  CHECK(run["seeds"] == Json::array({7}));

  CHECK_THROWS_AS(apply_seed(Command::train, run, std::nullopt, "seven"), ConfigError);
  CHECK_THROWS_AS(apply_seed(Command::train, run, std::nullopt, "-3"), ConfigError);
  CHECK_THROWS_AS(apply_seed(Command::train, run, std::nullopt, "3x"), ConfigError);
}
