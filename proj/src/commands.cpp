#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "rat/experiment.hpp"

namespace rat {
namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
}

Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

int illustrate(const Json& cfg, const fs::path& out, std::ostream& log) {
  const FieldOptions opts = field_options_from_config(cfg);
  const auto rows = gradient_field(opts);
  std::ostringstream csv;
  csv << "#schema=theta1:f64,theta2:f64,method:str,g1:f64,g2:f64\n";
  csv << "theta1,theta2,method,g1,g2\n";
  for (const auto& r : rows) {
    csv << format_double(r.theta1) << ',' << format_double(r.theta2) << ',' << r.method << ','
        << format_double(r.g1) << ',' << format_double(r.g2) << '\n';
  }
  write_file(out / "gradient_field.csv", csv.str());
  const double threshold = cfg.at("cosine_threshold").get<double>();
  const auto agree = field_agreement(rows, threshold);
  Json summary = {{"command", "illustrate-gaussian"},
                  {"config", cfg},
                  {"grid_points", agree.points},
                  {"rows", rows.size()},
                  {"rat_vs_empirical",
                   {{"threshold", threshold}, {"fraction_at_threshold", agree.fraction}, {"min_cosine", agree.min_cosine}}}};
  write_file(out / "summary.json", dump(summary));
  log << "gradient field: " << rows.size() << " rows, rat/empirical cosine >= " << format_double(threshold)
      << " on " << format_double(100.0 * agree.fraction) << "% of points\n";
  return 0;
}

int verify(const Json& cfg, const fs::path& out, std::ostream& log) {
  const VerifySettings v = VerifySettings::from_config(cfg);
  const VerifyReport rep = verify_kaczmarz(v);
  Json systems = Json::array();
  Json mu = Json::array(), rate = Json::array(), ok = Json::array();
  for (const auto& s : rep.systems) {
    systems.push_back({{"mu_hat", s.mu_hat},
                       {"rate_fit", s.rate_fit},
                       {"max_bound_ratio", s.max_bound_ratio},
                       {"bound_satisfied", s.bound_satisfied}});
    mu.push_back(s.mu_hat);
    rate.push_back(s.rate_fit);
    ok.push_back(s.bound_satisfied);
  }
  Json sweep = Json::array();
  for (const auto& p : rep.lambda_sweep) sweep.push_back({{"lambda", p.lambda}, {"mu_hat", p.mu_hat}});
  Json report = {{"command", "verify-kaczmarz"},
                 {"config", cfg},
                 {"mu_hat", mu},
                 {"rate_fit", rate},
                 {"bound_satisfied", ok},
                 {"systems", systems},
                 {"noise_floor_ratio", rep.noise_floor_ratio},
                 {"noise",
                  {{"mu_hat", rep.noise_mu_hat},
                   {"eta2", rep.noise_eta2},
                   {"floor", rep.noise_floor},
                   {"mean_error", rep.noise_mean_error},
                   {"bound_satisfied", rep.noise_bound_satisfied}}},
                 {"lambda_sweep", sweep},
                 {"mu_decreasing_in_lambda", rep.mu_decreasing_in_lambda},
                 {"all_satisfied", rep.all_satisfied()}};
  write_file(out / "report.json", dump(report));
  std::size_t good = 0;
  for (const auto& s : rep.systems) good += s.bound_satisfied ? 1 : 0;
  log << "contraction bound: " << good << "/" << rep.systems.size() << " systems; noise floor ratio "
      << format_double(rep.noise_floor_ratio) << "; mu decreasing in lambda: "
      << (rep.mu_decreasing_in_lambda ? "yes" : "no") << "\n";
  return rep.all_satisfied() ? 0 : 1;
}

std::string run_csv(const RunResult& r, bool wall_time) {
  std::ostringstream csv;
  csv << "#schema=update:u64,env_steps:u64,eval_return:f64,g_norm:f64,direction_norm:f64,alpha:f64,"
         "max_step_norm:f64,residual:f64"
      << (wall_time ? ",wall_time:f64" : "") << "\n";
  csv << "update,env_steps,eval_return,g_norm,direction_norm,alpha,max_step_norm,residual"
      << (wall_time ? ",wall_time" : "") << "\n";
  for (const auto& u : r.records) {
    csv << u.update << ',' << u.env_steps << ',' << format_double(u.eval_return) << ',' << format_double(u.g_norm)
        << ',' << format_double(u.direction_norm) << ',' << format_double(u.alpha) << ','
        << format_double(u.max_step_norm) << ',' << format_double(u.residual);
    if (wall_time) csv << ',' << format_double(u.wall_time);
    csv << '\n';
  }
  if (r.failed) {
    // NaN sentinel row marks the failed run.
    csv << r.records.size() + 1 << ",0,nan,nan,nan,nan,nan,nan" << (wall_time ? ",nan" : "") << '\n';
  }
  return csv.str();
}

struct MeanSe {
  double mean = std::nan("");
  double se = std::nan("");
};

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe m;
  if (xs.empty()) return m;
  double s = 0.0;
  for (double x : xs) s += x;
  m.mean = s / static_cast<double>(xs.size());
  if (xs.size() < 2) {
    m.se = 0.0;
    return m;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  return m;
}

std::vector<std::uint64_t> seeds_of(const Json& cfg) {
  auto seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  return seeds;
}

int train(const Json& cfg, const fs::path& out, std::ostream& log) {
  const TrainSettings s = TrainSettings::from_config(cfg);
  const auto seeds = seeds_of(cfg);
  const auto results = train_seeds(s, seeds);
  Json runs = Json::array();
  std::vector<double> finals;
  std::size_t failed = 0;
  for (const auto& r : results) {
    write_file(out / ("train_seed" + std::to_string(r.seed) + ".csv"), run_csv(r, s.record_wall_time));
    Json run = {{"seed", r.seed},
                {"final_return", number_or_null(r.final_return)},
                {"failed", r.failed},
                {"inner_steps", r.inner_steps},
                {"clip_violations", r.clip_violations},
                {"max_step_norm", r.max_step_norm}};
    if (r.failed) run["error"] = r.error;
    runs.push_back(run);
    if (r.failed) {
      ++failed;
      log << "seed " << r.seed << " failed: " << r.error << "\n";
    } else {
      finals.push_back(r.final_return);
    }
  }
  const auto m = mean_se(finals);
  Json summary = {{"command", "train"},
                  {"config", cfg},
                  {"runs", runs},
                  {"final_return_mean", number_or_null(m.mean)},
                  {"final_return_stderr", number_or_null(m.se)},
                  {"failed_seeds", failed}};
  write_file(out / "summary.json", dump(summary));
  log << "final return " << format_double(m.mean) << " +- " << format_double(m.se) << " over "
      << finals.size() << " seeds\n";
  return failed == 0 ? 0 : 3;
}

int ablate(const Json& cfg, const fs::path& out, std::ostream& log) {
  const TrainSettings base = TrainSettings::from_config(cfg);
  const auto seeds = seeds_of(cfg);
  const std::string axis = cfg.at("axis").get<std::string>();
  auto values = cfg.at("values").get<std::vector<double>>();
  if (values.empty()) values = default_axis_values(axis);
  const auto rows = run_ablation(base, axis, values, seeds);
  std::ostringstream csv;
  csv << "#schema=axis:str,value:f64,seed:u64,final_return:f64\n";
  csv << "axis,value,seed,final_return\n";
  std::size_t failed = 0;
  Json points = Json::array();
  for (double v : values) {
    std::vector<double> finals;
    for (const auto& r : rows) {
      if (r.value == v && !r.failed) finals.push_back(r.final_return);
    }
    const auto m = mean_se(finals);
    points.push_back({{"value", v}, {"final_return_mean", number_or_null(m.mean)},
                      {"final_return_stderr", number_or_null(m.se)}, {"completed", finals.size()}});
  }
  for (const auto& r : rows) {
    csv << r.axis << ',' << format_double(r.value) << ',' << r.seed << ',' << format_double(r.final_return) << '\n';
    failed += r.failed ? 1 : 0;
  }
  write_file(out / "ablation.csv", csv.str());
  Json summary = {{"command", "ablate"}, {"config", cfg}, {"axis", axis}, {"points", points}, {"failed_runs", failed}};
  write_file(out / "summary.json", dump(summary));
  log << "ablation over " << axis << ": " << rows.size() << " runs, " << failed << " failed\n";
  return failed == 0 ? 0 : 3;
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

int run_command(Command command, const Json& resolved, const fs::path& out_dir, std::ostream& log) {
  ensure_dir(out_dir);
  switch (command) {
    case Command::illustrate_gaussian: return illustrate(resolved, out_dir, log);
    case Command::verify_kaczmarz: return verify(resolved, out_dir, log);
    case Command::train: return train(resolved, out_dir, log);
    case Command::ablate: return ablate(resolved, out_dir, log);
  }
  return 3;
}

}  // namespace rat
