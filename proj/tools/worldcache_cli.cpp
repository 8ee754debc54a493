// SPDX-License-Identifier: Apache-2.0
//
// worldcache: run cache policies on synthetic scenarios, compare them, and
// record or replay WCTR traces.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "worldcache/config.hpp"
#include "worldcache/sim.hpp"
#include "worldcache/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace worldcache;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
  std::string config_path;
  std::string policy;
  std::string scenario;
  std::string seed;
  std::string out;
  std::string trace;
  std::string sweep;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON configuration file");
  cmd->add_option("--policy", o.policy, "worldcache | fixed-threshold-scalar-ratio | fixed-schedule | full-compute");
  cmd->add_option("--scenario", o.scenario, "static | linear-drift | translating-pattern | curved | rising-drift");
  cmd->add_option("--seed", o.seed, "scenario seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--trace", o.trace, "trace file path");
  cmd->add_option("--sweep", o.sweep, "key=start:stop:step or key=v1,v2,...");
  cmd->allow_extras();
}

// Remaining "--dotted.key value" or "--dotted.key=value" arguments.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() <= 2) throw ConfigError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for '" + a + "'");
      out.emplace_back(body, extras[++i]);
    }
  }
  return out;
}

json user_settings(const CommonOptions& o, const std::vector<std::string>& extras) {
  json user = config::load_file(o.config_path);
  if (!o.policy.empty()) config::set_dotted(user, "run.policy", o.policy);
  if (!o.scenario.empty()) config::set_dotted(user, "scenario.kind", o.scenario);
  if (!o.seed.empty()) {
    const json v = config::parse_value(o.seed);
    if (!v.is_number_unsigned()) throw ConfigError("--seed must be a nonnegative integer");
    config::set_dotted(user, "scenario.seed", v);
  }
  if (!o.out.empty()) config::set_dotted(user, "output.dir", o.out);
  if (!o.trace.empty()) config::set_dotted(user, "output.trace", o.trace);
  for (const auto& [k, v] : dotted_overrides(extras)) config::set_dotted(user, k, config::parse_value(v));
  config::build(user);  // fail fast on bad values before any work starts
  return user;
}

struct Sweep {
  std::string key;
  std::vector<double> values;
};

Sweep parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("--sweep expects key=range");
  Sweep s;
  s.key = config::resolve_key(text.substr(0, eq));
  const std::string range = text.substr(eq + 1);
  const auto number = [&](const std::string& t) {
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size() || !std::isfinite(v)) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + t + "' in --sweep");
    }
  };
  if (std::count(range.begin(), range.end(), ':') == 2) {
    const auto a = range.find(':');
    const auto b = range.find(':', a + 1);
    const double start = number(range.substr(0, a));
    const double stop = number(range.substr(a + 1, b - a - 1));
    const double step = number(range.substr(b + 1));
    if (!(step > 0.0) || stop < start) throw ConfigError("--sweep range needs step > 0 and stop >= start");
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9)) + 1;
    if (n > 100000) throw ConfigError("--sweep range has too many points");
    for (long i = 0; i < n; ++i) s.values.push_back(start + static_cast<double>(i) * step);
  } else {
    std::stringstream ss(range);
    std::string tok;
    while (std::getline(ss, tok, ',')) s.values.push_back(number(tok));
  }
  if (s.values.empty()) throw ConfigError("--sweep has no values");
  return s;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

double mean_hit_error(const RunReport& r) {
  double s = 0.0;
  int n = 0;
  for (const auto& st : r.steps)
    if (st.decision.is_hit() && st.oracle_error) {
      s += *st.oracle_error;
      ++n;
    }
  return n > 0 ? s / n : 0.0;
}

void write_steps_csv(const fs::path& path, const RunReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,decision,raw_drift,swd,swd_relative,velocity,threshold,gamma,gamma_scalar_ratio,warp_used,"
         "flow_fit_ratio,cost_spent,oracle_error\n";
  for (const auto& s : r.steps)
    out << s.step << ',' << to_string(s.decision.kind) << ',' << num(s.raw_drift) << ',' << num(s.swd) << ','
        << num(s.swd_relative) << ',' << opt(s.velocity) << ',' << num(s.threshold) << ',' << opt(s.gamma) << ','
        << opt(s.gamma_scalar_ratio) << ',' << (s.warp_used ? 1 : 0) << ',' << opt(s.flow_fit_ratio) << ','
        << num(s.cost_spent) << ',' << opt(s.oracle_error) << '\n';
}

json report_json(const RunReport& r, const RunConfig& rc, const json& effective) {
  json j;
  j["mode"] = r.open_loop ? "open-loop" : "closed-loop";
  j["policy"] = std::string(to_string(rc.engine.kind));
  j["scenario"] = std::string(to_string(rc.scenario.kind));
  j["seed"] = rc.scenario.seed;
  j["steps"] = r.steps.size();
  j["hits"] = r.hits;
  j["skip_rate"] = r.skip_rate;
  j["full_cost"] = r.full_cost;
  j["total_cost"] = r.total_cost;
  j["simulated_speedup"] = r.simulated_speedup;
  j["final_output_error"] = r.final_output_error ? json(*r.final_output_error) : json(nullptr);
  j["mean_hit_error"] = mean_hit_error(r);
  j["warped_hits"] = std::count_if(r.steps.begin(), r.steps.end(), [](const auto& s) { return s.warp_used; });
  j["wall_seconds"] = {{"probe", r.wall.probe},
                       {"signals", r.wall.signals},
                       {"deep", r.wall.deep},
                       {"flow", r.wall.flow},
                       {"approx", r.wall.approx}};
  j["config"] = effective;
  return j;
}

// Defaults overlaid with the user's settings: the configuration actually in force.
json effective_config(const json& user) {
  json e = config::defaults();
  e.merge_patch(user);
  const RunConfig rc = config::build(user);
  const ScenarioConfig& s = rc.scenario;
  e["scenario"]["kind"] = std::string(to_string(s.kind));
  e["scenario"]["curvature"] = s.curvature;
  e["scenario"]["latent_sigma"] = s.latent_sigma;
  e["scenario"]["residual_scale"] = s.residual_scale;
  e["scenario"]["motion_speed"] = s.motion_speed;
  return e;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path prepare_out(const RunConfig& rc) {
  fs::path dir(rc.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

RunReport run_closed_loop(const RunConfig& rc) {
  const SyntheticDenoiser den(rc.scenario);
  EngineConfig cfg = rc.engine;
  if (cfg.oracle) {
    const OracleRun o = run_oracle(den);
    return run_scenario(den, cfg, &o);
  }
  return run_scenario(den, cfg, nullptr);
}

Trace trace_from(const RunConfig& rc) {
  const OracleRun o = run_oracle(rc.scenario);
  return make_trace(o, rc.scenario.shape, rc.scenario.seed);
}

// Evaluates `fn(value)` for every sweep value on a bounded pool; rows come back in value order.
template <class Fn>
std::vector<std::pair<double, RunReport>> run_sweep(const Sweep& sw, Fn fn) {
  std::vector<std::pair<double, RunReport>> rows(sw.values.size());
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::size_t next = 0;
  while (next < sw.values.size()) {
    std::vector<std::future<RunReport>> batch;
    const std::size_t first = next;
    for (; next < sw.values.size() && batch.size() < workers; ++next)
      batch.push_back(std::async(std::launch::async, fn, sw.values[next]));
    for (std::size_t i = 0; i < batch.size(); ++i) rows[first + i] = {sw.values[first + i], batch[i].get()};
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::string& key,
                     const std::vector<std::pair<double, RunReport>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << key << ",hits,skip_rate,simulated_speedup,final_output_error,mean_hit_error\n";
  for (const auto& [v, r] : rows)
    out << num(v) << ',' << r.hits << ',' << num(r.skip_rate) << ',' << num(r.simulated_speedup) << ','
        << opt(r.final_output_error) << ',' << num(mean_hit_error(r)) << '\n';
  std::cout << "wrote " << rows.size() << " sweep rows to " << path.string() << '\n';
}

void print_summary(const RunReport& r, const RunConfig& rc) {
  std::cout << to_string(rc.engine.kind) << " on " << to_string(rc.scenario.kind)
            << (r.open_loop ? " (open-loop)" : "") << ": hits " << r.hits << '/' << r.steps.size() << ", skip_rate "
            << r.skip_rate << ", simulated_speedup " << r.simulated_speedup;
  if (r.final_output_error) std::cout << ", final_output_error " << *r.final_output_error;
  std::cout << '\n';
}

int cmd_run(const CommonOptions& o, const std::vector<std::string>& extras) {
  const json user = user_settings(o, extras);
  const RunConfig rc = config::build(user);
  const fs::path dir = prepare_out(rc);
  if (!o.sweep.empty()) {
    const Sweep sw = parse_sweep(o.sweep);
    auto rows = run_sweep(sw, [&](double v) {
      json u = user;
      config::set_dotted(u, sw.key, v);
      return run_closed_loop(config::build(u));
    });
    write_sweep_csv(dir / "sweep.csv", sw.key, rows);
    return 0;
  }
  const RunReport r = run_closed_loop(rc);
  write_json(dir / "report.json", report_json(r, rc, effective_config(user)));
  write_steps_csv(dir / "steps.csv", r);
  if (!rc.trace_path.empty()) write_trace(rc.trace_path, trace_from(rc));
  print_summary(r, rc);
  return 0;
}

int cmd_compare(const CommonOptions& o, const std::vector<std::string>& extras, const std::string& ablate,
                bool replay) {
  const json user = user_settings(o, extras);
  const RunConfig rc = config::build(user);
  const fs::path dir = prepare_out(rc);
  const SyntheticDenoiser den(rc.scenario);
  const OracleRun oracle = run_oracle(den);

  struct Row {
    std::string label;
    EngineConfig cfg;
  };
  std::vector<Row> rows;
  EngineConfig base = rc.engine;
  base.oracle = true;
  if (ablate.empty()) {
    for (PolicyKind k : {PolicyKind::full_compute, PolicyKind::fixed_schedule,
                         PolicyKind::fixed_threshold_scalar_ratio, PolicyKind::worldcache}) {
      EngineConfig c = base;
      c.kind = k;
      rows.push_back({std::string(to_string(k)), c});
    }
  } else {
    EngineConfig c = base;
    c.kind = PolicyKind::full_compute;
    rows.push_back({"base", c});
    c.kind = PolicyKind::worldcache;
    c.modules = {false, false, false, false};
    std::stringstream ss(ablate == "all" ? std::string("cfc,swd,ofa,ats") : ablate);
    std::string tok;
    std::string label;
    while (std::getline(ss, tok, ',')) {
      std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char ch) { return std::tolower(ch); });
      bool* flag = tok == "cfc"   ? &c.modules.cfc
                   : tok == "swd" ? &c.modules.swd
                   : tok == "ofa" ? &c.modules.ofa
                   : tok == "ats" ? &c.modules.ats
                                  : nullptr;
      if (!flag) throw ConfigError("--ablate accepts cfc, swd, ofa, ats (or all), got '" + tok + "'");
      if (*flag) throw ConfigError("--ablate lists '" + tok + "' twice");
      *flag = true;
      std::string upper = tok;
      std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
      label += "+" + upper;
      rows.push_back({label, c});
    }
  }

  std::ofstream csv(dir / "compare.csv");
  if (!csv) throw std::runtime_error("cannot write compare.csv");
  csv << "row,policy,cfc,swd,ofa,ats,hits,skip_rate,simulated_speedup,final_output_error,mean_hit_error\n";
  json table = json::array();
  for (const Row& row : rows) {
    const RunReport r = replay ? run_trajectory(den, std::span<const LatentTensor>(oracle.inputs), row.cfg,
                                                &oracle.final_output)
                               : run_scenario(den, row.cfg, &oracle);
    const Modules m = row.cfg.effective_modules();
    csv << row.label << ',' << to_string(row.cfg.kind) << ',' << m.cfc << ',' << m.swd << ',' << m.ofa << ','
        << m.ats << ',' << r.hits << ',' << num(r.skip_rate) << ',' << num(r.simulated_speedup) << ','
        << opt(r.final_output_error) << ',' << num(mean_hit_error(r)) << '\n';
    table.push_back({{"row", row.label},
                     {"policy", std::string(to_string(row.cfg.kind))},
                     {"modules", {{"cfc", m.cfc}, {"swd", m.swd}, {"ofa", m.ofa}, {"ats", m.ats}}},
                     {"hits", r.hits},
                     {"skip_rate", r.skip_rate},
                     {"simulated_speedup", r.simulated_speedup},
                     {"final_output_error", r.final_output_error ? json(*r.final_output_error) : json(nullptr)},
                     {"mean_hit_error", mean_hit_error(r)}});
    std::printf("%-28s skip_rate %.3f  speedup %.3f  final_error %.4g\n", row.label.c_str(), r.skip_rate,
                r.simulated_speedup, r.final_output_error.value_or(0.0));
  }
  write_json(dir / "compare.json", json{{"mode", replay ? "open-loop" : "closed-loop"},
                                        {"scenario", std::string(to_string(rc.scenario.kind))},
                                        {"rows", table},
                                        {"config", effective_config(user)}});
  return 0;
}

int cmd_trace_record(const CommonOptions& o, const std::vector<std::string>& extras) {
  const json user = user_settings(o, extras);
  const RunConfig rc = config::build(user);
  fs::path path = rc.trace_path;
  if (path.empty()) path = prepare_out(rc) / "trace.wctr";
  const Trace tr = trace_from(rc);
  write_trace(path, tr);
  std::cout << "recorded " << tr.steps.size() << " steps of " << to_string(rc.scenario.kind) << " to "
            << path.string() << " (" << tr.header.file_bytes() << " bytes)\n";
  return 0;
}

int cmd_trace_replay(const CommonOptions& o, const std::vector<std::string>& extras) {
  const json user = user_settings(o, extras);
  const RunConfig rc = config::build(user);
  if (rc.trace_path.empty()) throw ConfigError("trace replay needs --trace <path>");
  const Trace tr = read_trace(rc.trace_path);
  const fs::path dir = prepare_out(rc);
  const double pc = rc.scenario.probe_cost;
  const double dc = rc.scenario.deep_cost;
  if (!o.sweep.empty()) {
    const Sweep sw = parse_sweep(o.sweep);
    auto rows = run_sweep(sw, [&](double v) {
      json u = user;
      config::set_dotted(u, sw.key, v);
      return replay_decisions(tr, config::build(u).engine, pc, dc);
    });
    write_sweep_csv(dir / "sweep.csv", sw.key, rows);
    return 0;
  }
  const RunReport r = replay_decisions(tr, rc.engine, pc, dc);
  json rep = report_json(r, rc, effective_config(user));
  rep.erase("scenario");
  rep["seed"] = tr.header.seed;
  rep["trace"] = rc.trace_path;
  write_json(dir / "report.json", rep);
  write_steps_csv(dir / "steps.csv", r);
  print_summary(r, rc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WorldCache feature-caching simulator"};
  app.require_subcommand(1);

  CommonOptions run_o, cmp_o, rec_o, rep_o;
  auto* run = app.add_subcommand("run", "run one policy on a scenario");
  add_common(run, run_o);

  auto* cmp = app.add_subcommand("compare", "compare policies or incremental module ablations on one scenario");
  add_common(cmp, cmp_o);
  std::string ablate;
  bool replay = false;
  cmp->add_option("--ablate", ablate, "modules added one per row, e.g. cfc,swd,ofa,ats (or all)");
  cmp->add_flag("--replay", replay, "evaluate on the recorded full-compute inputs (open loop)");

  auto* trace = app.add_subcommand("trace", "record or replay WCTR traces");
  trace->require_subcommand(1);
  auto* rec = trace->add_subcommand("record", "write a trace of a full-compute run");
  add_common(rec, rec_o);
  auto* rep = trace->add_subcommand("replay", "replay cache decisions on a recorded trace");
  add_common(rep, rep_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_o, run->remaining());
    if (*cmp) return cmd_compare(cmp_o, cmp->remaining(), ablate, replay);
    if (*rec) return cmd_trace_record(rec_o, rec->remaining());
    if (*rep) return cmd_trace_replay(rep_o, rep->remaining());
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
