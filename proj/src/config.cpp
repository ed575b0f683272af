#include "bdx/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace bdx {

ConfigError::ConfigError(const std::string& message, std::string source, int line, int column)
    : std::runtime_error([&] {
        if (source.empty()) return message;
        std::string where = source;
        if (line > 0) where += ":" + std::to_string(line) + ":" + std::to_string(column);
        return where + ": " + message;
      }()),
      source_(std::move(source)), line_(line), column_(column) {}

namespace {

/// Position context for error messages.
struct Where {
  std::string source;
  int line_offset = 0;  // added to 1-based YAML line
  int column_offset = 0;

  [[noreturn]] void fail(const YAML::Node& node, const std::string& key, const std::string& what) const {
    const YAML::Mark m = node.Mark();
    const bool known = !m.is_null();
    throw ConfigError(key + ": " + what, source, known ? m.line + 1 + line_offset : 0,
                      known ? m.column + 1 + column_offset : 0);
  }
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const YAML::Node& n, const std::string& key, const Where& w) {
  if (!n.IsScalar()) w.fail(n, key, "expected a number");
  const std::string& s = n.Scalar();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) w.fail(n, key, "expected a number, got '" + s + "'");
  if (!std::isfinite(v)) w.fail(n, key, "must be finite");
  return v;
}

std::uint64_t to_uint(const YAML::Node& n, const std::string& key, const Where& w) {
  const double v = to_double(n, key, w);
  if (v < 0.0 || v != std::floor(v) || v >= 18446744073709551616.0) w.fail(n, key, "expected a non-negative integer");
  // Parse exactly when written as digits so large seeds keep every bit.
  const std::string& s = n.Scalar();
  if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      w.fail(n, key, "integer out of range");
    }
  }
  return static_cast<std::uint64_t>(v);
}

std::string to_string_value(const YAML::Node& n, const std::string& key, const Where& w) {
  if (!n.IsScalar()) w.fail(n, key, "expected a string");
  return n.Scalar();
}

/// A sequence, or a single scalar read as a one-element list.
std::vector<YAML::Node> to_list(const YAML::Node& n, const std::string& key, const Where& w) {
  std::vector<YAML::Node> out;
  if (n.IsScalar()) {
    out.push_back(n);
  } else if (n.IsSequence()) {
    for (const auto& e : n) out.push_back(e);
  } else if (!n.IsNull()) {
    w.fail(n, key, "expected a list");
  }
  return out;
}

std::vector<double> to_doubles(const YAML::Node& n, const std::string& key, const Where& w) {
  std::vector<double> v;
  for (const auto& e : to_list(n, key, w)) {
    if (e.IsSequence()) {
      for (const auto& f : e) v.push_back(to_double(f, key, w));
    } else {
      v.push_back(to_double(e, key, w));
    }
  }
  return v;
}

using Setter = std::function<void(ExperimentPlan&, const YAML::Node&, const Where&)>;
using Getter = std::function<std::string(const ExperimentPlan&)>;  // empty: omit

struct KeyDef {
  std::string name;
  Setter set;
  Getter get;
};

std::string list_of(const std::vector<std::string>& items) {
  std::string s = "[";
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + items[i];
  return s + "]";
}

std::string doubles_out(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double x : v) s.push_back(fmt_double(x));
  return list_of(s);
}

template <class T>
KeyDef double_key(const std::string& name, T ExperimentPlan::*field) {
  return {name, [=](ExperimentPlan& p, const YAML::Node& n, const Where& w) { p.*field = to_double(n, name, w); },
          [=](const ExperimentPlan& p) { return fmt_double(p.*field); }};
}

template <class T>
KeyDef uint_key(const std::string& name, T ExperimentPlan::*field) {
  return {name,
          [=](ExperimentPlan& p, const YAML::Node& n, const Where& w) {
            const auto v = to_uint(n, name, w);
            if (v > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) w.fail(n, name, "integer out of range");
            p.*field = static_cast<T>(v);
          },
          [=](const ExperimentPlan& p) { return std::to_string(p.*field); }};
}

KeyDef string_key(const std::string& name, std::string ExperimentPlan::*field) {
  return {name, [=](ExperimentPlan& p, const YAML::Node& n, const Where& w) { p.*field = to_string_value(n, name, w); },
          [=](const ExperimentPlan& p) {
            YAML::Emitter e;
            e << p.*field;
            return std::string(e.c_str());
          }};
}

KeyDef doubles_key(const std::string& name, std::vector<double> ExperimentPlan::*field) {
  return {name, [=](ExperimentPlan& p, const YAML::Node& n, const Where& w) { p.*field = to_doubles(n, name, w); },
          [=](const ExperimentPlan& p) { return doubles_out(p.*field); }};
}

KeyDef param_key(const std::string& name) {
  return {name,
          [=](ExperimentPlan& p, const YAML::Node& n, const Where& w) {
            const double v = to_double(n, name, w);
            if (name == "alpha" && !(v >= 0.0 && v <= 1.0)) w.fail(n, name, "must lie in [0, 1]");
            if ((name == "sigma" || name == "D0") && !(v > 0.0)) w.fail(n, name, "must be > 0");
            if (name == "A" && !(v > -1.0)) w.fail(n, name, "must be > -1");
            p.problem_params[name] = v;
          },
          [=](const ExperimentPlan& p) {
            const auto it = p.problem_params.find(name);
            return it == p.problem_params.end() ? std::string() : fmt_double(it->second);
          }};
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    using P = ExperimentPlan;
    std::vector<KeyDef> t;
    t.push_back(string_key("problem", &P::problem));
    for (const char* k : {"alpha", "A", "sigma", "D0"}) t.push_back(param_key(k));
    t.push_back({"kT",
                 [](P& p, const YAML::Node& n, const Where& w) {
                   p.kT = to_double(n, "kT", w);
                   if (!(p.kT > 0.0)) w.fail(n, "kT", "must be > 0");
                 },
                 [](const P& p) { return fmt_double(p.kT); }});
    t.push_back({"methods",
                 [](P& p, const YAML::Node& n, const Where& w) {
                   p.methods.clear();
                   for (const auto& e : to_list(n, "methods", w)) {
                     try {
                       p.methods.push_back(parse_method(to_string_value(e, "methods", w)));
                     } catch (const std::invalid_argument& ex) {
                       w.fail(e, "methods", ex.what());
                     }
                   }
                 },
                 [](const P& p) {
                   std::vector<std::string> s;
                   for (const auto& m : p.methods) s.push_back(m.label());
                   return list_of(s);
                 }});
    t.push_back(double_key("h_grid.min", &P::h_min));
    t.push_back(double_key("h_grid.max", &P::h_max));
    t.push_back(uint_key("h_grid.count", &P::h_count));
    t.push_back(double_key("h", &P::h));
    t.push_back(double_key("T_sim", &P::T_sim));
    t.push_back(uint_key("n_repeats", &P::n_repeats));
    t.push_back(uint_key("seed", &P::seed));
    t.push_back(doubles_key("x_init", &P::x_init));
    t.push_back({"bins",
                 [](P& p, const YAML::Node& n, const Where& w) {
                   p.histogram.bins.clear();
                   for (const auto& e : to_list(n, "bins", w)) p.histogram.bins.push_back(to_uint(e, "bins", w));
                 },
                 [](const P& p) {
                   std::vector<std::string> s;
                   for (auto b : p.histogram.bins) s.push_back(std::to_string(b));
                   return list_of(s);
                 }});
    t.push_back({"range",
                 [](P& p, const YAML::Node& n, const Where& w) {
                   const auto v = to_doubles(n, "range", w);
                   if (v.size() % 2 != 0 || v.empty()) w.fail(n, "range", "expected lo, hi pairs per dimension");
                   p.histogram.range.clear();
                   for (std::size_t i = 0; i < v.size(); i += 2) p.histogram.range.push_back({v[i], v[i + 1]});
                 },
                 [](const P& p) {
                   std::vector<double> v;
                   for (const auto& r : p.histogram.range) {
                     v.push_back(r.lo);
                     v.push_back(r.hi);
                   }
                   return doubles_out(v);
                 }});
    t.push_back(uint_key("mc_batches", &P::mc_batches));
    t.push_back(double_key("fit_noise_fraction", &P::fit_noise_fraction));
    t.push_back({"x0", [](P& p, const YAML::Node& n, const Where& w) { p.map.x0 = to_double(n, "x0", w); },
                 [](const P& p) { return fmt_double(p.map.x0); }});
    t.push_back({"map_domain",
                 [](P& p, const YAML::Node& n, const Where& w) {
                   const auto v = to_doubles(n, "map_domain", w);
                   if (v.size() != 2) w.fail(n, "map_domain", "expected [lo, hi]");
                   p.map.domain = {v[0], v[1]};
                 },
                 [](const P& p) { return doubles_out({p.map.domain.lo, p.map.domain.hi}); }});
    t.push_back({"map_grid_points",
                 [](P& p, const YAML::Node& n, const Where& w) { p.map.grid_points = to_uint(n, "map_grid_points", w); },
                 [](const P& p) { return std::to_string(p.map.grid_points); }});
    t.push_back(uint_key("lmvd_substeps", &P::lmvd_substeps));
    t.push_back(double_key("blow_up_threshold", &P::blow_up_threshold));
    t.push_back(doubles_key("targets", &P::targets));
    t.push_back(uint_key("checkpoint_every", &P::checkpoint_every));
    t.push_back(uint_key("max_iterations", &P::max_iterations));
    t.push_back(uint_key("timing_runs", &P::timing_runs));
    t.push_back(uint_key("timing_iterations", &P::timing_iterations));
    t.push_back(double_key("timing_h", &P::timing_h));
    t.push_back(double_key("ladder_start", &P::ladder_start));
    t.push_back(double_key("ladder_factor", &P::ladder_factor));
    t.push_back(double_key("ladder_max", &P::ladder_max));
    t.push_back(double_key("horizon", &P::horizon));
    t.push_back(uint_key("stability_seeds", &P::stability_seeds));
    t.push_back(doubles_key("alphas", &P::alphas));
    t.push_back(doubles_key("kT_list", &P::kT_list));
    t.push_back(string_key("acf_integrator", &P::acf_integrator));
    t.push_back(uint_key("acf_trajectories", &P::acf_trajectories));
    t.push_back(double_key("acf_T", &P::acf_T));
    t.push_back(double_key("acf_h", &P::acf_h));
    t.push_back(double_key("acf_max_lag", &P::acf_max_lag));
    t.push_back(uint_key("evolve_trajectories", &P::evolve_trajectories));
    t.push_back(double_key("evolve_h", &P::evolve_h));
    t.push_back(double_key("snapshot_dt", &P::snapshot_dt));
    t.push_back(double_key("snapshot_end", &P::snapshot_end));
    t.push_back(double_key("reference_h", &P::reference_h));
    t.push_back(uint_key("reference_trajectories", &P::reference_trajectories));
    t.push_back(string_key("reference_path", &P::reference_path));
    t.push_back(uint_key("n_steps", &P::n_steps));
    t.push_back(uint_key("grid_points", &P::grid_points));
    return t;
  }();
  return table;
}

/// Shorthand keys: a single integrator with one transform.
const std::set<std::string>& alias_keys() {
  static const std::set<std::string> keys{"integrator", "transform"};
  return keys;
}

const KeyDef* find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (k.name == name) return &k;
  return nullptr;
}

struct Assignment {
  std::string key;
  YAML::Node value;
  Where where;
  YAML::Node key_node;
};

bool is_subcommand(const std::string& s) {
  const auto& subs = subcommands();
  return std::find(subs.begin(), subs.end(), s) != subs.end();
}

void check_key(const std::string& key, const YAML::Node& key_node, const Where& w) {
  if (!find_key(key) && !alias_keys().count(key)) w.fail(key_node, key, "unknown key");
}

/// Collects top-level assignments and those of the active subcommand section.
void collect(const YAML::Node& root, const std::string& subcommand, const Where& w, std::vector<Assignment>& out) {
  if (!root || root.IsNull()) return;
  if (!root.IsMap()) w.fail(root, "config", "expected a mapping of key: value lines");
  std::vector<Assignment> section;
  for (const auto& kv : root) {
    const std::string key = kv.first.Scalar();
    if (is_subcommand(key)) {
      if (!kv.second.IsMap() && !kv.second.IsNull()) w.fail(kv.first, key, "a subcommand section must hold key: value lines");
      if (kv.second.IsNull()) continue;
      for (const auto& inner : kv.second) {
        const std::string ik = inner.first.Scalar();
        check_key(ik, inner.first, w);
        if (key == subcommand) section.push_back({ik, inner.second, w, inner.first});
      }
      continue;
    }
    check_key(key, kv.first, w);
    out.push_back({key, kv.second, w, kv.first});
  }
  for (auto& a : section) out.push_back(std::move(a));
}

void apply(ExperimentPlan& plan, const std::vector<Assignment>& assignments, std::vector<std::string>& explicit_keys) {
  std::optional<Assignment> integrator;
  std::optional<Assignment> transform;
  for (const auto& a : assignments) {
    if (a.key == "integrator") {
      integrator = a;
    } else if (a.key == "transform") {
      transform = a;
    } else {
      find_key(a.key)->set(plan, a.value, a.where);
    }
    if (std::find(explicit_keys.begin(), explicit_keys.end(), a.key) == explicit_keys.end())
      explicit_keys.push_back(a.key);
  }
  TransformKind tk = TransformKind::None;
  if (transform) {
    try {
      tk = transform_from_string(to_string_value(transform->value, "transform", transform->where));
    } catch (const std::invalid_argument& e) {
      transform->where.fail(transform->value, "transform", e.what());
    }
  }
  if (integrator) {
    try {
      plan.methods = {MethodSpec{integrator_from_string(to_string_value(integrator->value, "integrator", integrator->where)), tk}};
    } catch (const std::invalid_argument& e) {
      integrator->where.fail(integrator->value, "integrator", e.what());
    }
  } else if (transform) {
    for (auto& m : plan.methods) m.transform = tk;
  }
}

YAML::Node load(const std::string& text, const Where& w) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("syntax error: " + e.msg, w.source, e.mark.line + 1 + w.line_offset,
                      e.mark.column + 1 + w.column_offset);
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& k : key_table()) keys.push_back(k.name);
  return keys;
}

ResolvedConfig parse_config_text(const std::string& text, const std::string& subcommand, bool paper_scale,
                                 const std::vector<std::string>& overrides, const std::string& source) {
  if (!is_subcommand(subcommand)) throw ConfigError("unknown subcommand '" + subcommand + "'");
  ResolvedConfig r{default_plan(subcommand, paper_scale), {}, {}};

  std::vector<Assignment> assignments;
  const Where file_where{source, 0, 0};
  collect(load(text, file_where), subcommand, file_where, assignments);
  for (const auto& o : overrides) {
    const Where w{"--set " + o, 0, 0};
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value", w.source);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(o.substr(0, eq));
    if (!find_key(key) && !alias_keys().count(key)) throw ConfigError(key + ": unknown key", w.source, 1, 1);
    const Where vw{w.source, 0, static_cast<int>(eq) + 1};
    const YAML::Node value = load(o.substr(eq + 1), vw);
    assignments.push_back({key, value, vw, YAML::Node()});
  }
  apply(r.plan, assignments, r.explicit_keys);

  // A 2D problem picked in a 1D subcommand takes 2D defaults for what was not set.
  const auto is_explicit = [&](const std::string& k) {
    return std::find(r.explicit_keys.begin(), r.explicit_keys.end(), k) != r.explicit_keys.end();
  };
  const auto names = builtin_problem_names();
  if (std::find(names.begin(), names.end(), r.plan.problem) != names.end()) {
    const bool one_d = is_one_dimensional(r.plan.problem);
    const HistogramSpec h = one_d ? default_histogram_1d() : default_histogram_2d();
    if (!is_explicit("bins")) r.plan.histogram.bins = h.bins;
    if (!is_explicit("range")) r.plan.histogram.range = h.range;
    if (!is_explicit("x_init")) r.plan.x_init.resize(one_d ? 1 : 2, r.plan.x_init.empty() ? 0.0 : r.plan.x_init.front());
  }

  for (const auto& k : config_keys())
    if (!is_explicit(k)) r.default_keys.push_back(k);
  try {
    validate(r.plan);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid plan: ") + e.what(), source);
  }
  return r;
}

ResolvedConfig parse_config(const std::string& path, const std::string& subcommand, bool paper_scale,
                            const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file", path);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse_config_text(text, subcommand, paper_scale, overrides, path.empty() ? "<defaults>" : path);
}

std::string write_config(const ExperimentPlan& plan) {
  std::string out = "# resolved plan for subcommand " + plan.subcommand +
                    (plan.paper_scale ? " (paper scale)" : "") + "\n";
  for (const auto& k : key_table()) {
    const std::string v = k.get(plan);
    if (!v.empty()) out += k.name + ": " + v + "\n";
  }
  return out;
}

std::string plan_hash(const ExperimentPlan& plan) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : write_config(plan)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bdx
