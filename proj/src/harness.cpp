#include "xtkd/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "xtkd/csv.hpp"
#include "xtkd/rng.hpp"

namespace xtkd {

std::string to_string(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::None: return "none";
    case TeacherKind::RandomFrozen: return "random-frozen";
    case TeacherKind::PretrainedDepth: return "pretrained-depth";
    case TeacherKind::PretrainedClass: return "pretrained-class";
    case TeacherKind::PretrainedReg: return "pretrained-reg";
  }
  return "?";
}

TeacherKind parse_teacher_kind(const std::string& text) {
  for (TeacherKind k : {TeacherKind::None, TeacherKind::RandomFrozen, TeacherKind::PretrainedDepth,
                        TeacherKind::PretrainedClass, TeacherKind::PretrainedReg}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown teacher kind '" + text +
                    "' (none, random-frozen, pretrained-depth, pretrained-class, pretrained-reg)");
}

std::string to_string(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::Distill: return "distill";
    case ExperimentMode::LinearMap: return "linear-map";
    case ExperimentMode::BoundAudit: return "bound-audit";
  }
  return "?";
}

namespace {

ExperimentMode parse_mode(const std::string& text) {
  for (ExperimentMode m : {ExperimentMode::Distill, ExperimentMode::LinearMap,
                           ExperimentMode::BoundAudit}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown mode '" + text + "' (distill, linear-map, bound-audit)");
}

std::optional<TaskKind> pretrained_task(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::PretrainedDepth: return TaskKind::Depth;
    case TeacherKind::PretrainedClass: return TaskKind::Classification;
    case TeacherKind::PretrainedReg: return TaskKind::Regression;
    default: return std::nullopt;
  }
}

TeacherKind pretrained_kind(TaskKind task) {
  switch (task) {
    case TaskKind::Depth: return TeacherKind::PretrainedDepth;
    case TaskKind::Classification: return TeacherKind::PretrainedClass;
    case TaskKind::Regression: return TeacherKind::PretrainedReg;
  }
  return TeacherKind::None;
}

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> list_items(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  for (const auto& item : csv::split(value, ',')) out.push_back(trim(item));
  return out;
}

// Value converters; every failure is rethrown with the key path attached.
template <typename F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::size_t to_count(const std::string& text) {
  const long long v = csv::to_integer(text);
  if (v < 0) throw ConfigError("expected a non-negative integer, got '" + text + "'");
  return static_cast<std::size_t>(v);
}

double to_real(const std::string& text) {
  const double v = csv::to_double(text);
  if (!std::isfinite(v)) throw ConfigError("expected a finite number, got '" + text + "'");
  return v;
}

bool to_bool(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& value, F&& one) {
  std::vector<T> out;
  for (const auto& item : list_items(value)) out.push_back(one(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt(items[i]);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.name", [](ExperimentConfig& c, const std::string& v) { c.name = v; }},
      {"experiment.mode", [](ExperimentConfig& c, const std::string& v) { c.mode = parse_mode(v); }},
      {"experiment.seeds",
       [](ExperimentConfig& c, const std::string& v) {
         c.seeds = to_list<std::uint64_t>(v, [](const std::string& s) {
           return static_cast<std::uint64_t>(to_count(s));
         });
       }},
      {"experiment.epochs", [](ExperimentConfig& c, const std::string& v) { c.epochs = to_count(v); }},
      {"experiment.lr", [](ExperimentConfig& c, const std::string& v) { c.lr = to_real(v); }},
      {"experiment.record_every",
       [](ExperimentConfig& c, const std::string& v) { c.record_every = to_count(v); }},
      {"experiment.rank_tol", [](ExperimentConfig& c, const std::string& v) { c.rank_tol = to_real(v); }},
      {"data.seed", [](ExperimentConfig& c, const std::string& v) { c.data.seed = to_count(v); }},
      {"data.latent_dim",
       [](ExperimentConfig& c, const std::string& v) { c.data.latent_dim = to_count(v); }},
      {"data.input_dim", [](ExperimentConfig& c, const std::string& v) { c.data.input_dim = to_count(v); }},
      {"data.classes", [](ExperimentConfig& c, const std::string& v) { c.data.classes = to_count(v); }},
      {"data.out_dim", [](ExperimentConfig& c, const std::string& v) { c.data.out_dim = to_count(v); }},
      {"data.noise", [](ExperimentConfig& c, const std::string& v) { c.data.noise = to_real(v); }},
      {"data.pool", [](ExperimentConfig& c, const std::string& v) { c.data.pool = to_count(v); }},
      {"data.train", [](ExperimentConfig& c, const std::string& v) { c.data.train = to_count(v); }},
      {"data.val", [](ExperimentConfig& c, const std::string& v) { c.data.val = to_count(v); }},
      {"student.task", [](ExperimentConfig& c, const std::string& v) { c.task = parse_task_kind(v); }},
      {"student.widths",
       [](ExperimentConfig& c, const std::string& v) {
         c.student.widths = to_list<std::size_t>(v, to_count);
       }},
      {"student.cut", [](ExperimentConfig& c, const std::string& v) { c.student.cut = to_count(v); }},
      {"teacher.kind",
       [](ExperimentConfig& c, const std::string& v) {
         c.teacher.kinds = to_list<TeacherKind>(v, parse_teacher_kind);
       }},
      {"teacher.widths",
       [](ExperimentConfig& c, const std::string& v) {
         c.teacher.net.widths = to_list<std::size_t>(v, to_count);
       }},
      {"teacher.cut", [](ExperimentConfig& c, const std::string& v) { c.teacher.net.cut = to_count(v); }},
      {"teacher.epochs", [](ExperimentConfig& c, const std::string& v) { c.teacher.epochs = to_count(v); }},
      {"teacher.lr", [](ExperimentConfig& c, const std::string& v) { c.teacher.lr = to_real(v); }},
      {"distill.method",
       [](ExperimentConfig& c, const std::string& v) {
         c.distill.methods = to_list<DistillKind>(v, parse_distill_kind);
       }},
      {"distill.direction",
       [](ExperimentConfig& c, const std::string& v) {
         c.distill.directions = to_list<Direction>(v, parse_direction);
       }},
      {"distill.ensemble_size",
       [](ExperimentConfig& c, const std::string& v) { c.distill.ensemble_size = to_count(v); }},
      {"distill.weight", [](ExperimentConfig& c, const std::string& v) { c.distill.weight = to_real(v); }},
      {"distill.include_baseline",
       [](ExperimentConfig& c, const std::string& v) { c.distill.include_baseline = to_bool(v); }},
      {"spectral.r",
       [](ExperimentConfig& c, const std::string& v) { c.spectral.r = to_list<std::size_t>(v, to_count); }},
      {"spectral.weight", [](ExperimentConfig& c, const std::string& v) { c.spectral.weight = to_real(v); }},
      {"linear_map.source",
       [](ExperimentConfig& c, const std::string& v) { c.linear_map.source = parse_task_kind(v); }},
      {"linear_map.target",
       [](ExperimentConfig& c, const std::string& v) { c.linear_map.target = parse_task_kind(v); }},
      {"bound.n", [](ExperimentConfig& c, const std::string& v) { c.bound.n = to_count(v); }},
      {"bound.tol", [](ExperimentConfig& c, const std::string& v) { c.bound.tol = to_real(v); }},
  };
  return table;
}

void fail(const std::string& path, const std::string& why) { throw ConfigError(path + ": " + why); }

template <typename T>
void require_unique(const std::vector<T>& items, const std::string& path) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      if (items[i] == items[j]) fail(path, "duplicate entry");
    }
  }
}

void validate_net(const NetConfig& net, const std::string& section) {
  if (net.widths.empty()) fail(section + ".widths", "needs at least one hidden width");
  if (std::find(net.widths.begin(), net.widths.end(), 0u) != net.widths.end()) {
    fail(section + ".widths", "widths must be positive");
  }
  if (net.cut < 1 || net.cut > net.widths.size()) {
    fail(section + ".cut", "must lie in [1, " + std::to_string(net.widths.size()) + "]");
  }
}

std::size_t feature_dim(const NetConfig& net) { return net.widths[net.cut - 1]; }

}  // namespace

void validate(const ExperimentConfig& c) {
  if (c.name.empty()) fail("experiment.name", "must not be empty");
  if (c.seeds.empty()) fail("experiment.seeds", "must list at least one seed");
  require_unique(c.seeds, "experiment.seeds");
  if (!(c.lr > 0.0)) fail("experiment.lr", "must be positive");
  if (c.record_every == 0) fail("experiment.record_every", "must be at least 1");
  if (!(c.rank_tol > 0.0)) fail("experiment.rank_tol", "must be positive");

  const DataConfig& d = c.data;
  if (d.latent_dim == 0) fail("data.latent_dim", "must be positive");
  if (d.input_dim < d.latent_dim) fail("data.input_dim", "must be at least data.latent_dim");
  if (d.classes == 0) fail("data.classes", "must be positive");
  if (d.out_dim == 0) fail("data.out_dim", "must be positive");
  if (d.noise < 0.0) fail("data.noise", "must be non-negative");
  if (d.train < 2) fail("data.train", "needs at least 2 rows");
  if (d.val == 0) fail("data.val", "must be positive");

  if (c.mode == ExperimentMode::BoundAudit) {
    if (c.bound.n == 0) fail("bound.n", "must be positive");
    if (!(c.bound.tol > 0.0)) fail("bound.tol", "must be positive");
    return;
  }

  validate_net(c.teacher.net, "teacher");
  if (!(c.teacher.lr > 0.0)) fail("teacher.lr", "must be positive");

  if (c.mode == ExperimentMode::LinearMap) {
    if (d.pool == 0) fail("data.pool", "pretrained nets need a non-empty pool");
    return;
  }

  if (c.epochs == 0) fail("experiment.epochs", "must be at least 1");
  validate_net(c.student, "student");
  if (c.student.cut == c.student.widths.size() + 1) fail("student.cut", "leaves no decoder");

  const auto& kinds = c.teacher.kinds;
  if (kinds.empty()) fail("teacher.kind", "must not be empty (use none)");
  require_unique(kinds, "teacher.kind");
  const bool no_teacher = kinds.size() == 1 && kinds[0] == TeacherKind::None;
  if (!no_teacher && std::find(kinds.begin(), kinds.end(), TeacherKind::None) != kinds.end()) {
    fail("teacher.kind", "none cannot be combined with other kinds");
  }
  const bool needs_pool = std::any_of(kinds.begin(), kinds.end(),
                                      [](TeacherKind k) { return pretrained_task(k).has_value(); });
  if (needs_pool && d.pool == 0) fail("data.pool", "pretrained teachers need a non-empty pool");

  if (no_teacher && !c.distill.methods.empty()) fail("distill.method", "requires a teacher");
  if (!no_teacher && c.distill.methods.empty()) fail("distill.method", "teacher given but no method");
  require_unique(c.distill.methods, "distill.method");
  if (c.distill.directions.empty()) fail("distill.direction", "must not be empty");
  require_unique(c.distill.directions, "distill.direction");
  if (c.distill.ensemble_size == 0) fail("distill.ensemble_size", "must be at least 1");
  if (c.distill.weight < 0.0) fail("distill.weight", "must be non-negative");

  require_unique(c.spectral.r, "spectral.r");
  const std::size_t r_max = std::min(d.train, feature_dim(c.student));
  for (std::size_t r : c.spectral.r) {
    if (r < 1 || r > r_max) fail("spectral.r", "each r must lie in [1, " + std::to_string(r_max) + "]");
  }
  if (c.spectral.weight < 0.0) fail("spectral.weight", "must be non-negative");

  if (c.distill.methods.empty() && c.spectral.r.empty() && !c.distill.include_baseline) {
    fail("distill.include_baseline", "nothing to run");
  }
}

ExperimentConfig parse_config(std::istream& in, const std::string& origin) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside any section");
    const std::string path = section + "." + key;
    const auto it = setters().find(path);
    if (it == setters().end()) throw ConfigError(where + ": unknown key " + path);
    if (!seen.insert(path).second) throw ConfigError(where + ": duplicate key " + path);
    with_path(path, [&] {
      it->second(cfg, value);
      return 0;
    });
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

std::string render_config(const ExperimentConfig& c) {
  const auto num = [](std::size_t v) { return std::to_string(v); };
  const auto seeds = join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
  const auto widths = [](const std::vector<std::size_t>& w) {
    return join<std::size_t>(w, [](const std::size_t& v) { return std::to_string(v); });
  };
  std::ostringstream o;
  o << "[experiment]\n"
    << "name = " << c.name << '\n'
    << "mode = " << to_string(c.mode) << '\n'
    << "seeds = " << seeds << '\n'
    << "epochs = " << num(c.epochs) << '\n'
    << "lr = " << shortest(c.lr) << '\n'
    << "record_every = " << num(c.record_every) << '\n'
    << "rank_tol = " << shortest(c.rank_tol) << "\n\n"
    << "[data]\n"
    << "seed = " << c.data.seed << '\n'
    << "latent_dim = " << num(c.data.latent_dim) << '\n'
    << "input_dim = " << num(c.data.input_dim) << '\n'
    << "classes = " << num(c.data.classes) << '\n'
    << "out_dim = " << num(c.data.out_dim) << '\n'
    << "noise = " << shortest(c.data.noise) << '\n'
    << "pool = " << num(c.data.pool) << '\n'
    << "train = " << num(c.data.train) << '\n'
    << "val = " << num(c.data.val) << "\n\n"
    << "[student]\n"
    << "task = " << to_string(c.task) << '\n'
    << "widths = " << widths(c.student.widths) << '\n'
    << "cut = " << num(c.student.cut) << "\n\n"
    << "[teacher]\n"
    << "kind = " << join<TeacherKind>(c.teacher.kinds, [](const TeacherKind& k) { return to_string(k); })
    << '\n'
    << "widths = " << widths(c.teacher.net.widths) << '\n'
    << "cut = " << num(c.teacher.net.cut) << '\n'
    << "epochs = " << num(c.teacher.epochs) << '\n'
    << "lr = " << shortest(c.teacher.lr) << "\n\n"
    << "[distill]\n"
    << "method = "
    << join<DistillKind>(c.distill.methods, [](const DistillKind& k) { return to_string(k); }) << '\n'
    << "direction = "
    << join<Direction>(c.distill.directions, [](const Direction& d) { return to_string(d); }) << '\n'
    << "ensemble_size = " << num(c.distill.ensemble_size) << '\n'
    << "weight = " << shortest(c.distill.weight) << '\n'
    << "include_baseline = " << (c.distill.include_baseline ? "true" : "false") << "\n\n"
    << "[spectral]\n"
    << "r = " << widths(c.spectral.r) << '\n'
    << "weight = " << shortest(c.spectral.weight) << "\n\n"
    << "[linear_map]\n"
    << "source = " << to_string(c.linear_map.source) << '\n'
    << "target = " << to_string(c.linear_map.target) << "\n\n"
    << "[bound]\n"
    << "n = " << num(c.bound.n) << '\n'
    << "tol = " << shortest(c.bound.tol) << '\n';
  return o.str();
}

std::string RunSpec::label() const {
  if (spectral_r) return "teacher-free/r=" + std::to_string(*spectral_r);
  if (!method) return "baseline";
  return to_string(teacher) + "/" + to_string(*method) + "/" + to_string(direction);
}

ExperimentPlan expand(const ExperimentConfig& cfg) {
  ExperimentPlan plan;
  if (cfg.mode != ExperimentMode::Distill) return plan;
  if (cfg.distill.include_baseline) plan.baseline = RunSpec{};
  for (TeacherKind t : cfg.teacher.kinds) {
    if (t == TeacherKind::None) continue;
    for (DistillKind m : cfg.distill.methods) {
      for (Direction d : cfg.distill.directions) plan.configs.push_back(RunSpec{t, m, d, std::nullopt});
    }
  }
  for (std::size_t r : cfg.spectral.r) {
    plan.configs.push_back(RunSpec{TeacherKind::None, std::nullopt, Direction::Inverted, r});
  }
  return plan;
}

std::string config_hash(const ExperimentConfig& cfg, const RunSpec& spec) {
  ExperimentConfig c = cfg;
  const ExperimentConfig defaults;
  c.name = "-";
  c.seeds = {0};
  if (c.mode == ExperimentMode::Distill) {
    c.teacher.kinds = {spec.teacher};
    if (spec.teacher == TeacherKind::None) c.teacher = defaults.teacher;
    c.distill.methods = spec.method ? std::vector<DistillKind>{*spec.method} : std::vector<DistillKind>{};
    c.distill.directions = {spec.method ? spec.direction : Direction::Inverted};
    if (!spec.method) c.distill = defaults.distill;
    if (!spec.method || *spec.method != DistillKind::Ensemble) c.distill.ensemble_size = 0;
    c.distill.include_baseline = false;
    c.spectral.r = spec.spectral_r ? std::vector<std::size_t>{*spec.spectral_r} : std::vector<std::size_t>{};
    if (!spec.spectral_r) c.spectral.weight = defaults.spectral.weight;
    c.linear_map = defaults.linear_map;
    c.bound = defaults.bound;
  } else if (c.mode == ExperimentMode::LinearMap) {
    c.student = defaults.student;
    c.task = defaults.task;
    c.distill = defaults.distill;
    c.spectral = defaults.spectral;
    c.teacher.kinds = defaults.teacher.kinds;
    c.bound = defaults.bound;
  } else {
    const BoundAuditConfig bound = c.bound;
    c = defaults;
    c.name = "-";
    c.mode = ExperimentMode::BoundAudit;
    c.bound = bound;
  }
  const std::string text = render_config(c) + "#" + spec.label();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

DataSplits make_splits(const DataConfig& cfg) {
  SynthParams p;
  p.seed = cfg.seed;
  p.n = cfg.pool + cfg.train + cfg.val;
  p.latent_dim = cfg.latent_dim;
  p.input_dim = cfg.input_dim;
  p.classes = cfg.classes;
  p.out_dim = cfg.out_dim;
  p.noise = cfg.noise;
  const SynthDataset all = synth_gen(p);
  DataSplits s;
  if (cfg.pool > 0) s.pool = slice_rows(all, 0, cfg.pool);
  s.train = slice_rows(all, cfg.pool, cfg.pool + cfg.train);
  s.val = slice_rows(all, cfg.pool + cfg.train, p.n);
  return s;
}

namespace {

// derive_seed streams. Each consumer owns one so configurations that differ
// in one component still share every other random draw.
constexpr std::uint64_t kStudentStream = 1;
constexpr std::uint64_t kTeacherStream = 10;

std::vector<std::size_t> full_widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                     std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

MlpNet make_student(const ExperimentConfig& cfg, std::uint64_t seed, const SynthDataset& data) {
  return mlp_new(full_widths(cfg.data.input_dim, cfg.student.widths, task_output_dim(cfg.task, data)),
                 cfg.student.cut, {InitScheme::UniformFanIn, derive_seed(seed, kStudentStream)});
}

double pretrain(MlpNet& net, TaskKind task, const SynthDataset& data, std::size_t epochs, double lr) {
  Graph g;
  const ParamNodes params = add_parameter_leaves(g, net, "w");
  const NodeId x = g.constant(data.x);
  const NodeId out = record_layers(g, net, x, 0, net.num_layers(), &params);
  const NodeId loss = record_task_loss(g, task, out, data);
  double last = task_loss(task, forward(net, data.x), data);
  for (std::size_t e = 0; e < epochs; ++e) {
    Bindings bind;
    bind_parameters(bind, params, net);
    g.forward(bind);
    last = g.value(loss).item();
    if (!std::isfinite(last)) throw NumericError("pretrain: loss diverged at epoch " + std::to_string(e));
    sgd_step(net, collect_gradients(g.backward(), params), lr);
  }
  return last;
}

MlpNet make_teacher(const ExperimentConfig& cfg, TeacherKind kind, std::uint64_t seed,
                    const SynthDataset& pool) {
  if (kind == TeacherKind::None) throw ContractError("make_teacher: kind none has no network");
  const TaskKind task = pretrained_task(kind).value_or(cfg.task);
  const auto stream = kTeacherStream + static_cast<std::uint64_t>(kind);
  MlpNet net = mlp_new(full_widths(cfg.data.input_dim, cfg.teacher.net.widths, task_output_dim(task, pool)),
                       cfg.teacher.net.cut, {InitScheme::UniformFanIn, derive_seed(seed, stream)});
  if (pretrained_task(kind)) pretrain(net, task, pool, cfg.teacher.epochs, cfg.teacher.lr);
  net.freeze();
  return net;
}

const SummaryRow& SummaryTable::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw ContractError("summary: no row '" + label + "'");
}

bool SummaryTable::has(const std::string& label) const {
  return std::any_of(rows.begin(), rows.end(), [&](const SummaryRow& r) { return r.label == label; });
}

void write_summary_csv(std::ostream& out, const SummaryTable& table) {
  const std::vector<std::string> names = table.rows.empty() ? std::vector<std::string>{}
                                                            : table.rows.front().metric_names;
  out << "label,hash,n_seeds";
  for (const auto& n : names) out << ',' << n << "_mean," << n << "_std";
  out << ",eff_rank_mean,inv_minus_trad,sign_inv_minus_trad,vs_baseline\n";
  const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : table.rows) {
    if (r.metric_names != names) throw ContractError("summary: rows disagree on metric columns");
    out << r.label << ',' << r.hash << ',' << r.n_seeds;
    for (std::size_t i = 0; i < names.size(); ++i) {
      out << ',' << format_double(r.mean[i]) << ',' << format_double(r.stddev[i]);
    }
    out << ',' << format_double(r.rank_mean) << ',' << opt(r.inv_minus_trad) << ',';
    if (r.inv_minus_trad) out << (*r.inv_minus_trad < 0.0 ? -1 : (*r.inv_minus_trad > 0.0 ? 1 : 0));
    out << ',' << opt(r.vs_baseline) << '\n';
  }
}

SummaryTable read_summary_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  const std::size_t n = t.header.size();
  if (n < 7 || t.header[0] != "label" || t.header[1] != "hash" || t.header[2] != "n_seeds" ||
      t.header[n - 4] != "eff_rank_mean" || (n - 7) % 2 != 0) {
    throw ParseError("summary csv: unexpected header");
  }
  std::vector<std::string> names;
  for (std::size_t c = 3; c + 4 < n; c += 2) {
    const std::string& h = t.header[c];
    if (h.size() < 5 || h.substr(h.size() - 5) != "_mean") throw ParseError("summary csv: bad column " + h);
    names.push_back(h.substr(0, h.size() - 5));
  }
  SummaryTable table;
  for (const auto& cells : t.rows) {
    SummaryRow r;
    r.label = cells[0];
    r.hash = cells[1];
    r.n_seeds = static_cast<std::size_t>(csv::to_integer(cells[2]));
    r.metric_names = names;
    for (std::size_t i = 0; i < names.size(); ++i) {
      r.mean.push_back(csv::to_double(cells[3 + 2 * i]));
      r.stddev.push_back(csv::to_double(cells[4 + 2 * i]));
    }
    r.rank_mean = csv::to_double(cells[n - 4]);
    if (!cells[n - 3].empty()) r.inv_minus_trad = csv::to_double(cells[n - 3]);
    if (!cells[n - 1].empty()) r.vs_baseline = csv::to_double(cells[n - 1]);
    table.rows.push_back(std::move(r));
  }
  return table;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Stops handing out new
// indices once `stop` is set.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn,
                  const std::atomic<bool>& stop) {
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n && !stop; i = next++) fn(i);
  };
  const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), n);
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
}

struct Task {
  std::string label;
  std::string hash;
  std::uint64_t seed = 0;
  std::optional<RunSpec> spec;  // distill mode
  std::string status = "skipped";
  std::vector<std::filesystem::path> files;
  TrainResult result;
  std::optional<BoundAuditReport> bound;
};

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunFailure("cannot write " + path.string());
  body(out);
  if (!out) throw RunFailure("write failed for " + path.string());
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

SummaryRow summarize(const std::string& label, const std::string& hash,
                     const std::vector<const Task*>& runs) {
  SummaryRow row;
  row.label = label;
  row.hash = hash;
  row.n_seeds = runs.size();
  const Task& first = *runs.front();
  std::vector<std::vector<double>> values;
  std::vector<double> ranks;
  if (first.bound) {
    row.metric_names = {"min_slack", "max_slack", "holds", "full_k_slack", "empty_k_slack"};
    values.resize(row.metric_names.size());
    for (const Task* t : runs) {
      const BoundAuditReport& b = *t->bound;
      const double v[] = {b.min_slack, b.max_slack, static_cast<double>(b.holds), b.full_k_slack,
                          b.empty_k_slack};
      for (std::size_t i = 0; i < values.size(); ++i) values[i].push_back(v[i]);
    }
  } else {
    row.metric_names = {"task_loss"};
    for (const auto& m : first.result.record.metric_names) row.metric_names.push_back(m);
    values.resize(row.metric_names.size());
    for (const Task* t : runs) {
      const EpochRow& last = t->result.record.rows.back();
      values[0].push_back(last.task_loss);
      for (std::size_t i = 0; i < last.metrics.size(); ++i) values[i + 1].push_back(last.metrics[i]);
      if (!t->result.trace.ranks.empty()) ranks.push_back(static_cast<double>(t->result.trace.ranks.back()));
    }
  }
  for (const auto& v : values) {
    row.mean.push_back(mean_of(v));
    row.stddev.push_back(stddev_of(v));
  }
  row.rank_mean = mean_of(ranks);
  return row;
}

double val_loss_mean(const SummaryRow& r) {
  const auto it = std::find(r.metric_names.begin(), r.metric_names.end(), "val_loss");
  if (it == r.metric_names.end()) throw ContractError("summary: row '" + r.label + "' has no val_loss");
  return r.mean[static_cast<std::size_t>(it - r.metric_names.begin())];
}

void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                    const std::vector<Task>& tasks) {
  write_file(dir / "manifest.txt", [&](std::ostream& out) {
    out << "experiment " << cfg.name << '\n' << "mode " << to_string(cfg.mode) << '\n';
    out << "runs " << tasks.size() << '\n';
    for (const auto& t : tasks) {
      out << t.label << '\t' << t.seed << '\t' << t.hash << '\t' << t.status;
      for (const auto& f : t.files) out << '\t' << f.generic_string();
      out << '\n';
    }
  });
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  validate(cfg);
  const std::filesystem::path dir = opts.out_dir;
  const std::filesystem::path runs_dir = dir / "runs";
  std::filesystem::create_directories(runs_dir);

  std::vector<Task> tasks;
  std::vector<RunSpec> specs;
  if (cfg.mode == ExperimentMode::Distill) {
    const ExperimentPlan plan = expand(cfg);
    if (plan.baseline) specs.push_back(*plan.baseline);
    specs.insert(specs.end(), plan.configs.begin(), plan.configs.end());
  } else {
    specs.push_back(RunSpec{});
  }
  for (const RunSpec& spec : specs) {
    std::string label = spec.label();
    if (cfg.mode == ExperimentMode::LinearMap) {
      label = "linear-map/" + to_string(cfg.linear_map.source) + "->" + to_string(cfg.linear_map.target);
    } else if (cfg.mode == ExperimentMode::BoundAudit) {
      label = "bound-audit";
    }
    const std::string hash = config_hash(cfg, spec);
    for (std::uint64_t seed : cfg.seeds) {
      Task t;
      t.label = label;
      t.hash = hash;
      t.seed = seed;
      if (cfg.mode == ExperimentMode::Distill) t.spec = spec;
      tasks.push_back(std::move(t));
    }
  }

  std::atomic<bool> stop{false};
  std::mutex log_mutex;
  const auto log = [&](const std::string& msg) {
    if (opts.quiet) return;
    const std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << msg << '\n';
  };

  const bool needs_data = cfg.mode != ExperimentMode::BoundAudit;
  const DataSplits data = needs_data ? make_splits(cfg.data) : DataSplits{};

  // Frozen networks shared read-only by the runs, keyed by (kind, seed).
  std::map<std::pair<TeacherKind, std::uint64_t>, MlpNet> nets;
  std::vector<std::pair<TeacherKind, std::uint64_t>> wanted;
  if (cfg.mode == ExperimentMode::Distill) {
    for (TeacherKind k : cfg.teacher.kinds) {
      if (k == TeacherKind::None) continue;
      for (std::uint64_t s : cfg.seeds) wanted.emplace_back(k, s);
    }
  } else if (cfg.mode == ExperimentMode::LinearMap) {
    std::set<TeacherKind> kinds{pretrained_kind(cfg.linear_map.source), pretrained_kind(cfg.linear_map.target)};
    for (TeacherKind k : kinds) {
      for (std::uint64_t s : cfg.seeds) wanted.emplace_back(k, s);
    }
  }
  std::vector<std::optional<MlpNet>> built(wanted.size());
  std::string net_error;
  parallel_for(wanted.size(), opts.jobs, [&](std::size_t i) {
    try {
      built[i] = make_teacher(cfg, wanted[i].first, wanted[i].second, data.pool);
      log("teacher " + to_string(wanted[i].first) + " seed " + std::to_string(wanted[i].second) + " ready");
    } catch (const std::exception& e) {
      const std::lock_guard<std::mutex> lock(log_mutex);
      if (net_error.empty()) net_error = e.what();
      stop = true;
    }
  }, stop);
  if (!net_error.empty()) {
    for (auto& t : tasks) t.status = "skipped";
    write_manifest(dir, cfg, tasks);
    throw RunFailure("teacher construction failed: " + net_error);
  }
  for (std::size_t i = 0; i < wanted.size(); ++i) nets.emplace(wanted[i], std::move(*built[i]));

  std::atomic<std::size_t> done{0};
  parallel_for(tasks.size(), opts.jobs, [&](std::size_t i) {
    Task& t = tasks[i];
    const std::string stem = t.hash + "_" + std::to_string(t.seed);
    try {
      if (cfg.mode == ExperimentMode::BoundAudit) {
        t.bound = bound_audit(cfg.bound.n, cfg.bound.tol, t.seed);
        const auto path = runs_dir / (stem + ".csv");
        write_file(path, [&](std::ostream& out) {
          out << "index,lhs,kt,reg,slack,k_set_size\n";
          for (std::size_t k = 0; k < t.bound->reports.size(); ++k) {
            const BoundReport& b = t.bound->reports[k];
            out << k << ',' << format_double(b.lhs) << ',' << format_double(b.kt) << ','
                << format_double(b.reg) << ',' << format_double(b.slack) << ',' << b.k_set_size << '\n';
          }
        });
        t.files.push_back(path.lexically_relative(dir));
      } else {
        if (cfg.mode == ExperimentMode::LinearMap) {
          LinearMapOptions lo;
          lo.task = cfg.linear_map.target;
          lo.epochs = cfg.epochs;
          lo.lr = cfg.lr;
          lo.seed = t.seed;
          lo.record_every = cfg.record_every;
          lo.config_hash = t.hash;
          t.result = linear_map_experiment(nets.at({pretrained_kind(cfg.linear_map.source), t.seed}),
                                           nets.at({pretrained_kind(cfg.linear_map.target), t.seed}),
                                           data.train, data.val, lo);
        } else {
          const RunSpec& spec = *t.spec;
          MlpNet student = make_student(cfg, t.seed, data.train);
          TrainOptions o;
          o.task = cfg.task;
          if (spec.method) o.method = DistillMethod{*spec.method, cfg.distill.ensemble_size};
          o.direction = spec.direction;
          o.epochs = cfg.epochs;
          o.lr = cfg.lr;
          o.seed = t.seed;
          o.distill_weight = cfg.distill.weight;
          o.spectral_r = spec.spectral_r;
          o.spectral_weight = cfg.spectral.weight;
          o.record_every = cfg.record_every;
          o.rank_tol = cfg.rank_tol;
          o.config_hash = t.hash;
          const MlpNet* teacher = spec.method ? &nets.at({spec.teacher, t.seed}) : nullptr;
          t.result = train_run(student, teacher, data.train, data.val, o);
        }
        const auto path = runs_dir / (stem + ".csv");
        write_file(path, [&](std::ostream& out) { write_run_csv(out, t.result.record); });
        t.files.push_back(path.lexically_relative(dir));
        if (!t.result.trace.epochs.empty()) {
          const auto spath = runs_dir / (stem + "_spectrum.csv");
          write_file(spath, [&](std::ostream& out) { write_spectrum_csv(out, t.result.trace); });
          t.files.push_back(spath.lexically_relative(dir));
        }
      }
      t.status = "ok";
      log("[" + std::to_string(++done) + "/" + std::to_string(tasks.size()) + "] " + t.label +
          " seed " + std::to_string(t.seed));
    } catch (const std::exception& e) {
      t.status = std::string("failed: ") + e.what();
      stop = true;
    }
  }, stop);

  write_manifest(dir, cfg, tasks);
  for (const auto& t : tasks) {
    if (t.status != "ok") {
      throw RunFailure("run " + t.label + " seed " + std::to_string(t.seed) + " " + t.status);
    }
  }

  ExperimentOutcome outcome;
  std::map<std::string, std::vector<const Task*>> groups;
  for (const auto& t : tasks) groups[t.label].push_back(&t);
  for (const auto& [label, runs] : groups) {
    outcome.summary.rows.push_back(summarize(label, runs.front()->hash, runs));
    for (const Task* t : runs) {
      for (const auto& f : t->files) outcome.files.push_back(dir / f);
      if (t->bound) {
        outcome.bound_reports.push_back(*t->bound);
      } else {
        outcome.per_seed_val_loss[label].push_back(t->result.record.final_metric("val_loss"));
      }
      if (cfg.mode == ExperimentMode::LinearMap) {
        const RunRecord& rec = t->result.record;
        const std::string metric = cfg.linear_map.target == TaskKind::Depth ? "rms_log" : "val_loss";
        const auto col = static_cast<std::size_t>(
            std::find(rec.metric_names.begin(), rec.metric_names.end(), metric) - rec.metric_names.begin());
        outcome.linear_map_rms_log.emplace_back(rec.rows.front().metrics[col], rec.rows.back().metrics[col]);
      }
    }
  }
  const SummaryRow* baseline = outcome.summary.has("baseline") ? &outcome.summary.row("baseline") : nullptr;
  for (auto& row : outcome.summary.rows) {
    if (cfg.mode != ExperimentMode::Distill) break;
    if (baseline != nullptr && row.label != "baseline") row.vs_baseline = val_loss_mean(row) - val_loss_mean(*baseline);
    for (const RunSpec& spec : specs) {
      if (!spec.method || spec.label() != row.label) continue;
      RunSpec inv = spec;
      RunSpec trad = spec;
      inv.direction = Direction::Inverted;
      trad.direction = Direction::Traditional;
      if (outcome.summary.has(inv.label()) && outcome.summary.has(trad.label())) {
        row.inv_minus_trad = val_loss_mean(outcome.summary.row(inv.label())) -
                             val_loss_mean(outcome.summary.row(trad.label()));
      }
    }
  }

  write_file(dir / "summary.csv", [&](std::ostream& out) { write_summary_csv(out, outcome.summary); });
  outcome.files.push_back(dir / "summary.csv");
  write_file(dir / "config.ini", [&](std::ostream& out) { out << render_config(cfg); });

  outcome.claims = evaluate_claims(cfg.name, outcome);
  write_file(dir / "claims.txt", [&](std::ostream& out) {
    for (const auto& c : outcome.claims) {
      out << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    }
  });
  return outcome;
}

}  // namespace xtkd
