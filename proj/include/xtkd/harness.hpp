#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xtkd/audit.hpp"
#include "xtkd/distill.hpp"
#include "xtkd/error.hpp"
#include "xtkd/models.hpp"
#include "xtkd/projector.hpp"
#include "xtkd/tasks.hpp"

namespace xtkd {

enum class TeacherKind { None, RandomFrozen, PretrainedDepth, PretrainedClass, PretrainedReg };

std::string to_string(TeacherKind kind);
TeacherKind parse_teacher_kind(const std::string& text);

enum class ExperimentMode { Distill, LinearMap, BoundAudit };

std::string to_string(ExperimentMode mode);

struct DataConfig {
  std::uint64_t seed = 7;
  std::size_t latent_dim = 4;
  std::size_t input_dim = 16;
  std::size_t classes = 4;
  std::size_t out_dim = 4;
  double noise = 0.05;
  // Row layout of the generated set: [pool | train | val]. Pretrained nets
  // see only the pool; students see only train; metrics use val.
  std::size_t pool = 1000;
  std::size_t train = 60;
  std::size_t val = 1000;
};

struct NetConfig {
  std::vector<std::size_t> widths;  // hidden widths; input/output follow data and task
  std::size_t cut = 1;
};

struct TeacherConfig {
  std::vector<TeacherKind> kinds{TeacherKind::None};
  NetConfig net{{64, 64}, 2};
  std::size_t epochs = 2000;  // pretraining
  double lr = 0.01;
};

struct DistillConfig {
  std::vector<DistillKind> methods;
  std::vector<Direction> directions{Direction::Inverted};
  std::size_t ensemble_size = 3;
  double weight = 1.0;
  bool include_baseline = true;
};

struct SpectralConfig {
  std::vector<std::size_t> r;  // empty: teacher-free runs disabled
  double weight = 1.0;
};

struct LinearMapConfig {
  TaskKind source = TaskKind::Regression;  // task of the frozen encoder
  TaskKind target = TaskKind::Depth;       // task of the frozen decoder
};

struct BoundAuditConfig {
  std::size_t n = 200;
  double tol = 1e-6;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ExperimentMode mode = ExperimentMode::Distill;
  std::vector<std::uint64_t> seeds{0};
  std::size_t epochs = 1000;
  double lr = 0.005;
  std::size_t record_every = 100;
  double rank_tol = 1e-2;

  DataConfig data;
  TaskKind task = TaskKind::Depth;
  NetConfig student{{32, 8, 32}, 2};
  TeacherConfig teacher;
  DistillConfig distill;
  SpectralConfig spectral;
  LinearMapConfig linear_map;
  BoundAuditConfig bound;
};

/// Parses the bracketed-section key = value format. Comma-separated values
/// form lists; list-valued keys expand into the run grid. ConfigError names
/// the offending `section.key` for unknown keys, bad values and violated
/// invariants; MissingInputError if the file cannot be opened.
ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>");
ExperimentConfig parse_config_file(const std::filesystem::path& path);
/// Canonical text form; parse_config(render_config(c)) == c field for field.
std::string render_config(const ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);

/// One point of the experiment grid. A spec with no teacher, method or r is
/// the baseline.
struct RunSpec {
  TeacherKind teacher = TeacherKind::None;
  std::optional<DistillKind> method;
  Direction direction = Direction::Inverted;
  std::optional<std::size_t> spectral_r;

  [[nodiscard]] bool is_baseline() const noexcept {
    return !method && !spectral_r;
  }
  [[nodiscard]] std::string label() const;
};

struct ExperimentPlan {
  std::optional<RunSpec> baseline;
  std::vector<RunSpec> configs;
};

/// teachers × methods × directions, then one teacher-free spec per r.
ExperimentPlan expand(const ExperimentConfig& cfg);

/// 16 hex digits of FNV-1a over everything that determines a run's output.
std::string config_hash(const ExperimentConfig& cfg, const RunSpec& spec);

struct SummaryRow {
  std::string label;
  std::string hash;
  std::size_t n_seeds = 0;
  std::vector<std::string> metric_names;  // "task_loss" first, then val metrics
  std::vector<double> mean;
  std::vector<double> stddev;  // sample stddev, 0 for one seed
  double rank_mean = 0.0;      // final effective rank of P (0 without projector)
  std::optional<double> inv_minus_trad;  // val_loss, set on both rows of a pair
  std::optional<double> vs_baseline;     // val_loss delta to the baseline
};

struct SummaryTable {
  std::vector<SummaryRow> rows;  // sorted by label

  [[nodiscard]] const SummaryRow& row(const std::string& label) const;
  [[nodiscard]] bool has(const std::string& label) const;
};

void write_summary_csv(std::ostream& out, const SummaryTable& table);
SummaryTable read_summary_csv(std::istream& in);

struct ClaimResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ExperimentOutcome {
  SummaryTable summary;
  std::vector<ClaimResult> claims;
  std::vector<std::filesystem::path> files;  // every CSV written
  // Per-seed values keyed by label, for claims that need more than means.
  std::map<std::string, std::vector<double>> per_seed_val_loss;
  // linear-map only: (epoch-0, final) rms_log per seed.
  std::vector<std::pair<double, double>> linear_map_rms_log;
  std::vector<BoundAuditReport> bound_reports;  // bound-audit only, one per seed
};

struct RunOptions {
  std::filesystem::path out_dir = "xtkd_out";
  std::size_t jobs = 1;
  bool quiet = true;
};

/// Thrown (after writing a partial manifest) when an individual run fails.
class RunFailure : public Error {
 public:
  using Error::Error;
};

/// Executes every (config × seed) run, writes per-run CSVs under
/// out_dir/runs plus summary.csv, claims.txt, config.ini and manifest.txt
/// under out_dir, and evaluates the claim set registered for the
/// experiment's name (empty for ad-hoc configs). Throws RunFailure after
/// writing a manifest that marks the failed and skipped runs.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

/// Builds one student or pretrained net for a config; exposed for tests.
MlpNet make_student(const ExperimentConfig& cfg, std::uint64_t seed, const SynthDataset& data);
MlpNet make_teacher(const ExperimentConfig& cfg, TeacherKind kind, std::uint64_t seed,
                    const SynthDataset& pool);
/// Full-batch pretraining of `net` on `task`; returns the final training loss.
double pretrain(MlpNet& net, TaskKind task, const SynthDataset& data, std::size_t epochs,
                double lr);

struct DataSplits {
  SynthDataset pool;
  SynthDataset train;
  SynthDataset val;
};
DataSplits make_splits(const DataConfig& cfg);

// Presets.
std::vector<std::string> preset_names();
/// ConfigError listing the closest names when `name` is unknown.
ExperimentConfig preset(const std::string& name);
/// Claims checked for a preset; empty for other names.
std::vector<ClaimResult> evaluate_claims(const std::string& name, const ExperimentOutcome& outcome);

}  // namespace xtkd
