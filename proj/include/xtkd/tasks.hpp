#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "xtkd/autodiff.hpp"
#include "xtkd/matrix.hpp"

namespace xtkd {

enum class TaskKind { Depth, Classification, Regression };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

/// Shared-latent multi-task data. Every label is a deterministic function of
/// the same latent factors; only x carries noise.
struct SynthDataset {
  Matrix x;                  // n x input_dim
  Matrix latents;            // n x latent_dim
  Matrix y_depth;            // n x out_dim, entries > 1
  std::vector<int> y_class;  // n labels in [0, classes)
  Matrix y_reg;              // n x out_dim
  std::size_t classes = 0;

  [[nodiscard]] std::size_t size() const noexcept { return x.rows(); }
};

struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t n = 1000;
  std::size_t latent_dim = 4;
  std::size_t input_dim = 16;
  std::size_t classes = 4;
  std::size_t out_dim = 4;
  double noise = 0.05;
};

/// latents ~ U(-1, 1); x = latents·W_lift + noise·N(0, 1);
/// y_depth = 1 + exp(latents·W_d); y_class = argmax(latents·W_c);
/// y_reg = latents·W_r. The W_* are drawn from the seed before any sample, so
/// datasets that share a seed share the task maps.
SynthDataset synth_gen(const SynthParams& params);
SynthDataset synth_gen(std::uint64_t seed, std::size_t n, std::size_t latent_dim,
                       std::size_t input_dim, std::size_t classes);

/// Rows [begin, end) of every field.
SynthDataset slice_rows(const SynthDataset& data, std::size_t begin, std::size_t end);

/// Header x_0.., ydepth_0.., yclass, yreg_0..; one row per sample.
void write_dataset_csv(std::ostream& out, const SynthDataset& data);

/// 10·sqrt((1/K)Σg² + (0.15/K²)(Σg)²), g = log(pred) − log(gt) over the K
/// valid entries. DomainError on a non-positive valid entry.
double silog_loss(const Matrix& pred, const Matrix& gt);
double silog_loss(const Matrix& pred, const Matrix& gt, const std::vector<bool>& valid);
/// d silog / d pred; zero where the loss is zero.
Matrix silog_grad(const Matrix& pred, const Matrix& gt);

/// Mean over rows of −log softmax(logits)[label].
double ce_loss(const Matrix& logits, const std::vector<int>& labels);
Matrix ce_grad(const Matrix& logits, const std::vector<int>& labels);

double mse_loss(const Matrix& pred, const Matrix& target);
double accuracy(const Matrix& logits, const std::vector<int>& labels);

struct MetricsReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rms = 0.0;
  double rms_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

MetricsReport depth_metrics(const Matrix& pred, const Matrix& gt);
MetricsReport depth_metrics(const Matrix& pred, const Matrix& gt, const std::vector<bool>& valid);

// Graph nodes for the task losses. The label operands are captured as
// constants; gradients flow to `pred` / `logits` only.
NodeId silog_node(Graph& graph, NodeId pred, const Matrix& gt);
NodeId cross_entropy_node(Graph& graph, NodeId logits, std::vector<int> labels);
NodeId mse_node(Graph& graph, NodeId pred, const Matrix& target);

/// Task loss of a network output. Depth outputs are log-depths: the
/// prediction fed to SILog is exp(output).
NodeId record_task_loss(Graph& graph, TaskKind task, NodeId output, const SynthDataset& data);
double task_loss(TaskKind task, const Matrix& output, const SynthDataset& data);

/// Output width a network needs for a task.
std::size_t task_output_dim(TaskKind task, const SynthDataset& data);

/// Validation metrics as ordered (name, value) pairs: val_loss first, then
/// the depth suite or accuracy.
std::vector<std::pair<std::string, double>> task_metrics(TaskKind task, const Matrix& output,
                                                         const SynthDataset& data);
std::vector<std::string> task_metric_names(TaskKind task);

}  // namespace xtkd
