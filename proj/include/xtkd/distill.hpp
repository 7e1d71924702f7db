#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xtkd/autodiff.hpp"
#include "xtkd/matrix.hpp"
#include "xtkd/models.hpp"
#include "xtkd/projector.hpp"
#include "xtkd/spectral.hpp"
#include "xtkd/tasks.hpp"

namespace xtkd {

enum class DistillKind { FitNets, AT, PKT, Ensemble };

std::string to_string(DistillKind kind);
DistillKind parse_distill_kind(const std::string& text);

struct DistillMethod {
  DistillKind kind = DistillKind::FitNets;
  std::size_t ensemble_size = 3;  // Ensemble only
};

// Feature distances between aligned matrices a (student side) and b (teacher
// side) of equal shape. All are zero at a == b and non-negative.
//
//   FitNets: mean over entries of (a − b)².
//   AT:      per row, square the activations and scale to unit L2 norm; mean
//            squared difference of the resulting maps.
//   PKT:     per row, cosine similarities to every other row shifted to
//            [0, 1] by (c + 1) / 2 and normalised to sum 1 (diagonal
//            excluded); mean over rows of KL(teacher row || student row).
double fitnets_loss(const Matrix& a, const Matrix& b);
double at_loss(const Matrix& a, const Matrix& b);
double pkt_loss(const Matrix& a, const Matrix& b);

/// Vector-Jacobian products: gradients of the loss w.r.t. (a, b).
std::pair<Matrix, Matrix> fitnets_vjp(const Matrix& a, const Matrix& b);
std::pair<Matrix, Matrix> at_vjp(const Matrix& a, const Matrix& b);
std::pair<Matrix, Matrix> pkt_vjp(const Matrix& a, const Matrix& b);

/// Single-pair distance; Ensemble on one pair reduces to FitNets.
double distill_loss(const DistillMethod& m, const Matrix& a, const Matrix& b);
/// Ensemble form: mean of FitNets over the members' aligned pairs.
double distill_loss(const DistillMethod& m, std::span<const std::pair<Matrix, Matrix>> pairs);

NodeId distill_node(Graph& graph, DistillKind kind, NodeId a, NodeId b);

/// task + distill. NumericError if either is non-finite.
double total_loss(double task, double distill);

struct EpochRow {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double distill_loss = 0.0;
  double total_loss = 0.0;
  std::vector<double> metrics;  // aligned with RunRecord::metric_names
  std::vector<double> sigma;    // projector spectrum / sigma_1 (empty if none)

  bool operator==(const EpochRow&) const = default;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> metric_names;
  std::vector<EpochRow> rows;
  std::size_t spectral_skips = 0;

  [[nodiscard]] double final_metric(const std::string& name) const;
  bool operator==(const RunRecord&) const = default;
};

// CSV: epoch, task_loss, distill_loss, total_loss, <metrics>, sigma_0..
void write_run_csv(std::ostream& out, const RunRecord& record);
RunRecord read_run_csv(std::istream& in);

struct TrainOptions {
  TaskKind task = TaskKind::Depth;
  std::optional<DistillMethod> method;  // requires a teacher
  Direction direction = Direction::Inverted;
  std::size_t epochs = 100;
  double lr = 0.05;
  std::uint64_t seed = 0;
  double distill_weight = 1.0;
  std::optional<std::size_t> spectral_r;  // enables the teacher-free term
  double spectral_weight = 1.0;
  std::size_t record_every = 1;
  double rank_tol = 1e-2;
  std::string config_hash;
};

struct TrainResult {
  RunRecord record;
  SpectrumTrace trace;
  std::vector<Projector> projectors;
};

/// Full-batch gradient descent on task + distill (+ spectral) with respect to
/// the student parameters and the projector weights.
///
/// Row e (1-based) holds the training losses evaluated before update e and
/// the validation metrics and projector spectrum after it; rows are emitted
/// every `record_every` epochs and always for the last one. The teacher is
/// only ever read (its encoder output is computed once). ContractError if a
/// method is given without a teacher, FrozenError if the teacher is not
/// frozen or the student is.
TrainResult train_run(MlpNet& student, const MlpNet* teacher, const SynthDataset& train,
                      const SynthDataset& val, const TrainOptions& opts);

struct LinearMapOptions {
  TaskKind task = TaskKind::Depth;  // task of the decoder
  std::size_t epochs = 100;
  double lr = 0.05;
  std::uint64_t seed = 0;
  std::optional<Matrix> initial_projector;
  std::size_t record_every = 1;
  std::string config_hash;
};

/// Trains only P in dec(enc(x)·P) for the decoder's task; both networks stay
/// frozen. Rows start at epoch 0 (the initial P).
TrainResult linear_map_experiment(const MlpNet& encoder_net, const MlpNet& decoder_net,
                                  const SynthDataset& train, const SynthDataset& val,
                                  const LinearMapOptions& opts);

}  // namespace xtkd
