#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otnas/dataio.hpp"
#include "otnas/diffcore.hpp"
#include "otnas/rng.hpp"
#include "otnas/types.hpp"

namespace otnas {

// Cell DAG: nodes 0 and 1 are the cell inputs, nodes 2 .. N+1 are the
// intermediate nodes. Intermediate node j (0-based) receives one edge from
// every earlier node, so edges are numbered node-major:
//   edge_index(j, i) = sum_{j' < j} (2 + j') + i.
struct SearchSpaceConfig {
  int cells = 2;
  int nodes_per_cell = 4;
  int channels = 8;
  std::vector<OpKind> op_corpus = default_op_corpus();
  ImageShape image_shape;

  Index num_edges() const { return 2 * Index{nodes_per_cell} + Index{nodes_per_cell} * (nodes_per_cell - 1) / 2; }
  Index num_ops() const { return static_cast<Index>(op_corpus.size()); }
  void validate() const;
};

Index edge_index(int node, int predecessor);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double w_lr = 0.05;
  double w_momentum = 0.9;
  double w_weight_decay = 3e-4;
  double grad_clip = 5.0;  // global L2 norm of the weight gradient; 0 disables
  double alpha_lr = 3e-3;
  double alpha_beta1 = 0.5;
  double alpha_beta2 = 0.999;
  double perturb_radius = 0.1;  // 0 recovers first-order DARTS
  Seed seed = 0;
  int curve_log_every = 5;

  void validate() const;
};

struct SupernetState {
  SearchSpaceConfig config;
  int num_classes = 0;
  Parameter stem;                       // C x C_img x 3 x 3
  std::vector<Parameter> edge_weights;  // [cell][edge][op]; empty for parameter-free ops
  Parameter alpha;                      // E x |O|, shared by all cells
  Parameter head_weight;                // K x C
  Parameter head_bias;                  // K
  std::int64_t step_count = 0;
  Seed rng_seed = 0;

  Index weight_slot(int cell, Index edge, Index op) const {
    return (Index{cell} * config.num_edges() + edge) * config.num_ops() + op;
  }
  Parameter& edge_weight(int cell, Index edge, Index op) {
    return edge_weights[static_cast<std::size_t>(weight_slot(cell, edge, op))];
  }
  const Parameter& edge_weight(int cell, Index edge, Index op) const {
    return edge_weights[static_cast<std::size_t>(weight_slot(cell, edge, op))];
  }

  Eigen::Map<RowMatrixXd> alpha_matrix() {
    return {alpha.value.data(), config.num_edges(), config.num_ops()};
  }
  Eigen::Map<const RowMatrixXd> alpha_matrix() const {
    return {alpha.value.data(), config.num_edges(), config.num_ops()};
  }

  // Every weight tensor (stem, edge convs, head), excluding alpha.
  std::vector<Parameter*> weight_parameters();
  std::vector<const Parameter*> weight_parameters() const;
};

/// Row-wise softmax; each row of the result sums to 1.
RowMatrixXd softmax_rows(const Eigen::Ref<const RowMatrixXd>& logits);

SupernetState init_supernet(const SearchSpaceConfig& config, int num_classes, Seed seed);

/// Replaces the classifier head with a freshly seeded K-way head.
void reinit_head(SupernetState& state, int num_classes, Seed seed);

struct Batch {
  Tensor images;  // B x C x H x W
  std::vector<int> labels;
};

Batch gather_batch(const LabeledDataset& dataset, std::span<const int> indices);

/// Softmax(alpha_row)-weighted sum of the candidate operations on one edge.
Tensor mixed_forward(const Tensor& input, const Eigen::Ref<const VectorXd>& alpha_row, std::span<const OpKind> ops,
                     std::span<const Tensor* const> weights);

/// d <upstream, mixed_forward(input, alpha_row)> / d alpha_row.
VectorXd mixed_alpha_grad(const Tensor& input, const Eigen::Ref<const VectorXd>& alpha_row,
                          std::span<const OpKind> ops, std::span<const Tensor* const> weights,
                          const Tensor& upstream);

struct GradientRequest {
  bool weights = true;
  bool alpha = true;
};

/// Cross-entropy of the network whose edges mix with softmax(arch_logits).
/// Accumulates into the .grad of the requested parameters (alpha.grad is
/// the gradient wrt arch_logits) and returns the mean loss.
double supernet_loss_and_grad(SupernetState& state, const Batch& batch, const Eigen::Ref<const RowMatrixXd>& arch_logits,
                              GradientRequest request);

double supernet_loss(const SupernetState& state, const Batch& batch);

/// B x K logits with softmax(alpha) mixing.
MatrixXd predict_logits(const SupernetState& state, const Tensor& images);

void zero_grads(SupernetState& state);

struct StepMetrics {
  double train_loss = 0;
  double train_accuracy = 0;
  std::optional<double> val_loss;  // absent when the alpha update is disabled
};

/// One bilevel step: first-order Adam update of alpha on the validation
/// batch, then a momentum-SGD update of the weights on the training batch
/// with alpha perturbed by U[-r, r] noise.
StepMetrics train_step(SupernetState& state, const Batch& train_batch, const Batch& val_batch,
                       const TrainConfig& config);

/// Minibatch index stream over a fixed pool; reshuffles at every epoch
/// boundary from (seed, stream, epoch). The last batch of an epoch may be short.
class BatchCursor {
 public:
  BatchCursor(std::vector<int> pool, Seed seed, Seed stream) : pool_(std::move(pool)), seed_(seed), stream_(stream) {}

  std::vector<int> next(std::size_t batch_size) {
    if (order_.empty() || pos_ >= order_.size()) reshuffle();
    const std::size_t len = std::min(batch_size, order_.size() - pos_);
    std::vector<int> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                         order_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
    pos_ += len;
    return out;
  }

  std::size_t batches_per_epoch(std::size_t batch_size) const { return (pool_.size() + batch_size - 1) / batch_size; }

 private:
  void reshuffle() {
    order_ = pool_;
    Rng rng = make_rng({seed_, stream_, epoch_++});
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  std::vector<int> pool_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
  Seed seed_;
  Seed stream_;
  Seed epoch_ = 0;
};

struct CurvePoint {
  std::int64_t step = 0;
  double train_accuracy = 0;
  double val_accuracy = 0;
  double train_loss = 0;
};

struct TrainingCurve {
  std::vector<CurvePoint> points;

  bool empty() const { return points.empty(); }
  std::string to_csv() const;
};

struct TrainResult {
  SupernetState state;
  TrainingCurve curve;
};

TrainResult train_supernet(SupernetState state, const LabeledDataset& dataset, const TrainConfig& config);

struct EvalResult {
  double accuracy = 0;
  double loss = 0;
};

EvalResult evaluate_detailed(const SupernetState& state, const LabeledDataset& dataset, Split split);
double evaluate(const SupernetState& state, const LabeledDataset& dataset, Split split);

struct GenotypeEdge {
  int predecessor = 0;
  OpKind op = OpKind::skip_connect;
  bool operator==(const GenotypeEdge&) const = default;
};

struct CellGenotype {
  std::vector<std::array<GenotypeEdge, 2>> nodes;  // intermediate nodes in order
  std::string to_string() const;
};

CellGenotype discretize(const SupernetState& state);

/// A fixed network: the supernet trunk with one-hot mixing from a genotype.
struct DiscreteModel {
  SupernetState network;
  RowMatrixXd mixing;
  CellGenotype genotype;
};

RowMatrixXd genotype_mixing(const CellGenotype& genotype, const SearchSpaceConfig& config);

struct RetrainResult {
  DiscreteModel model;
  double test_accuracy = 0;
  TrainingCurve curve;
};

RetrainResult retrain_genotype(const CellGenotype& genotype, const SearchSpaceConfig& space,
                               const LabeledDataset& dataset, const TrainConfig& config);

double evaluate(const DiscreteModel& model, const LabeledDataset& dataset, Split split);

}  // namespace otnas
