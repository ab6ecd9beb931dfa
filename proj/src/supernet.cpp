#include "otnas/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "otnas/errors.hpp"
#include "otnas/rng.hpp"

namespace otnas {

void SearchSpaceConfig::validate() const {
  if (cells < 1) throw ConfigError("search space: cells must be >= 1");
  if (nodes_per_cell < 2) throw ConfigError("search space: nodes_per_cell must be >= 2");
  if (channels < 1) throw ConfigError("search space: channels must be >= 1");
  if (op_corpus.empty()) throw ConfigError("search space: op_corpus is empty");
  const auto has = [&](OpKind k) { return std::find(op_corpus.begin(), op_corpus.end(), k) != op_corpus.end(); };
  if (!has(OpKind::zero) || !has(OpKind::skip_connect)) {
    throw ConfigError("search space: op_corpus must include zero and skip_connect");
  }
  for (std::size_t i = 0; i < op_corpus.size(); ++i) {
    for (std::size_t j = i + 1; j < op_corpus.size(); ++j) {
      if (op_corpus[i] == op_corpus[j]) throw ConfigError("search space: duplicate op in corpus");
    }
  }
  if (image_shape.channels < 1 || image_shape.height < 1 || image_shape.width < 1) {
    throw ConfigError("search space: invalid image shape");
  }
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(w_lr > 0)) throw ConfigError("train: w_lr must be > 0");
  if (w_momentum < 0 || w_weight_decay < 0 || alpha_lr < 0) throw ConfigError("train: rates must be nonnegative");
  if (perturb_radius < 0) throw ConfigError("train: perturb_radius must be >= 0");
  if (curve_log_every < 1) throw ConfigError("train: curve_log_every must be >= 1");
  if (grad_clip < 0) throw ConfigError("train: grad_clip must be >= 0");
}

Index edge_index(int node, int predecessor) {
  return 2 * Index{node} + Index{node} * (node - 1) / 2 + predecessor;
}

std::vector<Parameter*> SupernetState::weight_parameters() {
  std::vector<Parameter*> out{&stem};
  for (auto& p : edge_weights) {
    if (!p.empty()) out.push_back(&p);
  }
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

std::vector<const Parameter*> SupernetState::weight_parameters() const {
  std::vector<const Parameter*> out{&stem};
  for (const auto& p : edge_weights) {
    if (!p.empty()) out.push_back(&p);
  }
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

RowMatrixXd softmax_rows(const Eigen::Ref<const RowMatrixXd>& logits) {
  RowMatrixXd out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const auto shifted = (logits.row(r).array() - logits.row(r).maxCoeff()).exp().eval();
    out.row(r) = shifted / shifted.sum();
  }
  return out;
}

namespace {

Tensor he_normal(Tensor::Shape shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (Index i = 0; i < t.size(); ++i) t[i] = gauss(rng);
  return t;
}

void init_head(SupernetState& s, int num_classes, Rng& rng) {
  const Index c = s.config.channels;
  Tensor w({num_classes, c});
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(c)));
  for (Index i = 0; i < w.size(); ++i) w[i] = gauss(rng);
  s.head_weight = Parameter(std::move(w));
  s.head_bias = Parameter(Tensor({num_classes}));
  s.num_classes = num_classes;
}

}  // namespace

SupernetState init_supernet(const SearchSpaceConfig& config, int num_classes, Seed seed) {
  config.validate();
  if (num_classes < 1) throw ConfigError("init_supernet: num_classes must be >= 1");
  SupernetState s;
  s.config = config;
  s.rng_seed = seed;
  Rng rng = make_rng({seed, 0x696e6974});
  const Index c = config.channels;
  const Index cin = config.image_shape.channels;
  s.stem = Parameter(he_normal({c, cin, 3, 3}, cin * 9, rng));
  s.edge_weights.resize(static_cast<std::size_t>(Index{config.cells} * config.num_edges() * config.num_ops()));
  for (int cell = 0; cell < config.cells; ++cell) {
    for (Index e = 0; e < config.num_edges(); ++e) {
      for (Index o = 0; o < config.num_ops(); ++o) {
        const OpKind kind = config.op_corpus[static_cast<std::size_t>(o)];
        if (!has_params(kind)) continue;
        const Index k = kernel_size(kind);
        s.edge_weight(cell, e, o) = Parameter(he_normal({c, c, k, k}, c * k * k, rng));
      }
    }
  }
  s.alpha = Parameter(Tensor({config.num_edges(), config.num_ops()}));
  init_head(s, num_classes, rng);
  return s;
}

void reinit_head(SupernetState& state, int num_classes, Seed seed) {
  Rng rng = make_rng({seed, 0x68656164});
  init_head(state, num_classes, rng);
}

Batch gather_batch(const LabeledDataset& d, std::span<const int> indices) {
  if (indices.empty()) throw PreconditionError("gather_batch: empty batch");
  const auto& s = d.image_shape;
  Batch batch{Tensor({static_cast<Index>(indices.size()), s.channels, s.height, s.width}), {}};
  const Index vol = s.volume();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const int i = indices[b];
    Eigen::Map<VectorXd>(batch.images.data() + static_cast<Index>(b) * vol, vol) = d.samples.row(i).transpose().cast<double>();
    batch.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
  }
  return batch;
}

Tensor mixed_forward(const Tensor& input, const Eigen::Ref<const VectorXd>& alpha_row, std::span<const OpKind> ops,
                     std::span<const Tensor* const> weights) {
  if (alpha_row.size() != static_cast<Index>(ops.size()) || weights.size() != ops.size()) {
    throw ShapeError("mixed_forward: alpha row / op list / weight list lengths differ");
  }
  const RowMatrixXd mix = softmax_rows(alpha_row.transpose());
  Tensor out = Tensor::zeros_like(input);
  for (std::size_t o = 0; o < ops.size(); ++o) {
    if (ops[o] == OpKind::zero) continue;
    out.array() += mix(0, static_cast<Index>(o)) * op_forward(ops[o], input, weights[o]).array();
  }
  return out;
}

VectorXd mixed_alpha_grad(const Tensor& input, const Eigen::Ref<const VectorXd>& alpha_row,
                          std::span<const OpKind> ops, std::span<const Tensor* const> weights,
                          const Tensor& upstream) {
  const RowMatrixXd mix = softmax_rows(alpha_row.transpose());
  VectorXd dmix(static_cast<Index>(ops.size()));
  for (std::size_t o = 0; o < ops.size(); ++o) {
    dmix(static_cast<Index>(o)) =
        ops[o] == OpKind::zero ? 0.0 : (upstream.array() * op_forward(ops[o], input, weights[o]).array()).sum();
  }
  const VectorXd w = mix.row(0).transpose();
  return w.cwiseProduct(dmix.array().matrix() - VectorXd::Constant(w.size(), w.dot(dmix)));
}

// ---------------------------------------------------------------------------
// Network engine shared by the supernet (softmax mixing) and discrete models
// (one-hot mixing). Ops whose mixing coefficient is exactly 0 are skipped.

namespace {

struct CellTrace {
  std::vector<Tensor> nodes;
  std::vector<std::vector<Tensor>> op_out;  // [edge][op]; empty for zero / skip / unused
};

struct Trace {
  std::vector<Tensor> outputs;  // [0] stem, [k + 1] output of cell k
  std::vector<CellTrace> cells;
  MatrixXd pooled;  // B x C
  MatrixXd logits;  // B x K
};

const Tensor& cell_state(const Trace& t, const CellTrace& ct, int cell, int idx) {
  if (idx == 0) return t.outputs[static_cast<std::size_t>(std::max(cell - 1, 0))];
  if (idx == 1) return t.outputs[static_cast<std::size_t>(cell)];
  return ct.nodes[static_cast<std::size_t>(idx - 2)];
}

const Tensor* weight_ptr(const SupernetState& s, int cell, Index e, Index o) {
  const auto& p = s.edge_weight(cell, e, o);
  return p.empty() ? nullptr : &p.value;
}

Trace forward(const SupernetState& s, const RowMatrixXd& mixing, const Tensor& images, bool keep_ops) {
  const auto& cfg = s.config;
  const int n_nodes = cfg.nodes_per_cell;
  if (images.rank() != 4 || images.dim(1) != cfg.image_shape.channels || images.dim(2) != cfg.image_shape.height ||
      images.dim(3) != cfg.image_shape.width) {
    throw ShapeError("supernet forward: image batch does not match the search-space image shape");
  }
  Trace t;
  t.outputs.reserve(static_cast<std::size_t>(cfg.cells + 1));
  t.outputs.push_back(op_forward(OpKind::conv_3x3, images, &s.stem.value));
  t.cells.resize(static_cast<std::size_t>(cfg.cells));
  for (int cell = 0; cell < cfg.cells; ++cell) {
    CellTrace& ct = t.cells[static_cast<std::size_t>(cell)];
    ct.nodes.reserve(static_cast<std::size_t>(n_nodes));
    if (keep_ops) ct.op_out.resize(static_cast<std::size_t>(cfg.num_edges()));
    const Tensor::Shape shape = t.outputs.back().shape();
    for (int j = 0; j < n_nodes; ++j) {
      Tensor node(shape);
      for (int i = 0; i < j + 2; ++i) {
        const Index e = edge_index(j, i);
        const Tensor& in = cell_state(t, ct, cell, i);
        if (keep_ops) ct.op_out[static_cast<std::size_t>(e)].resize(static_cast<std::size_t>(cfg.num_ops()));
        for (Index o = 0; o < cfg.num_ops(); ++o) {
          const double coef = mixing(e, o);
          const OpKind kind = cfg.op_corpus[static_cast<std::size_t>(o)];
          if (coef == 0.0 || kind == OpKind::zero) continue;
          if (kind == OpKind::skip_connect) {
            node.array() += coef * in.array();
            continue;
          }
          Tensor out = op_forward(kind, in, weight_ptr(s, cell, e, o));
          node.array() += coef * out.array();
          if (keep_ops) ct.op_out[static_cast<std::size_t>(e)][static_cast<std::size_t>(o)] = std::move(out);
        }
      }
      ct.nodes.push_back(std::move(node));
    }
    Tensor cell_out(shape);
    for (const auto& node : ct.nodes) cell_out.array() += node.array();
    cell_out.array() /= static_cast<double>(n_nodes);
    t.outputs.push_back(std::move(cell_out));
  }

  const Tensor& last = t.outputs.back();
  const Index batch = last.dim(0), channels = last.dim(1), hw = last.dim(2) * last.dim(3);
  t.pooled.resize(batch, channels);
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      t.pooled(b, c) = Eigen::Map<const VectorXd>(last.data() + (b * channels + c) * hw, hw).mean();
    }
  }
  Eigen::Map<const RowMatrixXd> w(s.head_weight.value.data(), s.num_classes, channels);
  Eigen::Map<const VectorXd> bias(s.head_bias.value.data(), s.num_classes);
  t.logits = (t.pooled * w.transpose()).rowwise() + bias.transpose();
  return t;
}

Tensor logits_tensor(const MatrixXd& logits) {
  Tensor out({logits.rows(), logits.cols()});
  Eigen::Map<RowMatrixXd>(out.data(), logits.rows(), logits.cols()) = logits;
  return out;
}

struct BackwardResult {
  double loss = 0;
  int correct = 0;
  RowMatrixXd mixing_grad;  // dL / d mixing coefficient, E x |O|
};

int count_correct(const MatrixXd& logits, std::span<const int> labels) {
  int correct = 0;
  for (Index b = 0; b < logits.rows(); ++b) {
    Index best = 0;
    for (Index k = 1; k < logits.cols(); ++k) {
      if (logits(b, k) > logits(b, best)) best = k;
    }
    if (best == labels[static_cast<std::size_t>(b)]) ++correct;
  }
  return correct;
}

BackwardResult loss_and_backward(SupernetState& s, const RowMatrixXd& mixing, const Batch& batch, bool want_weights,
                                 bool want_mixing) {
  if (batch.labels.empty()) throw PreconditionError("empty batch");
  const auto& cfg = s.config;
  const int n_nodes = cfg.nodes_per_cell;
  Trace t = forward(s, mixing, batch.images, true);
  const auto ce = softmax_cross_entropy(logits_tensor(t.logits), std::span<const int>(batch.labels));

  BackwardResult r;
  r.loss = ce.loss;
  r.correct = count_correct(t.logits, batch.labels);
  r.mixing_grad = RowMatrixXd::Zero(cfg.num_edges(), cfg.num_ops());

  const Index bsz = t.pooled.rows(), channels = t.pooled.cols();
  Eigen::Map<const RowMatrixXd> dlogits(ce.logit_grad.data(), bsz, s.num_classes);
  Eigen::Map<const RowMatrixXd> w(s.head_weight.value.data(), s.num_classes, channels);
  if (want_weights) {
    Eigen::Map<RowMatrixXd>(s.head_weight.grad.data(), s.num_classes, channels) += dlogits.transpose() * t.pooled;
    Eigen::Map<VectorXd>(s.head_bias.grad.data(), s.num_classes) += dlogits.colwise().sum().transpose();
  }
  const MatrixXd dpooled = dlogits * w;  // B x C

  std::vector<Tensor> d_outputs;
  d_outputs.reserve(t.outputs.size());
  for (const auto& o : t.outputs) d_outputs.push_back(Tensor::zeros_like(o));
  {
    Tensor& d_last = d_outputs.back();
    const Index hw = d_last.dim(2) * d_last.dim(3);
    for (Index b = 0; b < bsz; ++b) {
      for (Index c = 0; c < channels; ++c) {
        Eigen::Map<VectorXd>(d_last.data() + (b * channels + c) * hw, hw).setConstant(dpooled(b, c) / double(hw));
      }
    }
  }

  for (int cell = cfg.cells - 1; cell >= 0; --cell) {
    const CellTrace& ct = t.cells[static_cast<std::size_t>(cell)];
    const Tensor& d_out = d_outputs[static_cast<std::size_t>(cell + 1)];
    std::vector<Tensor> d_nodes;
    d_nodes.reserve(static_cast<std::size_t>(n_nodes));
    for (int j = 0; j < n_nodes; ++j) d_nodes.emplace_back(d_out.shape(), d_out.array() / double(n_nodes));
    Tensor d_in0 = Tensor::zeros_like(d_out);
    Tensor d_in1 = Tensor::zeros_like(d_out);

    for (int j = n_nodes - 1; j >= 0; --j) {
      const Tensor& g = d_nodes[static_cast<std::size_t>(j)];
      for (int i = 0; i < j + 2; ++i) {
        const Index e = edge_index(j, i);
        const Tensor& in = cell_state(t, ct, cell, i);
        Tensor* d_in = i == 0 ? &d_in0 : i == 1 ? &d_in1 : &d_nodes[static_cast<std::size_t>(i - 2)];
        for (Index o = 0; o < cfg.num_ops(); ++o) {
          const double coef = mixing(e, o);
          const OpKind kind = cfg.op_corpus[static_cast<std::size_t>(o)];
          if (coef == 0.0 || kind == OpKind::zero) continue;
          if (want_mixing) {
            const Tensor& out =
                kind == OpKind::skip_connect ? in : ct.op_out[static_cast<std::size_t>(e)][static_cast<std::size_t>(o)];
            r.mixing_grad(e, o) += (g.array() * out.array()).sum();
          }
          Parameter& p = s.edge_weight(cell, e, o);
          op_backward_accumulate(kind, in, p.empty() ? nullptr : &p.value, g, coef, d_in,
                                 want_weights && !p.empty() ? &p.grad : nullptr);
        }
      }
    }
    d_outputs[static_cast<std::size_t>(std::max(cell - 1, 0))].array() += d_in0.array();
    d_outputs[static_cast<std::size_t>(cell)].array() += d_in1.array();
  }
  if (want_weights) {
    op_backward_accumulate(OpKind::conv_3x3, batch.images, &s.stem.value, d_outputs.front(), 1.0, nullptr,
                           &s.stem.grad);
  }
  return r;
}

// Chain rule through the row softmax: dL/da_o = w_o (dL/dw_o - sum_o' w_o' dL/dw_o').
RowMatrixXd softmax_backward(const RowMatrixXd& mixing, const RowMatrixXd& mixing_grad) {
  const VectorXd inner = (mixing.array() * mixing_grad.array()).rowwise().sum();
  return (mixing.array() * (mixing_grad.colwise() - inner).array()).matrix();
}

void clip_and_step(SupernetState& s, const TrainConfig& config) {
  auto params = s.weight_parameters();
  if (config.grad_clip > 0) {
    double sq = 0;
    for (const auto* p : params) sq += p->grad.array().square().sum();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite weight gradient at step " + std::to_string(s.step_count));
    if (norm > config.grad_clip) {
      const double scale = config.grad_clip / norm;
      for (auto* p : params) p->grad.array() *= scale;
    }
  }
  for (auto* p : params) sgd_step(*p, config.w_lr, config.w_momentum, config.w_weight_decay);
}

double weight_step(SupernetState& s, const RowMatrixXd& mixing, const Batch& batch, const TrainConfig& config,
                   int* correct) {
  for (auto* p : s.weight_parameters()) p->zero_grad();
  const auto r = loss_and_backward(s, mixing, batch, true, false);
  if (!std::isfinite(r.loss)) throw NumericalError("non-finite training loss at step " + std::to_string(s.step_count));
  clip_and_step(s, config);
  if (correct != nullptr) *correct = r.correct;
  return r.loss;
}

void check_dataset_for_training(const SupernetState& s, const LabeledDataset& d) {
  if (d.splits.train.empty() || d.splits.val.empty()) {
    throw PreconditionError(d.name + ": training needs non-empty train and val splits");
  }
  if (d.num_classes != s.num_classes) {
    throw IncompatibleError(d.name + " has " + std::to_string(d.num_classes) + " classes but the head has " +
                            std::to_string(s.num_classes));
  }
  if (!(d.image_shape == s.config.image_shape)) throw IncompatibleError(d.name + ": image shape differs from search space");
}

EvalResult evaluate_with(const SupernetState& s, const RowMatrixXd& mixing, const LabeledDataset& d, Split split) {
  if (d.num_classes != s.num_classes) {
    throw IncompatibleError("evaluate: dataset " + d.name + " has " + std::to_string(d.num_classes) +
                            " classes but the head has " + std::to_string(s.num_classes));
  }
  const auto& idx = d.split(split);
  if (idx.empty()) return {};
  constexpr std::size_t kChunk = 64;
  double loss = 0;
  int correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, idx.size() - start);
    const Batch batch = gather_batch(d, std::span<const int>(idx).subspan(start, len));
    const Trace t = forward(s, mixing, batch.images, false);
    correct += count_correct(t.logits, batch.labels);
    loss += softmax_cross_entropy(logits_tensor(t.logits), std::span<const int>(batch.labels)).loss * double(len);
  }
  return {double(correct) / double(idx.size()), loss / double(idx.size())};
}

template <typename StepFn>
TrainingCurve run_epochs(const LabeledDataset& d, const TrainConfig& config, StepFn&& step,
                         const std::function<EvalResult(Split)>& eval) {
  TrainingCurve curve;
  BatchCursor train_cursor(d.splits.train, config.seed, 0x747261696e);
  BatchCursor val_cursor(d.splits.val, config.seed, 0x76616c);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t per_epoch = train_cursor.batches_per_epoch(batch);
  std::int64_t step_no = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto train_idx = train_cursor.next(batch);
      const auto val_idx = val_cursor.next(batch);
      step(gather_batch(d, train_idx), gather_batch(d, val_idx));
      ++step_no;
      // A run shorter than one logging interval still records its end point.
      const bool last = epoch + 1 == config.epochs && b + 1 == per_epoch;
      if (step_no % config.curve_log_every == 0 || (last && curve.empty())) {
        const EvalResult tr = eval(Split::train);
        const EvalResult va = eval(Split::val);
        curve.points.push_back({step_no, tr.accuracy, va.accuracy, tr.loss});
      }
    }
  }
  return curve;
}

}  // namespace

double supernet_loss_and_grad(SupernetState& state, const Batch& batch, const Eigen::Ref<const RowMatrixXd>& arch_logits,
                              GradientRequest request) {
  const RowMatrixXd mixing = softmax_rows(arch_logits);
  const auto r = loss_and_backward(state, mixing, batch, request.weights, request.alpha);
  if (request.alpha) {
    Eigen::Map<RowMatrixXd>(state.alpha.grad.data(), mixing.rows(), mixing.cols()) +=
        softmax_backward(mixing, r.mixing_grad);
  }
  return r.loss;
}

double supernet_loss(const SupernetState& state, const Batch& batch) {
  const Trace t = forward(state, softmax_rows(state.alpha_matrix()), batch.images, false);
  return softmax_cross_entropy(logits_tensor(t.logits), std::span<const int>(batch.labels)).loss;
}

MatrixXd predict_logits(const SupernetState& state, const Tensor& images) {
  return forward(state, softmax_rows(state.alpha_matrix()), images, false).logits;
}

void zero_grads(SupernetState& state) {
  for (auto* p : state.weight_parameters()) p->zero_grad();
  state.alpha.zero_grad();
}

StepMetrics train_step(SupernetState& state, const Batch& train_batch, const Batch& val_batch,
                       const TrainConfig& config) {
  if (train_batch.labels.empty() || val_batch.labels.empty()) throw PreconditionError("train_step: empty batch");
  StepMetrics metrics;
  const Index edges = state.config.num_edges(), ops = state.config.num_ops();

  // (i) architecture update on the validation batch, weights held fixed.
  if (config.alpha_lr > 0) {
    state.alpha.zero_grad();
    const RowMatrixXd mixing = softmax_rows(state.alpha_matrix());
    const auto r = loss_and_backward(state, mixing, val_batch, false, true);
    Eigen::Map<RowMatrixXd>(state.alpha.grad.data(), edges, ops) = softmax_backward(mixing, r.mixing_grad);
    adam_step(state.alpha, config.alpha_lr, config.alpha_beta1, config.alpha_beta2, 1e-8);
    if (!state.alpha.value.array().allFinite()) {
      throw NumericalError("non-finite architecture parameters at step " + std::to_string(state.step_count));
    }
    metrics.val_loss = r.loss;
  }

  // (ii) weight update under a random-smoothing perturbation of alpha.
  RowMatrixXd perturbed = state.alpha_matrix();
  if (config.perturb_radius > 0) {
    Rng rng = make_rng({config.seed, static_cast<Seed>(state.step_count), 0x7065727475});
    std::uniform_real_distribution<double> noise(-config.perturb_radius, config.perturb_radius);
    for (Index e = 0; e < edges; ++e) {
      for (Index o = 0; o < ops; ++o) perturbed(e, o) += noise(rng);
    }
  }
  int correct = 0;
  metrics.train_loss = weight_step(state, softmax_rows(perturbed), train_batch, config, &correct);
  metrics.train_accuracy = double(correct) / double(train_batch.labels.size());
  ++state.step_count;
  return metrics;
}

std::string TrainingCurve::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "step,train_acc,val_acc,train_loss\n";
  for (const auto& p : points) {
    out << p.step << ',' << p.train_accuracy << ',' << p.val_accuracy << ',' << p.train_loss << '\n';
  }
  return out.str();
}

TrainResult train_supernet(SupernetState state, const LabeledDataset& dataset, const TrainConfig& config) {
  config.validate();
  if (config.epochs == 0) return {std::move(state), {}};
  check_dataset_for_training(state, dataset);
  auto eval = [&](Split split) { return evaluate_with(state, softmax_rows(state.alpha_matrix()), dataset, split); };
  TrainingCurve curve = run_epochs(
      dataset, config, [&](const Batch& tb, const Batch& vb) { train_step(state, tb, vb, config); }, eval);
  return {std::move(state), std::move(curve)};
}

EvalResult evaluate_detailed(const SupernetState& state, const LabeledDataset& dataset, Split split) {
  return evaluate_with(state, softmax_rows(state.alpha_matrix()), dataset, split);
}

double evaluate(const SupernetState& state, const LabeledDataset& dataset, Split split) {
  return evaluate_detailed(state, dataset, split).accuracy;
}

// ---------------------------------------------------------------------------

std::string CellGenotype::to_string() const {
  std::ostringstream out;
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    if (j) out << "; ";
    out << "node" << j + 2 << "=[";
    for (std::size_t k = 0; k < 2; ++k) {
      if (k) out << ", ";
      out << '(' << nodes[j][k].predecessor << ", " << otnas::to_string(nodes[j][k].op) << ')';
    }
    out << ']';
  }
  return out.str();
}

CellGenotype discretize(const SupernetState& state) {
  const auto& cfg = state.config;
  const RowMatrixXd mix = softmax_rows(state.alpha_matrix());
  CellGenotype genotype;
  for (int j = 0; j < cfg.nodes_per_cell; ++j) {
    struct Candidate {
      int predecessor;
      Index op;
      double weight;
    };
    std::vector<Candidate> candidates;
    for (int i = 0; i < j + 2; ++i) {
      const Index e = edge_index(j, i);
      Index best = -1;
      for (Index o = 0; o < cfg.num_ops(); ++o) {
        if (cfg.op_corpus[static_cast<std::size_t>(o)] == OpKind::zero) continue;
        if (best < 0 || mix(e, o) > mix(e, best)) best = o;
      }
      candidates.push_back({i, best, mix(e, best)});
    }
    // Stable sort keeps lower edge indices first among equal weights.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.weight > b.weight; });
    std::array<GenotypeEdge, 2> chosen;
    for (std::size_t k = 0; k < 2; ++k) {
      chosen[k] = {candidates[k].predecessor, cfg.op_corpus[static_cast<std::size_t>(candidates[k].op)]};
    }
    if (chosen[1].predecessor < chosen[0].predecessor) std::swap(chosen[0], chosen[1]);
    genotype.nodes.push_back(chosen);
  }
  return genotype;
}

RowMatrixXd genotype_mixing(const CellGenotype& genotype, const SearchSpaceConfig& config) {
  if (static_cast<int>(genotype.nodes.size()) != config.nodes_per_cell) {
    throw ShapeError("genotype node count differs from the search space");
  }
  RowMatrixXd mixing = RowMatrixXd::Zero(config.num_edges(), config.num_ops());
  for (int j = 0; j < config.nodes_per_cell; ++j) {
    for (const auto& edge : genotype.nodes[static_cast<std::size_t>(j)]) {
      if (edge.predecessor < 0 || edge.predecessor >= j + 2) {
        throw PreconditionError("genotype: node " + std::to_string(j + 2) + " has invalid predecessor " +
                                std::to_string(edge.predecessor));
      }
      if (edge.op == OpKind::zero) throw PreconditionError("genotype: zero op is not a valid choice");
      const auto it = std::find(config.op_corpus.begin(), config.op_corpus.end(), edge.op);
      if (it == config.op_corpus.end()) throw IncompatibleError("genotype op missing from the corpus");
      mixing(edge_index(j, edge.predecessor), it - config.op_corpus.begin()) = 1.0;
    }
  }
  return mixing;
}

RetrainResult retrain_genotype(const CellGenotype& genotype, const SearchSpaceConfig& space,
                               const LabeledDataset& dataset, const TrainConfig& config) {
  config.validate();
  RetrainResult result;
  result.model.genotype = genotype;
  result.model.mixing = genotype_mixing(genotype, space);
  result.model.network = init_supernet(space, dataset.num_classes, config.seed);
  SupernetState& net = result.model.network;
  const RowMatrixXd& mixing = result.model.mixing;
  if (config.epochs > 0) {
    check_dataset_for_training(net, dataset);
    auto eval = [&](Split split) { return evaluate_with(net, mixing, dataset, split); };
    result.curve = run_epochs(
        dataset, config,
        [&](const Batch& tb, const Batch&) {
          weight_step(net, mixing, tb, config, nullptr);
          ++net.step_count;
        },
        eval);
  }
  result.test_accuracy = evaluate_with(net, mixing, dataset, Split::test).accuracy;
  return result;
}

double evaluate(const DiscreteModel& model, const LabeledDataset& dataset, Split split) {
  return evaluate_with(model.network, model.mixing, dataset, split).accuracy;
}

}  // namespace otnas
