#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "otnas/dataio.hpp"
#include "otnas/errors.hpp"
#include "otnas/rng.hpp"
#include "otnas/supernet.hpp"

using namespace otnas;

namespace {

SearchSpaceConfig tiny_space(int nodes = 3, int channels = 6) {
  SearchSpaceConfig s;
  s.cells = 1;
  s.nodes_per_cell = nodes;
  s.channels = channels;
  s.image_shape = {1, 10, 10};
  return s;
}

LabeledDataset tiny_shapes(Seed seed = 3, int per_class = 20) {
  SyntheticTaskSpec spec;
  spec.family = Family::shapes;
  spec.seed = seed;
  spec.samples_per_class = per_class;
  spec.image_size = {1, 10, 10};
  return generate_synthetic(spec);
}

Batch first_batch(const LabeledDataset& d, Split split, std::size_t n) {
  const auto& idx = d.split(split);
  std::vector<int> take(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, idx.size())));
  return gather_batch(d, take);
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data(), a.data() + a.size(), b.data());
}

bool same_state(const SupernetState& a, const SupernetState& b) {
  auto wa = a.weight_parameters();
  auto wb = b.weight_parameters();
  if (wa.size() != wb.size()) return false;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    if (!same_tensor(wa[i]->value, wb[i]->value)) return false;
  }
  return same_tensor(a.alpha.value, b.alpha.value) && a.step_count == b.step_count;
}

TrainConfig quick_train(int epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.curve_log_every = 2;
  return t;
}

}  // namespace

TEST(SearchSpace, EdgeNumbering) {
  SearchSpaceConfig s;
  s.nodes_per_cell = 4;
  EXPECT_EQ(s.num_edges(), 14);
  EXPECT_EQ(edge_index(0, 0), 0);
  EXPECT_EQ(edge_index(0, 1), 1);
  EXPECT_EQ(edge_index(1, 0), 2);
  EXPECT_EQ(edge_index(1, 2), 4);
  EXPECT_EQ(edge_index(3, 4), 13);
}

TEST(SearchSpace, RejectsBadConfigs) {
  auto s = tiny_space();
  s.cells = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = tiny_space();
  s.op_corpus.clear();
  EXPECT_THROW(s.validate(), ConfigError);
  TrainConfig t;
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng = make_rng({11});
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    RowMatrixXd logits(7, 6);
    for (Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
    const RowMatrixXd p = softmax_rows(logits);
    for (Index r = 0; r < p.rows(); ++r) {
      EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
      EXPECT_TRUE((p.row(r).array() >= 0).all());
    }
    const double c = n(rng) * 10;
    const RowMatrixXd q = softmax_rows(logits.array() + c);
    EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(MixedOp, ZeroAndSkipHalveInput) {
  Tensor x({1, 1, 2, 2}, Eigen::ArrayXd::LinSpaced(4, 1, 4));
  const std::vector<OpKind> ops{OpKind::zero, OpKind::skip_connect};
  const std::vector<const Tensor*> w{nullptr, nullptr};
  const Tensor y = mixed_forward(x, VectorXd::Zero(2), ops, w);
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], x[i] / 2);
}

TEST(MixedOp, LogThreeWeighting) {
  Tensor x({1, 1, 2, 2}, Eigen::ArrayXd::LinSpaced(4, -1, 2));
  const std::vector<OpKind> ops{OpKind::skip_connect, OpKind::zero};
  const std::vector<const Tensor*> w{nullptr, nullptr};
  const Tensor y = mixed_forward(x, Eigen::Vector2d(std::log(3.0), 0.0), ops, w);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 0.75 * x[i], 1e-15);
}

TEST(MixedOp, AlphaGradientMatchesFiniteDifference) {
  Rng rng = make_rng({5});
  std::normal_distribution<double> n;
  const auto ops = default_op_corpus();
  Tensor x({2, 3, 5, 5});
  for (Index i = 0; i < x.size(); ++i) x[i] = n(rng);
  std::vector<Tensor> params;
  params.reserve(ops.size());
  std::vector<const Tensor*> w;
  for (OpKind k : ops) {
    if (!has_params(k)) {
      w.push_back(nullptr);
      continue;
    }
    const Index ks = kernel_size(k);
    params.emplace_back(Tensor::Shape{3, 3, ks, ks});
    for (Index i = 0; i < params.back().size(); ++i) params.back()[i] = 0.3 * n(rng);
    w.push_back(&params.back());
  }
  Tensor up = Tensor::zeros_like(x);
  for (Index i = 0; i < up.size(); ++i) up[i] = n(rng);
  VectorXd alpha(static_cast<Index>(ops.size()));
  for (Index i = 0; i < alpha.size(); ++i) alpha[i] = n(rng);

  const VectorXd g = mixed_alpha_grad(x, alpha, ops, w, up);
  auto f = [&](const VectorXd& a) { return (mixed_forward(x, a, ops, w).array() * up.array()).sum(); };
  const double h = 1e-6;
  for (Index i = 0; i < alpha.size(); ++i) {
    VectorXd p = alpha, m = alpha;
    p[i] += h;
    m[i] -= h;
    const double fd = (f(p) - f(m)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Supernet, InitIsDeterministicAndTrunkIgnoresClassCount) {
  const auto space = tiny_space();
  const auto a = init_supernet(space, 3, 9);
  const auto b = init_supernet(space, 3, 9);
  EXPECT_TRUE(same_state(a, b));
  EXPECT_TRUE((a.alpha.value.array() == 0).all());

  const auto c = init_supernet(space, 5, 9);
  EXPECT_TRUE(same_tensor(a.stem.value, c.stem.value));
  for (std::size_t i = 0; i < a.edge_weights.size(); ++i) {
    EXPECT_TRUE(same_tensor(a.edge_weights[i].value, c.edge_weights[i].value));
  }
  EXPECT_EQ(c.head_weight.value.dim(0), 5);

  const auto d = init_supernet(space, 3, 10);
  EXPECT_FALSE(same_tensor(a.stem.value, d.stem.value));
}

TEST(Supernet, AlphaGradientMatchesFiniteDifference) {
  const auto data = tiny_shapes();
  const Batch batch = first_batch(data, Split::train, 6);
  for (Seed seed = 0; seed < 3; ++seed) {
    auto s = init_supernet(tiny_space(2, 8), 3, seed);
    Rng rng = make_rng({seed, 77});
    std::normal_distribution<double> n(0.0, 0.5);
    for (Index i = 0; i < s.alpha.value.size(); ++i) s.alpha.value[i] = n(rng);

    zero_grads(s);
    const RowMatrixXd logits = s.alpha_matrix();
    supernet_loss_and_grad(s, batch, logits, {.weights = false, .alpha = true});
    const Tensor g = s.alpha.grad;
    const double h = 1e-5;
    for (Index i = 0; i < g.size(); ++i) {
      auto p = s, m = s;
      p.alpha.value[i] += h;
      m.alpha.value[i] -= h;
      const double fd = (supernet_loss(p, batch) - supernet_loss(m, batch)) / (2 * h);
      const double scale = std::max(std::abs(fd), 1e-6);
      EXPECT_LT(std::abs(g[i] - fd) / scale, 1e-4) << "seed " << seed << " entry " << i;
    }
  }
}

TEST(Supernet, WeightGradientMatchesFiniteDifference) {
  const auto data = tiny_shapes();
  const Batch batch = first_batch(data, Split::train, 4);
  auto s = init_supernet(tiny_space(2, 4), 3, 1);
  zero_grads(s);
  supernet_loss_and_grad(s, batch, s.alpha_matrix(), {.weights = true, .alpha = false});
  Rng rng = make_rng({1234});
  auto params = s.weight_parameters();
  const double h = 1e-6;
  for (int probe = 0; probe < 24; ++probe) {
    const std::size_t p = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
    if (params[p]->value.empty()) continue;
    const Index i = std::uniform_int_distribution<Index>(0, params[p]->value.size() - 1)(rng);
    const double orig = params[p]->value[i];
    params[p]->value[i] = orig + h;
    const double up = supernet_loss(s, batch);
    params[p]->value[i] = orig - h;
    const double down = supernet_loss(s, batch);
    params[p]->value[i] = orig;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(params[p]->grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "param " << p << " entry " << i;
  }
}

TEST(TrainStep, ZeroRadiusAndFrozenAlphaLeaveAlphaUntouched) {
  const auto data = tiny_shapes();
  auto s = init_supernet(tiny_space(), 3, 2);
  for (Index i = 0; i < s.alpha.value.size(); ++i) s.alpha.value[i] = 0.01 * static_cast<double>(i % 5);
  const Tensor before = s.alpha.value;
  auto cfg = quick_train();
  cfg.perturb_radius = 0;
  cfg.alpha_lr = 0;
  const auto metrics = train_step(s, first_batch(data, Split::train, 8), first_batch(data, Split::val, 8), cfg);
  EXPECT_TRUE(same_tensor(before, s.alpha.value));
  EXPECT_FALSE(metrics.val_loss.has_value());
  EXPECT_EQ(s.step_count, 1);
}

TEST(TrainStep, IsDeterministic) {
  const auto data = tiny_shapes();
  const Batch tb = first_batch(data, Split::train, 8);
  const Batch vb = first_batch(data, Split::val, 8);
  auto a = init_supernet(tiny_space(), 3, 4);
  auto b = a;
  const auto cfg = quick_train();
  for (int i = 0; i < 3; ++i) {
    train_step(a, tb, vb, cfg);
    train_step(b, tb, vb, cfg);
  }
  EXPECT_TRUE(same_state(a, b));
  for (Index r = 0; r < a.alpha_matrix().rows(); ++r) {
    EXPECT_NEAR(softmax_rows(a.alpha_matrix()).row(r).sum(), 1.0, 1e-12);
  }
}

TEST(TrainStep, AlphaMovesTowardHelpfulOperation) {
  // With a fitted head, scaling features up through skip lowers the loss.
  const auto data = tiny_shapes();
  auto space = tiny_space();
  space.op_corpus = {OpKind::zero, OpKind::skip_connect};
  auto s = init_supernet(space, 3, 0);
  const Batch tb = first_batch(data, Split::train, 60);
  auto cfg = quick_train();
  cfg.alpha_lr = 0;
  cfg.perturb_radius = 0;
  cfg.w_lr = 0.1;
  for (int i = 0; i < 60; ++i) train_step(s, tb, tb, cfg);
  ASSERT_LT(supernet_loss(s, tb), std::log(3.0));

  cfg.alpha_lr = 0.01;
  train_step(s, tb, tb, cfg);
  const auto a = s.alpha_matrix();
  for (Index e = 0; e < a.rows(); ++e) EXPECT_GT(a(e, 1), a(e, 0)) << "edge " << e;
}

TEST(TrainStep, FullBatchLossDecreases) {
  // Bright vs dark images: linearly separable, full-batch plain gradient descent.
  LabeledDataset d;
  d.name = "bright_dark";
  d.image_shape = {1, 6, 6};
  d.num_classes = 2;
  const int n = 32;
  d.samples.resize(n, d.image_shape.volume());
  Rng rng = make_rng({8});
  std::uniform_real_distribution<float> u(0.0f, 0.3f);
  for (int i = 0; i < n; ++i) {
    d.labels.push_back(i % 2);
    for (Index j = 0; j < d.samples.cols(); ++j) d.samples(i, j) = u(rng) + (i % 2 ? 0.6f : 0.0f);
  }
  d.splits.train.resize(24);
  std::iota(d.splits.train.begin(), d.splits.train.end(), 0);
  d.splits.val.resize(8);
  std::iota(d.splits.val.begin(), d.splits.val.end(), 24);
  validate(d);

  auto space = tiny_space(2, 4);
  space.image_shape = d.image_shape;
  auto s = init_supernet(space, 2, 1);
  auto cfg = quick_train();
  cfg.alpha_lr = 0;
  cfg.perturb_radius = 0;
  cfg.w_momentum = 0;
  cfg.w_weight_decay = 0;
  cfg.w_lr = 0.02;
  const Batch all = gather_batch(d, d.splits.train);
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(train_step(s, all, all, cfg).train_loss);
  for (int block = 1; block < 5; ++block) {
    const double prev = std::accumulate(losses.begin() + (block - 1) * 10, losses.begin() + block * 10, 0.0);
    const double cur = std::accumulate(losses.begin() + block * 10, losses.begin() + (block + 1) * 10, 0.0);
    EXPECT_LE(cur, prev) << "block " << block;
  }
}

TEST(TrainSupernet, ZeroEpochsIsIdentity) {
  const auto data = tiny_shapes();
  const auto s = init_supernet(tiny_space(), 3, 6);
  const auto r = train_supernet(s, data, quick_train(0));
  EXPECT_TRUE(same_state(s, r.state));
  EXPECT_TRUE(r.curve.empty());
}

TEST(TrainSupernet, CurveStampsAdvanceByLogInterval) {
  const auto data = tiny_shapes();
  auto cfg = quick_train(2);
  const auto r = train_supernet(init_supernet(tiny_space(), 3, 6), data, cfg);
  ASSERT_FALSE(r.curve.empty());
  for (std::size_t i = 0; i < r.curve.points.size(); ++i) {
    EXPECT_EQ(r.curve.points[i].step, static_cast<std::int64_t>((i + 1) * cfg.curve_log_every));
    EXPECT_GE(r.curve.points[i].val_accuracy, 0.0);
    EXPECT_LE(r.curve.points[i].val_accuracy, 1.0);
  }
  EXPECT_EQ(r.curve.to_csv().substr(0, 34), "step,train_acc,val_acc,train_loss\n");
}

TEST(TrainSupernet, LearnsToyShapes) {
  const auto data = tiny_shapes(3, 20);
  auto cfg = quick_train(30);
  cfg.curve_log_every = 1000;
  const auto r = train_supernet(init_supernet(tiny_space(), 3, 0), data, cfg);
  EXPECT_GT(evaluate(r.state, data, Split::val), 1.0 / 3 + 0.2);
}

TEST(TrainSupernet, ClassCountMismatch) {
  const auto data = tiny_shapes();
  const auto s = init_supernet(tiny_space(), 4, 0);
  EXPECT_THROW(train_supernet(s, data, quick_train(1)), IncompatibleError);
  EXPECT_THROW(evaluate(s, data, Split::val), IncompatibleError);
}

TEST(Evaluate, UntrainedIsNearChance) {
  double sum = 0;
  for (Seed seed = 0; seed < 10; ++seed) {
    const auto data = tiny_shapes(seed + 20);
    sum += evaluate(init_supernet(tiny_space(), 3, seed), data, Split::val);
  }
  EXPECT_NEAR(sum / 10, 1.0 / 3, 0.15);
}

TEST(Evaluate, BiasedHeadOnSingleClassSplit) {
  auto data = tiny_shapes();
  std::vector<int> ones;
  for (int i : data.splits.val) {
    if (data.labels[static_cast<std::size_t>(i)] == 1) ones.push_back(i);
  }
  data.splits.val = ones;
  auto s = init_supernet(tiny_space(), 3, 0);
  s.head_bias.value[1] = 1e6;
  EXPECT_DOUBLE_EQ(evaluate(s, data, Split::val), 1.0);
}

TEST(Discretize, PeakedSkip) {
  auto s = init_supernet(tiny_space(2), 3, 0);
  auto a = s.alpha_matrix();
  a(edge_index(0, 0), 1) = 5;  // op 1 is skip_connect
  a(edge_index(0, 1), 1) = 5;
  const auto g = discretize(s);
  ASSERT_EQ(g.nodes.size(), 2u);
  EXPECT_EQ(g.nodes[0][0], (GenotypeEdge{0, OpKind::skip_connect}));
  EXPECT_EQ(g.nodes[0][1], (GenotypeEdge{1, OpKind::skip_connect}));
}

TEST(Discretize, UniformAlphaPicksFirstNonZeroOp) {
  const auto s = init_supernet(tiny_space(4), 3, 0);
  const auto g = discretize(s);
  for (const auto& node : g.nodes) {
    EXPECT_EQ(node[0], (GenotypeEdge{0, OpKind::skip_connect}));
    EXPECT_EQ(node[1], (GenotypeEdge{1, OpKind::skip_connect}));
  }
  EXPECT_EQ(g.to_string().substr(0, 44), "node2=[(0, skip_connect), (1, skip_connect)]");
}

TEST(Discretize, ShiftInvariantAndWellFormed) {
  Rng rng = make_rng({99});
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = init_supernet(tiny_space(4), 3, 0);
    auto a = s.alpha_matrix();
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
    // Make zero the argmax on some edges.
    a(static_cast<Index>(trial) % a.rows(), 0) = 50;
    const auto g = discretize(s);
    auto shifted = s;
    shifted.alpha_matrix().array() += 3.5;
    const auto gs = discretize(shifted);
    for (std::size_t j = 0; j < g.nodes.size(); ++j) {
      EXPECT_EQ(g.nodes[j], gs.nodes[j]);
      std::set<int> preds;
      for (const auto& e : g.nodes[j]) {
        EXPECT_NE(e.op, OpKind::zero);
        EXPECT_GE(e.predecessor, 0);
        EXPECT_LT(e.predecessor, static_cast<int>(j) + 2);
        preds.insert(e.predecessor);
      }
      EXPECT_EQ(preds.size(), 2u);
    }
  }
}

TEST(Retrain, AllSkipGenotypeLearnsAndIsDeterministic) {
  const auto data = tiny_shapes(3, 20);
  const auto space = tiny_space();
  const auto g = discretize(init_supernet(space, 3, 0));
  auto cfg = quick_train(15);
  cfg.curve_log_every = 1000;
  const auto a = retrain_genotype(g, space, data, cfg);
  const auto b = retrain_genotype(g, space, data, cfg);
  EXPECT_EQ(a.test_accuracy, b.test_accuracy);
  EXPECT_TRUE(same_state(a.model.network, b.model.network));
  EXPECT_GT(a.test_accuracy, 1.0 / 3);
  // One-hot rows on the chosen edges, zero rows elsewhere.
  const RowMatrixXd& m = a.model.mixing;
  EXPECT_EQ(m.sum(), 2.0 * space.nodes_per_cell);
  for (Index r = 0; r < m.rows(); ++r) EXPECT_TRUE(m.row(r).sum() == 0.0 || m.row(r).maxCoeff() == 1.0);
}

TEST(BatchCursor, CoversPoolEachEpoch) {
  std::vector<int> pool(10);
  std::iota(pool.begin(), pool.end(), 100);
  BatchCursor cur(pool, 1, 2);
  EXPECT_EQ(cur.batches_per_epoch(4), 3u);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<int> seen;
    for (int b = 0; b < 3; ++b) {
      auto batch = cur.next(4);
      EXPECT_EQ(batch.size(), b == 2 ? 2u : 4u);
      seen.insert(batch.begin(), batch.end());
    }
    EXPECT_EQ(seen, std::multiset<int>(pool.begin(), pool.end()));
  }
}
