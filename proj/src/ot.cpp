#include "otnas/ot.hpp"

#include <map>

namespace otnas {

std::vector<ClassGaussian> class_stats(const EmbeddedDataset& e, double ridge) {
  std::map<int, std::vector<Index>> members;
  for (std::size_t i = 0; i < e.labels.size(); ++i) members[e.labels[i]].push_back(static_cast<Index>(i));
  const Index d = e.points.cols();
  std::vector<ClassGaussian> stats;
  stats.reserve(members.size());
  for (const auto& [label, rows] : members) {
    const auto count = static_cast<Index>(rows.size());
    if (count < 2) {
      throw PreconditionError("class_stats: class " + std::to_string(label) + " of " + e.source_name + " has " +
                              std::to_string(count) + " point(s); need >= 2");
    }
    MatrixXd block(count, d);
    for (Index r = 0; r < count; ++r) block.row(r) = e.points.row(rows[static_cast<std::size_t>(r)]);
    ClassGaussian g;
    g.class_id = label;
    g.mean = block.colwise().mean().transpose();
    block.rowwise() -= g.mean.transpose();
    g.covariance = (block.transpose() * block) / double(count - 1);
    g.covariance = (g.covariance + g.covariance.transpose()) / 2.0;
    g.covariance.diagonal().array() += ridge;
    stats.push_back(std::move(g));
  }
  return stats;
}

MatrixXd label_cost_matrix(const std::vector<ClassGaussian>& s1, const std::vector<ClassGaussian>& s2) {
  MatrixXd w(static_cast<Index>(s1.size()), static_cast<Index>(s2.size()));
  for (std::size_t i = 0; i < s1.size(); ++i) {
    for (std::size_t j = 0; j < s2.size(); ++j) {
      w(static_cast<Index>(i), static_cast<Index>(j)) = gaussian_w2_squared(s1[i], s2[j]);
    }
  }
  return w;
}

namespace {

std::vector<Index> class_slots(const EmbeddedDataset& e, const std::vector<ClassGaussian>& stats) {
  std::map<int, Index> slot;
  for (std::size_t k = 0; k < stats.size(); ++k) slot[stats[k].class_id] = static_cast<Index>(k);
  std::vector<Index> out;
  out.reserve(e.labels.size());
  for (const int y : e.labels) out.push_back(slot.at(y));
  return out;
}

}  // namespace

OtddResult otdd(const EmbeddedDataset& e1, const EmbeddedDataset& e2, const OtddOptions& options) {
  if (e1.points.cols() != e2.points.cols()) {
    throw ShapeError("otdd: embedding dimension mismatch (" + std::to_string(e1.points.cols()) + " vs " +
                     std::to_string(e2.points.cols()) + ")");
  }
  const auto stats1 = class_stats(e1, options.ridge);
  const auto stats2 = class_stats(e2, options.ridge);
  OtddResult out;
  out.label_cost = label_cost_matrix(stats1, stats2);

  MatrixXd ground = cost_matrix(e1.points, e2.points);
  if (options.label_weight != 0.0) {
    const auto slot1 = class_slots(e1, stats1);
    const auto slot2 = class_slots(e2, stats2);
    for (Index j = 0; j < ground.cols(); ++j) {
      for (Index i = 0; i < ground.rows(); ++i) {
        ground(i, j) += options.label_weight *
                        out.label_cost(slot1[static_cast<std::size_t>(i)], slot2[static_cast<std::size_t>(j)]);
      }
    }
  }
  const auto a = DiscreteDistribution::uniform(e1.points).weights;
  const auto b = DiscreteDistribution::uniform(e2.points).weights;
  out.transport = sinkhorn(ground, a, b, options.epsilon, options.max_iter, options.tol);
  return out;
}

double otdd_distance(const EmbeddedDataset& e1, const EmbeddedDataset& e2, double epsilon, double label_weight) {
  OtddOptions options;
  options.epsilon = epsilon;
  options.label_weight = label_weight;
  return otdd(e1, e2, options).transport.transport_cost;
}

}  // namespace otnas
