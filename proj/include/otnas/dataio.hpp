#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otnas/types.hpp"

namespace otnas {

struct ImageShape {
  int channels = 1;
  int height = 12;
  int width = 12;

  Index volume() const { return Index{channels} * height * width; }
  bool operator==(const ImageShape&) const = default;
};

enum class Split { train, val, test };

struct Splits {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

// Images are stored N x (C*H*W), row-major, i.e. C-order N x C x H x W.
struct LabeledDataset {
  std::string name;
  ImageShape image_shape;
  RowMatrixX<float> samples;
  std::vector<int> labels;
  int num_classes = 0;
  Splits splits;

  Index size() const { return samples.rows(); }
  const std::vector<int>& split(Split which) const;
};

/// Throws FormatError if any container invariant is violated.
void validate(const LabeledDataset& dataset);

std::vector<int> label_histogram(const LabeledDataset& dataset);

enum class Family { shapes, stripes, blobs };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

struct TaskTransform {
  int rotation_quarter_turns = 0;
  double intensity_shift = 0.0;
  std::optional<Seed> label_permutation_seed;
  double noise_sigma = 0.05;
};

struct SyntheticTaskSpec {
  std::string name;  // defaults to "<family>_s<seed>" when empty
  Family family = Family::shapes;
  Seed seed = 0;
  int num_classes = 3;
  int samples_per_class = 40;
  ImageShape image_size;
  TaskTransform transform;
};

/// Pure function of the spec: identical specs give bitwise-identical datasets.
LabeledDataset generate_synthetic(const SyntheticTaskSpec& spec);

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& dir);

enum class EmbeddingKind { flatten, random_projection, standardized_projection };

std::string to_string(EmbeddingKind kind);
EmbeddingKind embedding_kind_from_string(const std::string& name);

struct EmbeddingConfig {
  EmbeddingKind kind = EmbeddingKind::random_projection;
  int output_dim = 16;
  Seed seed = 0;
};

struct EmbeddedDataset {
  MatrixXd points;  // n x d
  std::vector<int> labels;
  std::string source_name;
  Index requested_count = 0;
  bool clamped = false;  // requested_count exceeded the train split
};

/// Embeds a class-stratified, seeded subsample of the train split.
EmbeddedDataset embed(const LabeledDataset& dataset, const EmbeddingConfig& config, Index sample_count, Seed seed);

}  // namespace otnas
