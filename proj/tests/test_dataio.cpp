#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "otnas/binary_io.hpp"
#include "otnas/dataio.hpp"
#include "otnas/errors.hpp"
#include "otnas/ot.hpp"

namespace fs = std::filesystem;
using namespace otnas;

namespace {

SyntheticTaskSpec shapes_spec(Seed seed = 1) {
  SyntheticTaskSpec s;
  s.family = Family::shapes;
  s.seed = seed;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("otnas_dataio_" + name);
  fs::remove_all(p);
  return p;
}

bool same_dataset(const LabeledDataset& a, const LabeledDataset& b) {
  return a.name == b.name && a.image_shape == b.image_shape && a.num_classes == b.num_classes &&
         a.labels == b.labels && a.splits.train == b.splits.train && a.splits.val == b.splits.val &&
         a.splits.test == b.splits.test && a.samples.rows() == b.samples.rows() &&
         a.samples.cols() == b.samples.cols() &&
         std::equal(a.samples.data(), a.samples.data() + a.samples.size(), b.samples.data());
}

// 2 classes, 1x2x2 images, 8 samples; image i holds i*0.1 + {0, .01, .02, .03}.
LabeledDataset tiny_dataset() {
  LabeledDataset d;
  d.name = "tiny";
  d.image_shape = {1, 2, 2};
  d.num_classes = 2;
  d.samples.resize(8, 4);
  for (int i = 0; i < 8; ++i) {
    for (int k = 0; k < 4; ++k) d.samples(i, k) = static_cast<float>(0.1 * i + 0.01 * k);
    d.labels.push_back(i % 2);
  }
  d.splits.train = {0, 1, 2, 3, 4, 5};
  d.splits.val = {6};
  d.splits.test = {7};
  return d;
}

}  // namespace

TEST(Synthetic, IdenticalSpecsGiveBitwiseIdenticalDatasets) {
  for (const Family f : {Family::shapes, Family::stripes, Family::blobs}) {
    SyntheticTaskSpec s = shapes_spec(7);
    s.family = f;
    EXPECT_TRUE(same_dataset(generate_synthetic(s), generate_synthetic(s))) << to_string(f);
  }
}

TEST(Synthetic, DefaultNameAndSize) {
  const LabeledDataset d = generate_synthetic(shapes_spec(1));
  EXPECT_EQ(d.name, "shapes_s1");
  EXPECT_EQ(d.size(), 3 * 40);
  EXPECT_EQ(d.samples.cols(), 144);
  EXPECT_NO_THROW(validate(d));
  EXPECT_EQ(label_histogram(d), (std::vector<int>{40, 40, 40}));
}

TEST(Synthetic, SplitsAre70_15_15PerClassAndDisjoint) {
  const LabeledDataset d = generate_synthetic(shapes_spec(3));
  EXPECT_EQ(d.splits.train.size(), 3u * 28);
  EXPECT_EQ(d.splits.val.size(), 3u * 6);
  EXPECT_EQ(d.splits.test.size(), 3u * 6);
  std::set<int> seen;
  for (const auto* split : {&d.splits.train, &d.splits.val, &d.splits.test}) {
    EXPECT_TRUE(std::is_sorted(split->begin(), split->end()));
    std::map<int, int> per_class;
    for (const int i : *split) {
      EXPECT_TRUE(seen.insert(i).second) << "index " << i << " in two splits";
      ++per_class[d.labels[static_cast<std::size_t>(i)]];
    }
    for (const auto& [c, n] : per_class) EXPECT_EQ(n * 3, static_cast<int>(split->size())) << "class " << c;
  }
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(d.size()));
}

TEST(Synthetic, SamplesStayInUnitInterval) {
  for (const Family f : {Family::shapes, Family::stripes, Family::blobs}) {
    SyntheticTaskSpec s = shapes_spec(11);
    s.family = f;
    s.transform.intensity_shift = 0.3;
    s.transform.noise_sigma = 0.2;
    const LabeledDataset d = generate_synthetic(s);
    EXPECT_GE(d.samples.minCoeff(), 0.0f);
    EXPECT_LE(d.samples.maxCoeff(), 1.0f);
  }
}

TEST(Synthetic, LabelPermutationOnlyTouchesLabels) {
  SyntheticTaskSpec base = shapes_spec(5);
  SyntheticTaskSpec perm = base;
  perm.transform.label_permutation_seed = 99;
  const LabeledDataset a = generate_synthetic(base);
  const LabeledDataset b = generate_synthetic(perm);
  ASSERT_EQ(a.samples.rows(), b.samples.rows());
  EXPECT_TRUE(std::equal(a.samples.data(), a.samples.data() + a.samples.size(), b.samples.data()));
  EXPECT_EQ(a.splits.train, b.splits.train);
  // The relabelling is a bijection applied consistently to every sample.
  std::map<int, int> mapping;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const auto [it, inserted] = mapping.emplace(a.labels[i], b.labels[i]);
    EXPECT_EQ(it->second, b.labels[i]);
  }
  std::set<int> image;
  for (const auto& [from, to] : mapping) image.insert(to);
  EXPECT_EQ(image.size(), mapping.size());
}

TEST(Synthetic, RotationTwinIsCloserThanAnotherFamily) {
  SyntheticTaskSpec rot = shapes_spec(1);
  rot.transform.rotation_quarter_turns = 1;
  SyntheticTaskSpec other;
  other.family = Family::blobs;
  other.seed = 2;
  other.num_classes = 4;
  const EmbeddingConfig cfg{EmbeddingKind::random_projection, 16, 3};
  const auto e0 = embed(generate_synthetic(shapes_spec(1)), cfg, 1000, 0);
  const auto e1 = embed(generate_synthetic(rot), cfg, 1000, 0);
  const auto e2 = embed(generate_synthetic(other), cfg, 1000, 0);
  EXPECT_LT(otdd_distance(e0, e1), otdd_distance(e0, e2));
}

TEST(Synthetic, RejectsInvalidSpecs) {
  SyntheticTaskSpec s = shapes_spec();
  s.image_size = {1, 7, 7};
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = shapes_spec();
  s.samples_per_class = 3;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = shapes_spec();
  s.num_classes = 1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = shapes_spec();
  s.transform.rotation_quarter_turns = 4;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = shapes_spec();
  s.image_size = {1, 12, 10};
  s.transform.rotation_quarter_turns = 1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(Synthetic, QuarterTurnRotatesEveryImage) {
  SyntheticTaskSpec s = shapes_spec(4);
  s.transform.noise_sigma = 0;
  SyntheticTaskSpec r = s;
  r.transform.rotation_quarter_turns = 2;
  const LabeledDataset a = generate_synthetic(s);
  const LabeledDataset b = generate_synthetic(r);
  // Half a turn maps pixel (y, x) to (H-1-y, W-1-x), i.e. reverses the flat image.
  for (Index i = 0; i < a.size(); ++i) {
    const Eigen::RowVectorXf reversed = a.samples.row(i).reverse();
    EXPECT_EQ(reversed, Eigen::RowVectorXf(b.samples.row(i))) << "sample " << i;
  }
}

TEST(DatasetFiles, RoundTripIsIdentity) {
  const fs::path dir = scratch_dir("roundtrip");
  SyntheticTaskSpec s = shapes_spec(2);
  s.family = Family::stripes;
  const LabeledDataset d = generate_synthetic(s);
  save_dataset(d, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_EQ(fs::file_size(dir / "samples.bin"), static_cast<std::uintmax_t>(d.samples.size() * 4));
  EXPECT_EQ(fs::file_size(dir / "labels.bin"), static_cast<std::uintmax_t>(d.size() * 4));
  EXPECT_TRUE(same_dataset(d, load_dataset(dir)));
}

TEST(DatasetFiles, LittleEndianPayload) {
  const fs::path dir = scratch_dir("endian");
  const LabeledDataset d = tiny_dataset();
  save_dataset(d, dir);
  const std::string labels = binary::read_file((dir / "labels.bin").string());
  ASSERT_EQ(labels.size(), 32u);
  EXPECT_EQ(std::string(labels.substr(4, 4)), std::string("\x01\x00\x00\x00", 4));
  const std::string samples = binary::read_file((dir / "samples.bin").string());
  EXPECT_EQ(binary::get_le<float>(samples, 4 * 5), d.samples(1, 1));
}

TEST(DatasetFiles, LabelOutOfRangeIsFormatError) {
  const fs::path dir = scratch_dir("badlabel");
  save_dataset(generate_synthetic(shapes_spec(1)), dir);
  std::string labels = binary::read_file((dir / "labels.bin").string());
  labels[0] = 7;
  binary::write_file_atomic((dir / "labels.bin").string(), labels);
  EXPECT_THROW(load_dataset(dir), FormatError);
}

TEST(DatasetFiles, TruncatedTensorNamesByteCounts) {
  const fs::path dir = scratch_dir("truncated");
  const LabeledDataset d = generate_synthetic(shapes_spec(1));
  save_dataset(d, dir);
  const std::string samples = binary::read_file((dir / "samples.bin").string());
  binary::write_file_atomic((dir / "samples.bin").string(), std::string_view(samples).substr(0, 100));
  try {
    load_dataset(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(samples.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find("100"), std::string::npos) << msg;
  }
}

TEST(DatasetFiles, MissingSplitIsFormatError) {
  const fs::path dir = scratch_dir("nosplit");
  save_dataset(generate_synthetic(shapes_spec(1)), dir);
  std::string manifest = binary::read_file((dir / "manifest.json").string());
  const auto pos = manifest.find("\"val\"");
  ASSERT_NE(pos, std::string::npos);
  manifest.replace(pos, 5, "\"xyz\"");
  binary::write_file_atomic((dir / "manifest.json").string(), manifest);
  EXPECT_THROW(load_dataset(dir), FormatError);
  EXPECT_THROW(load_dataset(scratch_dir("does_not_exist")), FormatError);
}

TEST(Embedding, FlattenReturnsRawPixels) {
  const LabeledDataset d = tiny_dataset();
  const EmbeddedDataset e = embed(d, {EmbeddingKind::flatten, 2, 0}, 6, 0);
  ASSERT_EQ(e.points.rows(), 6);
  ASSERT_EQ(e.points.cols(), 4);
  // Every point is (a, b, c, d) of one train image, each image used once.
  std::set<int> used;
  for (Index r = 0; r < 6; ++r) {
    const int i = static_cast<int>(std::lround(e.points(r, 0) * 10));
    EXPECT_TRUE(used.insert(i).second);
    EXPECT_EQ(e.labels[static_cast<std::size_t>(r)], d.labels[static_cast<std::size_t>(i)]);
    for (int k = 0; k < 4; ++k) EXPECT_EQ(e.points(r, k), static_cast<double>(d.samples(i, k)));
  }
  EXPECT_EQ(used, (std::set<int>{0, 1, 2, 3, 4, 5}));
}

TEST(Embedding, DeterministicGivenConfigAndSeed) {
  const LabeledDataset d = generate_synthetic(shapes_spec(1));
  const EmbeddingConfig cfg{EmbeddingKind::random_projection, 16, 4};
  const EmbeddedDataset a = embed(d, cfg, 60, 9);
  const EmbeddedDataset b = embed(d, cfg, 60, 9);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.labels, b.labels);
  const EmbeddedDataset c = embed(d, {EmbeddingKind::random_projection, 16, 5}, 60, 9);
  EXPECT_NE(a.points, c.points);
}

TEST(Embedding, StratifiedSubsampleKeepsEveryClass) {
  const LabeledDataset d = generate_synthetic(shapes_spec(1));
  const EmbeddedDataset e = embed(d, {EmbeddingKind::random_projection, 16, 0}, 60, 0);
  EXPECT_EQ(e.points.rows(), 60);
  EXPECT_EQ(e.points.cols(), 16);
  EXPECT_FALSE(e.clamped);
  std::map<int, int> counts;
  for (const int y : e.labels) ++counts[y];
  ASSERT_EQ(counts.size(), 3u);
  for (const auto& [c, n] : counts) EXPECT_EQ(n, 20) << "class " << c;
  // tanh keeps every coordinate strictly inside (-1, 1).
  EXPECT_LT(e.points.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_TRUE(e.points.allFinite());
}

TEST(Embedding, ClampsToTrainSplit) {
  const LabeledDataset d = generate_synthetic(shapes_spec(1));
  const EmbeddedDataset e = embed(d, {}, 1000, 0);
  EXPECT_TRUE(e.clamped);
  EXPECT_EQ(e.requested_count, 1000);
  EXPECT_EQ(e.points.rows(), static_cast<Index>(d.splits.train.size()));
  EXPECT_THROW(embed(d, {}, 5, 0), PreconditionError);
}

TEST(Embedding, StandardizedColumnsHaveZeroMeanUnitVariance) {
  const LabeledDataset d = generate_synthetic(shapes_spec(2));
  const EmbeddedDataset e = embed(d, {EmbeddingKind::standardized_projection, 8, 1}, 60, 3);
  for (Index c = 0; c < e.points.cols(); ++c) {
    const double mean = e.points.col(c).mean();
    const double var = (e.points.col(c).array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
}

TEST(Embedding, ProjectionVarianceMatchesScaling) {
  // atanh(point) = x . r with r ~ N(0, I/D), so E[atanh(p)^2] = |x|^2 / D.
  const LabeledDataset d = generate_synthetic(shapes_spec(6));
  const EmbeddingConfig cfg{EmbeddingKind::random_projection, 64, 2};
  const EmbeddedDataset e = embed(d, cfg, 84, 0);
  const EmbeddedDataset raw = embed(d, {EmbeddingKind::flatten, 2, 0}, 84, 0);
  const double predicted = raw.points.rowwise().squaredNorm().mean() / double(raw.points.cols());
  const double observed = e.points.array().atanh().square().mean();
  EXPECT_NEAR(observed / predicted, 1.0, 0.3);
}
