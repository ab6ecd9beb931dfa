#include "otnas/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "otnas/binary_io.hpp"
#include "otnas/errors.hpp"
#include "otnas/rng.hpp"

namespace otnas {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace binary {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " -> " + path + ": " + ec.message());
}

}  // namespace binary

const std::vector<int>& LabeledDataset::split(Split which) const {
  switch (which) {
    case Split::train:
      return splits.train;
    case Split::val:
      return splits.val;
    case Split::test:
      return splits.test;
  }
  return splits.test;
}

void validate(const LabeledDataset& d) {
  if (d.num_classes <= 0) throw FormatError(d.name + ": num_classes must be positive");
  if (d.samples.cols() != d.image_shape.volume()) throw FormatError(d.name + ": sample width does not match C*H*W");
  if (static_cast<Index>(d.labels.size()) != d.size()) throw FormatError(d.name + ": label count != sample count");
  for (const int y : d.labels) {
    if (y < 0 || y >= d.num_classes) {
      throw FormatError(d.name + ": label " + std::to_string(y) + " outside [0, " + std::to_string(d.num_classes) +
                        ")");
    }
  }
  std::vector<char> seen(static_cast<std::size_t>(d.size()), 0);
  for (const auto* split : {&d.splits.train, &d.splits.val, &d.splits.test}) {
    for (const int i : *split) {
      if (i < 0 || i >= d.size()) throw FormatError(d.name + ": split index " + std::to_string(i) + " out of range");
      if (seen[static_cast<std::size_t>(i)]++) {
        throw FormatError(d.name + ": index " + std::to_string(i) + " appears in more than one split");
      }
    }
  }
  std::vector<int> train_counts(static_cast<std::size_t>(d.num_classes), 0);
  for (const int i : d.splits.train) ++train_counts[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])];
  for (int k = 0; k < d.num_classes; ++k) {
    if (train_counts[static_cast<std::size_t>(k)] < 2) {
      throw FormatError(d.name + ": class " + std::to_string(k) + " has fewer than 2 train samples");
    }
  }
  if (!d.samples.allFinite()) throw FormatError(d.name + ": samples contain NaN/Inf");
}

std::vector<int> label_histogram(const LabeledDataset& d) {
  std::vector<int> hist(static_cast<std::size_t>(std::max(d.num_classes, 0)), 0);
  for (const int y : d.labels) {
    if (y >= 0 && y < d.num_classes) ++hist[static_cast<std::size_t>(y)];
  }
  return hist;
}

std::string to_string(Family family) {
  switch (family) {
    case Family::shapes:
      return "shapes";
    case Family::stripes:
      return "stripes";
    case Family::blobs:
      return "blobs";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  if (name == "shapes") return Family::shapes;
  if (name == "stripes") return Family::stripes;
  if (name == "blobs") return Family::blobs;
  throw ConfigError("unknown synthetic family '" + name + "'");
}

std::string to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::flatten:
      return "flatten";
    case EmbeddingKind::random_projection:
      return "random_projection";
    case EmbeddingKind::standardized_projection:
      return "standardized_projection";
  }
  return "unknown";
}

EmbeddingKind embedding_kind_from_string(const std::string& name) {
  if (name == "flatten") return EmbeddingKind::flatten;
  if (name == "random_projection") return EmbeddingKind::random_projection;
  if (name == "standardized_projection") return EmbeddingKind::standardized_projection;
  throw ConfigError("unknown embedding kind '" + name + "'");
}

namespace {

// ---------------------------------------------------------------------------
// Synthetic families. Each class owns a prototype drawn from the spec seed;
// samples add jitter, amplitude variation and pixel noise.

enum class Glyph { square, circle, cross, diamond, ring, x_mark, frame, dot };
constexpr int kGlyphCount = 8;

bool glyph_covers(Glyph g, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  const double cheb = std::max(ax, ay);
  const double rad = std::sqrt(dx * dx + dy * dy);
  switch (g) {
    case Glyph::square:
      return cheb <= r;
    case Glyph::circle:
      return rad <= r;
    case Glyph::cross:
      return (ax <= 0.35 * r && ay <= r) || (ay <= 0.35 * r && ax <= r);
    case Glyph::diamond:
      return ax + ay <= r;
    case Glyph::ring:
      return rad <= r && rad >= 0.55 * r;
    case Glyph::x_mark:
      return std::abs(ax - ay) <= 0.4 * r && cheb <= r;
    case Glyph::frame:
      return cheb <= r && cheb >= 0.6 * r;
    case Glyph::dot:
      return rad <= 0.5 * r;
  }
  return false;
}

struct ClassPrototype {
  Glyph glyph = Glyph::square;
  double size = 0;          // glyph radius or blob width, pixels
  double angle = 0;         // stripe orientation
  double frequency = 0;     // stripe cycles per pixel
  std::vector<std::pair<double, double>> centers;  // blob centres (y, x)
  std::vector<double> channel_gain;
};

std::vector<ClassPrototype> draw_prototypes(const SyntheticTaskSpec& spec, Rng& rng) {
  const int k_count = spec.num_classes;
  const double h = spec.image_size.height, w = spec.image_size.width;
  const double extent = std::min(h, w);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ClassPrototype> protos(static_cast<std::size_t>(k_count));

  std::vector<int> glyph_order(kGlyphCount);
  std::iota(glyph_order.begin(), glyph_order.end(), 0);
  std::shuffle(glyph_order.begin(), glyph_order.end(), rng);
  const double angle_offset = unit(rng) * std::numbers::pi / k_count;

  for (int k = 0; k < k_count; ++k) {
    auto& p = protos[static_cast<std::size_t>(k)];
    const int tier = k / kGlyphCount;
    switch (spec.family) {
      case Family::shapes:
        p.glyph = static_cast<Glyph>(glyph_order[static_cast<std::size_t>(k % kGlyphCount)]);
        p.size = extent * (0.28 + 0.08 * unit(rng)) * (1.0 - 0.25 * std::min(tier, 2));
        break;
      case Family::stripes:
        p.angle = angle_offset + std::numbers::pi * k / k_count;
        p.frequency = 0.12 + 0.2 * unit(rng);
        break;
      case Family::blobs: {
        p.size = extent * (0.1 + 0.08 * unit(rng));
        for (int c = 0; c < 2; ++c) {
          p.centers.emplace_back(h * (0.2 + 0.6 * unit(rng)), w * (0.2 + 0.6 * unit(rng)));
        }
        break;
      }
    }
    for (int c = 0; c < spec.image_size.channels; ++c) p.channel_gain.push_back(c == 0 ? 1.0 : 0.6 + 0.4 * unit(rng));
  }
  return protos;
}

void render_sample(const SyntheticTaskSpec& spec, const ClassPrototype& p, Rng& rng, std::vector<double>& plane) {
  const int h = spec.image_size.height, w = spec.image_size.width;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> jitter(-1, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  plane.assign(static_cast<std::size_t>(h * w), 0.0);
  const double amplitude = 0.7 + 0.3 * unit(rng);
  switch (spec.family) {
    case Family::shapes: {
      const double cy = (h - 1) / 2.0 + jitter(rng);
      const double cx = (w - 1) / 2.0 + jitter(rng);
      const double r = p.size * (0.85 + 0.3 * unit(rng));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (glyph_covers(p.glyph, x - cx, y - cy, r)) plane[static_cast<std::size_t>(y * w + x)] = amplitude;
        }
      }
      break;
    }
    case Family::stripes: {
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const double c = std::cos(p.angle), s = std::sin(p.angle);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double t = 2.0 * std::numbers::pi * p.frequency * (x * c + y * s) + phase;
          plane[static_cast<std::size_t>(y * w + x)] = amplitude * (0.5 + 0.5 * std::sin(t));
        }
      }
      break;
    }
    case Family::blobs: {
      for (const auto& [by, bx] : p.centers) {
        const double cy = by + 0.7 * gauss(rng);
        const double cx = bx + 0.7 * gauss(rng);
        const double inv = 1.0 / (2.0 * p.size * p.size);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            plane[static_cast<std::size_t>(y * w + x)] += amplitude * std::exp(-d2 * inv);
          }
        }
      }
      break;
    }
  }
}

// Rotates a square H x W plane by quarter turns (counter-clockwise).
std::vector<double> rotate_plane(const std::vector<double>& plane, int h, int w, int turns) {
  std::vector<double> out = plane;
  for (int t = 0; t < turns; ++t) {
    std::vector<double> next(out.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        next[static_cast<std::size_t>((w - 1 - x) * h + y)] = out[static_cast<std::size_t>(y * w + x)];
      }
    }
    out.swap(next);
    std::swap(h, w);
  }
  return out;
}

void check_spec(const SyntheticTaskSpec& spec) {
  const auto& s = spec.image_size;
  if (s.channels < 1) throw ConfigError("image_size: channels must be >= 1");
  if (s.height < 8 || s.width < 8) {
    throw ConfigError("image_size " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                      " is too small for the synthetic primitives (need >= 8x8)");
  }
  if (spec.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (spec.samples_per_class < 4) throw ConfigError("samples_per_class must be >= 4");
  const int turns = spec.transform.rotation_quarter_turns;
  if (turns < 0 || turns > 3) throw ConfigError("rotation_quarter_turns must be in 0..3");
  if (turns % 2 == 1 && s.height != s.width) throw ConfigError("odd quarter-turn rotation needs square images");
  if (spec.transform.noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
}

}  // namespace

LabeledDataset generate_synthetic(const SyntheticTaskSpec& spec) {
  check_spec(spec);
  const int k_count = spec.num_classes;
  const int per_class = spec.samples_per_class;
  const int h = spec.image_size.height, w = spec.image_size.width, channels = spec.image_size.channels;
  const Index n = Index{k_count} * per_class;

  LabeledDataset d;
  d.name = spec.name.empty() ? to_string(spec.family) + "_s" + std::to_string(spec.seed) : spec.name;
  d.image_shape = spec.image_size;
  d.num_classes = k_count;
  d.samples.resize(n, spec.image_size.volume());
  d.labels.resize(static_cast<std::size_t>(n));

  Rng proto_rng = make_rng({spec.seed, 0});
  Rng sample_rng = make_rng({spec.seed, 1});
  Rng split_rng = make_rng({spec.seed, 2});
  const auto protos = draw_prototypes(spec, proto_rng);

  std::vector<int> label_of(static_cast<std::size_t>(k_count));
  std::iota(label_of.begin(), label_of.end(), 0);
  if (spec.transform.label_permutation_seed) {
    Rng perm_rng = make_rng({*spec.transform.label_permutation_seed, 3});
    std::shuffle(label_of.begin(), label_of.end(), perm_rng);
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> plane;
  const Index hw = Index{h} * w;
  for (int k = 0; k < k_count; ++k) {
    const auto& proto = protos[static_cast<std::size_t>(k)];
    for (int s = 0; s < per_class; ++s) {
      const Index i = Index{k} * per_class + s;
      d.labels[static_cast<std::size_t>(i)] = label_of[static_cast<std::size_t>(k)];
      render_sample(spec, proto, sample_rng, plane);
      for (int c = 0; c < channels; ++c) {
        std::vector<double> channel(plane.size());
        for (std::size_t p = 0; p < plane.size(); ++p) {
          const double noisy = plane[p] * proto.channel_gain[static_cast<std::size_t>(c)] +
                               spec.transform.noise_sigma * gauss(sample_rng);
          channel[p] = std::clamp(noisy, 0.0, 1.0);
        }
        if (spec.transform.rotation_quarter_turns != 0) {
          channel = rotate_plane(channel, h, w, spec.transform.rotation_quarter_turns);
        }
        for (Index p = 0; p < hw; ++p) {
          const double v = std::clamp(channel[static_cast<std::size_t>(p)] + spec.transform.intensity_shift, 0.0, 1.0);
          d.samples(i, c * hw + p) = static_cast<float>(v);
        }
      }
    }
  }

  const int n_val = std::max(1, static_cast<int>(std::lround(0.15 * per_class)));
  const int n_test = n_val;
  const int n_train = per_class - n_val - n_test;
  for (int k = 0; k < k_count; ++k) {
    std::vector<int> idx(static_cast<std::size_t>(per_class));
    std::iota(idx.begin(), idx.end(), k * per_class);
    std::shuffle(idx.begin(), idx.end(), split_rng);
    d.splits.train.insert(d.splits.train.end(), idx.begin(), idx.begin() + n_train);
    d.splits.val.insert(d.splits.val.end(), idx.begin() + n_train, idx.begin() + n_train + n_val);
    d.splits.test.insert(d.splits.test.end(), idx.begin() + n_train + n_val, idx.end());
  }
  for (auto* split : {&d.splits.train, &d.splits.val, &d.splits.test}) std::sort(split->begin(), split->end());
  validate(d);
  return d;
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.json + samples.bin (f32 LE) + labels.bin (u32 LE).

void save_dataset(const LabeledDataset& d, const fs::path& dir) {
  validate(d);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["name"] = d.name;
  manifest["num_classes"] = d.num_classes;
  manifest["shape"] = {d.size(), d.image_shape.channels, d.image_shape.height, d.image_shape.width};
  manifest["dtype"] = "f32le";
  manifest["splits"] = {{"train", d.splits.train}, {"val", d.splits.val}, {"test", d.splits.test}};

  std::string samples;
  samples.reserve(static_cast<std::size_t>(d.samples.size()) * 4);
  for (Index i = 0; i < d.samples.rows(); ++i) {
    for (Index j = 0; j < d.samples.cols(); ++j) binary::put_le<float>(samples, d.samples(i, j));
  }
  std::string labels;
  for (const int y : d.labels) binary::put_le<std::uint32_t>(labels, static_cast<std::uint32_t>(y));

  binary::write_file_atomic((dir / "samples.bin").string(), samples);
  binary::write_file_atomic((dir / "labels.bin").string(), labels);
  binary::write_file_atomic((dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

namespace {

std::vector<int> read_split(const json& manifest, const char* key) {
  if (!manifest.contains("splits") || !manifest["splits"].contains(key) || !manifest["splits"][key].is_array()) {
    throw FormatError(std::string("manifest is missing the '") + key + "' split");
  }
  return manifest["splits"][key].get<std::vector<int>>();
}

}  // namespace

LabeledDataset load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError("missing " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(binary::read_file(manifest_path.string()));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }

  LabeledDataset d;
  try {
    d.name = manifest.at("name").get<std::string>();
    d.num_classes = manifest.at("num_classes").get<int>();
    const auto shape = manifest.at("shape").get<std::vector<Index>>();
    if (shape.size() != 4) throw FormatError("manifest shape must be [N, C, H, W]");
    if (manifest.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported dtype (need f32le)");
    d.image_shape = {static_cast<int>(shape[1]), static_cast<int>(shape[2]), static_cast<int>(shape[3])};
    d.samples.resize(shape[0], d.image_shape.volume());
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  d.splits.train = read_split(manifest, "train");
  d.splits.val = read_split(manifest, "val");
  d.splits.test = read_split(manifest, "test");

  const auto n = static_cast<std::size_t>(d.samples.rows());
  const std::string samples = binary::read_file((dir / "samples.bin").string());
  const std::size_t expected_samples = static_cast<std::size_t>(d.samples.size()) * 4;
  if (samples.size() != expected_samples) {
    throw FormatError("samples.bin: expected " + std::to_string(expected_samples) + " bytes, found " +
                      std::to_string(samples.size()));
  }
  const std::string labels = binary::read_file((dir / "labels.bin").string());
  if (labels.size() != n * 4) {
    throw FormatError("labels.bin: expected " + std::to_string(n * 4) + " bytes, found " + std::to_string(labels.size()));
  }
  std::size_t offset = 0;
  for (Index i = 0; i < d.samples.rows(); ++i) {
    for (Index j = 0; j < d.samples.cols(); ++j, offset += 4) d.samples(i, j) = binary::get_le<float>(samples, offset);
  }
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(binary::get_le<std::uint32_t>(labels, 4 * i));
  validate(d);
  return d;
}

// ---------------------------------------------------------------------------

EmbeddedDataset embed(const LabeledDataset& d, const EmbeddingConfig& config, Index sample_count, Seed seed) {
  if (sample_count < 2 * Index{d.num_classes}) {
    throw PreconditionError("embed: sample_count " + std::to_string(sample_count) + " < 2K = " +
                            std::to_string(2 * d.num_classes));
  }
  if (config.kind != EmbeddingKind::flatten && config.output_dim < 2) {
    throw ConfigError("embedding output_dim must be >= 2");
  }

  EmbeddedDataset out;
  out.source_name = d.name;
  out.requested_count = sample_count;
  const auto& train = d.splits.train;
  if (sample_count > static_cast<Index>(train.size())) {
    sample_count = static_cast<Index>(train.size());
    out.clamped = true;
  }

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(d.num_classes));
  for (const int i : train) by_class[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])].push_back(i);
  Rng rng = make_rng({seed, 0x656d62});
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(sample_count));
  for (std::size_t round = 0; static_cast<Index>(chosen.size()) < sample_count; ++round) {
    for (const auto& members : by_class) {
      if (round < members.size() && static_cast<Index>(chosen.size()) < sample_count) chosen.push_back(members[round]);
    }
  }

  const Index input_dim = d.samples.cols();
  MatrixXd raw(static_cast<Index>(chosen.size()), input_dim);
  for (Index r = 0; r < raw.rows(); ++r) {
    const int i = chosen[static_cast<std::size_t>(r)];
    raw.row(r) = d.samples.row(i).cast<double>();
    out.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
  }

  if (config.kind == EmbeddingKind::flatten) {
    out.points = std::move(raw);
    return out;
  }

  Rng proj_rng = make_rng({config.seed, 0x70726f6a});
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd projection(input_dim, config.output_dim);
  for (Index c = 0; c < projection.cols(); ++c) {
    for (Index r = 0; r < projection.rows(); ++r) projection(r, c) = gauss(proj_rng);
  }
  projection /= std::sqrt(static_cast<double>(input_dim));
  out.points = (raw * projection).array().tanh().matrix();

  if (config.kind == EmbeddingKind::standardized_projection) {
    const Eigen::RowVectorXd mean = out.points.colwise().mean();
    out.points.rowwise() -= mean;
    const Eigen::RowVectorXd sd = (out.points.array().square().colwise().sum() / double(out.points.rows())).sqrt();
    for (Index c = 0; c < out.points.cols(); ++c) {
      if (sd(c) > 0) out.points.col(c) /= sd(c);
    }
  }
  return out;
}

}  // namespace otnas
