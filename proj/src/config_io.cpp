#include "otnas/config_io.hpp"

#include <algorithm>
#include <cstring>

namespace otnas {

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return std::strcmp(k, item.key().c_str()) == 0; });
    if (!known) throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}


Json to_json(const ImageShape& s) { return Json::array({s.channels, s.height, s.width}); }

ImageShape image_shape_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("image shape must be [channels, height, width]");
  try {
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("image shape: ") + e.what());
  }
}

Json to_json(const SearchSpaceConfig& c) {
  Json ops = Json::array();
  for (const OpKind k : c.op_corpus) ops.push_back(std::string(to_string(k)));
  Json j;
  j["cells"] = c.cells;
  j["nodes_per_cell"] = c.nodes_per_cell;
  j["channels"] = c.channels;
  j["op_corpus"] = ops;
  j["image_shape"] = to_json(c.image_shape);
  return j;
}

SearchSpaceConfig search_space_from_json(const Json& j) {
  constexpr const char* where = "search_space";
  reject_unknown_keys(j, {"cells", "nodes_per_cell", "channels", "op_corpus", "image_shape"}, where);
  SearchSpaceConfig c;
  read_key(j, "cells", c.cells, where);
  read_key(j, "nodes_per_cell", c.nodes_per_cell, where);
  read_key(j, "channels", c.channels, where);
  if (j.contains("op_corpus")) {
    std::vector<std::string> names;
    read_key(j, "op_corpus", names, where);
    c.op_corpus.clear();
    for (const auto& n : names) c.op_corpus.push_back(op_from_string(n));
  }
  if (j.contains("image_shape")) c.image_shape = image_shape_from_json(j["image_shape"]);
  c.validate();
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["w_lr"] = c.w_lr;
  j["w_momentum"] = c.w_momentum;
  j["w_weight_decay"] = c.w_weight_decay;
  j["grad_clip"] = c.grad_clip;
  j["alpha_lr"] = c.alpha_lr;
  j["alpha_beta1"] = c.alpha_beta1;
  j["alpha_beta2"] = c.alpha_beta2;
  j["perturb_radius"] = c.perturb_radius;
  j["seed"] = c.seed;
  j["curve_log_every"] = c.curve_log_every;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  constexpr const char* where = "train";
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "w_lr", "w_momentum", "w_weight_decay", "grad_clip", "alpha_lr",
                       "alpha_beta1", "alpha_beta2", "perturb_radius", "seed", "curve_log_every"},
                      where);
  TrainConfig c;
  read_key(j, "epochs", c.epochs, where);
  read_key(j, "batch_size", c.batch_size, where);
  read_key(j, "w_lr", c.w_lr, where);
  read_key(j, "w_momentum", c.w_momentum, where);
  read_key(j, "w_weight_decay", c.w_weight_decay, where);
  read_key(j, "grad_clip", c.grad_clip, where);
  read_key(j, "alpha_lr", c.alpha_lr, where);
  read_key(j, "alpha_beta1", c.alpha_beta1, where);
  read_key(j, "alpha_beta2", c.alpha_beta2, where);
  read_key(j, "perturb_radius", c.perturb_radius, where);
  read_key(j, "seed", c.seed, where);
  read_key(j, "curve_log_every", c.curve_log_every, where);
  c.validate();
  return c;
}

Json to_json(const EmbeddingConfig& c) {
  Json j;
  j["kind"] = to_string(c.kind);
  j["output_dim"] = c.output_dim;
  j["seed"] = c.seed;
  return j;
}

EmbeddingConfig embedding_config_from_json(const Json& j) {
  constexpr const char* where = "embedding";
  reject_unknown_keys(j, {"kind", "output_dim", "seed"}, where);
  EmbeddingConfig c;
  std::string kind = to_string(c.kind);
  read_key(j, "kind", kind, where);
  c.kind = embedding_kind_from_string(kind);
  read_key(j, "output_dim", c.output_dim, where);
  read_key(j, "seed", c.seed, where);
  if (c.output_dim < 2) throw ConfigError("embedding.output_dim must be >= 2");
  return c;
}

Json to_json(const SyntheticTaskSpec& s) {
  Json t;
  t["rotation_quarter_turns"] = s.transform.rotation_quarter_turns;
  t["intensity_shift"] = s.transform.intensity_shift;
  if (s.transform.label_permutation_seed) t["label_permutation_seed"] = *s.transform.label_permutation_seed;
  t["noise_sigma"] = s.transform.noise_sigma;
  Json j;
  j["name"] = s.name;
  j["family"] = to_string(s.family);
  j["seed"] = s.seed;
  j["num_classes"] = s.num_classes;
  j["samples_per_class"] = s.samples_per_class;
  j["image_size"] = to_json(s.image_size);
  j["transform"] = t;
  return j;
}

SyntheticTaskSpec synthetic_spec_from_json(const Json& j) {
  constexpr const char* where = "synthetic";
  reject_unknown_keys(j, {"name", "family", "seed", "num_classes", "samples_per_class", "image_size", "transform"},
                      where);
  SyntheticTaskSpec s;
  read_key(j, "name", s.name, where);
  std::string family = to_string(s.family);
  read_key(j, "family", family, where);
  s.family = family_from_string(family);
  read_key(j, "seed", s.seed, where);
  read_key(j, "num_classes", s.num_classes, where);
  read_key(j, "samples_per_class", s.samples_per_class, where);
  if (j.contains("image_size")) s.image_size = image_shape_from_json(j["image_size"]);
  if (j.contains("transform")) {
    const Json& t = j["transform"];
    constexpr const char* twhere = "synthetic.transform";
    reject_unknown_keys(t, {"rotation_quarter_turns", "intensity_shift", "label_permutation_seed", "noise_sigma"},
                        twhere);
    read_key(t, "rotation_quarter_turns", s.transform.rotation_quarter_turns, twhere);
    read_key(t, "intensity_shift", s.transform.intensity_shift, twhere);
    read_key(t, "noise_sigma", s.transform.noise_sigma, twhere);
    if (t.contains("label_permutation_seed")) {
      Seed perm = 0;
      read_key(t, "label_permutation_seed", perm, twhere);
      s.transform.label_permutation_seed = perm;
    }
  }
  return s;
}

}  // namespace otnas
