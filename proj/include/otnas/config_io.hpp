#pragma once

#include <json.hpp>

#include "otnas/dataio.hpp"
#include "otnas/errors.hpp"
#include "otnas/supernet.hpp"

namespace otnas {

// JSON (de)serialization of configuration records. Readers are strict:
// unknown keys and ill-typed values raise ConfigError; missing keys keep
// their defaults.
using Json = nlohmann::ordered_json;

Json to_json(const ImageShape& shape);
Json to_json(const SearchSpaceConfig& config);
Json to_json(const TrainConfig& config);
Json to_json(const EmbeddingConfig& config);
Json to_json(const SyntheticTaskSpec& spec);

ImageShape image_shape_from_json(const Json& j);
SearchSpaceConfig search_space_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
EmbeddingConfig embedding_config_from_json(const Json& j);
SyntheticTaskSpec synthetic_spec_from_json(const Json& j);

// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const char* where);

// Assigns j[key] to `out` when present; a type mismatch is a ConfigError.
template <typename T>
void read_key(const Json& j, const char* key, T& out, const char* where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).template get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace otnas
