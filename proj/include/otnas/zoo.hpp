#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "otnas/dataio.hpp"
#include "otnas/supernet.hpp"

namespace otnas {

// SNET1 state file:
//   "SNET1" | u32 meta_len | meta JSON | u32 tensor_count
//   | per tensor: u32 name_len, name, u32 rank, u64 dims[rank]
//   | f64 payload of all tensors in table order | u32 CRC32 of all preceding bytes
// Integers and floats are little-endian. Optimizer slots are not stored.
std::string encode_state(const SupernetState& state);
SupernetState decode_state(std::string_view bytes);

void save_state(const SupernetState& state, const std::filesystem::path& path);
SupernetState load_state(const std::filesystem::path& path);

bool bitwise_equal(const SupernetState& a, const SupernetState& b);

std::string search_space_fingerprint(const SearchSpaceConfig& config);
std::string dataset_fingerprint(const LabeledDataset& dataset);

struct ZooEntryMetadata {
  int epochs_trained = 0;
  Seed seed = 0;
  std::string created;  // ISO-8601 UTC
  double final_val_accuracy = 0;
};

struct ZooEntry {
  std::string dataset_name;
  std::string dataset_fingerprint;
  std::string search_space_fingerprint;
  std::string state_path;  // relative to the zoo root
  ZooEntryMetadata metadata;
};

/// Directory-backed collection of pretrained supernets:
///   <root>/index.json, <root>/states/<name>.snet
/// Index rewrites happen under an advisory lock on <root>/.lock and go
/// through write-temp-then-rename.
class ZooIndex {
 public:
  static ZooIndex open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<ZooEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  const ZooEntry* find(std::string_view name) const;
  std::vector<ZooEntry> list_excluding(std::string_view name) const;

  ZooEntry save_entry(const LabeledDataset& dataset, const SupernetState& state, ZooEntryMetadata metadata);
  SupernetState load_entry(std::string_view name) const;
  void remove_entry(std::string_view name);

  void reload();

 private:
  explicit ZooIndex(std::filesystem::path root) : root_(std::move(root)) {}
  void write_index() const;

  std::filesystem::path root_;
  std::vector<ZooEntry> entries_;
};

/// OTNAS_ZOO if set, otherwise `fallback`.
std::filesystem::path default_zoo_root(const std::filesystem::path& fallback = "zoo");

/// Warm start: copies trunk weights and alpha from `source`. The head is
/// copied when the class counts match and re-drawn from `seed` otherwise.
/// step_count and optimizer slots are reset. Throws IncompatibleError when
/// the search spaces differ.
SupernetState transfer_weights(const SupernetState& source, const SearchSpaceConfig& target_space,
                               int target_num_classes, Seed seed);

}  // namespace otnas
