#include "otnas/zoo.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>
#include <zlib.h>

#include <chrono>
#include <cstring>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "otnas/binary_io.hpp"
#include "otnas/config_io.hpp"
#include "otnas/errors.hpp"

namespace otnas {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "SNET1";

std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

std::vector<NamedTensor> tensor_table(const SupernetState& s) {
  std::vector<NamedTensor> table{{"stem", &s.stem.value}, {"alpha", &s.alpha.value}};
  const auto& cfg = s.config;
  for (int cell = 0; cell < cfg.cells; ++cell) {
    for (Index e = 0; e < cfg.num_edges(); ++e) {
      for (Index o = 0; o < cfg.num_ops(); ++o) {
        const auto& p = s.edge_weight(cell, e, o);
        if (p.empty()) continue;
        table.push_back({"edge." + std::to_string(cell) + "." + std::to_string(e) + "." + std::to_string(o), &p.value});
      }
    }
  }
  table.push_back({"head.weight", &s.head_weight.value});
  table.push_back({"head.bias", &s.head_bias.value});
  return table;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    const T v = binary::get_le<T>(bytes_, pos_);
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CorruptionError("SNET1: unexpected end of data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

class LockFile {
 public:
  explicit LockFile(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw IoError("cannot lock " + path.string());
    }
  }
  ~LockFile() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  int fd_ = -1;
};

Json entry_to_json(const ZooEntry& e) {
  Json j;
  j["dataset_name"] = e.dataset_name;
  j["dataset_fingerprint"] = e.dataset_fingerprint;
  j["search_space_fingerprint"] = e.search_space_fingerprint;
  j["state_path"] = e.state_path;
  j["metadata"] = {{"epochs_trained", e.metadata.epochs_trained},
                   {"seed", e.metadata.seed},
                   {"created", e.metadata.created},
                   {"final_val_accuracy", e.metadata.final_val_accuracy}};
  return j;
}

ZooEntry entry_from_json(const Json& j) {
  try {
    ZooEntry e;
    e.dataset_name = j.at("dataset_name").get<std::string>();
    e.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    e.search_space_fingerprint = j.at("search_space_fingerprint").get<std::string>();
    e.state_path = j.at("state_path").get<std::string>();
    const Json& m = j.at("metadata");
    e.metadata.epochs_trained = m.at("epochs_trained").get<int>();
    e.metadata.seed = m.at("seed").get<Seed>();
    e.metadata.created = m.at("created").get<std::string>();
    e.metadata.final_val_accuracy = m.at("final_val_accuracy").get<double>();
    return e;
  } catch (const Json::exception& ex) {
    throw CorruptionError(std::string("zoo index entry: ") + ex.what());
  }
}

}  // namespace

std::string encode_state(const SupernetState& s) {
  Json meta;
  meta["config"] = to_json(s.config);
  meta["num_classes"] = s.num_classes;
  meta["step_count"] = s.step_count;
  meta["rng_seed"] = s.rng_seed;
  const std::string meta_text = meta.dump();

  const auto table = tensor_table(s);
  std::string out(kMagic);
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (const Index d : t->shape()) binary::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  }
  for (const auto& entry : table) {
    for (Index i = 0; i < entry.tensor->size(); ++i) binary::put_le<double>(out, (*entry.tensor)[i]);
  }
  binary::put_le<std::uint32_t>(out, crc32_of(out));
  return out;
}

SupernetState decode_state(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw CorruptionError("not an SNET1 state (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  const auto stored_crc = binary::get_le<std::uint32_t>(bytes, bytes.size() - 4);
  if (crc32_of(body) != stored_crc) throw CorruptionError("SNET1 checksum mismatch");

  Reader r(body);
  r.take(kMagic.size());
  const auto meta_len = r.get<std::uint32_t>();
  Json meta;
  SupernetState s;
  try {
    meta = Json::parse(r.take(meta_len));
    s = init_supernet(search_space_from_json(meta.at("config")), meta.at("num_classes").get<int>(), 0);
    s.step_count = meta.at("step_count").get<std::int64_t>();
    s.rng_seed = meta.at("rng_seed").get<Seed>();
  } catch (const Json::exception& e) {
    throw CorruptionError(std::string("SNET1 metadata: ") + e.what());
  }

  const auto table = tensor_table(s);
  const auto count = r.get<std::uint32_t>();
  if (count != table.size()) throw CorruptionError("SNET1 tensor count does not match the search space");
  for (const auto& [name, t] : table) {
    const auto name_len = r.get<std::uint32_t>();
    if (r.take(name_len) != name) throw CorruptionError("SNET1 tensor table: expected '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    if (rank != t->rank()) throw CorruptionError("SNET1 tensor '" + name + "' has the wrong rank");
    for (const Index d : t->shape()) {
      if (r.get<std::uint64_t>() != static_cast<std::uint64_t>(d)) {
        throw CorruptionError("SNET1 tensor '" + name + "' has the wrong shape");
      }
    }
  }
  for (const auto& entry : table) {
    auto* t = const_cast<Tensor*>(entry.tensor);
    for (Index i = 0; i < t->size(); ++i) (*t)[i] = r.get<double>();
  }
  if (r.remaining() != 0) throw CorruptionError("SNET1 has trailing bytes");
  for (const auto& entry : table) {
    if (!entry.tensor->array().allFinite()) throw CorruptionError("SNET1 tensor '" + entry.name + "' is not finite");
  }
  return s;
}

void save_state(const SupernetState& state, const fs::path& path) {
  binary::write_file_atomic(path.string(), encode_state(state));
}

SupernetState load_state(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("state file " + path.string() + " does not exist");
  return decode_state(binary::read_file(path.string()));
}

bool bitwise_equal(const SupernetState& a, const SupernetState& b) {
  if (search_space_fingerprint(a.config) != search_space_fingerprint(b.config)) return false;
  if (a.num_classes != b.num_classes || a.step_count != b.step_count || a.rng_seed != b.rng_seed) return false;
  const auto ta = tensor_table(a), tb = tensor_table(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const Tensor& x = *ta[i].tensor;
    const Tensor& y = *tb[i].tensor;
    if (!x.same_shape(y)) return false;
    if (x.size() > 0 && std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) {
      return false;
    }
  }
  return true;
}

std::string search_space_fingerprint(const SearchSpaceConfig& config) { return hex64(fnv1a(to_json(config).dump())); }

std::string dataset_fingerprint(const LabeledDataset& d) {
  Json j;
  j["name"] = d.name;
  j["num_classes"] = d.num_classes;
  j["shape"] = {d.size(), d.image_shape.channels, d.image_shape.height, d.image_shape.width};
  j["splits"] = {{"train", d.splits.train}, {"val", d.splits.val}, {"test", d.splits.test}};
  j["label_histogram"] = label_histogram(d);
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------

ZooIndex ZooIndex::open(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "states", ec);
  if (ec) throw IoError("cannot create zoo at " + root.string() + ": " + ec.message());
  ZooIndex zoo(root);
  zoo.reload();
  return zoo;
}

void ZooIndex::reload() {
  entries_.clear();
  const fs::path index = root_ / "index.json";
  if (!fs::exists(index)) return;
  Json j;
  try {
    j = Json::parse(binary::read_file(index.string()));
  } catch (const Json::exception& e) {
    throw CorruptionError("zoo index " + index.string() + ": " + e.what());
  }
  if (!j.contains("entries") || !j["entries"].is_array()) throw CorruptionError("zoo index has no entries array");
  for (const auto& e : j["entries"]) entries_.push_back(entry_from_json(e));
}

void ZooIndex::write_index() const {
  Json j;
  j["entries"] = Json::array();
  for (const auto& e : entries_) j["entries"].push_back(entry_to_json(e));
  binary::write_file_atomic((root_ / "index.json").string(), j.dump(2) + "\n");
}

const ZooEntry* ZooIndex::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.dataset_name == name) return &e;
  }
  return nullptr;
}

std::vector<ZooEntry> ZooIndex::list_excluding(std::string_view name) const {
  std::vector<ZooEntry> out;
  for (const auto& e : entries_) {
    if (e.dataset_name != name) out.push_back(e);
  }
  return out;
}

ZooEntry ZooIndex::save_entry(const LabeledDataset& dataset, const SupernetState& state, ZooEntryMetadata metadata) {
  for (const auto* p : state.weight_parameters()) {
    if (!p->value.array().allFinite()) throw NumericalError("refusing to store a non-finite supernet");
  }
  if (!state.alpha.value.array().allFinite()) throw NumericalError("refusing to store a non-finite supernet");

  LockFile lock(root_ / ".lock");
  reload();
  if (find(dataset.name) != nullptr) throw ConflictError("zoo already has an entry for '" + dataset.name + "'");

  ZooEntry entry;
  entry.dataset_name = dataset.name;
  entry.dataset_fingerprint = dataset_fingerprint(dataset);
  entry.search_space_fingerprint = search_space_fingerprint(state.config);
  entry.state_path = "states/" + dataset.name + ".snet";
  if (metadata.created.empty()) metadata.created = utc_timestamp();
  entry.metadata = std::move(metadata);

  save_state(state, root_ / entry.state_path);
  entries_.push_back(entry);
  write_index();
  return entry;
}

SupernetState ZooIndex::load_entry(std::string_view name) const {
  const ZooEntry* entry = find(name);
  if (entry == nullptr) throw NotFoundError("zoo has no entry named '" + std::string(name) + "'");
  SupernetState s = load_state(root_ / entry->state_path);
  if (search_space_fingerprint(s.config) != entry->search_space_fingerprint) {
    throw CorruptionError("zoo entry '" + entry->dataset_name + "': search-space fingerprint mismatch");
  }
  return s;
}

void ZooIndex::remove_entry(std::string_view name) {
  LockFile lock(root_ / ".lock");
  reload();
  const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const ZooEntry& e) { return e.dataset_name == name; });
  if (it == entries_.end()) throw NotFoundError("zoo has no entry named '" + std::string(name) + "'");
  std::error_code ec;
  fs::remove(root_ / it->state_path, ec);
  entries_.erase(it);
  write_index();
}

fs::path default_zoo_root(const fs::path& fallback) {
  if (const char* env = std::getenv("OTNAS_ZOO"); env != nullptr && *env != '\0') return env;
  return fallback;
}

SupernetState transfer_weights(const SupernetState& source, const SearchSpaceConfig& target_space,
                               int target_num_classes, Seed seed) {
  if (search_space_fingerprint(source.config) != search_space_fingerprint(target_space)) {
    throw IncompatibleError("transfer_weights: source and target search spaces differ");
  }
  SupernetState out = source;
  for (auto* p : out.weight_parameters()) {
    p->reset_optimizer();
    p->zero_grad();
  }
  out.alpha.reset_optimizer();
  out.alpha.zero_grad();
  out.step_count = 0;
  if (target_num_classes != source.num_classes) reinit_head(out, target_num_classes, seed);
  return out;
}

}  // namespace otnas
