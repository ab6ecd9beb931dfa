#include "otnas/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "otnas/binary_io.hpp"
#include "otnas/config_io.hpp"
#include "otnas/errors.hpp"

namespace otnas {

namespace fs = std::filesystem;

namespace {

// Re-raises the in-flight exception with `context` prepended, keeping its type.
[[noreturn]] void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const PreconditionError& e) {
    throw PreconditionError(context + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(context + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(context + ": " + e.what());
  } catch (const IncompatibleError& e) {
    throw IncompatibleError(context + ": " + e.what());
  } catch (const CorruptionError& e) {
    throw CorruptionError(context + ": " + e.what());
  } catch (const NotFoundError& e) {
    throw NotFoundError(context + ": " + e.what());
  } catch (const Error& e) {
    throw Error(context + ": " + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void finish_run(RunResult& run, const SupernetState& state, const LabeledDataset& target,
                const std::optional<TrainConfig>& retrain) {
  run.accuracy = evaluate(state, target, Split::val);
  if (retrain) {
    run.retrained_accuracy = retrain_genotype(discretize(state), state.config, target, *retrain).test_accuracy;
  }
}

std::vector<const ZooEntry*> eligible_entries(const LabeledDataset& target, const ZooIndex& zoo) {
  const std::string fp = dataset_fingerprint(target);
  std::vector<const ZooEntry*> out;
  for (const auto& e : zoo.entries()) {
    if (e.dataset_name == target.name || e.dataset_fingerprint == fp) continue;
    out.push_back(&e);
  }
  return out;
}

EmbeddedDataset embed_for_ot(const LabeledDataset& d, const OtSettings& s) {
  return embed(d, s.embedding, s.sample_count, s.sample_seed);
}

Json curve_to_json(const TrainingCurve& curve) {
  Json points = Json::array();
  for (const auto& p : curve.points) {
    points.push_back({{"step", p.step}, {"train_acc", p.train_accuracy}, {"val_acc", p.val_accuracy},
                      {"train_loss", p.train_loss}});
  }
  return points;
}

}  // namespace

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex m;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(m);
            if (next >= n) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

OtddOptions OtSettings::otdd_options() const {
  OtddOptions o;
  o.epsilon = epsilon;
  o.label_weight = label_weight;
  o.ridge = ridge;
  o.max_iter = max_iter;
  o.tol = tol;
  return o;
}

void OtSettings::validate() const {
  if (!(epsilon > 0)) throw ConfigError("ot.epsilon must be positive");
  if (!(label_weight >= 0)) throw ConfigError("ot.label_weight must be non-negative");
  if (sample_count < 2) throw ConfigError("ot.sample_count must be at least 2");
  if (max_iter < 1) throw ConfigError("ot.max_iter must be positive");
  if (!(tol > 0)) throw ConfigError("ot.tol must be positive");
  if (!(ridge >= 0)) throw ConfigError("ot.ridge must be non-negative");
  if (embedding.output_dim < 1) throw ConfigError("embedding.output_dim must be positive");
}

// ---------------------------------------------------------------------------

DatasetCatalog DatasetCatalog::load_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("dataset directory " + dir.string() + " does not exist");
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  DatasetCatalog catalog;
  for (const auto& p : subdirs) catalog.add(load_dataset(p));
  return catalog;
}

void DatasetCatalog::add(LabeledDataset dataset) {
  if (contains(dataset.name)) throw ConflictError("duplicate dataset name '" + dataset.name + "'");
  std::string name = dataset.name;
  datasets_.emplace(std::move(name), std::move(dataset));
}

const LabeledDataset& DatasetCatalog::get(const std::string& name) const {
  const auto it = datasets_.find(name);
  if (it == datasets_.end()) throw NotFoundError("no dataset named '" + name + "'");
  return it->second;
}

std::vector<std::string> DatasetCatalog::names() const {
  std::vector<std::string> out;
  for (const auto& [name, d] : datasets_) out.push_back(name);
  return out;
}

// ---------------------------------------------------------------------------

std::string DistanceReport::to_csv() const {
  std::string out = "dataset";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    out += names[i];
    for (std::size_t j = 0; j < names.size(); ++j) {
      out += "," + format_shortest(distances(static_cast<Index>(i), static_cast<Index>(j)));
    }
    out += "\n";
  }
  return out;
}

DistanceReport distance_matrix(std::span<const LabeledDataset> datasets, const OtSettings& settings, int jobs) {
  settings.validate();
  const std::size_t n = datasets.size();
  if (n < 2) throw PreconditionError("distance_matrix needs at least 2 datasets");

  std::vector<EmbeddedDataset> embedded(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    try {
      embedded[i] = embed_for_ot(datasets[i], settings);
    } catch (const Error&) {
      rethrow_with_context("embedding '" + datasets[i].name + "'");
    }
  });

  DistanceReport report;
  report.settings = settings;
  for (const auto& d : datasets) report.names.push_back(d.name);
  report.distances.resize(static_cast<Index>(n), static_cast<Index>(n));
  const OtddOptions opts = settings.otdd_options();
  parallel_for(n * n, jobs, [&](std::size_t k) {
    const std::size_t i = k / n, j = k % n;
    try {
      report.distances(static_cast<Index>(i), static_cast<Index>(j)) =
          otdd(embedded[i], embedded[j], opts).transport.transport_cost;
    } catch (const Error&) {
      rethrow_with_context("distance('" + datasets[i].name + "', '" + datasets[j].name + "')");
    }
  });
  return report;
}

std::string select_by_distance(const std::vector<std::pair<std::string, double>>& distances,
                               const std::string& exclude) {
  const std::pair<std::string, double>* best = nullptr;
  for (const auto& c : distances) {
    if (c.first == exclude) continue;
    if (best == nullptr || c.second < best->second || (c.second == best->second && c.first < best->first)) {
      best = &c;
    }
  }
  if (best == nullptr) throw PreconditionError("no eligible source dataset (zoo is empty after excluding the target)");
  return best->first;
}

SourceSelection select_source(const LabeledDataset& target, const ZooIndex& zoo, const DatasetCatalog& catalog,
                              const OtSettings& settings, int jobs) {
  settings.validate();
  const auto candidates = eligible_entries(target, zoo);
  if (candidates.empty()) {
    throw PreconditionError("zoo has no eligible source for target '" + target.name +
                            "' (empty after excluding the target)");
  }
  const EmbeddedDataset target_embedding = embed_for_ot(target, settings);
  const OtddOptions opts = settings.otdd_options();

  SourceSelection sel;
  sel.distances.resize(candidates.size());
  parallel_for(candidates.size(), jobs, [&](std::size_t i) {
    const ZooEntry& entry = *candidates[i];
    try {
      const LabeledDataset& source = catalog.get(entry.dataset_name);
      if (dataset_fingerprint(source) != entry.dataset_fingerprint) {
        throw CorruptionError("dataset differs from the one the zoo entry was trained on");
      }
      sel.distances[i] = {entry.dataset_name,
                          otdd(target_embedding, embed_for_ot(source, settings), opts).transport.transport_cost};
    } catch (const Error&) {
      rethrow_with_context("distance('" + target.name + "', '" + entry.dataset_name + "')");
    }
  });
  sel.source = select_by_distance(sel.distances, target.name);
  return sel;
}

// ---------------------------------------------------------------------------

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::scratch:
      return "scratch";
    case RunMode::ot_transfer:
      return "ot_transfer";
    case RunMode::loo_transfer:
      return "loo_transfer";
    case RunMode::grid_source:
      return "grid_source";
  }
  return "unknown";
}

RunMode run_mode_from_string(const std::string& name) {
  for (const RunMode m : {RunMode::scratch, RunMode::ot_transfer, RunMode::loo_transfer, RunMode::grid_source}) {
    if (to_string(m) == name) return m;
  }
  throw FormatError("unknown run mode '" + name + "'");
}

std::string RunResult::run_id() const {
  std::string id = to_string(mode) + "__" + target;
  if (source) id += "__" + *source;
  return id + "__s" + std::to_string(seed);
}

std::string run_to_json(const RunResult& run) {
  Json j;
  j["mode"] = to_string(run.mode);
  j["target"] = run.target;
  j["source"] = run.source ? Json(*run.source) : Json(nullptr);
  j["accuracy"] = run.accuracy;
  j["retrained_accuracy"] = run.retrained_accuracy ? Json(*run.retrained_accuracy) : Json(nullptr);
  j["seed"] = run.seed;
  j["curve"] = curve_to_json(run.curve);
  return j.dump(2) + "\n";
}

RunResult run_from_json(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    RunResult r;
    r.mode = run_mode_from_string(j.at("mode").get<std::string>());
    r.target = j.at("target").get<std::string>();
    if (!j.at("source").is_null()) r.source = j["source"].get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    if (!j.at("retrained_accuracy").is_null()) r.retrained_accuracy = j["retrained_accuracy"].get<double>();
    r.seed = j.at("seed").get<Seed>();
    for (const auto& p : j.at("curve")) {
      r.curve.points.push_back({p.at("step").get<std::int64_t>(), p.at("train_acc").get<double>(),
                                p.at("val_acc").get<double>(), p.at("train_loss").get<double>()});
    }
    return r;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("run file: ") + e.what());
  }
}

void save_run(const RunResult& run, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  binary::write_file_atomic(path.string(), run_to_json(run));
}

RunResult load_run(const fs::path& path) { return run_from_json(binary::read_file(path.string())); }

// ---------------------------------------------------------------------------

RunResult scratch_run(const LabeledDataset& target, const SearchSpaceConfig& space, const TrainConfig& config,
                      const std::optional<TrainConfig>& retrain) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult run;
  run.mode = RunMode::scratch;
  run.target = target.name;
  run.seed = config.seed;
  auto trained = train_supernet(init_supernet(space, target.num_classes, config.seed), target, config);
  run.curve = std::move(trained.curve);
  finish_run(run, trained.state, target, retrain);
  run.seconds = seconds_since(t0);
  return run;
}

RunResult transfer_run(const LabeledDataset& target, const SupernetState& source, const std::string& source_name,
                       RunMode mode, const TrainConfig& config, const std::optional<TrainConfig>& retrain) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult run;
  run.mode = mode;
  run.target = target.name;
  run.source = source_name;
  run.seed = config.seed;
  SupernetState start = transfer_weights(source, source.config, target.num_classes, config.seed);
  auto trained = train_supernet(std::move(start), target, config);
  run.curve = std::move(trained.curve);
  finish_run(run, trained.state, target, retrain);
  run.seconds = seconds_since(t0);
  return run;
}

OtTransferResult ot_transfer_run(const LabeledDataset& target, const ZooIndex& zoo, const DatasetCatalog& catalog,
                                 const OtSettings& settings, const SearchSpaceConfig& space, const TrainConfig& config,
                                 int jobs, const std::optional<TrainConfig>& retrain) {
  OtTransferResult out;
  out.selection = select_source(target, zoo, catalog, settings, jobs);
  const SupernetState source = zoo.load_entry(out.selection.source);
  // Validates the search space before any training happens.
  transfer_weights(source, space, target.num_classes, config.seed);
  out.run = transfer_run(target, source, out.selection.source, RunMode::ot_transfer, config, retrain);
  return out;
}

OracleResult grid_search_oracle(const LabeledDataset& target, const ZooIndex& zoo, const SearchSpaceConfig& space,
                                const TrainConfig& config, int jobs) {
  const auto candidates = eligible_entries(target, zoo);
  if (candidates.size() < 2) {
    throw PreconditionError("grid_search_oracle needs at least 2 eligible zoo entries for '" + target.name + "'");
  }
  OracleResult out;
  out.runs.resize(candidates.size());
  parallel_for(candidates.size(), jobs, [&](std::size_t i) {
    const std::string& name = candidates[i]->dataset_name;
    try {
      const SupernetState source = zoo.load_entry(name);
      transfer_weights(source, space, target.num_classes, config.seed);
      out.runs[i] = transfer_run(target, source, name, RunMode::grid_source, config);
    } catch (const Error&) {
      rethrow_with_context("oracle arm '" + name + "'");
    }
  });
  const RunResult* best = nullptr;
  const RunResult* worst = nullptr;
  for (const auto& r : out.runs) {
    if (best == nullptr || r.accuracy > best->accuracy || (r.accuracy == best->accuracy && *r.source < *best->source)) {
      best = &r;
    }
    if (worst == nullptr || r.accuracy < worst->accuracy ||
        (r.accuracy == worst->accuracy && *r.source < *worst->source)) {
      worst = &r;
    }
  }
  out.best = *best->source;
  out.worst = *worst->source;
  return out;
}

// ---------------------------------------------------------------------------

LooPretrainResult loo_pretrain(const std::string& target_name, std::span<const LabeledDataset> datasets,
                               const SearchSpaceConfig& space, const TrainConfig& config) {
  space.validate();
  config.validate();
  std::vector<const LabeledDataset*> pool;
  for (const auto& d : datasets) {
    if (d.name != target_name) pool.push_back(&d);
  }
  if (pool.size() < 2) throw PreconditionError("leave-one-out pretraining needs at least 2 non-target datasets");

  LooPretrainResult out;
  for (const auto* d : pool) out.sources.push_back(d->name);

  struct Member {
    const LabeledDataset* data;
    Parameter head_weight;
    Parameter head_bias;
    BatchCursor train;
    BatchCursor val;
    std::size_t per_epoch;
  };
  std::vector<Member> members;
  SupernetState state = init_supernet(space, pool.front()->num_classes, config.seed);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const LabeledDataset& d = *pool[i];
    if (d.image_shape != space.image_shape) {
      throw IncompatibleError("dataset '" + d.name + "' image shape does not match the search space");
    }
    SupernetState head_src = state;
    reinit_head(head_src, d.num_classes, config.seed + i);
    BatchCursor train(d.splits.train, config.seed, 0x6c6f6f00 + i);
    const std::size_t per_epoch = train.batches_per_epoch(batch);
    members.push_back({&d, std::move(head_src.head_weight), std::move(head_src.head_bias), std::move(train),
                       BatchCursor(d.splits.val, config.seed, 0x6c6f6f76 + i), per_epoch});
  }

  int active = -1;
  auto activate = [&](std::size_t i) {
    if (active == static_cast<int>(i)) return;
    if (active >= 0) {
      std::swap(state.head_weight, members[static_cast<std::size_t>(active)].head_weight);
      std::swap(state.head_bias, members[static_cast<std::size_t>(active)].head_bias);
    }
    std::swap(state.head_weight, members[i].head_weight);
    std::swap(state.head_bias, members[i].head_bias);
    state.num_classes = members[i].data->num_classes;
    active = static_cast<int>(i);
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> remaining;
    for (const auto& m : members) remaining.push_back(m.per_epoch);
    for (bool any = true; any;) {
      any = false;
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (remaining[i] == 0) continue;
        --remaining[i];
        any = true;
        activate(i);
        Member& m = members[i];
        train_step(state, gather_batch(*m.data, m.train.next(batch)), gather_batch(*m.data, m.val.next(batch)), config);
        out.provenance.push_back(m.data->name);
      }
    }
  }
  out.state = std::move(state);
  return out;
}

RunResult loo_transfer_run(const LabeledDataset& target, const LooPretrainResult& pretrained, const TrainConfig& config,
                           const std::optional<TrainConfig>& retrain) {
  for (const auto& s : pretrained.sources) {
    if (s == target.name) throw PreconditionError("leave-one-out supernet was pretrained on the target '" + s + "'");
  }
  const auto t0 = std::chrono::steady_clock::now();
  RunResult run;
  run.mode = RunMode::loo_transfer;
  run.target = target.name;
  run.seed = config.seed;
  std::string label;
  for (const auto& s : pretrained.sources) label += (label.empty() ? "" : "+") + s;
  run.source = label;
  SupernetState start = transfer_weights(pretrained.state, pretrained.state.config, target.num_classes, config.seed);
  reinit_head(start, target.num_classes, config.seed);
  auto trained = train_supernet(std::move(start), target, config);
  run.curve = std::move(trained.curve);
  finish_run(run, trained.state, target, retrain);
  run.seconds = seconds_since(t0);
  return run;
}

LooRunResult loo_pretrain_run(const LabeledDataset& target, std::span<const LabeledDataset> datasets,
                              const SearchSpaceConfig& space, const TrainConfig& pretrain_config,
                              const TrainConfig& finetune_config) {
  LooPretrainResult pre = loo_pretrain(target.name, datasets, space, pretrain_config);
  LooRunResult out;
  out.run = loo_transfer_run(target, pre, finetune_config);
  out.provenance = std::move(pre.provenance);
  return out;
}

// ---------------------------------------------------------------------------

double relative_improvement(double acc_a, double acc_b) {
  if (acc_b == 0) throw PreconditionError("relative improvement is undefined for a zero baseline accuracy");
  return (acc_a - acc_b) / acc_b;
}

double convergence_speedup(const TrainingCurve& curve_a, const TrainingCurve& curve_b, double threshold) {
  if (curve_a.empty() || curve_b.empty()) throw PreconditionError("convergence_speedup needs non-empty curves");
  auto first_crossing = [&](const TrainingCurve& c) -> std::optional<std::int64_t> {
    for (const auto& p : c.points) {
      if (p.train_accuracy >= threshold) return p.step;
    }
    return std::nullopt;
  };
  const auto a = first_crossing(curve_a);
  if (!a) throw PreconditionError("convergence_speedup: the reference curve never reaches the threshold");
  const auto b = first_crossing(curve_b);
  if (!b) return std::numeric_limits<double>::infinity();
  return static_cast<double>(*b) / static_cast<double>(*a);
}

std::string format_shortest(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

std::string format_fixed4(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  std::string s(buf);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

std::string ComparisonRow::to_csv_line() const {
  return target + "," + mode + "," + source + "," + format_shortest(accuracy) + "," +
         (ri_vs_scratch ? format_fixed4(*ri_vs_scratch) : "") + "," + (speedup ? format_fixed4(*speedup) : "");
}

std::vector<ComparisonRow> comparison_rows(const std::vector<RunResult>& runs, const ReportOptions& options) {
  std::set<std::string> targets;
  for (const auto& r : runs) targets.insert(r.target);

  std::vector<ComparisonRow> rows;
  for (const auto& target : targets) {
    std::map<Seed, const RunResult*> scratch;
    for (const auto& r : runs) {
      if (r.target == target && r.mode == RunMode::scratch) scratch[r.seed] = &r;
    }
    std::optional<double> scratch_acc;
    if (!scratch.empty()) {
      std::vector<double> accs;
      for (const auto& [seed, r] : scratch) accs.push_back(r->accuracy);
      scratch_acc = median(accs);
    }

    // Median over seeds of the paired speedup; seeds whose own curve never
    // reaches the threshold are left out.
    auto speedup_for = [&](const std::vector<const RunResult*>& group) -> std::optional<double> {
      std::vector<double> values;
      for (const auto* r : group) {
        const auto it = scratch.find(r->seed);
        if (it == scratch.end() || r->curve.empty() || it->second->curve.empty()) continue;
        try {
          values.push_back(convergence_speedup(r->curve, it->second->curve, options.speedup_threshold));
        } catch (const PreconditionError&) {
        }
      }
      if (values.empty()) return std::nullopt;
      return median(values);
    };

    auto make_row = [&](const std::string& mode, const std::string& source,
                        const std::vector<const RunResult*>& group) {
      std::vector<double> accs;
      for (const auto* r : group) accs.push_back(r->accuracy);
      ComparisonRow row{target, mode, source, median(accs), std::nullopt, speedup_for(group)};
      if (scratch_acc && *scratch_acc > 0) row.ri_vs_scratch = relative_improvement(row.accuracy, *scratch_acc);
      rows.push_back(std::move(row));
    };

    auto group_of = [&](RunMode mode, const std::optional<std::string>& source) {
      std::vector<const RunResult*> g;
      for (const auto& r : runs) {
        if (r.target == target && r.mode == mode && (!source || r.source == source)) g.push_back(&r);
      }
      return g;
    };

    if (!scratch.empty()) make_row("scratch", "", group_of(RunMode::scratch, std::nullopt));

    for (const RunMode mode : {RunMode::ot_transfer, RunMode::loo_transfer}) {
      const auto group = group_of(mode, std::nullopt);
      if (group.empty()) continue;
      // The most frequent source over seeds names the row (ties: smallest name).
      std::map<std::string, int> votes;
      for (const auto* r : group) ++votes[r->source.value_or("")];
      std::string source;
      int best_votes = 0;
      for (const auto& [name, v] : votes) {
        if (v > best_votes) {
          best_votes = v;
          source = name;
        }
      }
      make_row(to_string(mode), source, group);
    }

    std::set<std::string> grid_sources;
    for (const auto& r : runs) {
      if (r.target == target && r.mode == RunMode::grid_source && r.source) grid_sources.insert(*r.source);
    }
    if (!grid_sources.empty()) {
      std::string best, worst;
      double best_acc = 0, worst_acc = 0;
      for (const auto& s : grid_sources) {
        std::vector<double> accs;
        for (const auto* r : group_of(RunMode::grid_source, s)) accs.push_back(r->accuracy);
        const double m = median(accs);
        if (best.empty() || m > best_acc) {
          best = s;
          best_acc = m;
        }
        if (worst.empty() || m < worst_acc) {
          worst = s;
          worst_acc = m;
        }
      }
      make_row("oracle_best", best, group_of(RunMode::grid_source, best));
      make_row("oracle_worst", worst, group_of(RunMode::grid_source, worst));
    }
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "target,mode,source,acc,ri_vs_scratch,speedup\n";
  for (const auto& r : rows) out += r.to_csv_line() + "\n";
  return out;
}

int gap_count(const std::vector<ComparisonRow>& rows, double margin) {
  std::map<std::string, double> ot, oracle;
  for (const auto& r : rows) {
    if (r.mode == "ot_transfer") ot[r.target] = r.accuracy;
    if (r.mode == "oracle_best") oracle[r.target] = r.accuracy;
  }
  int count = 0;
  for (const auto& [target, acc] : oracle) {
    const auto it = ot.find(target);
    if (it != ot.end() && acc - it->second > margin) ++count;
  }
  return count;
}

void write_reports(const std::vector<RunResult>& runs, const std::optional<DistanceReport>& distances,
                   const fs::path& out_dir, const ReportOptions& options) {
  std::error_code ec;
  fs::create_directories(out_dir / "curves", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "curves").string() + ": " + ec.message());

  if (distances) binary::write_file_atomic((out_dir / "distances.csv").string(), distances->to_csv());
  for (const auto& r : runs) {
    binary::write_file_atomic((out_dir / "curves" / (r.run_id() + ".csv")).string(), r.curve.to_csv());
  }
  const auto rows = comparison_rows(runs, options);
  binary::write_file_atomic((out_dir / "comparison.csv").string(), comparison_csv(rows));
  binary::write_file_atomic((out_dir / "gapcount.txt").string(),
                            std::to_string(gap_count(rows, options.gap_margin)) + "\n");
}

}  // namespace otnas
