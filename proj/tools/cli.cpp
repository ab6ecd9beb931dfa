#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "otnas/binary_io.hpp"
#include "otnas/errors.hpp"

namespace otnas::cli {

namespace fs = std::filesystem;

namespace {

OtSettings ot_settings_from_json(const Json& j, OtSettings s) {
  constexpr const char* where = "ot";
  reject_unknown_keys(j, {"epsilon", "sample_count", "label_weight", "sample_seed", "max_iter", "tol", "ridge"},
                      where);
  read_key(j, "epsilon", s.epsilon, where);
  read_key(j, "sample_count", s.sample_count, where);
  read_key(j, "label_weight", s.label_weight, where);
  read_key(j, "sample_seed", s.sample_seed, where);
  read_key(j, "max_iter", s.max_iter, where);
  read_key(j, "tol", s.tol, where);
  read_key(j, "ridge", s.ridge, where);
  return s;
}

ReportOptions report_options_from_json(const Json& j) {
  constexpr const char* where = "report";
  reject_unknown_keys(j, {"speedup_threshold", "gap_margin"}, where);
  ReportOptions r;
  read_key(j, "speedup_threshold", r.speedup_threshold, where);
  read_key(j, "gap_margin", r.gap_margin, where);
  return r;
}

std::vector<SyntheticTaskSpec> synthetic_list(const Json& j) {
  if (!j.is_array()) throw ConfigError("synthetic: expected an array of task specs");
  std::vector<SyntheticTaskSpec> out;
  for (const auto& item : j) out.push_back(synthetic_spec_from_json(item));
  return out;
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() || base.empty() ? p : base / p; }

Json parse_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  try {
    return Json::parse(binary::read_file(path.string()));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

struct Invocation {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<Seed> seed;
  int jobs = 1;
  std::optional<std::string> target;
  std::optional<std::string> spec;
};

class Session {
 public:
  Session(const Invocation& inv, std::ostream& out, std::ostream& err) : inv_(inv), out_(out), err_(err) {
    cfg_ = load_config(inv.config_path);
    if (inv.out) cfg_.output_dir = *inv.out;
    if (inv.jobs < 1) throw ConfigError("--jobs must be at least 1");
  }

  void gen_data() {
    std::vector<SyntheticTaskSpec> specs = cfg_.synthetic;
    if (inv_.spec) {
      const Json j = parse_json_file(*inv_.spec);
      specs = synthetic_list(j.is_object() && j.contains("synthetic") ? j["synthetic"] : j);
    }
    if (specs.empty()) throw ConfigError("gen-data: no synthetic task specs given");
    Json names = Json::array();
    for (const auto& s : specs) {
      const LabeledDataset d = generate_synthetic(s);
      save_dataset(d, cfg_.dataset_dir / d.name);
      err_ << "generated " << d.name << " (" << d.size() << " samples)\n";
      names.push_back(d.name);
    }
    summary({{"command", "gen-data"}, {"dataset_dir", cfg_.dataset_dir.string()}, {"datasets", names}});
  }

  void pretrain() {
    const DatasetCatalog catalog = DatasetCatalog::load_dir(cfg_.dataset_dir);
    ZooIndex zoo = ZooIndex::open(cfg_.zoo_root);
    std::vector<std::string> names = inv_.target ? std::vector<std::string>{*inv_.target} : catalog.names();
    TrainConfig tc = cfg_.pretrain_config();
    if (inv_.seed) tc.seed = *inv_.seed;
    Json entries = Json::array();
    std::vector<ZooEntry> saved(names.size());
    std::vector<TrainResult> trained(names.size());
    parallel_for(names.size(), inv_.jobs, [&](std::size_t i) {
      const LabeledDataset& d = catalog.get(names[i]);
      trained[i] = train_supernet(init_supernet(cfg_.search_space, d.num_classes, tc.seed), d, tc);
    });
    for (std::size_t i = 0; i < names.size(); ++i) {
      const LabeledDataset& d = catalog.get(names[i]);
      const double val = evaluate(trained[i].state, d, Split::val);
      if (zoo.find(d.name) != nullptr) zoo.remove_entry(d.name);
      ZooEntryMetadata meta;
      meta.epochs_trained = tc.epochs;
      meta.seed = tc.seed;
      meta.final_val_accuracy = val;
      const ZooEntry e = zoo.save_entry(d, trained[i].state, meta);
      err_ << "pretrained " << d.name << " val_acc=" << format_shortest(val) << "\n";
      entries.push_back({{"dataset", e.dataset_name}, {"val_accuracy", val}, {"state_path", e.state_path}});
    }
    summary({{"command", "pretrain"}, {"zoo_root", cfg_.zoo_root.string()}, {"entries", entries}});
  }

  void dist() {
    const DatasetCatalog catalog = DatasetCatalog::load_dir(cfg_.dataset_dir);
    std::vector<LabeledDataset> datasets;
    for (const auto& n : catalog.names()) datasets.push_back(catalog.get(n));
    const DistanceReport report = distance_matrix(datasets, cfg_.ot, inv_.jobs);
    fs::create_directories(cfg_.output_dir);
    const fs::path path = cfg_.output_dir / "distances.csv";
    binary::write_file_atomic(path.string(), report.to_csv());
    summary({{"command", "dist"}, {"datasets", report.names.size()}, {"path", path.string()}});
  }

  void scratch() {
    const DatasetCatalog catalog = DatasetCatalog::load_dir(cfg_.dataset_dir);
    const LabeledDataset& target = catalog.get(require_target());
    const auto seeds = seed_list();
    std::vector<RunResult> runs(seeds.size());
    parallel_for(seeds.size(), inv_.jobs, [&](std::size_t i) {
      runs[i] = scratch_run(target, cfg_.search_space, with_seed(cfg_.train, seeds[i]), cfg_.retrain);
    });
    finish("scratch", runs);
  }

  void transfer() {
    const DatasetCatalog catalog = DatasetCatalog::load_dir(cfg_.dataset_dir);
    const LabeledDataset& target = catalog.get(require_target());
    const ZooIndex zoo = ZooIndex::open(cfg_.zoo_root);
    const SourceSelection sel = select_source(target, zoo, catalog, cfg_.ot, inv_.jobs);
    err_ << "selected source " << sel.source << " for " << target.name << "\n";
    const SupernetState source = zoo.load_entry(sel.source);
    transfer_weights(source, cfg_.search_space, target.num_classes, 0);
    const auto seeds = seed_list();
    std::vector<RunResult> runs(seeds.size());
    parallel_for(seeds.size(), inv_.jobs, [&](std::size_t i) {
      runs[i] = transfer_run(target, source, sel.source, RunMode::ot_transfer, with_seed(cfg_.train, seeds[i]),
                             cfg_.retrain);
    });
    Json distances = Json::object();
    for (const auto& [name, d] : sel.distances) distances[name] = d;
    finish("transfer", runs, {{"source", sel.source}, {"distances", distances}});
  }

  void oracle() {
    const DatasetCatalog catalog = DatasetCatalog::load_dir(cfg_.dataset_dir);
    const LabeledDataset& target = catalog.get(require_target());
    const ZooIndex zoo = ZooIndex::open(cfg_.zoo_root);
    std::vector<RunResult> runs;
    Json per_seed = Json::array();
    for (const Seed s : seed_list()) {
      OracleResult r = grid_search_oracle(target, zoo, cfg_.search_space, with_seed(cfg_.train, s), inv_.jobs);
      per_seed.push_back({{"seed", s}, {"best", r.best}, {"worst", r.worst}});
      for (auto& run : r.runs) runs.push_back(std::move(run));
    }
    finish("oracle", runs, {{"oracle", per_seed}});
  }

  void loo() {
    const DatasetCatalog catalog = DatasetCatalog::load_dir(cfg_.dataset_dir);
    const LabeledDataset& target = catalog.get(require_target());
    std::vector<LabeledDataset> datasets;
    for (const auto& n : catalog.names()) {
      if (n != target.name) datasets.push_back(catalog.get(n));
    }
    const LooPretrainResult pre = loo_pretrain(target.name, datasets, cfg_.search_space, cfg_.pretrain_config());
    err_ << "leave-one-out pretraining: " << pre.provenance.size() << " steps over " << pre.sources.size()
         << " datasets\n";
    const auto seeds = seed_list();
    std::vector<RunResult> runs(seeds.size());
    parallel_for(seeds.size(), inv_.jobs, [&](std::size_t i) {
      runs[i] = loo_transfer_run(target, pre, with_seed(cfg_.train, seeds[i]), cfg_.retrain);
    });
    finish("loo", runs, {{"pretrain_steps", pre.provenance.size()}});
  }

  void report() {
    const fs::path runs_dir = cfg_.output_dir / "runs";
    std::vector<fs::path> files;
    if (fs::is_directory(runs_dir)) {
      for (const auto& e : fs::directory_iterator(runs_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    std::vector<RunResult> runs;
    for (const auto& f : files) runs.push_back(load_run(f));
    write_reports(runs, std::nullopt, cfg_.output_dir, cfg_.report);
    const auto rows = comparison_rows(runs, cfg_.report);
    summary({{"command", "report"},
             {"runs", runs.size()},
             {"rows", rows.size()},
             {"gap_count", gap_count(rows, cfg_.report.gap_margin)},
             {"path", (cfg_.output_dir / "comparison.csv").string()}});
  }

 private:
  const std::string& require_target() const {
    if (!inv_.target) throw ConfigError("this command needs --target <name>");
    return *inv_.target;
  }

  std::vector<Seed> seed_list() const {
    if (inv_.seed) return {*inv_.seed};
    return cfg_.seeds;
  }

  static TrainConfig with_seed(TrainConfig c, Seed s) {
    c.seed = s;
    return c;
  }

  void finish(const char* command, const std::vector<RunResult>& runs, Json extra = Json::object()) {
    Json list = Json::array();
    for (const auto& r : runs) {
      const fs::path path = cfg_.output_dir / "runs" / (r.run_id() + ".json");
      save_run(r, path);
      err_ << r.run_id() << " acc=" << format_shortest(r.accuracy) << " (" << r.seconds << " s)\n";
      Json item = {{"run_id", r.run_id()}, {"accuracy", r.accuracy}, {"seconds", r.seconds}};
      if (r.retrained_accuracy) item["retrained_accuracy"] = *r.retrained_accuracy;
      list.push_back(item);
    }
    Json s = {{"command", command}, {"target", *inv_.target}};
    for (const auto& item : extra.items()) s[item.key()] = item.value();
    s["runs"] = list;
    summary(s);
  }

  void summary(const Json& j) { out_ << j.dump() << "\n"; }

  Invocation inv_;
  std::ostream& out_;
  std::ostream& err_;
  CliConfig cfg_;
};

}  // namespace

CliConfig parse_config(const Json& j, const fs::path& base_dir) {
  reject_unknown_keys(j,
                      {"zoo_root", "dataset_dir", "output_dir", "embedding", "ot", "search_space", "train",
                       "pretrain", "retrain", "seeds", "synthetic", "report"},
                      "config");
  CliConfig c;
  std::string path;
  if (j.contains("zoo_root")) {
    read_key(j, "zoo_root", path, "config");
    c.zoo_root = resolve(base_dir, path);
  } else {
    c.zoo_root = resolve(base_dir, c.zoo_root);
  }
  if (j.contains("dataset_dir")) {
    read_key(j, "dataset_dir", path, "config");
    c.dataset_dir = resolve(base_dir, path);
  } else {
    c.dataset_dir = resolve(base_dir, c.dataset_dir);
  }
  if (j.contains("output_dir")) {
    read_key(j, "output_dir", path, "config");
    c.output_dir = resolve(base_dir, path);
  } else {
    c.output_dir = resolve(base_dir, c.output_dir);
  }
  if (const char* env = std::getenv("OTNAS_ZOO"); env != nullptr && *env != '\0') c.zoo_root = env;

  if (j.contains("embedding")) c.ot.embedding = embedding_config_from_json(j["embedding"]);
  if (j.contains("ot")) c.ot = ot_settings_from_json(j["ot"], c.ot);
  c.ot.validate();
  if (j.contains("search_space")) c.search_space = search_space_from_json(j["search_space"]);
  c.search_space.validate();
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("pretrain")) c.pretrain = train_config_from_json(j["pretrain"]);
  if (j.contains("retrain")) c.retrain = train_config_from_json(j["retrain"]);
  read_key(j, "seeds", c.seeds, "config");
  if (c.seeds.empty()) throw ConfigError("config.seeds must not be empty");
  if (j.contains("synthetic")) c.synthetic = synthetic_list(j["synthetic"]);
  if (j.contains("report")) c.report = report_options_from_json(j["report"]);
  return c;
}

CliConfig load_config(const fs::path& path) { return parse_config(parse_json_file(path), path.parent_path()); }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const PreconditionError*>(&e) ||
      dynamic_cast<const NotFoundError*>(&e) || dynamic_cast<const ShapeError*>(&e)) {
    return kConfigError;
  }
  if (dynamic_cast<const IncompatibleError*>(&e) || dynamic_cast<const CorruptionError*>(&e) ||
      dynamic_cast<const FormatError*>(&e)) {
    return kIncompatible;
  }
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  return kFailure;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Supernet zoo, OT source selection and warm-start transfer experiments", "otnas"};
  app.require_subcommand(1);
  app.fallthrough();

  Invocation inv;
  app.add_option("--config", inv.config_path, "JSON experiment config")->required();
  app.add_option("--out", inv.out, "output directory (overrides output_dir)");
  app.add_option("--seed", inv.seed, "run a single seed instead of the config's seed list");
  app.add_option("--jobs", inv.jobs, "concurrent runs")->capture_default_str();
  app.add_option("--target", inv.target, "target dataset name");

  auto* gen = app.add_subcommand("gen-data", "generate synthetic datasets into dataset_dir");
  gen->add_option("--spec", inv.spec, "JSON file with a list of task specs (default: config.synthetic)");
  auto* pre = app.add_subcommand("pretrain", "train supernets from scratch and store them in the zoo");
  auto* dist = app.add_subcommand("dist", "pairwise dataset distances -> distances.csv");
  auto* transfer = app.add_subcommand("transfer", "OT source selection + warm-start fine-tuning");
  auto* scratch = app.add_subcommand("scratch", "train the target from scratch");
  auto* oracle = app.add_subcommand("oracle", "transfer from every zoo entry");
  auto* loo = app.add_subcommand("loo", "leave-one-out multi-dataset pretraining + transfer");
  auto* report = app.add_subcommand("report", "comparison.csv and gapcount.txt from the saved runs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    Session session(inv, out, err);
    if (*gen) session.gen_data();
    else if (*pre) session.pretrain();
    else if (*dist) session.dist();
    else if (*transfer) session.transfer();
    else if (*scratch) session.scratch();
    else if (*oracle) session.oracle();
    else if (*loo) session.loo();
    else if (*report) session.report();
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace otnas::cli
