#include "pfa/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pfa/checkpoint.hpp"
#include "pfa/features.hpp"
#include "pfa/data.hpp"
#include "pfa/evaluation.hpp"
#include "pfa/image_io.hpp"
#include "pfa/synthetic.hpp"
#include "pfa/training.hpp"

#ifndef PFA_VERSION
#define PFA_VERSION "0.1.0"
#endif

namespace pfa {

namespace fs = std::filesystem;

std::string code_version() { return PFA_VERSION; }

namespace {

std::string utc_now(const char* format) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, format);
  return os.str();
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

// Named flags bound to config keys, applied after --config and --set.
class Overrides {
 public:
  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    values_.emplace_back();
    auto* option = app->add_option(flag, values_.back(), help + " [" + key + "]");
    bound_.push_back({option, key, &values_.back()});
  }
  void apply(Config& config) const {
    for (const auto& b : bound_) {
      if (b.option->count() > 0) config.set(b.key, *b.value);
    }
  }

 private:
  struct Bound {
    CLI::Option* option;
    std::string key;
    std::string* value;
  };
  std::deque<std::string> values_;
  std::vector<Bound> bound_;
};

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  bool force = false;
  int threads = 0;
  Overrides overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config file");
    app->add_option("--set", sets, "override KEY=VALUE (repeatable)");
    app->add_flag("--force", force, "overwrite existing outputs");
    app->add_option("--threads", threads, "intra-op threads (0: library default)");
  }

  Config resolve() const {
    Config config;
    if (!config_file.empty()) config.merge_file(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
      config.set(s.substr(0, eq), s.substr(eq + 1));
    }
    overrides.apply(config);
    return config;
  }
};

IngestOptions ingest_options(const Config& config) {
  return {config.get<std::uint64_t>("data.seed"), config.get<double>("data.train_fraction")};
}

FaceDataset open_dataset(const Config& config, const AgeGroupPartition& partition, int size) {
  const fs::path root = config.get<std::string>("data.root");
  if (!fs::exists(root / "manifest.csv")) throw ConfigError("dataset manifest not found: " + (root / "manifest.csv").string());
  return FaceDataset::open(root, size, partition, ingest_options(config));
}

void claim_file(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) throw ConfigError(path.string() + " already exists (use --force to overwrite)");
}

void claim_dir(const fs::path& dir, bool force) {
  if (non_empty_dir(dir)) {
    if (!force) throw ConfigError(dir.string() + " already exists and is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

int cmd_make_synthetic(const Common& common, const std::string& out_dir, SyntheticOptions options,
                       const std::vector<std::string>& args, std::ostream& out) {
  const auto config = common.resolve();
  claim_dir(out_dir, common.force);
  write_run_manifest(fs::path(out_dir) / "run_manifest.json", run_manifest("make-synthetic", args, config, options.seed));
  const int n = make_synthetic(out_dir, options);
  out << "wrote " << n << " images to " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const Common& common, const std::vector<std::string>& args, std::ostream& out) {
  const auto config = common.resolve();
  const auto cfg = AgePretrainConfig::from(config);
  const fs::path output = config.get<std::string>("pretrain.output");
  claim_file(output, common.force);
  const auto partition = partition_from(config);
  auto data = open_dataset(config, partition, config.get<int>("data.size"));
  auto manifest_path = output;
  manifest_path += ".run.json";
  if (common.force) fs::remove(manifest_path);
  write_run_manifest(manifest_path, run_manifest("pretrain-age", args, config, cfg.seed));
  PretrainReport report;
  auto estimator = pretrain_age_estimator(data, cfg, AgeEstimatorOptions{}, &report, &out);
  auto meta = age_estimator_meta(estimator, partition, report);
  meta["config_hash"] = config.hash();
  save_age_estimator(estimator, output, meta);
  out << "saved " << output.string() << " (validation MAE " << report.val_mae << ")\n";
  return 0;
}

int cmd_pretrain_identity(const Common& common, const std::vector<std::string>& args, std::ostream& out) {
  const auto config = common.resolve();
  const auto cfg = IdentityPretrainConfig::from(config);
  const fs::path output = config.get<std::string>("embedder.output");
  claim_file(output, common.force);
  const auto partition = partition_from(config);
  auto data = open_dataset(config, partition, config.get<int>("data.size"));
  auto manifest_path = output;
  manifest_path += ".run.json";
  if (common.force) fs::remove(manifest_path);
  write_run_manifest(manifest_path, run_manifest("pretrain-identity", args, config, cfg.seed));
  IdentityPretrainReport report;
  auto features = pretrain_identity_features(data, cfg, FeatureExtractorOptions{}, &report, &out);
  save_checkpoint(*features, output,
                  {{"kind", "identity_features"},
                   {"options", features->options().to_json()},
                   {"identities", report.identities},
                   {"train_accuracy", report.train_accuracy},
                   {"config_hash", config.hash()}});
  out << "saved " << output.string() << " (training accuracy " << report.train_accuracy << ")\n";
  return 0;
}

int cmd_train(const Common& common, const std::string& run_dir_flag, const std::vector<std::string>& args,
              std::ostream& out) {
  const auto config = resolve_train_config(common.resolve());
  TrainConfig::from(config);
  const fs::path run_dir = run_dir_flag.empty() ? default_run_dir() : fs::path(run_dir_flag);
  const fs::path root = config.get<std::string>("data.root");
  if (!fs::exists(root / "manifest.csv")) throw ConfigError("dataset manifest not found: " + (root / "manifest.csv").string());
  load_age_estimator(config.get<std::string>("train.age_checkpoint"));
  claim_dir(run_dir, common.force);
  write_run_manifest(run_dir / "run_manifest.json",
                     run_manifest("train", args, config, config.get<std::uint64_t>("train.seed")));
  out << "run directory " << run_dir.string() << "\n";
  auto result = train(config, run_dir, out);
  out << "finished " << result.iterations << " iterations; last checkpoint " << result.last_checkpoint.string() << "\n";
  return 0;
}

std::string checkpoint_id(const fs::path& path) {
  auto file = fs::is_directory(path) ? path / "generator.pt" : path;
  return file.parent_path().filename().string() + "/" + file.filename().string();
}

AgeEstimator oracle_from(const Config& config) {
  const auto path = config.get<std::string>("eval.oracle_checkpoint");
  if (path.empty()) throw ConfigError("an age oracle checkpoint is required (--oracle)");
  return load_age_estimator(path);
}

int cmd_evaluate(const Common& common, const std::string& checkpoint, const std::string& sequential,
                 const std::string& out_dir, const std::vector<std::string>& args, std::ostream& out) {
  auto config = common.resolve();
  if (checkpoint.empty() == sequential.empty()) throw ConfigError("give exactly one of --checkpoint or --sequential");
  const fs::path path = checkpoint.empty() ? sequential : checkpoint;
  auto loaded = load_generator(path);
  if (config.is_explicit("data.size") && config.get<int>("data.size") != loaded.image_size) {
    throw ConfigError("data.size does not match the checkpoint image size " + std::to_string(loaded.image_size));
  }
  auto oracle = oracle_from(config);
  auto data = open_dataset(config, loaded.partition, loaded.image_size);
  claim_file(fs::path(out_dir) / "report.json", common.force);
  fs::create_directories(out_dir);
  if (common.force) fs::remove(fs::path(out_dir) / "run_manifest.json");
  write_run_manifest(fs::path(out_dir) / "run_manifest.json",
                     run_manifest("evaluate", args, config, config.get<std::uint64_t>("data.seed")));

  std::unique_ptr<AgingModel> model;
  if (sequential.empty()) {
    model = std::make_unique<GeneratorModel>(loaded.generator);
  } else {
    model = std::make_unique<SequentialConditionalModel>(loaded.generator);
  }
  EvalOptions options;
  options.direction = loaded.direction;
  options.max_faces = config.get<int>("eval.max_faces");
  options.is_splits = config.get<int>("eval.is_splits");
  options.far = config.get<double>("eval.far");
  options.batch_size = config.get<int>("eval.batch_size");
  options.montage_faces = config.get<int>("eval.montage_faces");
  options.checkpoint_id = checkpoint_id(path);
  options.config_hash = config.hash();
  IdentityEmbedder embedder(embedder_options(config));
  auto result = evaluate(*model, data, oracle, embedder, options);
  result.report["generator_calls"] = model->calls();
  write_report(result, out_dir);
  const auto& r = result.report;
  out << "pcc " << (r["pcc"].is_null() ? std::string("n/a") : r["pcc"].dump()) << ", inception score "
      << r["inception_score"]["mean"].get<double>() << ", mean identity similarity "
      << r["identity"]["mean_confidence"].get<double>() << "\n";
  out << "report written to " << out_dir << "\n";
  return 0;
}

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  int source = 0;
  bool estimate_source = false;
  std::vector<int> targets;
  std::string out_dir = "aged";
  bool montage = true;
};

int cmd_infer(const Common& common, const InferArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  auto config = common.resolve();
  auto loaded = load_generator(a.checkpoint);
  const int n = loaded.generator->group_count();
  const auto& partition = loaded.partition;
  if (!a.estimate_source && (a.source < 1 || a.source > n)) {
    throw ConfigError("--source must be a group in 1.." + std::to_string(n) + " (or use --estimate-source)");
  }
  std::optional<AgeEstimator> oracle;
  if (a.estimate_source) oracle = oracle_from(config);
  claim_dir(a.out_dir, common.force);
  write_run_manifest(fs::path(a.out_dir) / "run_manifest.json", run_manifest("infer", args, config, 0));

  GeneratorModel model(loaded.generator);
  std::vector<std::vector<torch::Tensor>> rows;
  std::vector<std::string> labels{"input"};
  for (const auto& input : a.inputs) {
    auto x = normalize_u8(to_chw_u8(square_resize(read_rgb(input), loaded.image_size))).unsqueeze(0);
    int source = a.source;
    if (oracle) {
      torch::NoGradGuard guard;
      const double age = (*oracle)->forward(x).expected_age.item<double>();
      source = partition.group_of(age);
      out << input << ": estimated age " << age << " -> group " << partition.label(source) << "\n";
    }
    const int source_m = model_group(source, n, loaded.direction);
    std::vector<int> targets = a.targets;
    if (targets.empty()) {
      for (int m = source_m + 1; m <= n; ++m) targets.push_back(natural_group(m, n, loaded.direction));
    }
    std::vector<torch::Tensor> row{x[0]};
    for (int target : targets) {
      if (target < 1 || target > n) throw ConfigError("target group " + std::to_string(target) + " is out of range");
      const int target_m = model_group(target, n, loaded.direction);
      if (target_m < source_m) {
        std::ostringstream os;
        os << "target group " << target << " does not follow source group " << source << " in "
           << to_string(loaded.direction) << " mode; valid targets:";
        for (int m = source_m; m <= n; ++m) os << " " << natural_group(m, n, loaded.direction);
        throw std::invalid_argument(os.str());
      }
      auto y = model.transform(x, source_m, target_m)[0];
      const auto file = fs::path(a.out_dir) / (fs::path(input).stem().string() + "_g" + std::to_string(target) + ".png");
      write_png(file, y);
      out << "wrote " << file.string() << "\n";
      row.push_back(y);
      if (rows.empty()) labels.push_back(partition.label(target));
    }
    rows.push_back(std::move(row));
  }
  if (a.montage) write_montage(fs::path(a.out_dir) / "montage.png", rows, labels);
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

nlohmann::json run_manifest(const std::string& command, const std::vector<std::string>& args, const Config& config,
                            std::uint64_t seed) {
  return {{"command", command},
          {"argv", args},
          {"config", config.values()},
          {"config_hash", config.hash()},
          {"seed", seed},
          {"code_version", code_version()},
          {"started_at", utc_now("%Y-%m-%dT%H:%M:%SZ")}};
}

void write_run_manifest(const fs::path& path, const nlohmann::json& manifest) {
  if (fs::exists(path)) throw ConfigError("run manifest already exists: " + path.string());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << manifest.dump(2) << "\n";
}

fs::path default_run_dir() {
  const char* root = std::getenv("PFA_RUN_DIR");
  return fs::path(root && *root ? root : "run") / utc_now("%Y%m%d-%H%M%S");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive face aging: pretraining, training, inference and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());

  Common synth_common, pretrain_common, identity_common, train_common, infer_common, eval_common;

  auto* synth = app.add_subcommand("make-synthetic", "write a synthetic aging dataset");
  std::string synth_out;
  SyntheticOptions synth_options;
  synth_common.attach(synth);
  synth->add_option("--out", synth_out, "dataset root")->required();
  synth->add_option("--identities", synth_options.identities, "number of identities");
  synth->add_option("--per-identity", synth_options.images_per_identity, "images per identity");
  synth->add_option("--size", synth_options.size, "image side in pixels");
  synth->add_option("--seed", synth_options.seed, "generator seed");
  synth->add_option("--noise", synth_options.noise, "pixel noise std (0..255 scale)");

  auto* pretrain = app.add_subcommand("pretrain-age", "pre-train the age estimator");
  pretrain_common.attach(pretrain);
  auto& po = pretrain_common.overrides;
  po.bind(pretrain, "--data", "data.root", "dataset root");
  po.bind(pretrain, "--size", "data.size", "image size");
  po.bind(pretrain, "--epochs", "pretrain.epochs", "epochs");
  po.bind(pretrain, "--batch-size", "pretrain.batch_size", "mini-batch size");
  po.bind(pretrain, "--lr", "pretrain.lr", "learning rate");
  po.bind(pretrain, "--seed", "pretrain.seed", "initialization and shuffling seed");
  po.bind(pretrain, "--output", "pretrain.output", "checkpoint path");

  auto* identity = app.add_subcommand("pretrain-identity", "train the identity embedder's feature stack");
  identity_common.attach(identity);
  auto& io = identity_common.overrides;
  io.bind(identity, "--data", "data.root", "dataset root");
  io.bind(identity, "--size", "data.size", "image size");
  io.bind(identity, "--epochs", "embedder.epochs", "epochs");
  io.bind(identity, "--seed", "embedder.seed", "initialization and shuffling seed");
  io.bind(identity, "--output", "embedder.output", "checkpoint path");

  auto* train_cmd = app.add_subcommand("train", "train the aging generator");
  std::string run_dir;
  train_common.attach(train_cmd);
  train_cmd->add_option("--run-dir", run_dir, "run directory (default $PFA_RUN_DIR/<timestamp>)");
  auto& to = train_common.overrides;
  to.bind(train_cmd, "--data", "data.root", "dataset root");
  to.bind(train_cmd, "--size", "data.size", "image size");
  to.bind(train_cmd, "--iterations", "train.max_iterations", "iterations");
  to.bind(train_cmd, "--batch-size", "train.batch_size", "mini-batch size");
  to.bind(train_cmd, "--mode", "train.mode", "pfa_end_to_end|pfa_independent|cgan_single");
  to.bind(train_cmd, "--age-net", "train.age_net", "dex_multitask|classification_only");
  to.bind(train_cmd, "--direction", "train.direction", "aging|rejuvenation");
  to.bind(train_cmd, "--age-checkpoint", "train.age_checkpoint", "pre-trained age estimator");
  to.bind(train_cmd, "--oracle", "eval.oracle_checkpoint", "evaluation age oracle");
  to.bind(train_cmd, "--embedder", "embedder.checkpoint", "identity feature checkpoint for evaluation");
  to.bind(train_cmd, "--seed", "train.seed", "seed");
  to.bind(train_cmd, "--checkpoint-every", "train.checkpoint_every", "checkpoint cadence");

  auto* infer = app.add_subcommand("infer", "age face images with a trained generator");
  InferArgs infer_args;
  infer_common.attach(infer);
  infer->add_option("--checkpoint", infer_args.checkpoint, "generator checkpoint (file or iter_* directory)")->required();
  infer->add_option("--input", infer_args.inputs, "input image(s)")->required();
  auto* source_opt = infer->add_option("--source", infer_args.source, "source age group (1-based, natural order)");
  auto* estimate_opt = infer->add_flag("--estimate-source", infer_args.estimate_source, "estimate the source group");
  source_opt->excludes(estimate_opt);
  infer->add_option("--target", infer_args.targets, "target group(s); default every later group");
  infer->add_option("--out", infer_args.out_dir, "output directory");
  infer->add_flag("!--no-montage", infer_args.montage, "skip the montage image");
  infer_common.overrides.bind(infer, "--oracle", "eval.oracle_checkpoint", "age oracle for --estimate-source");

  auto* eval_cmd = app.add_subcommand("evaluate", "compute the metric suite");
  std::string eval_checkpoint, eval_sequential, eval_out = "eval";
  eval_common.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "generator checkpoint");
  eval_cmd->add_option("--sequential", eval_sequential, "cgan_single checkpoint applied one group at a time");
  eval_cmd->add_option("--out", eval_out, "report directory");
  auto& eo = eval_common.overrides;
  eo.bind(eval_cmd, "--data", "data.root", "dataset root");
  eo.bind(eval_cmd, "--size", "data.size", "image size");
  eo.bind(eval_cmd, "--oracle", "eval.oracle_checkpoint", "evaluation age oracle");
  eo.bind(eval_cmd, "--embedder", "embedder.checkpoint", "identity feature checkpoint");
  eo.bind(eval_cmd, "--max-faces", "eval.max_faces", "cap on source faces (0: all)");

  auto apply_threads = [](const Common& c) {
    if (c.threads > 0) torch::set_num_threads(c.threads);
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(reversed);
    if (synth->parsed()) {
      apply_threads(synth_common);
      return cmd_make_synthetic(synth_common, synth_out, synth_options, args, out);
    }
    if (pretrain->parsed()) {
      apply_threads(pretrain_common);
      return cmd_pretrain(pretrain_common, args, out);
    }
    if (identity->parsed()) {
      apply_threads(identity_common);
      return cmd_pretrain_identity(identity_common, args, out);
    }
    if (train_cmd->parsed()) {
      apply_threads(train_common);
      return cmd_train(train_common, run_dir, args, out);
    }
    if (infer->parsed()) {
      if (!infer_args.estimate_source && source_opt->count() == 0) {
        throw ConfigError("give --source or --estimate-source");
      }
      apply_threads(infer_common);
      return cmd_infer(infer_common, infer_args, args, out);
    }
    if (eval_cmd->parsed()) {
      apply_threads(eval_common);
      return cmd_evaluate(eval_common, eval_checkpoint, eval_sequential, eval_out, args, out);
    }
    return 2;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << code_version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[config]: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error[config]: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error[config]: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error[data]: " << one_line(e.what()) << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "error[numerical]: " << one_line(e.what()) << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error[internal]: " << one_line(e.what()) << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  return run_cli(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace pfa
