#include "timnet/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "timnet/audio_io.hpp"
#include "timnet/eval.hpp"
#include "timnet/gradcheck.hpp"
#include "timnet/synth.hpp"

namespace timnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string feature_fingerprint(const dsp::FeatureConfig& f) {
  return fmt::format("sr={} frame={} hop={} fft={} mels={} mfcc={} floor={}", f.sample_rate,
                     f.frame_ms, f.hop_ms, f.fft_size, f.n_mels, f.n_mfcc, f.log_floor);
}

dsp::AudioClip read_audio(const fs::path& path, const dsp::FeatureConfig& cfg) {
  const std::string ext = path.extension().string();
  if (ext == ".wav") {
    dsp::AudioClip clip = io::read_wav(path);
    if (clip.sample_rate != cfg.sample_rate)
      throw RuntimeFailure(path.string() + ": sample rate " + std::to_string(clip.sample_rate) +
                           " does not match configured " + std::to_string(cfg.sample_rate) +
                           " (resampling is unsupported)");
    return clip;
  }
  if (ext == ".f32" || ext == ".raw") return io::read_raw_f32(path, cfg.sample_rate);
  throw RuntimeFailure(path.string() + ": unsupported audio format '" + ext +
                       "' (expected .wav, .f32, or .raw)");
}

}  // namespace

ExtractStats run_extract(const Manifest& manifest, const RunConfig& cfg, const fs::path& out_dir,
                         std::size_t jobs) {
  cfg.feature.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw RuntimeFailure("cannot create output directory " + out_dir.string());

  const std::string fingerprint = feature_fingerprint(cfg.feature);
  const fs::path state_path = out_dir / ".extract_state.json";
  json old_state;
  if (fs::exists(state_path)) {
    std::ifstream is(state_path);
    try {
      old_state = json::parse(is);
    } catch (const json::exception&) {
      old_state = json::object();  // stale cache metadata; re-extract
    }
  }
  const bool config_matches = old_state.value("config", "") == fingerprint;

  const std::size_t n = manifest.rows.size();
  enum class Outcome { Written, Skipped, Failed };
  struct Result {
    Outcome outcome = Outcome::Failed;
    std::string error;
    std::string cache_name;
    std::uint64_t hash = 0;
  };
  std::vector<Result> results(n);

  std::size_t workers = jobs != 0 ? jobs : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min({workers, n, std::size_t{8}});

  std::atomic<std::size_t> cursor{0};
  auto work = [&]() {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= n) break;
      const ManifestRow& row = manifest.rows[i];
      Result& res = results[i];
      res.cache_name = fmt::format("{:05}_{}.timf", i, row.path.stem().string());
      try {
        res.hash = io::content_hash(row.path);
        bool fresh = false;
        if (config_matches && old_state.contains("files")) {
          const auto& files = old_state["files"];
          if (files.contains(res.cache_name)) {
            const auto& entry = files[res.cache_name];
            fresh = entry.value("hash", "") == fmt::format("{:016x}", res.hash) &&
                    fs::exists(out_dir / res.cache_name);
          }
        }
        if (fresh) {
          res.outcome = Outcome::Skipped;
        } else {
          const dsp::AudioClip clip = read_audio(row.path, cfg.feature);
          dsp::FeatureMatrix f = dsp::mfcc(clip, cfg.feature);
          f.source_id = row.path.stem().string();
          io::write_feature_cache(out_dir / res.cache_name, f);
          res.outcome = Outcome::Written;
        }
      } catch (const std::exception& e) {
        res.outcome = Outcome::Failed;
        res.error = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  ExtractStats stats;
  Manifest features;
  json new_state;
  new_state["config"] = fingerprint;
  new_state["files"] = json::object();
  for (std::size_t i = 0; i < n; ++i) {
    const Result& res = results[i];
    switch (res.outcome) {
      case Outcome::Written: ++stats.written; break;
      case Outcome::Skipped: ++stats.skipped; break;
      case Outcome::Failed:
        ++stats.failed;
        stats.errors.push_back(manifest.rows[i].path.string() + ": " + res.error);
        continue;
    }
    ManifestRow row;
    row.path = out_dir / res.cache_name;
    row.label = manifest.rows[i].label;
    row.speaker = manifest.rows[i].speaker;
    features.rows.push_back(std::move(row));
    new_state["files"][res.cache_name] = {
        {"source", manifest.rows[i].path.string()},
        {"hash", fmt::format("{:016x}", res.hash)},
    };
  }
  save_manifest(features, out_dir / "features.csv");
  std::ofstream os(state_path);
  os << new_state.dump(2) << '\n';
  return stats;
}

Dataset load_features(const Manifest& manifest, const std::vector<std::string>* imposed_vocab) {
  Dataset data;
  data.label_names = imposed_vocab ? *imposed_vocab : manifest.label_vocabulary();
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < data.label_names.size(); ++i)
    index[data.label_names[i]] = static_cast<int>(i);

  for (const auto& row : manifest.rows) {
    const auto it = index.find(row.label);
    if (it == index.end())
      throw ValidationError("label '" + row.label +
                            "' is not in the training vocabulary (label-vocabulary mismatch)");
    data.features.push_back(io::read_feature_cache(row.path));
    data.labels.push_back(it->second);
    data.ids.push_back(row.path.stem().string());
    data.speakers.push_back(row.speaker);
  }
  return data;
}

std::size_t resolve_input_t(const Dataset& data, std::uint32_t requested) {
  if (requested != 0) return requested;
  if (data.size() == 0) throw ValidationError("cannot derive input_t from an empty dataset");
  std::vector<std::size_t> lengths;
  lengths.reserve(data.size());
  for (const auto& f : data.features) lengths.push_back(f.rows);
  std::sort(lengths.begin(), lengths.end());
  // nearest-rank 95th percentile
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(lengths.size())));
  return lengths[std::max<std::size_t>(rank, 1) - 1];
}

void pad_dataset(Dataset& data, std::size_t input_T) {
  for (auto& f : data.features)
    if (f.rows != input_T) f = dsp::pad_or_truncate(f, input_T);
}

// --- commands ----------------------------------------------------------------

namespace {

struct CommonArgs {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string variant;
  std::string protocol;
  std::uint32_t folds = 0;
  bool by_speaker = false;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? parse_run_config_text("", "<defaults>")
                                           : parse_run_config(args.config_path);
  if (args.seed_set) cfg.opt.seed = args.seed;
  if (!args.variant.empty()) cfg.net.variant = model::variant_from_string(args.variant);
  if (!args.protocol.empty()) cfg.protocol = eval::protocol_from_string(args.protocol);
  if (args.folds != 0) cfg.folds = args.folds;
  if (args.by_speaker) cfg.by_speaker = true;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

fs::path require_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ValidationError("an output directory is required (--out)");
  fs::path out(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw RuntimeFailure("cannot create output directory " + out.string());
  return out;
}

/// Shared train/cv preamble: dataset, vocabulary, padding, model config.
struct PreparedRun {
  Dataset data;
  std::vector<std::string> vocab;
  model::ModelConfig mcfg;
};

PreparedRun prepare_dataset(const RunConfig& cfg, const std::string& manifest_path) {
  if (manifest_path.empty()) throw ValidationError("a feature manifest is required (--manifest)");
  PreparedRun prep;
  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.rows.empty()) throw ValidationError("manifest " + manifest_path + " has no rows");
  prep.data = load_features(manifest);
  prep.vocab = prep.data.label_names;
  const std::size_t input_T = resolve_input_t(prep.data, cfg.net.input_T);
  pad_dataset(prep.data, input_T);
  prep.mcfg = cfg.net;
  prep.mcfg.input_T = static_cast<std::uint32_t>(input_T);
  prep.mcfg.n_classes = static_cast<std::uint32_t>(prep.vocab.size());
  prep.mcfg.in_channels = static_cast<std::uint32_t>(prep.data.features[0].cols);
  prep.mcfg.validate();
  return prep;
}

int cmd_extract(const CommonArgs& args, std::size_t jobs) {
  const RunConfig cfg = load_config(args);
  if (args.manifest_path.empty()) throw ValidationError("an audio manifest is required (--manifest)");
  const fs::path out = require_out_dir(cfg);
  const Manifest manifest = load_manifest(args.manifest_path);
  const ExtractStats stats = run_extract(manifest, cfg, out, jobs);
  for (const auto& err : stats.errors) std::cerr << "error: " << err << '\n';
  std::cout << "extracted " << stats.written << ", skipped " << stats.skipped << ", failed "
            << stats.failed << "; feature manifest: " << (out / "features.csv").string() << '\n';
  return stats.failed > 0 ? 2 : 0;
}

int cmd_synth(const CommonArgs& args, std::size_t n_per_class) {
  const RunConfig cfg = load_config(args);
  const fs::path out = require_out_dir(cfg);
  synth::SynthOptions opts;
  opts.n_per_class = n_per_class;
  opts.seed = args.seed_set ? args.seed : cfg.opt.seed;
  opts.sample_rate = cfg.feature.sample_rate;
  const auto manifest_path = synth::generate_corpus(out, opts);
  std::cout << "wrote " << 3 * n_per_class << " clips; manifest: " << manifest_path.string()
            << '\n';
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& eval_manifest_path) {
  const RunConfig cfg = load_config(args);
  const fs::path out = require_out_dir(cfg);
  PreparedRun prep = prepare_dataset(cfg, args.manifest_path);

  Dataset eval_set;
  const bool has_eval = !eval_manifest_path.empty();
  if (has_eval) {
    eval_set = load_features(load_manifest(eval_manifest_path), &prep.vocab);
    pad_dataset(eval_set, prep.mcfg.input_T);
  }

  train::TrainResult result =
      train::train(prep.data, prep.mcfg, cfg.opt, has_eval ? &eval_set : nullptr);

  model::checkpoint_save(result.params_final, prep.mcfg, prep.vocab, out / "checkpoint.timc");
  if (has_eval)
    model::checkpoint_save(result.params_best, prep.mcfg, prep.vocab,
                           out / "checkpoint_best.timc");
  result.history.write_csv(out / "history.csv");

  const auto& last = result.history.records.back();
  std::cout << fmt::format("trained {} epochs; final train loss {:.6f}, train WAR {:.4f}",
                           last.epoch, last.train_loss, last.train_war);
  if (has_eval)
    std::cout << fmt::format("; best eval WAR at epoch {} ({:.4f})", result.best_epoch,
                             result.history.records[result.best_epoch - 1].eval_war);
  std::cout << '\n';
  return 0;
}

int cmd_cv(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const fs::path out = require_out_dir(cfg);
  PreparedRun prep = prepare_dataset(cfg, args.manifest_path);

  eval::FoldPlan plan = cfg.by_speaker
                            ? eval::kfold_split_by_speaker(prep.data.speakers, cfg.folds,
                                                           cfg.opt.seed)
                            : eval::kfold_split(prep.data.size(), cfg.folds, cfg.opt.seed);
  plan.protocol = cfg.protocol;

  const eval::EvalReport report = eval::run_cv(prep.data, prep.mcfg, cfg.opt, plan);
  report.write_csv(out / "cv_report.csv");

  for (const auto& warning : report.warnings) std::cerr << "warning: " << warning << '\n';
  for (std::size_t f = 0; f < report.folds.size(); ++f)
    std::cout << fmt::format("fold {}: UAR {:.4f}, WAR {:.4f} ({} items)\n", f + 1,
                             report.folds[f].uar, report.folds[f].war, report.folds[f].n_items);
  std::cout << fmt::format("aggregate ({} protocol): UAR {:.4f}, WAR {:.4f}\n",
                           eval::to_string(report.protocol), report.mean_uar, report.mean_war);
  return 0;
}

int cmd_crosseval(const CommonArgs& args, const std::string& checkpoint_path,
                  const std::string& embeddings_path) {
  if (checkpoint_path.empty()) throw ValidationError("a checkpoint is required (--checkpoint)");
  if (args.manifest_path.empty())
    throw ValidationError("a target feature manifest is required (--manifest)");
  model::Checkpoint ckpt = model::checkpoint_load(checkpoint_path);
  const Manifest manifest = load_manifest(args.manifest_path);
  Dataset target = load_features(manifest);

  const eval::CrossEvalResult res = eval::cross_eval(ckpt, target);
  std::cout << "shared classes (" << res.shared_labels.size() << "):";
  for (const auto& s : res.shared_labels) std::cout << ' ' << s;
  std::cout << fmt::format("\nevaluated {} utterances: UAR {:.4f}, WAR {:.4f}\n", res.n_evaluated,
                           res.report.mean_uar, res.report.mean_war);
  if (!args.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    res.report.write_csv(fs::path(args.out_dir) / "crosseval_report.csv");
  }
  if (!embeddings_path.empty()) {
    eval::export_embeddings(ckpt, target, embeddings_path);
    std::cout << "embeddings written to " << embeddings_path << '\n';
  }
  return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& checkpoint_path) {
  if (checkpoint_path.empty()) throw ValidationError("a checkpoint is required (--checkpoint)");
  if (args.manifest_path.empty())
    throw ValidationError("a feature manifest is required (--manifest)");
  model::Checkpoint ckpt = model::checkpoint_load(checkpoint_path);
  const Manifest manifest = load_manifest(args.manifest_path);
  Dataset data = load_features(manifest);
  pad_dataset(data, ckpt.cfg.input_T);

  std::cout << "id,predicted";
  for (const auto& label : ckpt.labels) std::cout << ",p_" << label;
  std::cout << '\n';

  RngStream unused(0);
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < data.size(); start += kBatch) {
    const std::size_t stop = std::min(data.size(), start + kBatch);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    diff::DiffValue x = diff::constant(batch_tensor(data, idx));
    auto trace = model::forward(x, ckpt.params, ckpt.cfg, diff::Mode::Infer, unused);
    const Tensor& probs = trace.probs.value();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < ckpt.labels.size(); ++j)
        if (probs.at(b, j) > probs.at(b, best)) best = j;
      std::cout << data.ids[idx[b]] << ',' << ckpt.labels[best];
      for (std::size_t j = 0; j < ckpt.labels.size(); ++j)
        std::cout << ',' << fmt::format("{:.6g}", probs.at(b, j));
      std::cout << '\n';
    }
  }
  return 0;
}

struct GradcheckArgs {
  std::uint32_t batch = 2;
  std::uint32_t frames = 16;
  std::uint32_t channels = 4;
  std::uint32_t n_tabs = 3;
  std::uint32_t classes = 3;
  double eps = 1e-5;
  std::uint64_t seed = 7;
};

int cmd_gradcheck(const GradcheckArgs& ga) {
  if (ga.frames > 32 || ga.channels > 8 || ga.n_tabs > 4)
    throw ValidationError("gradcheck caps exceeded: requires T <= 32, channels <= 8, n_tabs <= 4");
  if (ga.batch < 1 || ga.classes < 2)
    throw ValidationError("gradcheck: batch >= 1 and classes >= 2 required");

  model::ModelConfig mcfg;
  mcfg.n_tabs = ga.n_tabs;
  mcfg.kernel_size = 2;
  mcfg.channels = ga.channels;
  mcfg.in_channels = ga.channels;
  mcfg.dropout = 0.1;
  mcfg.n_classes = ga.classes;
  mcfg.input_T = ga.frames;

  RngStream master(ga.seed);
  RngStream init_rng = master.split(1);
  model::TimNetParams params = model::init_timnet(mcfg, init_rng);
  auto trainable = params.trainable(mcfg.variant);

  RngStream data_rng = master.split(2);
  Tensor x({ga.batch, ga.frames, ga.channels});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = data_rng.next_uniform(-1.0, 1.0);
  std::vector<int> labels(ga.batch);
  for (std::size_t b = 0; b < ga.batch; ++b)
    labels[b] = static_cast<int>(data_rng.next_u64() % ga.classes);

  const std::uint64_t dropout_seed = master.split(3).seed();
  auto build_loss = [&]() {
    RngStream dropout_rng(dropout_seed);  // frozen: identical masks every call
    auto trace = model::forward(diff::constant(x), params, mcfg, diff::Mode::Train, dropout_rng,
                                /*update_running=*/false);
    return train::smoothed_cross_entropy(trace.probs, labels, 0.1);
  };

  const auto t0 = std::chrono::steady_clock::now();
  const diff::FiniteDiffReport report = diff::finite_diff_check(build_loss, trainable, ga.eps);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  for (const auto& [name, err] : report.per_param)
    std::cout << fmt::format("{:<28} max rel err {:.3e}\n", name, err);
  std::cout << fmt::format(
      "checked {} coordinates in {:.1f}s: max rel err {:.3e} (worst: {}[{}]), mean {:.3e}\n",
      report.n_coords, secs, report.max_rel_err, report.worst_param, report.worst_coord,
      report.mean_rel_err);
  const bool pass = report.max_rel_err < 1e-4;
  std::cout << (pass ? "PASS" : "FAIL") << " (threshold 1e-4)\n";
  return pass ? 0 : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"TIM-Net: temporal-aware bi-directional multi-scale network for "
               "speech emotion recognition"};
  app.require_subcommand(1);

  CommonArgs common;
  std::size_t jobs = 0;
  std::size_t n_per_class = 20;
  std::string eval_manifest;
  std::string checkpoint_path;
  std::string embeddings_path;
  GradcheckArgs ga;

  auto add_common = [&common](CLI::App* cmd, bool with_manifest = true) {
    cmd->add_option("--config", common.config_path, "run configuration file (key=value)");
    if (with_manifest) cmd->add_option("--manifest", common.manifest_path, "input manifest CSV");
    cmd->add_option("--out", common.out_dir, "output directory");
    auto* seed_opt = cmd->add_option("--seed", common.seed, "master random seed");
    seed_opt->each([&common](const std::string&) { common.seed_set = true; });
  };

  auto* extract = app.add_subcommand("extract", "extract MFCC feature caches from audio");
  add_common(extract);
  extract->add_option("--jobs", jobs, "parallel extraction workers (0 = auto)");

  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic 3-class corpus");
  add_common(synth_cmd, false);
  synth_cmd->add_option("--n-per-class", n_per_class, "clips per class");

  auto* train_cmd = app.add_subcommand("train", "train a model on a feature manifest");
  add_common(train_cmd);
  train_cmd->add_option("--variant", common.variant, "full|tcn|no-bd|no-ms|no-df");
  train_cmd->add_option("--eval-manifest", eval_manifest,
                        "held-out feature manifest for per-epoch evaluation");

  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation");
  add_common(cv_cmd);
  cv_cmd->add_option("--variant", common.variant, "full|tcn|no-bd|no-ms|no-df");
  cv_cmd->add_option("--protocol", common.protocol, "last|best");
  cv_cmd->add_option("--folds", common.folds, "fold count");
  cv_cmd->add_flag("--by-speaker", common.by_speaker, "group folds by speaker");

  auto* cross_cmd = app.add_subcommand("crosseval", "evaluate a checkpoint on another corpus");
  add_common(cross_cmd);
  cross_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint (.timc)");
  cross_cmd->add_option("--embeddings", embeddings_path, "write fused embeddings CSV here");

  auto* infer_cmd = app.add_subcommand("infer", "print per-utterance predictions");
  add_common(infer_cmd);
  infer_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint (.timc)");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  grad_cmd->add_option("--batch", ga.batch, "batch size");
  grad_cmd->add_option("--frames", ga.frames, "sequence length T (cap 32)");
  grad_cmd->add_option("--channels", ga.channels, "channel count (cap 8)");
  grad_cmd->add_option("--n-tabs", ga.n_tabs, "block count (cap 4)");
  grad_cmd->add_option("--classes", ga.classes, "class count");
  grad_cmd->add_option("--eps", ga.eps, "central-difference step");
  grad_cmd->add_option("--seed", ga.seed, "seed");

  std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 wants reversed
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  try {
    if (extract->parsed()) return cmd_extract(common, jobs);
    if (synth_cmd->parsed()) return cmd_synth(common, n_per_class);
    if (train_cmd->parsed()) return cmd_train(common, eval_manifest);
    if (cv_cmd->parsed()) return cmd_cv(common);
    if (cross_cmd->parsed()) return cmd_crosseval(common, checkpoint_path, embeddings_path);
    if (infer_cmd->parsed()) return cmd_infer(common, checkpoint_path);
    if (grad_cmd->parsed()) return cmd_gradcheck(ga);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace timnet::cli
