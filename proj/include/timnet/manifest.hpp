#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "timnet/dsp.hpp"
#include "timnet/eval.hpp"
#include "timnet/model.hpp"
#include "timnet/train.hpp"

namespace timnet::cli {

struct ManifestRow {
  std::filesystem::path path;  // resolved against the manifest's directory
  std::string label;
  std::string speaker;  // optional
};

/// CSV with header `path,label,speaker` (speaker column optional).
struct Manifest {
  std::vector<ManifestRow> rows;

  /// Sorted unique labels; the stable class ordering for a run.
  std::vector<std::string> label_vocabulary() const;
};

/// Parse and validate. With check_paths, every referenced file must exist.
/// Errors carry the offending line number.
Manifest load_manifest(const std::filesystem::path& path, bool check_paths = true);

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Flat key=value run configuration covering feature extraction, model,
/// training, and protocol selection. Unknown keys are rejected; every key has
/// a default (see default_run_config_text()).
struct RunConfig {
  dsp::FeatureConfig feature;
  model::ModelConfig net;     // n_classes filled from the manifest at run time
  train::TrainConfig opt;
  eval::Protocol protocol = eval::Protocol::LastEpoch;
  std::uint32_t folds = 10;
  bool by_speaker = false;
  std::string out_dir;  // may be overridden by --out
};

RunConfig parse_run_config(const std::filesystem::path& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

/// Canonical serialization; parse(serialize(cfg)) == cfg.
std::string serialize_run_config(const RunConfig& cfg);

/// The full key set at default values, one `key=value` per line.
std::string default_run_config_text();

}  // namespace timnet::cli
