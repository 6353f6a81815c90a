#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "timnet/dataset.hpp"
#include "timnet/manifest.hpp"

namespace timnet::cli {

/// Entry point behind main(). args excludes argv[0].
/// Exit codes: 0 success, 1 validation error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args);

// --- pieces reused by tests --------------------------------------------------

struct ExtractStats {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::vector<std::string> errors;  // one entry per failed file
};

/// Extract feature caches for every manifest row into out_dir, skipping files
/// whose source content hash and feature config are unchanged. Writes
/// features.csv referencing the caches.
ExtractStats run_extract(const Manifest& manifest, const RunConfig& cfg,
                         const std::filesystem::path& out_dir, std::size_t jobs = 0);

/// Load feature caches listed in a manifest. Labels are indexed against
/// `imposed_vocab` when given (unknown labels are an error), otherwise
/// against the manifest's own sorted vocabulary. Features keep their natural
/// lengths.
Dataset load_features(const Manifest& manifest,
                      const std::vector<std::string>* imposed_vocab = nullptr);

/// requested nonzero wins; otherwise the 95th-percentile frame count
/// (nearest-rank) of the dataset.
std::size_t resolve_input_t(const Dataset& data, std::uint32_t requested);

void pad_dataset(Dataset& data, std::size_t input_T);

}  // namespace timnet::cli
