#pragma once

#include <cstdint>
#include <filesystem>

namespace timnet::synth {

/// Desk-scale corpus: three classes of 1-second clips with distinct
/// spectro-temporal signatures plus mild seeded noise.
///   falling   - downward tone sweep
///   rising    - upward tone sweep
///   steady_am - amplitude-modulated steady tone
struct SynthOptions {
  std::size_t n_per_class = 20;
  std::uint64_t seed = 1;
  std::uint32_t sample_rate = 22050;
  double duration_s = 1.0;
};

/// Writes PCM wav files and manifest.csv into out_dir; returns the manifest
/// path. Byte-identical output for identical options.
std::filesystem::path generate_corpus(const std::filesystem::path& out_dir,
                                      const SynthOptions& opts);

}  // namespace timnet::synth
