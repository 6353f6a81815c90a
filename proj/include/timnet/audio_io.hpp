#pragma once

#include <filesystem>
#include <string>

#include "timnet/dsp.hpp"

namespace timnet::io {

/// Read a mono 16-bit PCM WAV file. Anything else (stereo, float, compressed)
/// is rejected with a descriptive error.
dsp::AudioClip read_wav(const std::filesystem::path& path);

/// Write a clip as mono 16-bit PCM WAV; samples are clamped to [-1, 1].
void write_wav(const std::filesystem::path& path, const dsp::AudioClip& clip);

/// Read a headerless little-endian float32 file; the sample rate is taken on
/// faith from the caller since the format carries none.
dsp::AudioClip read_raw_f32(const std::filesystem::path& path, std::uint32_t sample_rate);

/// Feature cache, one file per utterance:
/// magic "TIMF", version u32, T u32, C u32, then T*C little-endian float32
/// row-major.
inline constexpr std::uint32_t kFeatureCacheVersion = 1;

void write_feature_cache(const std::filesystem::path& path, const dsp::FeatureMatrix& f);
dsp::FeatureMatrix read_feature_cache(const std::filesystem::path& path);

/// FNV-1a 64-bit over a file's bytes; used for extract idempotence checks.
std::uint64_t content_hash(const std::filesystem::path& path);
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace timnet::io
