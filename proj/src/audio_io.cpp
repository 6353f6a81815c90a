#include "timnet/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "timnet/binio.hpp"

namespace timnet::io {

namespace {

[[noreturn]] void bad_wav(const std::filesystem::path& path, const std::string& why) {
  throw RuntimeFailure("malformed wav file " + path.string() + ": " + why);
}

}  // namespace

dsp::AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open audio file " + path.string());

  char riff[4], wave[4];
  std::uint32_t riff_size = 0;
  if (!is.read(riff, 4) || !read_u32_le(is, riff_size) || !is.read(wave, 4))
    bad_wav(path, "truncated RIFF header");
  if (std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    bad_wav(path, "not a RIFF/WAVE file");

  std::uint16_t audio_format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  bool got_fmt = false;
  std::vector<char> data_bytes;
  bool got_data = false;

  while (is) {
    char id[4];
    std::uint32_t size = 0;
    if (!is.read(id, 4) || !read_u32_le(is, size)) break;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      std::uint16_t block_align;
      std::uint32_t byte_rate;
      if (size < 16) bad_wav(path, "fmt chunk too small");
      if (!read_u16_le(is, audio_format) || !read_u16_le(is, channels) ||
          !read_u32_le(is, sample_rate) || !read_u32_le(is, byte_rate) ||
          !read_u16_le(is, block_align) || !read_u16_le(is, bits))
        bad_wav(path, "truncated fmt chunk");
      is.seekg(size - 16, std::ios::cur);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_bytes.resize(size);
      if (!is.read(data_bytes.data(), size)) bad_wav(path, "truncated data chunk");
      got_data = true;
    } else {
      // skip unknown chunk (LIST, fact, ...); chunks are word-aligned
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }

  if (!got_fmt) bad_wav(path, "missing fmt chunk");
  if (!got_data) bad_wav(path, "missing data chunk");
  if (audio_format != 1) bad_wav(path, "only uncompressed PCM is supported");
  if (channels != 1) bad_wav(path, "only mono audio is supported");
  if (bits != 16) bad_wav(path, "only 16-bit samples are supported");
  if (data_bytes.size() % 2 != 0) bad_wav(path, "odd data chunk size");

  dsp::AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(data_bytes.size() / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const std::int16_t s = static_cast<std::int16_t>(
        static_cast<std::uint16_t>(static_cast<unsigned char>(data_bytes[2 * i])) |
        (static_cast<std::uint16_t>(static_cast<unsigned char>(data_bytes[2 * i + 1])) << 8));
    clip.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const dsp::AudioClip& clip) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * 2);
  os.write("RIFF", 4);
  write_u32_le(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32_le(os, 16);
  write_u16_le(os, 1);  // PCM
  write_u16_le(os, 1);  // mono
  write_u32_le(os, clip.sample_rate);
  write_u32_le(os, clip.sample_rate * 2);
  write_u16_le(os, 2);
  write_u16_le(os, 16);
  os.write("data", 4);
  write_u32_le(os, data_size);
  for (double x : clip.samples) {
    const double clamped = std::clamp(x, -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    write_u16_le(os, static_cast<std::uint16_t>(s));
  }
  if (!os) throw RuntimeFailure("short write to " + path.string());
}

dsp::AudioClip read_raw_f32(const std::filesystem::path& path, std::uint32_t sample_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open audio file " + path.string());
  is.seekg(0, std::ios::end);
  const std::streamoff bytes = is.tellg();
  is.seekg(0, std::ios::beg);
  if (bytes % 4 != 0)
    throw RuntimeFailure("raw float32 file " + path.string() + " has size not divisible by 4");
  dsp::AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(static_cast<std::size_t>(bytes / 4));
  for (auto& s : clip.samples) {
    std::uint32_t u = 0;
    if (!read_u32_le(is, u)) throw RuntimeFailure("short read from " + path.string());
    s = static_cast<double>(std::bit_cast<float>(u));
  }
  return clip;
}

void write_feature_cache(const std::filesystem::path& path, const dsp::FeatureMatrix& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os.write("TIMF", 4);
  write_u32_le(os, kFeatureCacheVersion);
  write_u32_le(os, static_cast<std::uint32_t>(f.rows));
  write_u32_le(os, static_cast<std::uint32_t>(f.cols));
  for (double v : f.data) write_u32_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw RuntimeFailure("short write to " + path.string());
}

dsp::FeatureMatrix read_feature_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open feature cache " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TIMF", 4) != 0)
    throw RuntimeFailure("bad magic in feature cache " + path.string());
  std::uint32_t version = 0, rows = 0, cols = 0;
  if (!read_u32_le(is, version) || !read_u32_le(is, rows) || !read_u32_le(is, cols))
    throw RuntimeFailure("truncated feature cache header in " + path.string());
  if (version != kFeatureCacheVersion)
    throw RuntimeFailure("feature cache " + path.string() + " has version " +
                         std::to_string(version) + ", expected " +
                         std::to_string(kFeatureCacheVersion));
  dsp::FeatureMatrix f(rows, cols);
  for (auto& v : f.data) {
    std::uint32_t u = 0;
    if (!read_u32_le(is, u)) throw RuntimeFailure("truncated feature cache " + path.string());
    v = static_cast<double>(std::bit_cast<float>(u));
  }
  f.source_id = path.stem().string();
  return f;
}

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t content_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open " + path.string() + " for hashing");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    if (!is) break;
  }
  return h;
}

}  // namespace timnet::io
