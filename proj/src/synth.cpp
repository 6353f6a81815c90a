#include "timnet/synth.hpp"

#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <string>
#include <vector>

#include "timnet/audio_io.hpp"
#include "timnet/errors.hpp"
#include "timnet/manifest.hpp"
#include "timnet/rng.hpp"

namespace timnet::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// linear chirp from f0 to f1 over the clip
void render_sweep(std::vector<double>& out, std::uint32_t sr, double f0, double f1, double phase) {
  const double dur = static_cast<double>(out.size()) / sr;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = static_cast<double>(i) / sr;
    const double arg = kTwoPi * (f0 * t + 0.5 * (f1 - f0) * t * t / dur) + phase;
    out[i] = 0.5 * std::sin(arg);
  }
}

void render_am_tone(std::vector<double>& out, std::uint32_t sr, double carrier, double am_rate,
                    double phase) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = static_cast<double>(i) / sr;
    const double env = 0.55 + 0.45 * std::sin(kTwoPi * am_rate * t);
    out[i] = 0.5 * env * std::sin(kTwoPi * carrier * t + phase);
  }
}

}  // namespace

std::filesystem::path generate_corpus(const std::filesystem::path& out_dir,
                                      const SynthOptions& opts) {
  if (opts.n_per_class < 1) throw ValidationError("synth: n_per_class must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw RuntimeFailure("cannot create directory " + out_dir.string());

  const char* class_names[3] = {"falling", "rising", "steady_am"};
  const std::size_t n_samples = static_cast<std::size_t>(opts.duration_s * opts.sample_rate);

  RngStream master(opts.seed);
  cli::Manifest manifest;
  std::vector<double> samples(n_samples);
  for (std::size_t cls = 0; cls < 3; ++cls) {
    for (std::size_t i = 0; i < opts.n_per_class; ++i) {
      RngStream rng = master.split(cls * 100000 + i);
      const double jitter = 1.0 + 0.05 * (rng.next_double() * 2.0 - 1.0);
      const double phase = rng.next_double() * kTwoPi;
      switch (cls) {
        case 0: render_sweep(samples, opts.sample_rate, 2800.0 * jitter, 300.0 * jitter, phase); break;
        case 1: render_sweep(samples, opts.sample_rate, 300.0 * jitter, 2800.0 * jitter, phase); break;
        default: render_am_tone(samples, opts.sample_rate, 1000.0 * jitter, 4.0, phase); break;
      }
      for (double& s : samples) s += 0.01 * (rng.next_double() * 2.0 - 1.0);

      dsp::AudioClip clip{samples, opts.sample_rate};
      const std::string name = fmt::format("{}_{:03}.wav", class_names[cls], i);
      io::write_wav(out_dir / name, clip);

      cli::ManifestRow row;
      row.path = out_dir / name;
      row.label = class_names[cls];
      row.speaker = "spk" + std::to_string(i % 4);
      manifest.rows.push_back(std::move(row));
    }
  }

  const auto manifest_path = out_dir / "manifest.csv";
  cli::save_manifest(manifest, manifest_path);
  return manifest_path;
}

}  // namespace timnet::synth
