#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "timnet/errors.hpp"

namespace timnet::dsp {

struct AudioClip {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  std::uint32_t sample_rate = 0;
};

struct FeatureConfig {
  std::uint32_t sample_rate = 22050;
  double frame_ms = 50.0;
  double hop_ms = 12.5;
  std::uint32_t fft_size = 2048;
  std::uint32_t n_mels = 128;
  std::uint32_t n_mfcc = 39;
  double log_floor = 1e-10;

  std::size_t frame_len() const {
    return static_cast<std::size_t>(frame_ms * sample_rate / 1000.0);
  }
  std::size_t hop_len() const {
    return static_cast<std::size_t>(hop_ms * sample_rate / 1000.0);
  }

  /// Throws ValidationError on any violated invariant.
  void validate() const;
};

/// Row-major real matrix used for frames, spectrograms, and filterbanks.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// T x n_mfcc feature block for one utterance.
struct FeatureMatrix {
  std::size_t rows = 0;  // frames
  std::size_t cols = 0;  // coefficients
  std::vector<double> data;
  std::string source_id;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// In-place radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a);

/// Slice the clip into Hamming-windowed frames.
/// T = 1 + floor((N - frame_len) / hop); frame t covers [t*hop, t*hop + frame_len).
Matrix frame_signal(const AudioClip& clip, const FeatureConfig& cfg);

/// Per-frame power spectrum |DFT_k|^2, bins 0..fft_size/2, frames zero-padded
/// to fft_size.
Matrix power_spectrum(const Matrix& frames, std::uint32_t fft_size);

/// Triangular mel filterbank, n_mels x (fft_size/2 + 1). Centers are spaced
/// uniformly on the Slaney mel scale (linear below 1 kHz, log above) over
/// [0, sr/2]. Rows peak at 1 at their center frequency.
Matrix mel_filterbank(const FeatureConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Center frequencies (Hz) of the filterbank rows, monotonically increasing.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg);

/// Full pipeline: frame -> window -> FFT -> filterbank -> log(max(.,floor))
/// -> orthonormal DCT-II -> first n_mfcc coefficients.
FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg);

/// Zero-pad at the end or truncate at the end to exactly target_T rows.
FeatureMatrix pad_or_truncate(const FeatureMatrix& f, std::size_t target_T);

/// Orthonormal DCT-II of the leading n_out coefficients. Coefficients k >= 1
/// are computed from the mean-removed input, which maps constant vectors to
/// exactly zero.
std::vector<double> dct_ortho(const std::vector<double>& x, std::size_t n_out);

}  // namespace timnet::dsp
