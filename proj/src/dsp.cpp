#include "timnet/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace timnet::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::vector<double> hamming_window(std::size_t len) {
  std::vector<double> w(len, 1.0);
  if (len < 2) return w;
  for (std::size_t i = 0; i < len; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(len - 1));
  }
  return w;
}

}  // namespace

void FeatureConfig::validate() const {
  if (sample_rate == 0) throw ValidationError("feature config: sample_rate must be positive");
  if (frame_ms <= 0.0 || hop_ms <= 0.0)
    throw ValidationError("feature config: frame_ms and hop_ms must be positive");
  if (frame_len() == 0 || hop_len() == 0)
    throw ValidationError("feature config: frame/hop shorter than one sample");
  if (!is_power_of_two(fft_size))
    throw ValidationError("feature config: fft_size must be a power of two");
  if (fft_size < frame_len())
    throw ValidationError("feature config: fft_size (" + std::to_string(fft_size) +
                          ") smaller than frame length (" + std::to_string(frame_len()) + ")");
  if (n_mels < 2) throw ValidationError("feature config: n_mels must be >= 2");
  if (n_mfcc == 0 || n_mfcc > n_mels)
    throw ValidationError("feature config: require 1 <= n_mfcc <= n_mels");
  if (!(log_floor > 0.0)) throw ValidationError("feature config: log_floor must be positive");
}

void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw ValidationError("fft size must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

Matrix frame_signal(const AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  const std::size_t frame_len = cfg.frame_len();
  const std::size_t hop = cfg.hop_len();
  const std::size_t n = clip.samples.size();
  if (n < frame_len) {
    throw ValidationError("signal of " + std::to_string(n) +
                          " samples is shorter than one frame (" + std::to_string(frame_len) +
                          " samples); refusing to pad raw audio");
  }
  const std::size_t t_count = 1 + (n - frame_len) / hop;
  const std::vector<double> window = hamming_window(frame_len);
  Matrix frames(t_count, frame_len);
  for (std::size_t t = 0; t < t_count; ++t) {
    const std::size_t start = t * hop;
    for (std::size_t i = 0; i < frame_len; ++i) {
      frames.at(t, i) = clip.samples[start + i] * window[i];
    }
  }
  return frames;
}

Matrix power_spectrum(const Matrix& frames, std::uint32_t fft_size) {
  if (!is_power_of_two(fft_size)) throw ValidationError("fft_size must be a power of two");
  if (frames.cols > fft_size)
    throw ValidationError("frame length " + std::to_string(frames.cols) +
                          " exceeds fft_size " + std::to_string(fft_size));
  const std::size_t n_bins = fft_size / 2 + 1;
  Matrix spec(frames.rows, n_bins);
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t t = 0; t < frames.rows; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t i = 0; i < frames.cols; ++i) buf[i] = frames.at(t, i);
    fft_inplace(buf);
    for (std::size_t k = 0; k < n_bins; ++k) spec.at(t, k) = std::norm(buf[k]);
  }
  return spec;
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

namespace {

std::vector<double> mel_breakpoints_hz(const FeatureConfig& cfg) {
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> pts(cfg.n_mels + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(cfg.n_mels + 1);
    pts[i] = mel_to_hz(mel);
  }
  return pts;
}

}  // namespace

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  const auto pts = mel_breakpoints_hz(cfg);
  return std::vector<double>(pts.begin() + 1, pts.end() - 1);
}

Matrix mel_filterbank(const FeatureConfig& cfg) {
  cfg.validate();
  const auto pts = mel_breakpoints_hz(cfg);
  const std::size_t n_bins = cfg.fft_size / 2 + 1;
  Matrix fb(cfg.n_mels, n_bins);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double f_left = pts[m];
    const double f_center = pts[m + 1];
    const double f_right = pts[m + 2];
    bool any_positive = false;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      const double up = (f - f_left) / (f_center - f_left);
      const double down = (f_right - f) / (f_right - f_center);
      const double w = std::max(0.0, std::min(up, down));
      fb.at(m, k) = w;
      any_positive |= (w > 0.0);
    }
    if (!any_positive) {
      throw ValidationError("mel filter " + std::to_string(m) +
                            " covers no FFT bin; n_mels too large for this fft_size/sample_rate");
    }
  }
  return fb;
}

std::vector<double> dct_ortho(const std::vector<double>& x, std::size_t n_out) {
  const std::size_t m_len = x.size();
  // Welford running mean: exactly reproduces a constant input's value, so the
  // mean-removed terms below vanish bit-exactly for constant vectors.
  double mu = 0.0;
  for (std::size_t m = 0; m < m_len; ++m) mu += (x[m] - mu) / static_cast<double>(m + 1);
  std::vector<double> y(n_out, 0.0);
  if (n_out == 0) return y;
  y[0] = std::sqrt(static_cast<double>(m_len)) * mu;
  const double scale = std::sqrt(2.0 / static_cast<double>(m_len));
  for (std::size_t k = 1; k < n_out; ++k) {
    double acc = 0.0;
    for (std::size_t m = 0; m < m_len; ++m) {
      const double ang = kPi * static_cast<double>(k) * (2.0 * static_cast<double>(m) + 1.0) /
                         (2.0 * static_cast<double>(m_len));
      acc += (x[m] - mu) * std::cos(ang);
    }
    y[k] = scale * acc;
  }
  return y;
}

FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg) {
  const Matrix frames = frame_signal(clip, cfg);
  const Matrix spec = power_spectrum(frames, cfg.fft_size);
  const Matrix fb = mel_filterbank(cfg);

  // Precompute the DCT basis once; dct_ortho recomputes cosines per call,
  // which is too slow for full-length utterances.
  const std::size_t m_len = cfg.n_mels;
  std::vector<double> cos_table(cfg.n_mfcc * m_len);
  for (std::size_t k = 1; k < cfg.n_mfcc; ++k) {
    for (std::size_t m = 0; m < m_len; ++m) {
      cos_table[k * m_len + m] = std::cos(kPi * static_cast<double>(k) *
                                          (2.0 * static_cast<double>(m) + 1.0) /
                                          (2.0 * static_cast<double>(m_len)));
    }
  }
  const double scale = std::sqrt(2.0 / static_cast<double>(m_len));

  FeatureMatrix out(spec.rows, cfg.n_mfcc);
  std::vector<double> log_mel(m_len);
  for (std::size_t t = 0; t < spec.rows; ++t) {
    for (std::size_t m = 0; m < m_len; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < spec.cols; ++k) e += fb.at(m, k) * spec.at(t, k);
      log_mel[m] = std::log(std::max(e, cfg.log_floor));
    }
    double mu = 0.0;
    for (std::size_t m = 0; m < m_len; ++m) mu += (log_mel[m] - mu) / static_cast<double>(m + 1);
    out.at(t, 0) = std::sqrt(static_cast<double>(m_len)) * mu;
    for (std::size_t k = 1; k < cfg.n_mfcc; ++k) {
      double acc = 0.0;
      const double* row = &cos_table[k * m_len];
      for (std::size_t m = 0; m < m_len; ++m) acc += (log_mel[m] - mu) * row[m];
      out.at(t, k) = scale * acc;
    }
  }
  return out;
}

FeatureMatrix pad_or_truncate(const FeatureMatrix& f, std::size_t target_T) {
  if (target_T == 0) throw ValidationError("pad_or_truncate: target_T must be >= 1");
  if (f.rows == target_T) return f;
  FeatureMatrix out(target_T, f.cols);
  out.source_id = f.source_id;
  const std::size_t keep = std::min(f.rows, target_T);
  std::copy(f.data.begin(), f.data.begin() + static_cast<std::ptrdiff_t>(keep * f.cols),
            out.data.begin());
  return out;
}

}  // namespace timnet::dsp
