#include "fcac/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace fcac::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_power_of_two(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 Cooley-Tukey FFT, in place.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double angle = -2.0 * kPi / static_cast<double>(len);
    std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}
}  // namespace

void AudioClip::validate() const {
  if (sample_rate <= 0) fail(ErrorCode::kInvalidConfig, "sample_rate must be positive");
  if (samples.empty()) fail(ErrorCode::kInvalidConfig, "clip has no samples: " + clip_id);
  for (double s : samples) {
    if (!std::isfinite(s)) fail(ErrorCode::kInvalidConfig, "non-finite sample in clip " + clip_id);
  }
}

int DspConfig::frame_len_samples(int sample_rate) const {
  return static_cast<int>(std::lround(frame_len_ms * 1e-3 * sample_rate));
}

int DspConfig::hop_samples(int sample_rate) const {
  return static_cast<int>(std::lround(hop_ms * 1e-3 * sample_rate));
}

int DspConfig::effective_n_fft(int sample_rate) const {
  if (n_fft > 0) return n_fft;
  return next_power_of_two(frame_len_samples(sample_rate));
}

double DspConfig::effective_fmax(int sample_rate) const {
  return fmax_hz > 0.0 ? fmax_hz : sample_rate / 2.0;
}

void DspConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) fail(ErrorCode::kInvalidConfig, "sample_rate must be positive");
  if (hop_ms <= 0.0 || hop_ms > frame_len_ms) {
    fail(ErrorCode::kInvalidConfig, "require 0 < hop_ms <= frame_len_ms");
  }
  if (frame_len_samples(sample_rate) < 2) {
    fail(ErrorCode::kInvalidConfig, "frame shorter than 2 samples");
  }
  if (n_mels <= 0) fail(ErrorCode::kInvalidConfig, "n_mels must be positive");
  if (log_floor <= 0.0) fail(ErrorCode::kInvalidConfig, "log_floor must be positive");
  double fmax = effective_fmax(sample_rate);
  if (fmin_hz < 0.0 || fmin_hz >= fmax) {
    fail(ErrorCode::kInvalidConfig, "require 0 <= fmin_hz < fmax_hz");
  }
  if (fmax > sample_rate / 2.0) {
    fail(ErrorCode::kInvalidBand, "fmax_hz above Nyquist");
  }
  int nfft = effective_n_fft(sample_rate);
  if (!is_power_of_two(nfft)) fail(ErrorCode::kInvalidConfig, "n_fft must be a power of two");
  if (nfft < frame_len_samples(sample_rate)) {
    fail(ErrorCode::kInvalidConfig, "n_fft smaller than frame length");
  }
}

long long frame_count(long long n_samples, int frame_len, int hop) {
  if (n_samples < frame_len) return 0;
  return (n_samples - frame_len) / hop + 1;
}

std::vector<std::vector<double>> frame_signal(const AudioClip& clip, const DspConfig& cfg) {
  clip.validate();
  cfg.validate(clip.sample_rate);
  const int frame_len = cfg.frame_len_samples(clip.sample_rate);
  const int hop = cfg.hop_samples(clip.sample_rate);
  const long long n = static_cast<long long>(clip.samples.size());
  if (n < frame_len) {
    fail(ErrorCode::kClipTooShort,
         "clip " + clip.clip_id + " has " + std::to_string(n) + " samples, frame needs " +
             std::to_string(frame_len));
  }
  const long long count = frame_count(n, frame_len, hop);
  std::vector<std::vector<double>> frames(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) {
    const double* start = clip.samples.data() + i * hop;
    frames[static_cast<size_t>(i)].assign(start, start + frame_len);
  }
  return frames;
}

std::vector<double> hamming_window(int n) {
  if (n < 2) fail(ErrorCode::kInvalidLength, "hamming window needs n >= 2");
  std::vector<double> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    w[static_cast<size_t>(k)] = 0.54 - 0.46 * std::cos(2.0 * kPi * k / (n - 1));
  }
  return w;
}

std::vector<double> power_spectrum(const std::vector<double>& frame, int n_fft) {
  if (!is_power_of_two(n_fft)) fail(ErrorCode::kInvalidConfig, "n_fft must be a power of two");
  if (static_cast<int>(frame.size()) > n_fft) {
    fail(ErrorCode::kFrameTooLong, "frame length " + std::to_string(frame.size()) +
                                       " exceeds n_fft " + std::to_string(n_fft));
  }
  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft), {0.0, 0.0});
  for (size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  fft_radix2(buf);
  std::vector<double> power(static_cast<size_t>(n_fft / 2 + 1));
  for (int k = 0; k <= n_fft / 2; ++k) {
    power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
  }
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filter_centers_hz(const DspConfig& cfg, int sample_rate) {
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.effective_fmax(sample_rate));
  const double step = (mel_hi - mel_lo) / (cfg.n_mels + 1);
  std::vector<double> centers(static_cast<size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) {
    centers[static_cast<size_t>(m)] = mel_to_hz(mel_lo + step * (m + 1));
  }
  return centers;
}

Tensor mel_filterbank(const DspConfig& cfg, int sample_rate) {
  cfg.validate(sample_rate);
  const int n_fft = cfg.effective_n_fft(sample_rate);
  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.effective_fmax(sample_rate));
  const double step = (mel_hi - mel_lo) / (cfg.n_mels + 1);

  // Band edges in Hz: point m is the lower edge of filter m, m+1 its center,
  // m+2 its upper edge.
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m) {
    edges[static_cast<size_t>(m)] = mel_to_hz(mel_lo + step * m);
  }

  Tensor fb({cfg.n_mels, n_bins});
  const double hz_per_bin = static_cast<double>(sample_rate) / n_fft;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[static_cast<size_t>(m)];
    const double center = edges[static_cast<size_t>(m) + 1];
    const double hi = edges[static_cast<size_t>(m) + 2];
    double row_sum = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * hz_per_bin;
      double w = 0.0;
      if (f > lo && f < center) {
        w = (f - lo) / (center - lo);
      } else if (f >= center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      fb.at(m, k) = w;
      row_sum += w;
    }
    if (row_sum <= 0.0) {
      // Triangle narrower than one FFT bin: anchor it at the nearest bin.
      int k = static_cast<int>(std::lround(center / hz_per_bin));
      k = std::clamp(k, 0, n_bins - 1);
      fb.at(m, k) = 1.0;
    }
  }
  return fb;
}

LogMelSpectrogram log_mel_spectrogram(const AudioClip& clip, const DspConfig& cfg) {
  auto frames = frame_signal(clip, cfg);
  const int n_fft = cfg.effective_n_fft(clip.sample_rate);
  const auto window = hamming_window(cfg.frame_len_samples(clip.sample_rate));
  const Tensor fb = mel_filterbank(cfg, clip.sample_rate);
  const int n_bins = n_fft / 2 + 1;

  LogMelSpectrogram out;
  out.clip_id = clip.clip_id;
  out.values = Tensor({static_cast<int>(frames.size()), cfg.n_mels});
  std::vector<double> windowed(window.size());
  for (size_t t = 0; t < frames.size(); ++t) {
    for (size_t i = 0; i < window.size(); ++i) windowed[i] = frames[t][i] * window[i];
    const auto power = power_spectrum(windowed, n_fft);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k < n_bins; ++k) e += fb.at(m, k) * power[static_cast<size_t>(k)];
      out.values.at(static_cast<int>(t), m) = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

}  // namespace fcac::dsp
