#pragma once

#include <string>
#include <vector>

#include "fcac/error.hpp"
#include "fcac/tensor.hpp"

namespace fcac::dsp {

// Raw mono waveform. Samples are dimensionless amplitudes in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;
  int label = -1;  // optional class id, -1 when unlabeled
  std::string clip_id;

  void validate() const;
};

struct DspConfig {
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  int n_fft = 0;  // 0 = next power of two >= frame length in samples
  int n_mels = 128;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;  // 0 = Nyquist
  double log_floor = 1e-10;

  int frame_len_samples(int sample_rate) const;
  int hop_samples(int sample_rate) const;
  int effective_n_fft(int sample_rate) const;
  double effective_fmax(int sample_rate) const;
  void validate(int sample_rate) const;
};

// Time x mel grid of log-power values.
struct LogMelSpectrogram {
  Tensor values;  // n_frames x n_mels
  std::string clip_id;

  int n_frames() const { return values.shape()[0]; }
  int n_mels() const { return values.shape()[1]; }
};

// Number of full frames for a clip; trailing partial frames are dropped.
long long frame_count(long long n_samples, int frame_len, int hop);

// Overlapping frames of frame_len samples, hop apart. Throws kClipTooShort
// when the clip has fewer samples than one frame.
std::vector<std::vector<double>> frame_signal(const AudioClip& clip, const DspConfig& cfg);

// w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1)). Throws kInvalidLength for n < 2.
std::vector<double> hamming_window(int n);

// One-sided power spectrum |DFT_k|^2 for k = 0..n_fft/2. The frame is
// zero-padded to n_fft; n_fft must be a power of two.
std::vector<double> power_spectrum(const std::vector<double>& frame, int n_fft);

// HTK-mel triangular filterbank, n_mels x (n_fft/2 + 1), no area
// normalization. A filter too narrow to touch any FFT bin falls back to unit
// weight at the bin nearest its center so every row keeps positive mass.
Tensor mel_filterbank(const DspConfig& cfg, int sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Center frequencies (Hz) of the n_mels filters.
std::vector<double> mel_filter_centers_hz(const DspConfig& cfg, int sample_rate);

LogMelSpectrogram log_mel_spectrogram(const AudioClip& clip, const DspConfig& cfg);

}  // namespace fcac::dsp
