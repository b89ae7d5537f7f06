#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace ldsep {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse = false) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / double(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= double(n);
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(n));
  return w;
}

// Complex spectra of windowed frames. Input: mono signal. Frames start at
// i*hop; the tail that does not fill a whole frame is zero-padded.
inline std::vector<std::vector<std::complex<double>>> stft(
    const std::vector<double>& x, std::size_t n_fft, std::size_t hop,
    const std::vector<double>& window) {
  if (hop == 0 || n_fft == 0) throw std::invalid_argument("stft: bad config");
  std::size_t n_frames = x.size() < n_fft ? 1 : 1 + (x.size() - n_fft) / hop;
  std::vector<std::vector<std::complex<double>>> out(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    std::vector<std::complex<double>> frame(n_fft, 0.0);
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < n_fft && start + i < x.size(); ++i)
      frame[i] = x[start + i] * window[i];
    fft_inplace(frame);
    out[f] = std::move(frame);
  }
  return out;
}

// Magnitude spectrogram, shape (n_fft/2 + 1, n_frames).
inline Tensor stft_magnitude(const std::vector<double>& x, std::size_t n_fft,
                             std::size_t hop) {
  auto window = hann_window(n_fft);
  auto spectra = stft(x, n_fft, hop, window);
  const std::size_t bins = n_fft / 2 + 1;
  Tensor mag({bins, spectra.size()});
  for (std::size_t f = 0; f < spectra.size(); ++f)
    for (std::size_t k = 0; k < bins; ++k) mag.at(k, f) = std::abs(spectra[f][k]);
  return mag;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank, shape (n_mels, n_fft/2 + 1).
inline Tensor mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate,
                             double fmin, double fmax) {
  if (fmax > sample_rate / 2.0 + 1e-9)
    throw std::invalid_argument("mel_filterbank: fmax above Nyquist");
  const std::size_t bins = n_fft / 2 + 1;
  Tensor fb({n_mels, bins});
  const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
  std::vector<double> centers(n_mels + 2);
  for (std::size_t i = 0; i < n_mels + 2; ++i)
    centers[i] = mel_to_hz(mlo + (mhi - mlo) * double(i) / double(n_mels + 1));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = double(k) * sample_rate / double(n_fft);
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb.at(m, k) = w;
    }
  }
  return fb;
}

}  // namespace ldsep
