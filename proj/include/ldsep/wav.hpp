#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "core/errors.hpp"
#include "core/tensor.hpp"

namespace ldsep {

// Audio buffer: samples shaped (channels, length), values nominally in [-1, 1].
struct Waveform {
  Tensor samples;  // (A, S)
  int sample_rate = 0;

  Waveform() = default;
  Waveform(std::size_t channels, std::size_t length, int rate)
      : samples({channels, length}), sample_rate(rate) {}
  Waveform(Tensor t, int rate) : samples(std::move(t)), sample_rate(rate) {
    if (samples.rank() != 2) throw std::invalid_argument("Waveform: rank-2 expected");
  }

  std::size_t channels() const { return samples.dim(0); }
  std::size_t length() const { return samples.dim(1); }

  std::vector<double> mono() const {
    std::vector<double> out(length(), 0.0);
    for (std::size_t c = 0; c < channels(); ++c)
      for (std::size_t i = 0; i < length(); ++i) out[i] += samples.at(c, i);
    for (auto& v : out) v /= double(channels());
    return out;
  }

  double rms() const {
    if (samples.size() == 0) return 0.0;
    return std::sqrt(samples.sq_norm() / double(samples.size()));
  }
};

namespace wav_detail {

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& buf, std::size_t off, const char* what) {
  if (off + sizeof(T) > buf.size()) throw ParseError(std::string("wav: truncated ") + what, off);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

}  // namespace wav_detail

// IEEE-float (format 3) RIFF WAVE, 32-bit little-endian samples.
inline void write_wav(const std::string& path, const Waveform& w) {
  using namespace wav_detail;
  const std::uint16_t channels = std::uint16_t(w.channels());
  const std::uint32_t frames = std::uint32_t(w.length());
  bool clipped = false;
  std::vector<std::uint8_t> buf;
  buf.reserve(44 + std::size_t(frames) * channels * 4);
  const std::uint32_t data_bytes = frames * channels * 4;
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  put<std::uint32_t>(buf, 36 + data_bytes);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put<std::uint32_t>(buf, 16);
  put<std::uint16_t>(buf, 3);  // IEEE float
  put<std::uint16_t>(buf, channels);
  put<std::uint32_t>(buf, std::uint32_t(w.sample_rate));
  put<std::uint32_t>(buf, std::uint32_t(w.sample_rate) * channels * 4);
  put<std::uint16_t>(buf, channels * 4);
  put<std::uint16_t>(buf, 32);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  put<std::uint32_t>(buf, data_bytes);
  for (std::uint32_t i = 0; i < frames; ++i)
    for (std::uint16_t c = 0; c < channels; ++c) {
      double v = w.samples.at(c, i);
      if (!std::isfinite(v)) throw std::invalid_argument("write_wav: non-finite sample");
      if (v > 1.0 || v < -1.0) {
        clipped = true;
        v = v > 1.0 ? 1.0 : -1.0;
      }
      put<float>(buf, float(v));
    }
  if (clipped) std::cerr << "warning: write_wav clipped samples in " << path << "\n";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path);
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!os) throw std::runtime_error("write_wav: write failed for " + path);
}

inline Waveform read_wav(const std::string& path) {
  using namespace wav_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw ParseError("wav: missing RIFF/WAVE header", 0);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t off = 12;
  while (off + 8 <= buf.size()) {
    char id[5] = {};
    std::memcpy(id, buf.data() + off, 4);
    auto chunk_size = get<std::uint32_t>(buf, off + 4, "chunk size");
    std::size_t body = off + 8;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = get<std::uint16_t>(buf, body, "fmt chunk");
      channels = get<std::uint16_t>(buf, body + 2, "fmt chunk");
      rate = get<std::uint32_t>(buf, body + 4, "fmt chunk");
      bits = get<std::uint16_t>(buf, body + 14, "fmt chunk");
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw ParseError("wav: data chunk before fmt chunk", off);
      if (format != 3 || bits != 32)
        throw ParseError("wav: only 32-bit float format supported", body);
      if (channels == 0) throw ParseError("wav: zero channels", body);
      if (body + chunk_size > buf.size())
        throw ParseError("wav: truncated data chunk", buf.size());
      std::size_t frames = chunk_size / (std::size_t(channels) * 4);
      Waveform w(channels, frames, int(rate));
      for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t c = 0; c < channels; ++c)
          w.samples.at(c, i) =
              double(get<float>(buf, body + (i * channels + c) * 4, "sample"));
      return w;
    }
    off = body + chunk_size + (chunk_size & 1);
  }
  throw ParseError("wav: missing data chunk", buf.size());
}

}  // namespace ldsep
