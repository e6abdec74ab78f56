#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctts::dsp {

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 0;
};

namespace detail {

inline std::uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("wav: truncated file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}

inline std::uint16_t read_u16le(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (!in) throw std::runtime_error("wav: truncated file");
  return b[0] | (b[1] << 8);
}

inline void write_u32le(std::ostream& out, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline void write_u16le(std::ostream& out, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  out.write(b, 2);
}

}  // namespace detail

// Reads RIFF/WAVE, PCM 16-bit mono only. Samples are scaled to [-1, 1]
// by division by 32768.
inline Waveform load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path);

  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0)
    throw std::runtime_error("wav: missing RIFF header: " + path);
  detail::read_u32le(in);  // riff size
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0)
    throw std::runtime_error("wav: not a WAVE file: " + path);

  int channels = 0, bits = 0, rate = 0;
  bool have_fmt = false;
  std::vector<std::int16_t> pcm;
  bool have_data = false;
  while (in.read(tag, 4)) {
    std::uint32_t size = detail::read_u32le(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      std::uint16_t format = detail::read_u16le(in);
      channels = detail::read_u16le(in);
      rate = static_cast<int>(detail::read_u32le(in));
      detail::read_u32le(in);  // byte rate
      detail::read_u16le(in);  // block align
      bits = detail::read_u16le(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      if (format != 1)
        throw std::runtime_error("wav: format=" + std::to_string(format) +
                                 " unsupported (PCM only)");
      if (channels != 1)
        throw std::runtime_error("wav: channels=" + std::to_string(channels) +
                                 " unsupported");
      if (bits != 16)
        throw std::runtime_error("wav: bits=" + std::to_string(bits) +
                                 " unsupported");
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("wav: data chunk before fmt");
      pcm.resize(size / 2);
      in.read(reinterpret_cast<char*>(pcm.data()), size & ~1u);
      if (!in) throw std::runtime_error("wav: truncated data chunk");
      have_data = true;
      break;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
    }
  }
  if (!have_fmt || !have_data)
    throw std::runtime_error("wav: missing fmt/data chunk: " + path);

  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(pcm.size());
  for (size_t i = 0; i < pcm.size(); ++i)
    w.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;
  return w;
}

inline void save_wav(const std::string& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw std::runtime_error("wav: sample_rate must be > 0");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav file: " + path);
  std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  detail::write_u32le(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  detail::write_u32le(out, 16);
  detail::write_u16le(out, 1);  // PCM
  detail::write_u16le(out, 1);  // mono
  detail::write_u32le(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::write_u32le(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  detail::write_u16le(out, 2);
  detail::write_u16le(out, 16);
  out.write("data", 4);
  detail::write_u32le(out, data_bytes);
  for (float s : w.samples) {
    float c = std::max(-1.0f, std::min(1.0f, s));
    auto v = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    detail::write_u16le(out, static_cast<std::uint16_t>(v));
  }
  if (!out) throw std::runtime_error("wav: write failed: " + path);
}

}  // namespace ctts::dsp
