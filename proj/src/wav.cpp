#include "mspk/wav.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mspk/error.hpp"

namespace mspk {

namespace {

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open wav file: " + path);

  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0)
    throw FormatError(path + ": not a RIFF file");
  read_u32(is);  // riff size
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0)
    throw FormatError(path + ": not a WAVE file");

  bool have_fmt = false;
  uint16_t channels = 0, bits = 0, format = 0;
  uint32_t rate = 0;
  Waveform w;
  while (is.read(tag, 4)) {
    uint32_t chunk_size = read_u32(is);
    if (!is) throw FormatError(path + ": truncated chunk header");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw FormatError(path + ": short fmt chunk");
      format = read_u16(is);
      channels = read_u16(is);
      rate = read_u32(is);
      read_u32(is);  // byte rate
      read_u16(is);  // block align
      bits = read_u16(is);
      is.seekg(chunk_size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt");
      if (format != 1)
        throw FormatError(path + ": unsupported format tag " +
                          std::to_string(format) + " (PCM only)");
      if (bits != 16)
        throw FormatError(path + ": unsupported bit depth " +
                          std::to_string(bits) + " (16-bit only)");
      if (channels != 1)
        throw FormatError(path + ": unsupported channel count " +
                          std::to_string(channels) + " (mono only)");
      std::size_t n = chunk_size / 2;
      std::vector<int16_t> raw(n);
      is.read(reinterpret_cast<char*>(raw.data()),
              static_cast<std::streamsize>(n * 2));
      if (static_cast<std::size_t>(is.gcount()) != n * 2)
        throw FormatError(path + ": truncated data chunk");
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) w.samples[i] = raw[i] / 32768.0;
      w.sample_rate = static_cast<int>(rate);
      return w;
    } else {
      is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  throw FormatError(path + ": no data chunk found");
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write wav file: " + path);
  uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  write_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32(os, 16);
  write_u16(os, 1);  // PCM
  write_u16(os, 1);  // mono
  write_u32(os, static_cast<uint32_t>(w.sample_rate));
  write_u32(os, static_cast<uint32_t>(w.sample_rate * 2));
  write_u16(os, 2);
  write_u16(os, 16);
  os.write("data", 4);
  write_u32(os, data_bytes);
  for (double s : w.samples) {
    double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    int16_t v = static_cast<int16_t>(std::lrint(c * 32768.0));
    write_u16(os, static_cast<uint16_t>(v));
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace mspk
