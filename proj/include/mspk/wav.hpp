#ifndef MSPK_WAV_HPP
#define MSPK_WAV_HPP

#include <string>
#include <vector>

namespace mspk {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 0;
};

// Reads a RIFF/WAVE file. Only 16-bit signed PCM, single channel is
// accepted; samples are scaled by 1/32768.
Waveform read_wav(const std::string& path);

// Writes 16-bit PCM mono. Samples are clipped to [-1, 1).
void write_wav(const std::string& path, const Waveform& w);

}  // namespace mspk

#endif
