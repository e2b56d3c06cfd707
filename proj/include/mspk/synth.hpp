#ifndef MSPK_SYNTH_HPP
#define MSPK_SYNTH_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mspk/diar.hpp"
#include "mspk/wav.hpp"

namespace mspk {

// Synthetic speaker: a band-limited noise signature. Bands are disjoint
// across speakers so embeddings are separable by construction.
struct SynthSpeaker {
  std::string id;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

struct SynthConfig {
  int sample_rate = 16000;
  int num_speakers = 16;          // training speakers
  int num_session_speakers = 4;   // held-out speakers for test sessions
  int utts_per_speaker = 10;
  double utt_seconds = 2.0;
  int num_sessions = 2;           // 2-speaker alternating-turn sessions
  double session_seconds = 60.0;  // total speech (gaps come on top)
  double turn_seconds = 5.0;
  double gap_seconds = 1.0;       // inter-turn silence
  uint64_t seed = 0;
};

std::vector<SynthSpeaker> synth_speakers(int n, int sample_rate,
                                         const std::string& prefix = "spk");

Waveform synth_utterance(const SynthSpeaker& spk, double seconds,
                         int sample_rate, std::mt19937_64& rng);

// Writes wav/<utt>.wav for every training utterance plus a manifest
// "utt_id speaker_id wav_path", an equivalent heldout_manifest.txt of
// utterances from the session speakers, and sessions/sessNN.{wav,rttm}
// built from held-out speaker pairs. Returns the training manifest path.
std::string generate_corpus(const std::string& out_dir,
                            const SynthConfig& cfg);

}  // namespace mspk

#endif
