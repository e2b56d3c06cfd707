#include "mspk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mspk/error.hpp"

namespace mspk {

std::vector<SynthSpeaker> synth_speakers(int n, int sample_rate,
                                         const std::string& prefix) {
  if (n < 1) throw UsageError("synth_speakers: need n >= 1");
  const double lo = 400.0;
  const double hi = std::min(7400.0, 0.45 * sample_rate);
  const double slot = (hi - lo) / n;
  // stride permutation of the band slots: consecutive speaker indices (and in
  // particular the held-out session pairs) land in well-separated bands
  int stride = std::max(1, n / 2 - 1);
  while (stride > 1 && std::gcd(stride, n) != 1) --stride;
  std::vector<SynthSpeaker> out;
  for (int i = 0; i < n; ++i) {
    SynthSpeaker s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02d", prefix.c_str(), i);
    s.id = buf;
    const int si = (i * stride) % n;
    s.band_lo = lo + si * slot + 0.1 * slot;
    s.band_hi = lo + si * slot + 0.8 * slot;
    out.push_back(s);
  }
  return out;
}

Waveform synth_utterance(const SynthSpeaker& spk, double seconds,
                         int sample_rate, std::mt19937_64& rng) {
  const std::size_t n =
      static_cast<std::size_t>(std::llround(seconds * sample_rate));
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0);
  std::uniform_real_distribution<double> freq(spk.band_lo, spk.band_hi);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  // Syllable-like bursts: each 0.2 s burst redraws its in-band components
  // and gets a Hann envelope. The resulting non-stationarity keeps the
  // speaker band visible to stats pooling even after cepstral mean
  // normalization.
  const std::size_t burst =
      static_cast<std::size_t>(std::llround(0.2 * sample_rate));
  constexpr int kComponents = 6;
  for (std::size_t start = 0; start < n; start += burst) {
    const std::size_t len = std::min(burst, n - start);
    for (int c = 0; c < kComponents; ++c) {
      const double f = freq(rng);
      const double p = phase(rng);
      const double a = amp(rng);
      const double wstep = 2.0 * std::numbers::pi * f / sample_rate;
      for (std::size_t i = 0; i < len; ++i) {
        const double env =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                 static_cast<double>(i) /
                                 static_cast<double>(len));
        w.samples[start + i] +=
            a * env * std::sin(wstep * static_cast<double>(i) + p);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) w.samples[i] += 0.05 * noise(rng);
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  const double gain = 0.5 / peak;
  for (double& v : w.samples) v *= gain;
  return w;
}

std::string generate_corpus(const std::string& out_dir,
                            const SynthConfig& cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "wav", ec);
  fs::create_directories(fs::path(out_dir) / "sessions", ec);
  if (ec) throw IoError("cannot create corpus directory: " + out_dir);

  std::mt19937_64 rng(cfg.seed);
  const auto train_spk =
      synth_speakers(cfg.num_speakers + cfg.num_session_speakers,
                     cfg.sample_rate);

  const std::string manifest_path =
      (fs::path(out_dir) / "wav_manifest.txt").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot write manifest: " + manifest_path);
  for (int s = 0; s < cfg.num_speakers; ++s) {
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_utt%03d", train_spk[s].id.c_str(), u);
      const std::string wav_path =
          (fs::path(out_dir) / "wav" / (std::string(buf) + ".wav")).string();
      write_wav(wav_path,
                synth_utterance(train_spk[s], cfg.utt_seconds,
                                cfg.sample_rate, rng));
      manifest << buf << " " << train_spk[s].id << " " << wav_path << "\n";
    }
  }
  if (!manifest) throw IoError("manifest write failed: " + manifest_path);

  // held-out speakers get their own utterances for episode evaluation
  const std::string heldout_path =
      (fs::path(out_dir) / "heldout_manifest.txt").string();
  std::ofstream heldout(heldout_path);
  if (!heldout) throw IoError("cannot write manifest: " + heldout_path);
  for (int s = cfg.num_speakers;
       s < cfg.num_speakers + cfg.num_session_speakers; ++s) {
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_utt%03d", train_spk[s].id.c_str(), u);
      const std::string wav_path =
          (fs::path(out_dir) / "wav" / (std::string(buf) + ".wav")).string();
      write_wav(wav_path,
                synth_utterance(train_spk[s], cfg.utt_seconds,
                                cfg.sample_rate, rng));
      heldout << buf << " " << train_spk[s].id << " " << wav_path << "\n";
    }
  }
  if (!heldout) throw IoError("manifest write failed: " + heldout_path);

  // alternating-turn 2-speaker sessions from the held-out speakers
  for (int k = 0; k < cfg.num_sessions; ++k) {
    const int a = cfg.num_speakers + (2 * k) % cfg.num_session_speakers;
    const int b = cfg.num_speakers + (2 * k + 1) % cfg.num_session_speakers;
    char name[32];
    std::snprintf(name, sizeof(name), "sess%02d", k);
    Waveform session;
    session.sample_rate = cfg.sample_rate;
    std::vector<RttmSegment> ref;
    double speech = 0.0, t = 0.0;
    int turn = 0;
    const std::size_t gap_samples = static_cast<std::size_t>(
        std::llround(cfg.gap_seconds * cfg.sample_rate));
    while (speech < cfg.session_seconds - 1e-9) {
      if (turn > 0) {
        // inter-turn pause: low-level channel noise, not digital silence,
        // so cepstral statistics stay finite across the gap
        std::normal_distribution<double> gap_noise(0.0, 0.01);
        for (std::size_t i = 0; i < gap_samples; ++i)
          session.samples.push_back(gap_noise(rng));
        t += static_cast<double>(gap_samples) / cfg.sample_rate;
      }
      const double dur =
          std::min(cfg.turn_seconds, cfg.session_seconds - speech);
      const auto& spk = (turn % 2 == 0) ? train_spk[a] : train_spk[b];
      const Waveform w =
          synth_utterance(spk, dur, cfg.sample_rate, rng);
      session.samples.insert(session.samples.end(), w.samples.begin(),
                             w.samples.end());
      ref.push_back({name, t, dur, spk.id});
      t += dur;
      speech += dur;
      ++turn;
    }
    const fs::path base = fs::path(out_dir) / "sessions" / name;
    write_wav(base.string() + ".wav", session);
    write_rttm(base.string() + ".rttm", ref);
  }
  return manifest_path;
}

}  // namespace mspk
