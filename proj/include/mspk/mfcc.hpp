#ifndef MSPK_MFCC_HPP
#define MSPK_MFCC_HPP

#include <string>

#include "mspk/tensor.hpp"
#include "mspk/wav.hpp"

namespace mspk {

struct FeatureMatrix {
  Tensor frames;            // T x F
  double frame_shift = 0.0;  // seconds
  double frame_width = 0.0;  // seconds
  double start_time = 0.0;   // seconds

  std::size_t num_frames() const { return frames.rows; }
  std::size_t dim() const { return frames.cols; }
};

struct MfccConfig {
  int num_coeffs = 30;
  int num_mel_filters = 30;
  double frame_width_s = 0.025;
  double frame_shift_s = 0.010;
  double preemphasis = 0.97;
  double low_freq = 20.0;
  double high_freq = 0.0;  // 0 = Nyquist
  double log_floor = 1e-10;
};

// Frame count for N samples: floor((N - win) / shift) + 1.
std::size_t mfcc_frame_count(std::size_t n_samples, int sample_rate,
                             const MfccConfig& cfg);

// Pre-emphasis -> Hamming window -> magnitude spectrum (DFT) -> mel
// filterbank -> log -> DCT-II (orthonormal), keeping num_coeffs.
FeatureMatrix compute_mfcc(const Waveform& w, const MfccConfig& cfg = {});

// Per-coefficient mean subtraction over a centered sliding window,
// truncated at the edges.
FeatureMatrix sliding_cmn(const FeatureMatrix& f, double window_s = 3.0);

// Mel filterbank weights (num_filters x num_bins) over a one-sided
// spectrum of fft_size/2+1 bins; exposed for the front-end tests.
Tensor mel_filterbank(int num_filters, int fft_size, int sample_rate,
                      double low_freq, double high_freq);

// Feature archive: magic "MSPKFEAT", u32 version, u32 T, u32 F,
// f64 frame_shift, f64 frame_width, then T*F f32 row-major.
void save_features(const std::string& path, const FeatureMatrix& f);
FeatureMatrix load_features(const std::string& path);

}  // namespace mspk

#endif
