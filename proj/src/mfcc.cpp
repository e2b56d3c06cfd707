#include "mspk/mfcc.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "mspk/error.hpp"

namespace mspk {

namespace {

constexpr char kFeatMagic[8] = {'M', 'S', 'P', 'K', 'F', 'E', 'A', 'T'};
constexpr uint32_t kFeatVersion = 1;

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 Cooley-Tukey, decimation in time.
void fft_inplace(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  if (n <= 1) return;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (j > i) std::swap(x[i], x[j]);
    std::size_t m = n >> 1;
    while (m >= 1 && j >= m) {
      j -= m;
      m >>= 1;
    }
    j += m;
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t k = 0; k < n; k += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t l = 0; l < len / 2; ++l) {
        std::complex<double> t = w * x[k + l + len / 2];
        std::complex<double> u = x[k + l];
        x[k + l] = u + t;
        x[k + l + len / 2] = u - t;
        w *= wlen;
      }
    }
  }
}

}  // namespace

Tensor mel_filterbank(int num_filters, int fft_size, int sample_rate,
                      double low_freq, double high_freq) {
  if (high_freq <= 0.0) high_freq = sample_rate / 2.0;
  const int num_bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(low_freq);
  const double mel_hi = hz_to_mel(high_freq);
  std::vector<double> centers(num_filters + 2);
  for (int i = 0; i < num_filters + 2; ++i)
    centers[i] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (num_filters + 1.0));
  Tensor fb(num_filters, num_bins);
  for (int m = 0; m < num_filters; ++m) {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (int b = 0; b < num_bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / fft_size;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb.at(m, b) = w;
    }
  }
  return fb;
}

std::size_t mfcc_frame_count(std::size_t n_samples, int sample_rate,
                             const MfccConfig& cfg) {
  const std::size_t win =
      static_cast<std::size_t>(std::lround(cfg.frame_width_s * sample_rate));
  const std::size_t shift =
      static_cast<std::size_t>(std::lround(cfg.frame_shift_s * sample_rate));
  if (n_samples < win) return 0;
  return (n_samples - win) / shift + 1;
}

FeatureMatrix compute_mfcc(const Waveform& w, const MfccConfig& cfg) {
  const int win = static_cast<int>(std::lround(cfg.frame_width_s * w.sample_rate));
  const int shift =
      static_cast<int>(std::lround(cfg.frame_shift_s * w.sample_rate));
  if (win <= 0 || shift <= 0)
    throw UsageError("compute_mfcc: non-positive frame parameters");
  const std::size_t t = mfcc_frame_count(w.samples.size(), w.sample_rate, cfg);
  if (t == 0)
    throw FormatError("compute_mfcc: audio shorter than one frame (" +
                      std::to_string(w.samples.size()) + " samples)");

  const int fft_size = next_pow2(win);
  const int num_bins = fft_size / 2 + 1;
  const Tensor fb = mel_filterbank(cfg.num_mel_filters, fft_size,
                                   w.sample_rate, cfg.low_freq, cfg.high_freq);

  std::vector<double> hamming(win);
  for (int i = 0; i < win; ++i)
    hamming[i] =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (win - 1));

  FeatureMatrix out;
  out.frames = Tensor(t, cfg.num_coeffs);
  out.frame_shift = cfg.frame_shift_s;
  out.frame_width = cfg.frame_width_s;

  std::vector<std::complex<double>> buf(fft_size);
  std::vector<double> mag(num_bins), logmel(cfg.num_mel_filters);
  for (std::size_t fi = 0; fi < t; ++fi) {
    const std::size_t off = fi * shift;
    for (int i = 0; i < win; ++i) {
      double s = w.samples[off + i];
      double prev = (off + i > 0) ? w.samples[off + i - 1] : s;
      buf[i] = (s - cfg.preemphasis * prev) * hamming[i];
    }
    std::fill(buf.begin() + win, buf.end(), std::complex<double>(0.0));
    fft_inplace(buf);
    for (int b = 0; b < num_bins; ++b) mag[b] = std::abs(buf[b]);
    for (int m = 0; m < cfg.num_mel_filters; ++m) {
      double e = 0.0;
      for (int b = 0; b < num_bins; ++b) e += fb.at(m, b) * mag[b];
      logmel[m] = std::log(std::max(e, cfg.log_floor));
    }
    // orthonormal DCT-II
    const int nm = cfg.num_mel_filters;
    for (int k = 0; k < cfg.num_coeffs; ++k) {
      double acc = 0.0;
      for (int m = 0; m < nm; ++m)
        acc += logmel[m] *
               std::cos(std::numbers::pi * k * (m + 0.5) / nm);
      double scale = (k == 0) ? std::sqrt(1.0 / nm) : std::sqrt(2.0 / nm);
      out.frames.at(fi, k) = scale * acc;
    }
  }
  return out;
}

FeatureMatrix sliding_cmn(const FeatureMatrix& f, double window_s) {
  if (f.num_frames() == 0) throw UsageError("sliding_cmn: empty input");
  const std::size_t t = f.num_frames();
  const std::size_t dim = f.dim();
  const long win_frames =
      std::max<long>(1, std::lround(window_s / f.frame_shift));
  const long half = win_frames / 2;

  FeatureMatrix out = f;
  std::vector<double> mean(dim);
  for (long i = 0; i < static_cast<long>(t); ++i) {
    long lo = std::max<long>(0, i - half);
    long hi = std::min<long>(static_cast<long>(t) - 1, i + half);
    std::fill(mean.begin(), mean.end(), 0.0);
    for (long j = lo; j <= hi; ++j)
      for (std::size_t d = 0; d < dim; ++d) mean[d] += f.frames.at(j, d);
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    for (std::size_t d = 0; d < dim; ++d)
      out.frames.at(i, d) = f.frames.at(i, d) - mean[d] * inv;
  }
  return out;
}

void save_features(const std::string& path, const FeatureMatrix& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write feature archive: " + path);
  os.write(kFeatMagic, 8);
  uint32_t version = kFeatVersion;
  uint32_t t = static_cast<uint32_t>(f.num_frames());
  uint32_t dim = static_cast<uint32_t>(f.dim());
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&t), 4);
  os.write(reinterpret_cast<const char*>(&dim), 4);
  os.write(reinterpret_cast<const char*>(&f.frame_shift), 8);
  os.write(reinterpret_cast<const char*>(&f.frame_width), 8);
  std::vector<float> row(dim);
  for (uint32_t i = 0; i < t; ++i) {
    for (uint32_t d = 0; d < dim; ++d)
      row[d] = static_cast<float>(f.frames.at(i, d));
    os.write(reinterpret_cast<const char*>(row.data()), dim * 4);
  }
  if (!os) throw IoError("write failed: " + path);
}

FeatureMatrix load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature archive: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kFeatMagic, 8) != 0)
    throw FormatError(path + ": bad feature archive magic");
  uint32_t version = 0, t = 0, dim = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&t), 4);
  is.read(reinterpret_cast<char*>(&dim), 4);
  if (!is || version != kFeatVersion)
    throw FormatError(path + ": unsupported feature archive version");
  FeatureMatrix f;
  is.read(reinterpret_cast<char*>(&f.frame_shift), 8);
  is.read(reinterpret_cast<char*>(&f.frame_width), 8);
  f.frames = Tensor(t, dim);
  std::vector<float> row(dim);
  for (uint32_t i = 0; i < t; ++i) {
    is.read(reinterpret_cast<char*>(row.data()), dim * 4);
    if (!is) throw FormatError(path + ": truncated feature archive");
    for (uint32_t d = 0; d < dim; ++d) f.frames.at(i, d) = row[d];
  }
  return f;
}

}  // namespace mspk
