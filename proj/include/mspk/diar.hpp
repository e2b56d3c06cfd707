#ifndef MSPK_DIAR_HPP
#define MSPK_DIAR_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mspk/cluster.hpp"
#include "mspk/mfcc.hpp"
#include "mspk/nets.hpp"

namespace mspk {

struct RttmSegment {
  std::string session_id;
  double onset = 0.0;
  double duration = 0.0;
  std::string speaker;

  double offset() const { return onset + duration; }
};

std::vector<RttmSegment> read_rttm(const std::string& path);
void write_rttm(const std::string& path,
                const std::vector<RttmSegment>& segments);

using Interval = std::pair<double, double>;  // [onset, offset)

// Union of all speakers' turns, merged and sorted (oracle speech regions).
std::vector<Interval> speech_regions(const std::vector<RttmSegment>& ref);

// Windows of `width` every `step` inside each region; a shorter tail window
// is kept when it is at least 0.5 s, and regions below 0.5 s produce one
// window equal to the region.
std::vector<Interval> uniform_segment(const std::vector<Interval>& regions,
                                      double width = 1.5, double step = 0.75);

struct DiarizeOptions {
  double width = 1.5;
  double step = 0.75;
  std::string tap = "emb";
  std::optional<int> oracle_k;
  std::string clusterer = "nme-sc";  // or "ahc"
  double ahc_threshold = 0.0;
  uint64_t seed = 0;
};

// Full per-session pipeline: uniform segmentation of oracle speech regions,
// per-segment embeddings, cosine affinity, NME-SC (or AHC), label-to-
// timeline projection with midpoint splitting of overlapped windows.
std::vector<RttmSegment> diarize_session(
    const std::string& session_id, const FeatureMatrix& features,
    const NetworkWeights& weights, const EncoderSpec& spec,
    const std::vector<RttmSegment>& reference, const DiarizeOptions& opts);

// Maximum-overlap one-to-one assignment hypothesis label -> reference label
// (Hungarian algorithm); unmatched hypothesis labels are absent from the map.
std::map<std::string, std::string> optimal_speaker_map(
    const std::vector<RttmSegment>& ref, const std::vector<RttmSegment>& hyp);

// Maximum-weight one-to-one assignment on a rows x cols matrix; returns for
// each row the assigned column or -1.
std::vector<int> hungarian_max_assignment(const Tensor& weight);

struct DerBreakdown {
  double missed = 0.0;
  double false_alarm = 0.0;
  double speaker_error = 0.0;
  double scored_total = 0.0;
  double der = 0.0;
};

// Interval-based DER at 1 ms resolution. Regions where the reference has two
// or more concurrent speakers are excluded when exclude_overlap is set.
DerBreakdown der_score(const std::vector<RttmSegment>& ref,
                       const std::vector<RttmSegment>& hyp,
                       bool exclude_overlap = true, double collar = 0.0);

}  // namespace mspk

#endif
