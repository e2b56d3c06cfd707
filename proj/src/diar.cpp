#include "mspk/diar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "mspk/error.hpp"

namespace mspk {

std::vector<RttmSegment> read_rttm(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open rttm: " + path);
  std::vector<RttmSegment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string f;
    while (ls >> f) fields.push_back(f);
    if (fields.size() != 10)
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 10 "
                        "RTTM fields, got " + std::to_string(fields.size()));
    if (fields[0] != "SPEAKER")
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected SPEAKER record, got " + fields[0]);
    RttmSegment seg;
    seg.session_id = fields[1];
    try {
      seg.onset = std::stod(fields[3]);
      seg.duration = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": bad onset/duration");
    }
    seg.speaker = fields[7];
    if (seg.duration <= 0.0 || seg.onset < 0.0)
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": non-positive duration or negative onset");
    out.push_back(std::move(seg));
  }
  return out;
}

void write_rttm(const std::string& path,
                const std::vector<RttmSegment>& segments) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write rttm: " + path);
  char buf[64];
  for (const auto& s : segments) {
    std::snprintf(buf, sizeof(buf), "%.3f %.3f", s.onset, s.duration);
    os << "SPEAKER " << s.session_id << " 1 " << buf
       << " <NA> <NA> " << s.speaker << " <NA> <NA>\n";
  }
}

std::vector<Interval> speech_regions(const std::vector<RttmSegment>& ref) {
  std::vector<Interval> iv;
  for (const auto& s : ref) iv.emplace_back(s.onset, s.offset());
  std::sort(iv.begin(), iv.end());
  std::vector<Interval> merged;
  for (const auto& [on, off] : iv) {
    if (!merged.empty() && on <= merged.back().second + 1e-9)
      merged.back().second = std::max(merged.back().second, off);
    else
      merged.emplace_back(on, off);
  }
  return merged;
}

std::vector<Interval> uniform_segment(const std::vector<Interval>& regions,
                                      double width, double step) {
  std::vector<Interval> out;
  for (const auto& [on, off] : regions) {
    const std::size_t before = out.size();
    double t = on;
    while (t + width <= off + 1e-9) {
      out.emplace_back(t, t + width);
      t += step;
    }
    const bool emitted = out.size() > before;
    if (off - t >= 0.5 - 1e-9 && (!emitted || off - out.back().second > 1e-9))
      out.emplace_back(t, off);
    else if (!emitted)
      out.emplace_back(on, off);
  }
  return out;
}

namespace {

using Ms = long long;
Ms to_ms(double t) { return std::llround(t * 1000.0); }

struct Timeline {
  std::vector<Ms> bounds;  // sorted unique boundary times
  // active sets per elementary interval, by index into bounds
  std::vector<std::vector<int>> ref_active;
  std::vector<std::vector<int>> hyp_active;
  std::vector<std::string> ref_names;
  std::vector<std::string> hyp_names;
};

Timeline build_timeline(const std::vector<RttmSegment>& ref,
                        const std::vector<RttmSegment>& hyp,
                        const std::vector<Ms>& extra_bounds = {}) {
  Timeline tl;
  std::set<Ms> bset(extra_bounds.begin(), extra_bounds.end());
  std::map<std::string, int> rid, hid;
  for (const auto& s : ref) {
    bset.insert(to_ms(s.onset));
    bset.insert(to_ms(s.offset()));
    if (!rid.count(s.speaker)) {
      rid[s.speaker] = static_cast<int>(tl.ref_names.size());
      tl.ref_names.push_back(s.speaker);
    }
  }
  for (const auto& s : hyp) {
    bset.insert(to_ms(s.onset));
    bset.insert(to_ms(s.offset()));
    if (!hid.count(s.speaker)) {
      hid[s.speaker] = static_cast<int>(tl.hyp_names.size());
      tl.hyp_names.push_back(s.speaker);
    }
  }
  tl.bounds.assign(bset.begin(), bset.end());
  const std::size_t n =
      tl.bounds.empty() ? 0 : tl.bounds.size() - 1;
  tl.ref_active.resize(n);
  tl.hyp_active.resize(n);
  auto mark = [&](const std::vector<RttmSegment>& segs,
                  const std::map<std::string, int>& ids,
                  std::vector<std::vector<int>>& active) {
    for (const auto& s : segs) {
      const Ms on = to_ms(s.onset), off = to_ms(s.offset());
      const auto lo = std::lower_bound(tl.bounds.begin(), tl.bounds.end(), on);
      for (std::size_t i = static_cast<std::size_t>(lo - tl.bounds.begin());
           i < n && tl.bounds[i] < off; ++i) {
        const int id = ids.at(s.speaker);
        auto& v = active[i];
        if (std::find(v.begin(), v.end(), id) == v.end()) v.push_back(id);
      }
    }
  };
  mark(ref, rid, tl.ref_active);
  mark(hyp, hid, tl.hyp_active);
  return tl;
}

}  // namespace

std::vector<int> hungarian_max_assignment(const Tensor& weight) {
  // potentials-based Hungarian on the negated matrix
  const int rows = static_cast<int>(weight.rows);
  const int cols = static_cast<int>(weight.cols);
  const int n = std::max(rows, cols);
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, 0.0));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) cost[i + 1][j + 1] = -weight.at(i, j);

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0][j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(rows, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) assign[p[j] - 1] = j - 1;
  return assign;
}

std::map<std::string, std::string> optimal_speaker_map(
    const std::vector<RttmSegment>& ref, const std::vector<RttmSegment>& hyp) {
  Timeline tl = build_timeline(ref, hyp);
  const std::size_t nh = tl.hyp_names.size();
  const std::size_t nr = tl.ref_names.size();
  if (nh == 0 || nr == 0) return {};
  Tensor overlap(nh, nr);
  for (std::size_t i = 0; i + 1 < tl.bounds.size(); ++i) {
    const double dt = (tl.bounds[i + 1] - tl.bounds[i]) / 1000.0;
    for (int h : tl.hyp_active[i])
      for (int r : tl.ref_active[i]) overlap.at(h, r) += dt;
  }
  std::vector<int> assign = hungarian_max_assignment(overlap);
  std::map<std::string, std::string> out;
  for (std::size_t h = 0; h < nh; ++h)
    if (assign[h] >= 0 && overlap.at(h, assign[h]) > 0.0)
      out[tl.hyp_names[h]] = tl.ref_names[assign[h]];
  return out;
}

DerBreakdown der_score(const std::vector<RttmSegment>& ref,
                       const std::vector<RttmSegment>& hyp,
                       bool exclude_overlap, double collar) {
  // collar zones must land on elementary-interval boundaries, otherwise a
  // long interval touching a zone edge would be excluded wholesale
  std::vector<std::pair<Ms, Ms>> collar_zones;
  std::vector<Ms> collar_bounds;
  if (collar > 0.0) {
    const Ms c = to_ms(collar);
    for (const auto& s : ref) {
      collar_zones.emplace_back(to_ms(s.onset) - c, to_ms(s.onset) + c);
      collar_zones.emplace_back(to_ms(s.offset()) - c, to_ms(s.offset()) + c);
    }
    for (const auto& [lo, hi] : collar_zones) {
      if (lo > 0) collar_bounds.push_back(lo);
      if (hi > 0) collar_bounds.push_back(hi);
    }
  }
  Timeline tl = build_timeline(ref, hyp, collar_bounds);
  const auto label_map = optimal_speaker_map(ref, hyp);
  // ref speaker id for each mapped hyp id, or -1
  std::vector<int> mapped(tl.hyp_names.size(), -1);
  for (std::size_t h = 0; h < tl.hyp_names.size(); ++h) {
    auto it = label_map.find(tl.hyp_names[h]);
    if (it == label_map.end()) continue;
    for (std::size_t r = 0; r < tl.ref_names.size(); ++r)
      if (tl.ref_names[r] == it->second) mapped[h] = static_cast<int>(r);
  }

  auto in_collar = [&](Ms a, Ms b) {
    for (const auto& [lo, hi] : collar_zones)
      if (a < hi && b > lo) return true;
    return false;
  };

  DerBreakdown out;
  for (std::size_t i = 0; i + 1 < tl.bounds.size(); ++i) {
    const double dt = (tl.bounds[i + 1] - tl.bounds[i]) / 1000.0;
    const auto& ra = tl.ref_active[i];
    const auto& ha = tl.hyp_active[i];
    if (exclude_overlap && ra.size() >= 2) continue;
    if (collar > 0.0 && in_collar(tl.bounds[i], tl.bounds[i + 1])) continue;
    const std::size_t nr = ra.size();
    const std::size_t nh = ha.size();
    std::size_t matched = 0;
    for (int h : ha)
      if (mapped[h] >= 0 &&
          std::find(ra.begin(), ra.end(), mapped[h]) != ra.end())
        ++matched;
    out.scored_total += static_cast<double>(nr) * dt;
    if (nr > nh) out.missed += static_cast<double>(nr - nh) * dt;
    if (nh > nr) out.false_alarm += static_cast<double>(nh - nr) * dt;
    out.speaker_error +=
        static_cast<double>(std::min(nr, nh) - matched) * dt;
  }
  if (out.scored_total <= 0.0)
    throw NumericError("der_score: empty scored timeline, DER undefined");
  out.der = (out.missed + out.false_alarm + out.speaker_error) /
            out.scored_total;
  return out;
}

std::vector<RttmSegment> diarize_session(
    const std::string& session_id, const FeatureMatrix& features,
    const NetworkWeights& weights, const EncoderSpec& spec,
    const std::vector<RttmSegment>& reference, const DiarizeOptions& opts) {
  const auto regions = speech_regions(reference);
  if (regions.empty()) return {};
  const auto segments = uniform_segment(regions, opts.width, opts.step);
  const std::size_t n = segments.size();

  // per-segment embeddings, windows widened to the receptive field
  const int rf = spec.receptive_field();
  const long total_frames = static_cast<long>(features.num_frames());
  std::vector<std::vector<double>> embs;
  embs.reserve(n);
  for (const auto& [on, off] : segments) {
    long lo = std::lround(on / features.frame_shift);
    long hi = std::lround(off / features.frame_shift);
    lo = std::clamp<long>(lo, 0, total_frames);
    hi = std::clamp<long>(hi, 0, total_frames);
    while (hi - lo < rf) {
      if (lo > 0) --lo;
      if (hi - lo < rf && hi < total_frames) ++hi;
      if (lo == 0 && hi == total_frames) break;
    }
    if (hi - lo < rf)
      throw UsageError("diarize_session: session shorter than the encoder "
                       "receptive field");
    FeatureMatrix window;
    window.frame_shift = features.frame_shift;
    window.frame_width = features.frame_width;
    window.start_time = lo * features.frame_shift;
    window.frames = Tensor(static_cast<std::size_t>(hi - lo), features.dim());
    for (long i = lo; i < hi; ++i)
      std::copy(features.frames.row_ptr(i),
                features.frames.row_ptr(i) + features.dim(),
                window.frames.row_ptr(i - lo));
    embs.push_back(embed(weights, spec, window, opts.tap));
  }

  std::vector<int> labels(n, 0);
  if (n > 1) {
    Tensor emat(n, embs[0].size());
    for (std::size_t i = 0; i < n; ++i)
      std::copy(embs[i].begin(), embs[i].end(), emat.row_ptr(i));
    const Tensor affinity = cosine_affinity(emat);
    if (opts.clusterer == "ahc") {
      AhcStop stop;
      if (opts.oracle_k) {
        stop.use_threshold = false;
        stop.target_k = *opts.oracle_k;
      } else {
        stop.threshold = opts.ahc_threshold;
      }
      labels = ahc_cluster(affinity, stop);
    } else if (opts.clusterer == "nme-sc") {
      int k, p;
      if (opts.oracle_k) {
        k = std::clamp<int>(*opts.oracle_k, 1, static_cast<int>(n));
        p = nme_best_p_for_k(affinity, default_p_grid(n), k);
      } else {
        const NmeResult nme = nme_search(affinity, default_p_grid(n));
        k = std::clamp<int>(nme.k_est, 1, static_cast<int>(n));
        p = nme.best_p;
      }
      labels = spectral_cluster(binarize_affinity(affinity, p), k, opts.seed);
    } else {
      throw UsageError("diarize_session: unknown clusterer '" +
                       opts.clusterer + "'");
    }
  }

  // project window labels onto the timeline, splitting overlaps at midpoints
  std::vector<RttmSegment> hyp;
  std::size_t seg_idx = 0;
  for (const auto& [ron, roff] : regions) {
    std::vector<std::size_t> in_region;
    while (seg_idx < n && segments[seg_idx].first < roff - 1e-9)
      in_region.push_back(seg_idx++);
    if (in_region.empty()) continue;
    for (std::size_t j = 0; j < in_region.size(); ++j) {
      const auto& [son, soff] = segments[in_region[j]];
      double lo = (j == 0) ? ron
                           : 0.5 * (son + segments[in_region[j - 1]].second);
      double hi = (j + 1 == in_region.size())
                      ? roff
                      : 0.5 * (segments[in_region[j + 1]].first + soff);
      lo = std::max(lo, ron);
      hi = std::min(hi, roff);
      if (hi <= lo) continue;
      const std::string spk = "spk" + std::to_string(labels[in_region[j]]);
      if (!hyp.empty() && hyp.back().speaker == spk &&
          std::abs(hyp.back().offset() - lo) < 1e-6) {
        hyp.back().duration = hi - hyp.back().onset;
      } else {
        hyp.push_back({session_id, lo, hi - lo, spk});
      }
    }
  }
  return hyp;
}

}  // namespace mspk
