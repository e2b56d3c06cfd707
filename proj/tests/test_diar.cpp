#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mspk/diar.hpp"
#include "mspk/error.hpp"

using namespace mspk;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

RttmSegment seg(double on, double dur, const std::string& spk,
                const std::string& sid = "sess") {
  return {sid, on, dur, spk};
}

// 10 ms frame-quantized brute-force DER scorer with exhaustive mapping.
// Returns one breakdown per maximum-overlap speaker map (ties included).
std::vector<DerBreakdown> frame_der(const std::vector<RttmSegment>& ref,
                                    const std::vector<RttmSegment>& hyp,
                                    bool exclude_overlap, double collar) {
  const double dt = 0.01;
  double tmax = 0.0;
  for (const auto& s : ref) tmax = std::max(tmax, s.offset());
  for (const auto& s : hyp) tmax = std::max(tmax, s.offset());
  const int frames = static_cast<int>(std::lround(tmax / dt));

  std::vector<std::string> rnames, hnames;
  for (const auto& s : ref)
    if (std::find(rnames.begin(), rnames.end(), s.speaker) == rnames.end())
      rnames.push_back(s.speaker);
  for (const auto& s : hyp)
    if (std::find(hnames.begin(), hnames.end(), s.speaker) == hnames.end())
      hnames.push_back(s.speaker);

  // integer millisecond arithmetic; frame f covers [10f, 10f + 10) ms
  auto ms = [](double t) { return std::llround(t * 1000.0); };
  auto active = [&](const std::vector<RttmSegment>& segs,
                    const std::vector<std::string>& names, int f) {
    std::set<int> a;
    const long long mid = 10LL * f + 5;
    for (const auto& s : segs)
      if (ms(s.onset) <= mid && mid < ms(s.offset()))
        a.insert(static_cast<int>(
            std::find(names.begin(), names.end(), s.speaker) - names.begin()));
    return a;
  };
  auto in_collar = [&](int f) {
    if (collar <= 0.0) return false;
    const long long lo = 10LL * f, hi = lo + 10, c = ms(collar);
    for (const auto& s : ref)
      for (long long edge : {ms(s.onset), ms(s.offset())})
        if (lo < edge + c && hi > edge - c) return true;
    return false;
  };

  // overlap matrix over the whole timeline (same convention as the mapping)
  std::vector<std::vector<double>> overlap(
      hnames.size(), std::vector<double>(rnames.size(), 0.0));
  for (int f = 0; f < frames; ++f) {
    const auto ra = active(ref, rnames, f);
    const auto ha = active(hyp, hnames, f);
    for (int h : ha)
      for (int r : ra) overlap[h][r] += dt;
  }
  // exhaustive assignment hyp -> ref; ties in total overlap are real with
  // quantized durations, so keep every maximum-weight map
  const std::size_t nh = hnames.size(), nr = rnames.size();
  std::vector<std::vector<int>> best_maps;
  double best_w = -1.0;
  std::vector<int> perm(std::max(nh, nr));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    double w = 0.0;
    std::vector<int> m(nh, -1);
    for (std::size_t h = 0; h < nh; ++h) {
      const int r = perm[h];
      if (static_cast<std::size_t>(r) < nr) {
        m[h] = r;
        w += overlap[h][r];
      }
    }
    if (w > best_w + 1e-9) {
      best_w = w;
      best_maps.clear();
    }
    if (w > best_w - 1e-9) best_maps.push_back(m);
  } while (std::next_permutation(perm.begin(), perm.end()));

  std::vector<DerBreakdown> candidates;
  for (auto map : best_maps) {
    for (std::size_t h = 0; h < nh; ++h)
      if (map[h] >= 0 && overlap[h][map[h]] <= 0.0) map[h] = -1;
    DerBreakdown out;
    for (int f = 0; f < frames; ++f) {
      const auto ra = active(ref, rnames, f);
      const auto ha = active(hyp, hnames, f);
      if (exclude_overlap && ra.size() >= 2) continue;
      if (in_collar(f)) continue;
      std::size_t matched = 0;
      for (int h : ha)
        if (map[h] >= 0 && ra.count(map[h])) ++matched;
      out.scored_total += static_cast<double>(ra.size()) * dt;
      if (ra.size() > ha.size())
        out.missed += static_cast<double>(ra.size() - ha.size()) * dt;
      if (ha.size() > ra.size())
        out.false_alarm += static_cast<double>(ha.size() - ra.size()) * dt;
      out.speaker_error +=
          static_cast<double>(std::min(ra.size(), ha.size()) - matched) * dt;
    }
    out.der =
        (out.missed + out.false_alarm + out.speaker_error) / out.scored_total;
    candidates.push_back(out);
  }
  return candidates;
}

// random 10 ms aligned segments for a 3-speaker session
std::vector<RttmSegment> random_session(std::mt19937_64& rng, int n_spk,
                                        int segments) {
  std::uniform_int_distribution<int> on_d(0, 1500);   // x10 ms
  std::uniform_int_distribution<int> dur_d(30, 300);  // 0.3 - 3 s
  std::uniform_int_distribution<int> spk_d(0, n_spk - 1);
  std::vector<RttmSegment> out;
  for (int i = 0; i < segments; ++i)
    out.push_back(seg(on_d(rng) * 0.01, dur_d(rng) * 0.01,
                      "s" + std::to_string(spk_d(rng))));
  return out;
}

}  // namespace

TEST_CASE("rttm round trip and malformed lines") {
  std::vector<RttmSegment> segs = {seg(0.0, 2.5, "alice"),
                                   seg(2.5, 1.25, "bob"),
                                   seg(10.125, 0.875, "alice")};
  const std::string p = tmp_path("mspk_test.rttm");
  write_rttm(p, segs);
  const auto r = read_rttm(p);
  REQUIRE(r.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r[i].onset == doctest::Approx(segs[i].onset).epsilon(1e-9));
    CHECK(r[i].duration == doctest::Approx(segs[i].duration).epsilon(1e-9));
    CHECK(r[i].speaker == segs[i].speaker);
    CHECK(r[i].session_id == "sess");
  }

  std::ofstream os(p);
  os << "SPEAKER sess 1 0.0 1.0 <NA> <NA> alice <NA>\n";  // 9 fields
  os.close();
  CHECK_THROWS_AS(read_rttm(p), FormatError);
  std::ofstream os2(p);
  os2 << "LEXEME sess 1 0.0 1.0 <NA> <NA> alice <NA> <NA>\n";
  os2.close();
  CHECK_THROWS_AS(read_rttm(p), FormatError);
  std::ofstream os3(p);
  os3 << "SPEAKER sess 1 0.0 -1.0 <NA> <NA> alice <NA> <NA>\n";
  os3.close();
  CHECK_THROWS_AS(read_rttm(p), FormatError);
  CHECK_THROWS_AS(read_rttm(tmp_path("mspk_no_such.rttm")), IoError);
}

TEST_CASE("speech regions merge overlapping turns") {
  const auto regions = speech_regions(
      {seg(3.0, 2.0, "b"), seg(0.0, 2.0, "a"), seg(1.5, 1.0, "b"),
       seg(8.0, 1.0, "a")});
  REQUIRE(regions.size() == 3);
  CHECK(regions[0].first == doctest::Approx(0.0));
  CHECK(regions[0].second == doctest::Approx(2.5));
  CHECK(regions[1].first == doctest::Approx(3.0));
  CHECK(regions[1].second == doctest::Approx(5.0));
  CHECK(regions[2].first == doctest::Approx(8.0));
  CHECK(regions[2].second == doctest::Approx(9.0));
}

TEST_CASE("uniform segmentation examples") {
  const auto w3 = uniform_segment({{0.0, 3.0}});
  REQUIRE(w3.size() == 3);
  CHECK(w3[0] == Interval{0.0, 1.5});
  CHECK(w3[1] == Interval{0.75, 2.25});
  CHECK(w3[2] == Interval{1.5, 3.0});

  const auto w1 = uniform_segment({{0.0, 1.0}});
  REQUIRE(w1.size() == 1);
  CHECK(w1[0] == Interval{0.0, 1.0});

  const auto tiny = uniform_segment({{2.0, 2.3}});
  REQUIRE(tiny.size() == 1);
  CHECK(tiny[0] == Interval{2.0, 2.3});
}

TEST_CASE("uniform segmentation: containment and coverage properties") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> on_d(0.0, 50.0), len_d(0.3, 12.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double on = on_d(rng), off = on + len_d(rng);
    const auto wins = uniform_segment({{on, off}});
    REQUIRE(!wins.empty());
    CHECK(wins.front().first == doctest::Approx(on));
    CHECK(wins.back().second == doctest::Approx(off));
    double covered = on;
    for (const auto& [a, b] : wins) {
      CHECK(a >= on - 1e-9);
      CHECK(b <= off + 1e-9);
      CHECK(b > a);
      CHECK(a <= covered + 1e-9);  // no gap
      covered = std::max(covered, b);
    }
    CHECK(covered == doctest::Approx(off));
  }
}

TEST_CASE("hungarian assignment: closed form and brute force") {
  Tensor w(2, 2);
  w.at(0, 0) = 5.0;
  w.at(0, 1) = 1.0;
  w.at(1, 0) = 2.0;
  w.at(1, 1) = 4.0;
  const auto a = hungarian_max_assignment(w);
  CHECK(a == std::vector<int>{0, 1});

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0.0, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor m(5, 5);
    for (double& v : m.data) v = d(rng);
    const auto got = hungarian_max_assignment(m);
    double got_w = 0.0;
    for (int i = 0; i < 5; ++i) {
      REQUIRE(got[i] >= 0);
      got_w += m.at(i, got[i]);
    }
    std::vector<int> perm{0, 1, 2, 3, 4};
    double best = -1.0;
    do {
      double s = 0.0;
      for (int i = 0; i < 5; ++i) s += m.at(i, perm[i]);
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got_w == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("der closed forms") {
  const std::vector<RttmSegment> ref = {seg(0.0, 6.0, "A"), seg(6.0, 4.0, "B")};
  const auto zero = der_score(ref, ref);
  CHECK(zero.der == doctest::Approx(0.0));
  CHECK(zero.scored_total == doctest::Approx(10.0));

  // one hypothesis label across both: maps to A, B's 4 s become errors
  const std::vector<RttmSegment> hyp = {seg(0.0, 10.0, "x")};
  const auto r = der_score(ref, hyp);
  CHECK(r.speaker_error == doctest::Approx(4.0));
  CHECK(r.missed == doctest::Approx(0.0));
  CHECK(r.false_alarm == doctest::Approx(0.0));
  CHECK(r.der == doctest::Approx(0.4));

  CHECK_THROWS_AS(der_score({}, hyp), NumericError);
}

TEST_CASE("der is invariant to hypothesis relabeling and splitting") {
  std::mt19937_64 rng(3);
  const auto ref = random_session(rng, 3, 8);
  const auto hyp = random_session(rng, 3, 8);
  const auto base = der_score(ref, hyp);

  std::vector<RttmSegment> renamed = hyp;
  for (auto& s : renamed) s.speaker = "other_" + s.speaker;
  CHECK(der_score(ref, renamed).der == doctest::Approx(base.der).epsilon(1e-12));

  std::vector<RttmSegment> split;
  for (const auto& s : hyp) {
    split.push_back(seg(s.onset, s.duration / 2, s.speaker, s.session_id));
    split.push_back(seg(s.onset + s.duration / 2, s.duration / 2, s.speaker,
                        s.session_id));
  }
  CHECK(der_score(ref, split).der == doctest::Approx(base.der).epsilon(1e-12));
}

TEST_CASE("der matches a 10 ms frame-quantized brute-force scorer") {
  std::mt19937_64 rng(4);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto ref = random_session(rng, 3, 6);
    const auto hyp = random_session(rng, 3, 6);
    const bool excl = trial % 2 == 0;
    const double collar = (trial % 4 == 1) ? 0.25 : 0.0;
    DerBreakdown got;
    try {
      got = der_score(ref, hyp, excl, collar);
    } catch (const NumericError&) {
      continue;  // everything excluded; the oracle would divide by zero too
    }
    const auto cands = frame_der(ref, hyp, excl, collar);
    REQUIRE(!cands.empty());
    double best = 1e300;
    for (const auto& want : cands) {
      CHECK(got.scored_total ==
            doctest::Approx(want.scored_total).epsilon(1e-6));
      best = std::min(best, std::abs(got.der - want.der));
    }
    CHECK(best < 0.001);
    ++checked;
  }
  CHECK(checked >= 190);
}

TEST_CASE("optimal speaker map picks maximum overlap") {
  const std::vector<RttmSegment> ref = {seg(0.0, 6.0, "A"), seg(6.0, 4.0, "B")};
  const std::vector<RttmSegment> hyp = {seg(0.0, 5.0, "h1"),
                                        seg(5.0, 5.0, "h2")};
  const auto m = optimal_speaker_map(ref, hyp);
  CHECK(m.at("h1") == "A");
  CHECK(m.at("h2") == "B");
}

TEST_CASE("diarize_session: degenerate single-speaker session") {
  EncoderSpec spec;
  spec.input_dim = 3;
  spec.tdnn_stack = {{4, 1, 2}, {5, 2, 2}};
  spec.head = HeadKind::kProtonet;
  spec.fc_dim = 6;
  NetworkWeights w = build_network(spec, 1);

  std::mt19937_64 rng(5);
  FeatureMatrix f;
  f.frame_shift = 0.01;
  f.frame_width = 0.025;
  f.frames = Tensor(300, 3);  // 3 s
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (double& v : f.frames.data) v = d(rng);

  const std::vector<RttmSegment> ref = {seg(0.0, 3.0, "only")};
  DiarizeOptions opts;
  opts.oracle_k = 1;
  const auto hyp = diarize_session("sess", f, w, spec, ref, opts);
  REQUIRE(!hyp.empty());
  CHECK(hyp.front().onset == doctest::Approx(0.0));
  CHECK(hyp.back().offset() == doctest::Approx(3.0));
  for (const auto& s : hyp) CHECK(s.speaker == hyp.front().speaker);
  CHECK(der_score(ref, hyp).der == doctest::Approx(0.0));

  // empty reference: nothing to diarize
  CHECK(diarize_session("sess", f, w, spec, {}, opts).empty());
}
