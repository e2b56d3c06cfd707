// mspk: speaker embedding toolkit — feature extraction, episodic training,
// diarization, and verification from one binary.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mspk/config.hpp"
#include "mspk/diar.hpp"
#include "mspk/episodic.hpp"
#include "mspk/error.hpp"
#include "mspk/kernels.hpp"
#include "mspk/mfcc.hpp"
#include "mspk/nets.hpp"
#include "mspk/synth.hpp"
#include "mspk/verify.hpp"
#include "mspk/wav.hpp"

namespace fs = std::filesystem;
using namespace mspk;

namespace {

struct WavEntry {
  std::string utt_id, speaker_id, path;
};

std::vector<WavEntry> read_wav_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::vector<WavEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    WavEntry e;
    if (!(ls >> e.utt_id >> e.speaker_id >> e.path))
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected 'utt_id speaker_id path'");
    out.push_back(std::move(e));
  }
  return out;
}

FeatureMatrix extract(const Waveform& w, const RunConfig& cfg) {
  return sliding_cmn(compute_mfcc(w, cfg.features), cfg.cmn_window_s);
}

int cmd_features(const RunConfig& cfg, const std::string& manifest,
                 const std::string& out_dir, const std::string& wav_in,
                 const std::string& out_file, int jobs) {
  if (!wav_in.empty()) {
    if (out_file.empty())
      throw UsageError("features: --wav requires --out");
    save_features(out_file, extract(read_wav(wav_in), cfg));
    return 0;
  }
  if (manifest.empty() || out_dir.empty())
    throw UsageError("features: need --manifest and --out-dir (or --wav/--out)");
  const auto entries = read_wav_manifest(manifest);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);
  std::vector<std::string> feat_paths(entries.size());
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (std::size_t i = 0; i < entries.size(); ++i) {
    try {
      const std::string p =
          (fs::path(out_dir) / (entries[i].utt_id + ".feat")).string();
      save_features(p, extract(read_wav(entries[i].path), cfg));
      feat_paths[i] = p;
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  const std::string out_manifest =
      (fs::path(out_dir) / "feats_manifest.txt").string();
  std::ofstream os(out_manifest);
  if (!os) throw IoError("cannot write manifest: " + out_manifest);
  for (std::size_t i = 0; i < entries.size(); ++i)
    os << entries[i].utt_id << " " << entries[i].speaker_id << " "
       << feat_paths[i] << "\n";
  std::cout << "wrote " << entries.size() << " feature archives; manifest "
            << out_manifest << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& manifest,
              const std::string& out_weights, const std::string& out_log,
              const std::string& pretrained_path) {
  const auto store = load_manifest(manifest);
  const EncoderSpec spec = cfg.encoder_spec();
  std::optional<NetworkWeights> pretrained;
  if (!pretrained_path.empty()) {
    const EncoderSpec src = parse_spec_text(
        load_weights_spec_text(pretrained_path));
    pretrained = load_weights(pretrained_path, src);
  }
  long done = 0;
  const auto result =
      train(store, cfg.train, spec, pretrained, [&](const StepLog& s) {
        ++done;
        if (done % 100 == 0)
          std::cerr << "step " << s.step << " lr " << s.lr << " loss "
                    << s.loss << " acc " << s.accuracy << "\n";
      });
  save_weights(result.weights, spec, out_weights);
  if (!out_log.empty()) save_loss_log(out_log, result.log);
  std::cout << "trained " << result.log.size() << " steps; weights "
            << out_weights << "\n";
  return 0;
}

int cmd_embed(const std::string& weights_path, const std::string& manifest,
              const std::string& feats, const std::string& tap,
              const std::string& out, int jobs) {
  const EncoderSpec spec =
      parse_spec_text(load_weights_spec_text(weights_path));
  const NetworkWeights weights = load_weights(weights_path, spec);
  std::map<std::string, std::vector<double>> embs;
  if (!feats.empty()) {
    embs["utt"] = embed(weights, spec, load_features(feats), tap);
  } else if (!manifest.empty()) {
    const auto store = load_manifest(manifest);
    std::vector<std::vector<double>> out_vecs(store.utterances.size());
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
    for (std::size_t i = 0; i < store.utterances.size(); ++i) {
      try {
        out_vecs[i] =
            embed(weights, spec, store.utterances[i].features, tap);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
    for (std::size_t i = 0; i < store.utterances.size(); ++i)
      embs[store.utterances[i].utt_id] = std::move(out_vecs[i]);
  } else {
    throw UsageError("embed: need --manifest or --features");
  }
  save_embeddings(out, embs);
  std::cout << "wrote " << embs.size() << " embeddings to " << out << "\n";
  return 0;
}

int cmd_diarize(const RunConfig& cfg, const std::string& weights_path,
                const std::string& feats_path, const std::string& ref_path,
                const std::string& out_path, bool oracle_k) {
  const EncoderSpec spec =
      parse_spec_text(load_weights_spec_text(weights_path));
  const NetworkWeights weights = load_weights(weights_path, spec);
  const auto ref = read_rttm(ref_path);
  if (ref.empty()) throw FormatError(ref_path + ": empty reference RTTM");
  DiarizeOptions opts;
  opts.width = cfg.diarize_width;
  opts.step = cfg.diarize_step;
  opts.tap = cfg.diarize_tap;
  opts.clusterer = cfg.diarize_clusterer;
  opts.ahc_threshold = cfg.diarize_ahc_threshold;
  opts.seed = cfg.train.seed;
  if (oracle_k || cfg.diarize_oracle_k) {
    std::set<std::string> spk;
    for (const auto& s : ref) spk.insert(s.speaker);
    opts.oracle_k = static_cast<int>(spk.size());
  }
  const auto hyp = diarize_session(ref.front().session_id,
                                   load_features(feats_path), weights, spec,
                                   ref, opts);
  write_rttm(out_path, hyp);
  std::cout << "wrote " << hyp.size() << " segments to " << out_path << "\n";
  return 0;
}

int cmd_score_der(const std::string& ref_path, const std::string& hyp_path,
                  double collar, bool include_overlap) {
  const auto b = der_score(read_rttm(ref_path), read_rttm(hyp_path),
                           !include_overlap, collar);
  std::printf("missed        %9.3f s\n", b.missed);
  std::printf("false alarm   %9.3f s\n", b.false_alarm);
  std::printf("speaker error %9.3f s\n", b.speaker_error);
  std::printf("scored total  %9.3f s\n", b.scored_total);
  std::printf("DER %.2f%%\n", 100.0 * b.der);
  return 0;
}

std::map<int, std::string> invert_labels(
    const std::map<std::string, int>& fwd) {
  std::map<int, std::string> inv;
  for (const auto& [k, v] : fwd) inv[v] = k;
  return inv;
}

int cmd_score_trials(const RunConfig& cfg, const std::string& emb_path,
                     const std::string& trials_path,
                     const std::string& train_emb_path,
                     const std::string& train_labels_path,
                     const std::string& out_path) {
  const auto embs = load_embeddings(emb_path);
  auto trials = read_trials(trials_path, false);
  auto lookup = [&](const std::string& id) -> const std::vector<double>& {
    auto it = embs.find(id);
    if (it == embs.end())
      throw UsageError("trial references unknown utterance: " + id);
    return it->second;
  };
  if (cfg.verify_backend == "cosine") {
    for (auto& t : trials)
      t.score = cosine_score(lookup(t.enroll_utt), lookup(t.test_utt));
  } else if (cfg.verify_backend == "plda") {
    if (train_emb_path.empty() || train_labels_path.empty())
      throw UsageError("score-trials: plda backend needs --train-emb and "
                       "--train-labels");
    const auto train_embs = load_embeddings(train_emb_path);
    std::ifstream ls(train_labels_path);
    if (!ls) throw IoError("cannot open labels: " + train_labels_path);
    std::map<std::string, int> spk_index;
    std::vector<std::pair<std::string, int>> labeled;
    std::string utt, spk;
    while (ls >> utt >> spk) {
      auto [it, inserted] =
          spk_index.emplace(spk, static_cast<int>(spk_index.size()));
      labeled.emplace_back(utt, it->second);
    }
    if (labeled.empty())
      throw FormatError(train_labels_path + ": no labels");
    const std::size_t dim = train_embs.begin()->second.size();
    Tensor x(labeled.size(), dim);
    std::vector<int> y(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      auto it = train_embs.find(labeled[i].first);
      if (it == train_embs.end())
        throw UsageError("label references unknown utterance: " +
                         labeled[i].first);
      for (std::size_t j = 0; j < dim; ++j) x.at(i, j) = it->second[j];
      y[i] = labeled[i].second;
    }
    const int lda_dim =
        std::min<int>(cfg.verify_lda_dim,
                      static_cast<int>(std::min(dim, spk_index.size() - 1)));
    const LdaTransform lda = fit_lda(x, y, lda_dim);
    Tensor xt(labeled.size(), static_cast<std::size_t>(lda_dim));
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      std::vector<double> row(dim);
      for (std::size_t j = 0; j < dim; ++j) row[j] = x.at(i, j);
      auto p = lda.apply(row);
      length_normalize(p);
      for (int j = 0; j < lda_dim; ++j) xt.at(i, j) = p[j];
    }
    const auto fit = fit_plda(xt, y, cfg.verify_plda_iters);
    const PldaScorer scorer(fit.model);
    auto project = [&](const std::vector<double>& e) {
      auto p = lda.apply(e);
      length_normalize(p);
      return p;
    };
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < trials.size(); ++i) {
      try {
        trials[i].score = scorer.score(project(lookup(trials[i].enroll_utt)),
                                       project(lookup(trials[i].test_utt)));
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  } else {
    throw UsageError("bad config value verify.backend = " +
                     cfg.verify_backend);
  }
  write_scores(out_path, trials);
  std::cout << "scored " << trials.size() << " trials to " << out_path
            << "\n";
  return 0;
}

int cmd_eval_eer(const RunConfig& cfg, const std::string& scores_path) {
  const auto trials = read_trials(scores_path, true);
  const auto m = evaluate_trials(trials, cfg.verify_p_target);
  std::printf("EER %.3f%%\n", 100.0 * m.eer);
  std::printf("minDCF(P_target=%g) %.6f (raw %.6f)\n", cfg.verify_p_target,
              m.min_dcf_norm, m.min_dcf);
  return 0;
}

int cmd_info(const std::string& weights_path) {
  const std::string text = load_weights_spec_text(weights_path);
  const EncoderSpec spec = parse_spec_text(text);
  std::cout << "spec: " << text << "\n";
  std::cout << "fingerprint: " << spec_fingerprint(spec) << "\n";
  std::cout << "parameters: " << param_count(spec) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "mspk — speaker embedding toolkit (features, episodic training, "
      "diarization, verification).\nExit codes: 0 ok, 1 usage error, "
      "2 I/O error, 3 numeric error, 4 file format error."};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  bool dump = false;
  app.add_option("--config", config_path, "Config file (section.key = value)");
  app.add_option("--seed", seed, "Random seed override")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--jobs", jobs, "Worker threads (0 = hardware default)");
  app.add_flag("--dump-config", dump,
               "Print the effective config and exit");

  // features
  auto* c_feat = app.add_subcommand("features", "WAV -> MFCC+CMN archives");
  std::string f_manifest, f_outdir, f_wav, f_out;
  c_feat->add_option("--manifest", f_manifest,
                     "Manifest: utt_id speaker_id wav_path");
  c_feat->add_option("--out-dir", f_outdir, "Output directory");
  c_feat->add_option("--wav", f_wav, "Single input WAV");
  c_feat->add_option("--out", f_out, "Single output archive");

  // train
  auto* c_train = app.add_subcommand("train", "Train encoder from manifest");
  std::string t_manifest, t_out, t_log, t_pre;
  c_train->add_option("--manifest", t_manifest,
                      "Manifest: utt_id speaker_id feature_path")
      ->required();
  c_train->add_option("--out", t_out, "Output weight file")->required();
  c_train->add_option("--log", t_log, "Loss log (step lr loss acc)");
  c_train->add_option("--pretrained", t_pre,
                      "Initialize trunk from these weights");

  // embed
  auto* c_embed = app.add_subcommand("embed", "Extract embeddings");
  std::string e_weights, e_manifest, e_feats, e_tap = "emb", e_out;
  c_embed->add_option("--weights", e_weights, "Weight file")->required();
  c_embed->add_option("--manifest", e_manifest, "Feature manifest");
  c_embed->add_option("--features", e_feats, "Single feature archive");
  c_embed->add_option("--tap", e_tap, "Embedding tap (fc1/fc2/emb)");
  c_embed->add_option("--out", e_out, "Output embedding archive")->required();

  // diarize
  auto* c_diar = app.add_subcommand("diarize", "Diarize one session");
  std::string d_weights, d_feats, d_ref, d_out;
  bool d_oracle_k = false;
  c_diar->add_option("--weights", d_weights, "Weight file")->required();
  c_diar->add_option("--features", d_feats, "Session feature archive")
      ->required();
  c_diar->add_option("--ref", d_ref, "Reference RTTM (oracle SAD)")
      ->required();
  c_diar->add_option("--out", d_out, "Hypothesis RTTM")->required();
  c_diar->add_flag("--oracle-k", d_oracle_k,
                   "Use the reference speaker count");

  // score-der
  auto* c_der = app.add_subcommand("score-der", "Score hypothesis RTTM");
  std::string der_ref, der_hyp;
  double der_collar = 0.0;
  bool der_overlap = false;
  c_der->add_option("ref", der_ref, "Reference RTTM")->required();
  c_der->add_option("hyp", der_hyp, "Hypothesis RTTM")->required();
  c_der->add_option("--collar", der_collar, "Forgiveness collar (s)");
  c_der->add_flag("--include-overlap", der_overlap,
                  "Score overlapped reference regions too");

  // score-trials
  auto* c_tr = app.add_subcommand("score-trials", "Score verification trials");
  std::string tr_emb, tr_trials, tr_train_emb, tr_train_labels, tr_out;
  c_tr->add_option("--emb", tr_emb, "Trial embedding archive")->required();
  c_tr->add_option("--trials", tr_trials,
                   "Trial list: enroll test target|nontarget")
      ->required();
  c_tr->add_option("--train-emb", tr_train_emb,
                   "Backend training embedding archive");
  c_tr->add_option("--train-labels", tr_train_labels,
                   "Backend training labels: utt_id speaker_id");
  c_tr->add_option("--out", tr_out, "Output score file")->required();

  // eval-eer
  auto* c_eer = app.add_subcommand("eval-eer", "EER/minDCF from a score file");
  std::string eer_scores;
  c_eer->add_option("scores", eer_scores, "Score file")->required();

  // info
  auto* c_info = app.add_subcommand("info", "Inspect a weight file");
  std::string info_weights;
  c_info->add_option("weights", info_weights, "Weight file")->required();

  // gen-synth
  auto* c_gen = app.add_subcommand(
      "gen-synth", "Generate the synthetic corpus (band-limited speakers)");
  std::string g_out;
  SynthConfig g_cfg;
  c_gen->add_option("--out-dir", g_out, "Corpus directory")->required();
  c_gen->add_option("--speakers", g_cfg.num_speakers, "Training speakers");
  c_gen->add_option("--utts", g_cfg.utts_per_speaker,
                    "Utterances per speaker");
  c_gen->add_option("--utt-seconds", g_cfg.utt_seconds, "Utterance length");
  c_gen->add_option("--sessions", g_cfg.num_sessions, "Test sessions");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (seed_set) cfg.train.seed = seed;
    if (jobs > 0) kernels::set_num_threads(jobs);
    const int eff_jobs = jobs > 0 ? jobs : 1;
    if (dump) {
      std::cout << dump_config(cfg);
      return 0;
    }
    if (c_feat->parsed())
      return cmd_features(cfg, f_manifest, f_outdir, f_wav, f_out, eff_jobs);
    if (c_train->parsed()) return cmd_train(cfg, t_manifest, t_out, t_log, t_pre);
    if (c_embed->parsed())
      return cmd_embed(e_weights, e_manifest, e_feats, e_tap, e_out, eff_jobs);
    if (c_diar->parsed())
      return cmd_diarize(cfg, d_weights, d_feats, d_ref, d_out, d_oracle_k);
    if (c_der->parsed())
      return cmd_score_der(der_ref, der_hyp, der_collar, der_overlap);
    if (c_tr->parsed())
      return cmd_score_trials(cfg, tr_emb, tr_trials, tr_train_emb,
                              tr_train_labels, tr_out);
    if (c_eer->parsed()) return cmd_eval_eer(cfg, eer_scores);
    if (c_info->parsed()) return cmd_info(info_weights);
    if (c_gen->parsed()) {
      g_cfg.seed = cfg.train.seed;
      const std::string m = generate_corpus(g_out, g_cfg);
      std::cout << "corpus at " << g_out << "; manifest " << m << "\n";
      return 0;
    }
    throw UsageError("no subcommand");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
