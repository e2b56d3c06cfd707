#include "mspk/episodic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mspk/error.hpp"

namespace mspk {

void LabeledUtteranceStore::add(UtteranceRecord rec) {
  by_speaker[rec.speaker_id].push_back(utterances.size());
  utterances.push_back(std::move(rec));
}

LabeledUtteranceStore load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  LabeledUtteranceStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    UtteranceRecord rec;
    if (!(ls >> rec.utt_id >> rec.speaker_id >> rec.feature_path))
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected 'utt_id speaker_id feature_path'");
    rec.features = load_features(rec.feature_path);
    store.add(std::move(rec));
  }
  return store;
}

void save_manifest(const std::string& path, const LabeledUtteranceStore& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest: " + path);
  for (const auto& u : s.utterances)
    os << u.utt_id << " " << u.speaker_id << " " << u.feature_path << "\n";
}

namespace {

// Partial Fisher-Yates draw of k items from [0, n).
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k,
                                                  std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> u(i, n - 1);
    std::swap(idx[i], idx[u(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

Episode sample_episode(const LabeledUtteranceStore& store, int way, int shot,
                       int n_query, std::mt19937_64& rng) {
  if (way < 2 || shot < 1 || n_query < 1)
    throw UsageError("sample_episode: way >= 2, shot >= 1, n_query >= 1");
  const std::size_t need =
      static_cast<std::size_t>(shot) + static_cast<std::size_t>(n_query);
  std::vector<const std::vector<std::size_t>*> pools;
  std::vector<std::string> names;
  for (const auto& [spk, utts] : store.by_speaker)
    if (utts.size() >= need) {
      pools.push_back(&utts);
      names.push_back(spk);
    }
  if (pools.size() < static_cast<std::size_t>(way))
    throw UsageError("sample_episode: need " + std::to_string(way) +
                     " speakers with >= " + std::to_string(need) +
                     " utterances, only " + std::to_string(pools.size()) +
                     " available");
  auto chosen = draw_without_replacement(pools.size(),
                                         static_cast<std::size_t>(way), rng);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.n_query = n_query;
  ep.supports.resize(way);
  ep.queries.resize(way);
  for (int c = 0; c < way; ++c) {
    const auto& pool = *pools[chosen[c]];
    auto picks = draw_without_replacement(pool.size(), need, rng);
    for (int s = 0; s < shot; ++s) ep.supports[c].push_back(pool[picks[s]]);
    for (int q = 0; q < n_query; ++q)
      ep.queries[c].push_back(pool[picks[shot + q]]);
  }
  return ep;
}

namespace {

struct EpisodeGraph {
  Graph g;
  Graph::NodeId logits = -1;
  std::vector<int> targets;
};

void collect_utterances(const Episode& ep, const LabeledUtteranceStore& store,
                        std::vector<const FeatureMatrix*>& utts) {
  for (const auto& cls : ep.supports)
    for (std::size_t i : cls) utts.push_back(&store.utterances[i].features);
  for (const auto& cls : ep.queries)
    for (std::size_t i : cls) utts.push_back(&store.utterances[i].features);
}

EpisodeLossResult finish_episode(Graph& g, Graph::NodeId logits,
                                 const std::vector<int>& targets,
                                 std::map<std::string, Tensor>* grads) {
  Graph::NodeId loss = g.softmax_xent(logits, targets);
  if (grads) g.backward(loss);
  const Tensor& lv = g.value(logits);
  int correct = 0;
  for (std::size_t i = 0; i < lv.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < lv.cols; ++j)
      if (lv.at(i, j) > lv.at(i, best)) best = j;
    if (static_cast<int>(best) == targets[i]) ++correct;
  }
  EpisodeLossResult r;
  r.loss = g.value(loss).data[0];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(lv.rows);
  return r;
}

}  // namespace

EpisodeLossResult proto_episode_loss(const Episode& ep,
                                     const LabeledUtteranceStore& store,
                                     NetworkWeights& weights,
                                     const EncoderSpec& spec,
                                     std::map<std::string, Tensor>* grads,
                                     bool training, std::mt19937_64& rng) {
  if (spec.head != HeadKind::kProtonet)
    throw UsageError("proto_episode_loss: spec head is not protonet");
  for (const auto& cls : ep.supports)
    if (cls.empty()) throw UsageError("proto_episode_loss: class without supports");
  std::vector<const FeatureMatrix*> utts;
  collect_utterances(ep, store, utts);
  Graph g;
  EncoderTaps taps = encode_batch(g, spec, weights, grads, utts, training, rng);
  const Graph::NodeId emb = taps.embedding;

  // prototypes: mean of support embeddings per class (rows are class-major)
  std::vector<Graph::NodeId> protos(ep.way);
  std::size_t row = 0;
  for (int c = 0; c < ep.way; ++c) {
    Graph::NodeId acc = g.row_slice(emb, row++);
    for (int s = 1; s < ep.shot; ++s)
      acc = g.add(acc, g.row_slice(emb, row++));
    protos[c] = ep.shot > 1 ? g.scale(acc, 1.0 / ep.shot) : acc;
  }
  // logits: negative squared Euclidean distance to each prototype
  std::vector<Graph::NodeId> rows;
  std::vector<int> targets;
  for (int c = 0; c < ep.way; ++c)
    for (int q = 0; q < ep.n_query; ++q) {
      Graph::NodeId qe = g.row_slice(emb, row++);
      std::vector<Graph::NodeId> cells(ep.way);
      for (int k = 0; k < ep.way; ++k)
        cells[k] = g.neg(g.sq_euclidean(qe, protos[k]));
      rows.push_back(g.concat_cols(cells));
      targets.push_back(c);
    }
  Graph::NodeId logits = g.concat_rows(rows);
  return finish_episode(g, logits, targets, grads);
}

EpisodeLossResult relation_episode_loss(const Episode& ep,
                                        const LabeledUtteranceStore& store,
                                        NetworkWeights& weights,
                                        const EncoderSpec& spec,
                                        std::map<std::string, Tensor>* grads,
                                        bool training, std::mt19937_64& rng) {
  if (!spec.has_comparison())
    throw UsageError("relation_episode_loss: spec has no comparison network");
  std::vector<const FeatureMatrix*> utts;
  collect_utterances(ep, store, utts);
  Graph g;
  EncoderTaps taps = encode_batch(g, spec, weights, grads, utts, training, rng);
  const Graph::NodeId emb = taps.embedding;

  // class representation: sum (not mean) of support embeddings
  std::vector<Graph::NodeId> reps(ep.way);
  std::size_t row = 0;
  for (int c = 0; c < ep.way; ++c) {
    Graph::NodeId acc = g.row_slice(emb, row++);
    for (int s = 1; s < ep.shot; ++s)
      acc = g.add(acc, g.row_slice(emb, row++));
    reps[c] = acc;
  }
  std::vector<Graph::NodeId> pair_rows;
  std::vector<int> targets;
  for (int c = 0; c < ep.way; ++c)
    for (int q = 0; q < ep.n_query; ++q) {
      Graph::NodeId qe = g.row_slice(emb, row++);
      for (int k = 0; k < ep.way; ++k)
        pair_rows.push_back(g.concat_cols({reps[k], qe}));
      targets.push_back(c);
    }
  Graph::NodeId pairs = g.concat_rows(pair_rows);
  Graph::NodeId scores = comparison_scores(g, spec, weights, grads, pairs,
                                           training);
  Graph::NodeId logits = g.reshape(scores, targets.size(),
                                   static_cast<std::size_t>(ep.way));
  return finish_episode(g, logits, targets, grads);
}

EpisodeLossResult classification_step(
    const std::vector<std::size_t>& batch, const LabeledUtteranceStore& store,
    NetworkWeights& weights, const EncoderSpec& spec,
    const std::map<std::string, int>& speaker_index,
    std::map<std::string, Tensor>* grads, bool training,
    std::mt19937_64& rng) {
  if (spec.head != HeadKind::kXvector)
    throw UsageError("classification_step: spec head is not xvector");
  if (batch.empty()) throw UsageError("classification_step: empty batch");
  const std::size_t dur = store.utterances[batch[0]].features.num_frames();
  std::vector<const FeatureMatrix*> utts;
  std::vector<int> targets;
  for (std::size_t i : batch) {
    const auto& u = store.utterances[i];
    if (u.features.num_frames() != dur)
      throw UsageError("classification_step: unequal utterance durations in "
                       "batch (" + std::to_string(dur) + " vs " +
                       std::to_string(u.features.num_frames()) + ")");
    utts.push_back(&u.features);
    auto it = speaker_index.find(u.speaker_id);
    if (it == speaker_index.end())
      throw UsageError("classification_step: unknown speaker " + u.speaker_id);
    targets.push_back(it->second);
  }
  Graph g;
  EncoderTaps taps = encode_batch(g, spec, weights, grads, utts, training, rng);
  return finish_episode(g, taps.logits, targets, grads);
}

double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 0) throw UsageError("lr_schedule: negative step");
  const double decayed =
      cfg.lr0 * std::pow(cfg.gamma, static_cast<double>(step / cfg.decay_interval));
  return std::max(cfg.lr_floor, decayed);
}

double baseline_lr_schedule(long step, long total, const TrainConfig& cfg) {
  const long warmup = std::max<long>(1, total / 10);
  if (step < warmup) {
    const double t = static_cast<double>(step) / static_cast<double>(warmup);
    return cfg.lr0 + t * (cfg.baseline_peak_lr - cfg.lr0);
  }
  const double span = static_cast<double>(std::max<long>(1, total - warmup));
  const double t = static_cast<double>(step - warmup) / span;
  return cfg.baseline_peak_lr *
         std::pow(cfg.lr_floor / cfg.baseline_peak_lr, t);
}

namespace {

void zero_grads(std::map<std::string, Tensor>& grads) {
  for (auto& [name, g] : grads) g.fill(0.0);
}

void scale_grads(std::map<std::string, Tensor>& grads, double s) {
  for (auto& [name, g] : grads)
    for (double& v : g.data) v *= s;
}

}  // namespace

TrainResult train(const LabeledUtteranceStore& store, const TrainConfig& cfg,
                  const EncoderSpec& spec,
                  const std::optional<NetworkWeights>& pretrained,
                  const std::function<void(const StepLog&)>& on_step) {
  if (cfg.lr0 <= 0.0 || cfg.gamma <= 0.0 || cfg.gamma > 1.0)
    throw UsageError("train: need lr0 > 0 and 0 < gamma <= 1");
  switch (cfg.mode) {
    case TrainMode::kProtonet:
      if (spec.head != HeadKind::kProtonet)
        throw UsageError("train: protonet mode needs a protonet spec");
      break;
    case TrainMode::kRelation:
      if (spec.head != HeadKind::kRelationEncoder)
        throw UsageError("train: relation mode needs a relation spec");
      break;
    case TrainMode::kXvectorBaseline:
      if (spec.head != HeadKind::kXvector)
        throw UsageError("train: baseline mode needs an xvector spec");
      break;
  }

  TrainResult out;
  out.weights = build_network(spec, cfg.seed);
  if (pretrained)
    init_from_pretrained(out.weights, spec, *pretrained, spec, cfg.seed + 1);

  std::mt19937_64 rng(cfg.seed);
  std::map<std::string, Tensor> grads;
  AdamState adam;

  std::map<std::string, int> speaker_index;
  std::map<std::size_t, std::vector<std::size_t>> by_duration;
  if (cfg.mode == TrainMode::kXvectorBaseline) {
    int idx = 0;
    for (const auto& [spk, utts] : store.by_speaker) speaker_index[spk] = idx++;
    if (static_cast<int>(speaker_index.size()) != spec.n_speakers)
      throw UsageError("train: spec.n_speakers=" +
                       std::to_string(spec.n_speakers) + " but store has " +
                       std::to_string(speaker_index.size()) + " speakers");
    for (std::size_t i = 0; i < store.utterances.size(); ++i)
      by_duration[store.utterances[i].features.num_frames()].push_back(i);
  }

  long last_checkpoint_step = -1;
  for (long step = 0; step < cfg.episodes; ++step) {
    try {
      EpisodeLossResult r;
      double lr;
      if (cfg.mode == TrainMode::kXvectorBaseline) {
        lr = baseline_lr_schedule(step, cfg.episodes, cfg);
        // fixed-duration minibatch: draw a duration bucket via its first
        // utterance, then fill from that bucket
        std::uniform_int_distribution<std::size_t> u(
            0, store.utterances.size() - 1);
        const auto& bucket =
            by_duration[store.utterances[u(rng)].features.num_frames()];
        std::vector<std::size_t> batch;
        if (bucket.size() <= static_cast<std::size_t>(cfg.minibatch)) {
          batch = bucket;
        } else {
          auto picks = draw_without_replacement(
              bucket.size(), static_cast<std::size_t>(cfg.minibatch), rng);
          for (std::size_t p : picks) batch.push_back(bucket[p]);
        }
        r = classification_step(batch, store, out.weights, spec, speaker_index,
                                &grads, true, rng);
        if ((step + 1) % cfg.grad_accum == 0) {
          scale_grads(grads, 1.0 / cfg.grad_accum);
          adam_step(out.weights.values, grads, adam, lr);
          zero_grads(grads);
        }
      } else {
        lr = lr_schedule(step, cfg);
        zero_grads(grads);
        Episode ep =
            sample_episode(store, cfg.way, cfg.shot, cfg.n_query, rng);
        r = (cfg.mode == TrainMode::kProtonet)
                ? proto_episode_loss(ep, store, out.weights, spec, &grads,
                                     true, rng)
                : relation_episode_loss(ep, store, out.weights, spec, &grads,
                                        true, rng);
        adam_step(out.weights.values, grads, adam, lr);
      }
      StepLog entry{step, lr, r.loss, r.accuracy};
      out.log.push_back(entry);
      if (on_step) on_step(entry);
      if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
          (step + 1) % cfg.checkpoint_interval == 0) {
        save_weights(out.weights, spec, cfg.checkpoint_path);
        last_checkpoint_step = step;
      }
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(step) +
                         " (last checkpoint: step " +
                         std::to_string(last_checkpoint_step) + "): " +
                         e.what());
    }
  }
  return out;
}

void save_loss_log(const std::string& path, const std::vector<StepLog>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write loss log: " + path);
  for (const auto& e : log)
    os << e.step << "\t" << e.lr << "\t" << e.loss << "\t" << e.accuracy
       << "\n";
}

double eval_episode_accuracy(const LabeledUtteranceStore& store,
                             NetworkWeights& weights, const EncoderSpec& spec,
                             int way, int shot, int n_query, int episodes,
                             uint64_t seed) {
  std::mt19937_64 rng(seed);
  double acc = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Episode ep = sample_episode(store, way, shot, n_query, rng);
    EpisodeLossResult r =
        spec.head == HeadKind::kProtonet
            ? proto_episode_loss(ep, store, weights, spec, nullptr, false, rng)
            : relation_episode_loss(ep, store, weights, spec, nullptr, false,
                                    rng);
    acc += r.accuracy;
  }
  return acc / episodes;
}

}  // namespace mspk
