#ifndef MSPK_EPISODIC_HPP
#define MSPK_EPISODIC_HPP

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mspk/mfcc.hpp"
#include "mspk/nets.hpp"

namespace mspk {

struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string feature_path;
  FeatureMatrix features;
};

struct LabeledUtteranceStore {
  std::vector<UtteranceRecord> utterances;
  std::map<std::string, std::vector<std::size_t>> by_speaker;

  void add(UtteranceRecord rec);
  std::size_t num_speakers() const { return by_speaker.size(); }
};

// Manifest: text lines "utt_id speaker_id feature_path"; features are
// loaded eagerly.
LabeledUtteranceStore load_manifest(const std::string& path);
void save_manifest(const std::string& path, const LabeledUtteranceStore& s);

struct Episode {
  int way = 0;
  int shot = 0;
  int n_query = 0;
  // class-major utterance indices into the store
  std::vector<std::vector<std::size_t>> supports;  // way x shot
  std::vector<std::vector<std::size_t>> queries;   // way x n_query
};

Episode sample_episode(const LabeledUtteranceStore& store, int way, int shot,
                       int n_query, std::mt19937_64& rng);

enum class TrainMode { kProtonet, kRelation, kXvectorBaseline };

struct TrainConfig {
  TrainMode mode = TrainMode::kProtonet;
  int way = 400;
  int shot = 2;
  int n_query = 1;
  long episodes = 100000;
  double lr0 = 1e-4;
  double gamma = 0.9;
  long decay_interval = 10;
  double lr_floor = 1e-6;
  int grad_accum = 4;       // baseline mode
  int minibatch = 32;       // baseline mode
  double baseline_peak_lr = 2e-3;
  uint64_t seed = 0;
  long checkpoint_interval = 1000;
  std::string checkpoint_path;  // empty = no checkpoints
};

struct EpisodeLossResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Episodic losses. Gradients are accumulated into *grads when non-null; the
// batch-norm mode follows `training`. rng drives nothing for the meta nets
// (no dropout) but keeps the signature uniform.
EpisodeLossResult proto_episode_loss(const Episode& ep,
                                     const LabeledUtteranceStore& store,
                                     NetworkWeights& weights,
                                     const EncoderSpec& spec,
                                     std::map<std::string, Tensor>* grads,
                                     bool training, std::mt19937_64& rng);

EpisodeLossResult relation_episode_loss(const Episode& ep,
                                        const LabeledUtteranceStore& store,
                                        NetworkWeights& weights,
                                        const EncoderSpec& spec,
                                        std::map<std::string, Tensor>* grads,
                                        bool training, std::mt19937_64& rng);

// Softmax cross-entropy over speakers for one minibatch; all utterances
// must have equal duration.
EpisodeLossResult classification_step(const std::vector<std::size_t>& batch,
                                      const LabeledUtteranceStore& store,
                                      NetworkWeights& weights,
                                      const EncoderSpec& spec,
                                      const std::map<std::string, int>& speaker_index,
                                      std::map<std::string, Tensor>* grads,
                                      bool training, std::mt19937_64& rng);

// lr = max(lr_floor, lr0 * gamma^floor(step / interval))
double lr_schedule(long step, const TrainConfig& cfg);
// Baseline trajectory: linear warmup from lr0 to peak over the first 10% of
// steps, then exponential decay to lr_floor at the final step.
double baseline_lr_schedule(long step, long total, const TrainConfig& cfg);

struct StepLog {
  long step;
  double lr;
  double loss;
  double accuracy;
};

struct TrainResult {
  NetworkWeights weights;
  std::vector<StepLog> log;
};

TrainResult train(const LabeledUtteranceStore& store, const TrainConfig& cfg,
                  const EncoderSpec& spec,
                  const std::optional<NetworkWeights>& pretrained = {},
                  const std::function<void(const StepLog&)>& on_step = {});

void save_loss_log(const std::string& path, const std::vector<StepLog>& log);

// Mean query accuracy over freshly sampled held-out episodes, inference mode.
double eval_episode_accuracy(const LabeledUtteranceStore& store,
                             NetworkWeights& weights, const EncoderSpec& spec,
                             int way, int shot, int n_query, int episodes,
                             uint64_t seed);

}  // namespace mspk

#endif
