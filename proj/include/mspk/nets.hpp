#ifndef MSPK_NETS_HPP
#define MSPK_NETS_HPP

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mspk/autograd.hpp"
#include "mspk/mfcc.hpp"
#include "mspk/tensor.hpp"

namespace mspk {

struct TdnnLayerSpec {
  int out_dim = 512;
  int dilation = 1;
  int context = 1;
};

enum class HeadKind { kXvector, kProtonet, kRelationEncoder };

struct EncoderSpec {
  int input_dim = 30;
  std::vector<TdnnLayerSpec> tdnn_stack;
  HeadKind head = HeadKind::kXvector;
  int fc_dim = 512;
  int n_speakers = 0;          // xvector softmax output
  int comparison_hidden = 512;  // relation comparison network
  double dropout_rate = 0.1;    // xvector only; meta nets use none

  bool has_comparison() const { return head == HeadKind::kRelationEncoder; }
  // Frames needed before the stats-pool layer produces output.
  int receptive_field() const;
};

// The TDNN stack used by every model: contexts and dilations chosen so the
// full-size parameter counts land on 9.8M / 6.6M / 7.1M.
EncoderSpec default_spec(HeadKind head, int n_speakers = 0, int input_dim = 30,
                         int fc_dim = 512);

struct NetworkWeights {
  std::map<std::string, Tensor> values;
  uint64_t fingerprint = 0;
};

enum class ParamKind { kWeight, kBias, kBnGamma, kBnBeta, kBnMean, kBnVar };

struct LayerShape {
  std::string name;
  std::size_t rows, cols;
  ParamKind kind;
  bool tdnn;            // belongs to the time-delay trunk
  std::size_t fan_in;   // for uniform init of weights/biases
  bool trainable() const {
    return kind != ParamKind::kBnMean && kind != ParamKind::kBnVar;
  }
};

// Canonical parameter layout for a spec; order is the serialization order.
std::vector<LayerShape> spec_layout(const EncoderSpec& spec);

std::string canonical_spec_text(const EncoderSpec& spec);
// Inverse of canonical_spec_text; used to rebuild a spec from a weight file.
EncoderSpec parse_spec_text(const std::string& text);
uint64_t spec_fingerprint(const EncoderSpec& spec);

// Number of trainable parameters (batch-norm running stats excluded).
std::size_t param_count(const EncoderSpec& spec);

// Allocates and initializes parameters, uniform in +-1/sqrt(fan_in);
// batch-norm gamma=1, beta=0, running mean=0, running var=1.
NetworkWeights build_network(const EncoderSpec& spec, uint64_t seed);

// Copies the time-delay trunk from source and redraws every fully connected
// head parameter uniform in [-1/sqrt(N), 1/sqrt(N)], N = parameter count of
// the layer. Source must be trunk-compatible.
void init_from_pretrained(NetworkWeights& target, const EncoderSpec& target_spec,
                          const NetworkWeights& source,
                          const EncoderSpec& source_spec, uint64_t seed);

// Builds the encoder forward pass for a batch of utterances inside g and
// returns per-tap nodes. Head fc layers run on the stacked batch matrix so
// batch norm sees the whole batch.
struct EncoderTaps {
  Graph::NodeId fc1_preact = -1;  // xvector
  Graph::NodeId fc2_preact = -1;  // xvector
  Graph::NodeId logits = -1;      // xvector softmax logits
  Graph::NodeId embedding = -1;   // meta nets: final layer, post-BN pre-ReLU
};

EncoderTaps encode_batch(Graph& g, const EncoderSpec& spec,
                         NetworkWeights& weights,
                         std::map<std::string, Tensor>* grads,
                         const std::vector<const FeatureMatrix*>& utts,
                         bool training, std::mt19937_64& rng);

// Relation comparison network on a batch of concatenated pairs (n x 2*fc_dim)
// -> relation scores (n x 1).
Graph::NodeId comparison_scores(Graph& g, const EncoderSpec& spec,
                                NetworkWeights& weights,
                                std::map<std::string, Tensor>* grads,
                                Graph::NodeId pairs, bool training);

// Single-utterance embedding at a tap ("fc1" / "fc2" for xvector, "emb" for
// meta nets); inference mode (running batch-norm stats, no dropout).
std::vector<double> embed(const NetworkWeights& weights,
                          const EncoderSpec& spec, const FeatureMatrix& f,
                          const std::string& tap);

// Weight file: magic "MSPKWGT1", u64 fingerprint, canonical spec text, then
// per-layer name, shape, f32 data.
void save_weights(const NetworkWeights& w, const EncoderSpec& spec,
                  const std::string& path);
NetworkWeights load_weights(const std::string& path, const EncoderSpec& spec);
// Reads only the header (spec text + fingerprint) for inspection.
std::string load_weights_spec_text(const std::string& path);

}  // namespace mspk

#endif
