#ifndef MSPK_CONFIG_HPP
#define MSPK_CONFIG_HPP

#include <string>

#include "mspk/episodic.hpp"
#include "mspk/mfcc.hpp"
#include "mspk/nets.hpp"

namespace mspk {

// Flat "section.key = value" configuration covering the whole pipeline.
// Defaults reproduce the published recipe; unknown keys are rejected.
struct RunConfig {
  // features
  MfccConfig features;
  double cmn_window_s = 3.0;

  // model
  std::string model_head = "protonet";  // protonet | relation | xvector
  std::string model_tdnn = "512:1:5,512:2:3,512:3:3,512:1:1,1500:1:3";
  int model_input_dim = 30;
  int model_fc_dim = 512;
  int model_n_speakers = 7323;
  int model_comparison_hidden = 512;
  double model_dropout = 0.1;

  // train
  TrainConfig train;

  // diarize
  double diarize_width = 1.5;
  double diarize_step = 0.75;
  std::string diarize_clusterer = "nme-sc";  // nme-sc | ahc
  std::string diarize_tap = "emb";
  bool diarize_oracle_k = false;
  double diarize_ahc_threshold = 0.0;

  // verify
  int verify_lda_dim = 200;
  std::string verify_backend = "plda";  // plda | cosine
  double verify_p_target = 0.01;
  int verify_plda_iters = 10;

  EncoderSpec encoder_spec() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string dump_config(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace mspk

#endif
