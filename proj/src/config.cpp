#include "mspk/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mspk/error.hpp"

namespace mspk {

EncoderSpec RunConfig::encoder_spec() const {
  EncoderSpec spec;
  spec.input_dim = model_input_dim;
  spec.fc_dim = model_fc_dim;
  spec.n_speakers = model_n_speakers;
  spec.comparison_hidden = model_comparison_hidden;
  spec.dropout_rate = model_dropout;
  if (model_head == "protonet") spec.head = HeadKind::kProtonet;
  else if (model_head == "relation") spec.head = HeadKind::kRelationEncoder;
  else if (model_head == "xvector") spec.head = HeadKind::kXvector;
  else throw UsageError("bad config value model.head = " + model_head);
  spec.tdnn_stack.clear();
  std::istringstream ls(model_tdnn);
  std::string layer;
  while (std::getline(ls, layer, ',')) {
    TdnnLayerSpec l;
    if (std::sscanf(layer.c_str(), "%d:%d:%d", &l.out_dim, &l.dilation,
                    &l.context) != 3)
      throw UsageError("bad config value model.tdnn layer '" + layer +
                       "' (want out:dilation:context)");
    spec.tdnn_stack.push_back(l);
  }
  if (spec.tdnn_stack.empty())
    throw UsageError("bad config value model.tdnn: empty stack");
  return spec;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("bad integer for config key " + key + ": '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("bad number for config key " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("bad boolean for config key " + key + ": '" + v + "'");
}

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kProtonet: return "protonet";
    case TrainMode::kRelation: return "relation";
    case TrainMode::kXvectorBaseline: return "xvector";
  }
  return "";
}

void set_key(RunConfig& c, const std::string& key, const std::string& v) {
  // features
  if (key == "features.num_coeffs") c.features.num_coeffs = (int)to_long(key, v);
  else if (key == "features.num_mel_filters")
    c.features.num_mel_filters = (int)to_long(key, v);
  else if (key == "features.frame_width_s")
    c.features.frame_width_s = to_double(key, v);
  else if (key == "features.frame_shift_s")
    c.features.frame_shift_s = to_double(key, v);
  else if (key == "features.preemphasis") c.features.preemphasis = to_double(key, v);
  else if (key == "features.low_freq") c.features.low_freq = to_double(key, v);
  else if (key == "features.high_freq") c.features.high_freq = to_double(key, v);
  else if (key == "features.cmn_window_s") c.cmn_window_s = to_double(key, v);
  // model
  else if (key == "model.head") c.model_head = v;
  else if (key == "model.tdnn") c.model_tdnn = v;
  else if (key == "model.input_dim") c.model_input_dim = (int)to_long(key, v);
  else if (key == "model.fc_dim") c.model_fc_dim = (int)to_long(key, v);
  else if (key == "model.n_speakers") c.model_n_speakers = (int)to_long(key, v);
  else if (key == "model.comparison_hidden")
    c.model_comparison_hidden = (int)to_long(key, v);
  else if (key == "model.dropout") c.model_dropout = to_double(key, v);
  // train
  else if (key == "train.mode") {
    if (v == "protonet") c.train.mode = TrainMode::kProtonet;
    else if (v == "relation") c.train.mode = TrainMode::kRelation;
    else if (v == "xvector") c.train.mode = TrainMode::kXvectorBaseline;
    else throw UsageError("bad config value train.mode = " + v);
  } else if (key == "train.way") c.train.way = (int)to_long(key, v);
  else if (key == "train.shot") c.train.shot = (int)to_long(key, v);
  else if (key == "train.n_query") c.train.n_query = (int)to_long(key, v);
  else if (key == "train.episodes") c.train.episodes = to_long(key, v);
  else if (key == "train.lr0") c.train.lr0 = to_double(key, v);
  else if (key == "train.gamma") c.train.gamma = to_double(key, v);
  else if (key == "train.decay_interval") c.train.decay_interval = to_long(key, v);
  else if (key == "train.lr_floor") c.train.lr_floor = to_double(key, v);
  else if (key == "train.grad_accum") c.train.grad_accum = (int)to_long(key, v);
  else if (key == "train.minibatch") c.train.minibatch = (int)to_long(key, v);
  else if (key == "train.baseline_peak_lr")
    c.train.baseline_peak_lr = to_double(key, v);
  else if (key == "train.seed") c.train.seed = (uint64_t)to_long(key, v);
  else if (key == "train.checkpoint_interval")
    c.train.checkpoint_interval = to_long(key, v);
  else if (key == "train.checkpoint_path") c.train.checkpoint_path = v;
  // diarize
  else if (key == "diarize.width") c.diarize_width = to_double(key, v);
  else if (key == "diarize.step") c.diarize_step = to_double(key, v);
  else if (key == "diarize.clusterer") c.diarize_clusterer = v;
  else if (key == "diarize.tap") c.diarize_tap = v;
  else if (key == "diarize.oracle_k") c.diarize_oracle_k = to_bool(key, v);
  else if (key == "diarize.ahc_threshold")
    c.diarize_ahc_threshold = to_double(key, v);
  // verify
  else if (key == "verify.lda_dim") c.verify_lda_dim = (int)to_long(key, v);
  else if (key == "verify.backend") c.verify_backend = v;
  else if (key == "verify.p_target") c.verify_p_target = to_double(key, v);
  else if (key == "verify.plda_iters") c.verify_plda_iters = (int)to_long(key, v);
  else throw UsageError("unknown config key: " + key);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) +
                       ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    set_key(c, key, val);
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string dump_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "features.num_coeffs = " << c.features.num_coeffs << "\n"
     << "features.num_mel_filters = " << c.features.num_mel_filters << "\n"
     << "features.frame_width_s = " << c.features.frame_width_s << "\n"
     << "features.frame_shift_s = " << c.features.frame_shift_s << "\n"
     << "features.preemphasis = " << c.features.preemphasis << "\n"
     << "features.low_freq = " << c.features.low_freq << "\n"
     << "features.high_freq = " << c.features.high_freq << "\n"
     << "features.cmn_window_s = " << c.cmn_window_s << "\n"
     << "model.head = " << c.model_head << "\n"
     << "model.tdnn = " << c.model_tdnn << "\n"
     << "model.input_dim = " << c.model_input_dim << "\n"
     << "model.fc_dim = " << c.model_fc_dim << "\n"
     << "model.n_speakers = " << c.model_n_speakers << "\n"
     << "model.comparison_hidden = " << c.model_comparison_hidden << "\n"
     << "model.dropout = " << c.model_dropout << "\n"
     << "train.mode = " << mode_name(c.train.mode) << "\n"
     << "train.way = " << c.train.way << "\n"
     << "train.shot = " << c.train.shot << "\n"
     << "train.n_query = " << c.train.n_query << "\n"
     << "train.episodes = " << c.train.episodes << "\n"
     << "train.lr0 = " << c.train.lr0 << "\n"
     << "train.gamma = " << c.train.gamma << "\n"
     << "train.decay_interval = " << c.train.decay_interval << "\n"
     << "train.lr_floor = " << c.train.lr_floor << "\n"
     << "train.grad_accum = " << c.train.grad_accum << "\n"
     << "train.minibatch = " << c.train.minibatch << "\n"
     << "train.baseline_peak_lr = " << c.train.baseline_peak_lr << "\n"
     << "train.seed = " << c.train.seed << "\n"
     << "train.checkpoint_interval = " << c.train.checkpoint_interval << "\n";
  if (!c.train.checkpoint_path.empty())
    os << "train.checkpoint_path = " << c.train.checkpoint_path << "\n";
  os << "diarize.width = " << c.diarize_width << "\n"
     << "diarize.step = " << c.diarize_step << "\n"
     << "diarize.clusterer = " << c.diarize_clusterer << "\n"
     << "diarize.tap = " << c.diarize_tap << "\n"
     << "diarize.oracle_k = " << (c.diarize_oracle_k ? "true" : "false") << "\n"
     << "diarize.ahc_threshold = " << c.diarize_ahc_threshold << "\n"
     << "verify.lda_dim = " << c.verify_lda_dim << "\n"
     << "verify.backend = " << c.verify_backend << "\n"
     << "verify.p_target = " << c.verify_p_target << "\n"
     << "verify.plda_iters = " << c.verify_plda_iters << "\n";
  return os.str();
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return dump_config(a) == dump_config(b);
}

}  // namespace mspk
