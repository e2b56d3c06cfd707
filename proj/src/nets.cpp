#include "mspk/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mspk/error.hpp"

namespace mspk {

int EncoderSpec::receptive_field() const {
  int rf = 1;
  for (const auto& l : tdnn_stack) rf += (l.context - 1) * l.dilation;
  return rf;
}

EncoderSpec default_spec(HeadKind head, int n_speakers, int input_dim,
                         int fc_dim) {
  EncoderSpec s;
  s.input_dim = input_dim;
  s.tdnn_stack = {{512, 1, 5}, {512, 2, 3}, {512, 3, 3}, {512, 1, 1},
                  {1500, 1, 3}};
  s.head = head;
  s.fc_dim = fc_dim;
  s.n_speakers = n_speakers;
  return s;
}

namespace {

void push_bn(std::vector<LayerShape>& v, const std::string& prefix,
             std::size_t dim, bool tdnn) {
  v.push_back({prefix + ".bn.gamma", 1, dim, ParamKind::kBnGamma, tdnn, 0});
  v.push_back({prefix + ".bn.beta", 1, dim, ParamKind::kBnBeta, tdnn, 0});
  v.push_back({prefix + ".bn.run_mean", 1, dim, ParamKind::kBnMean, tdnn, 0});
  v.push_back({prefix + ".bn.run_var", 1, dim, ParamKind::kBnVar, tdnn, 0});
}

void push_fc(std::vector<LayerShape>& v, const std::string& prefix,
             std::size_t in_dim, std::size_t out_dim, bool with_bn) {
  v.push_back({prefix + ".w", in_dim, out_dim, ParamKind::kWeight, false,
               in_dim});
  v.push_back({prefix + ".b", 1, out_dim, ParamKind::kBias, false, in_dim});
  if (with_bn) push_bn(v, prefix, out_dim, false);
}

}  // namespace

std::vector<LayerShape> spec_layout(const EncoderSpec& spec) {
  if (spec.tdnn_stack.empty())
    throw UsageError("spec: empty tdnn stack");
  if (spec.head == HeadKind::kXvector && spec.n_speakers < 2)
    throw UsageError("spec: xvector head needs n_speakers >= 2");
  std::vector<LayerShape> v;
  std::size_t in_dim = static_cast<std::size_t>(spec.input_dim);
  for (std::size_t i = 0; i < spec.tdnn_stack.size(); ++i) {
    const auto& l = spec.tdnn_stack[i];
    if (l.out_dim < 1 || l.dilation < 1 || l.context < 1)
      throw UsageError("spec: tdnn layer fields must be >= 1");
    const std::string prefix = "tdnn" + std::to_string(i + 1);
    const std::size_t krows = in_dim * static_cast<std::size_t>(l.context);
    v.push_back({prefix + ".w", krows, static_cast<std::size_t>(l.out_dim),
                 ParamKind::kWeight, true, krows});
    v.push_back({prefix + ".b", 1, static_cast<std::size_t>(l.out_dim),
                 ParamKind::kBias, true, krows});
    push_bn(v, prefix, static_cast<std::size_t>(l.out_dim), true);
    in_dim = static_cast<std::size_t>(l.out_dim);
  }
  const std::size_t pooled = 2 * in_dim;
  const std::size_t fc = static_cast<std::size_t>(spec.fc_dim);
  switch (spec.head) {
    case HeadKind::kXvector:
      push_fc(v, "fc1", pooled, fc, true);
      push_fc(v, "fc2", fc, fc, true);
      push_fc(v, "out", fc, static_cast<std::size_t>(spec.n_speakers), false);
      break;
    case HeadKind::kProtonet:
      push_fc(v, "fc1", pooled, fc, true);
      push_fc(v, "fc2", fc, fc, true);
      push_fc(v, "fc3", fc, fc, true);
      push_fc(v, "fc4", fc, fc, true);
      break;
    case HeadKind::kRelationEncoder:
      push_fc(v, "fc1", pooled, fc, true);
      push_fc(v, "fc2", fc, fc, true);
      push_fc(v, "fc3", fc, fc, true);
      push_fc(v, "cmp1", 2 * fc,
              static_cast<std::size_t>(spec.comparison_hidden), true);
      push_fc(v, "cmp2", static_cast<std::size_t>(spec.comparison_hidden), 1,
              false);
      break;
  }
  return v;
}

std::string canonical_spec_text(const EncoderSpec& spec) {
  std::ostringstream os;
  os << "input_dim=" << spec.input_dim << ";tdnn=";
  for (std::size_t i = 0; i < spec.tdnn_stack.size(); ++i) {
    if (i) os << "|";
    os << spec.tdnn_stack[i].out_dim << "," << spec.tdnn_stack[i].dilation
       << "," << spec.tdnn_stack[i].context;
  }
  os << ";head=";
  switch (spec.head) {
    case HeadKind::kXvector: os << "xvector"; break;
    case HeadKind::kProtonet: os << "protonet"; break;
    case HeadKind::kRelationEncoder: os << "relation"; break;
  }
  os << ";fc_dim=" << spec.fc_dim;
  if (spec.head == HeadKind::kXvector)
    os << ";n_speakers=" << spec.n_speakers;
  if (spec.has_comparison())
    os << ";cmp_hidden=" << spec.comparison_hidden;
  return os.str();
}

EncoderSpec parse_spec_text(const std::string& text) {
  EncoderSpec spec;
  spec.tdnn_stack.clear();
  std::istringstream is(text);
  std::string field;
  while (std::getline(is, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos)
      throw FormatError("bad spec text field: " + field);
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "input_dim") {
      spec.input_dim = std::stoi(val);
    } else if (key == "tdnn") {
      std::istringstream ls(val);
      std::string layer;
      while (std::getline(ls, layer, '|')) {
        TdnnLayerSpec l;
        if (std::sscanf(layer.c_str(), "%d,%d,%d", &l.out_dim, &l.dilation,
                        &l.context) != 3)
          throw FormatError("bad tdnn layer in spec text: " + layer);
        spec.tdnn_stack.push_back(l);
      }
    } else if (key == "head") {
      if (val == "xvector") spec.head = HeadKind::kXvector;
      else if (val == "protonet") spec.head = HeadKind::kProtonet;
      else if (val == "relation") spec.head = HeadKind::kRelationEncoder;
      else throw FormatError("bad head in spec text: " + val);
    } else if (key == "fc_dim") {
      spec.fc_dim = std::stoi(val);
    } else if (key == "n_speakers") {
      spec.n_speakers = std::stoi(val);
    } else if (key == "cmp_hidden") {
      spec.comparison_hidden = std::stoi(val);
    } else {
      throw FormatError("unknown spec text field: " + key);
    }
  }
  if (spec.tdnn_stack.empty())
    throw FormatError("spec text has no tdnn stack");
  return spec;
}

uint64_t spec_fingerprint(const EncoderSpec& spec) {
  // FNV-1a over the canonical text
  const std::string s = canonical_spec_text(spec);
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::size_t param_count(const EncoderSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : spec_layout(spec))
    if (l.trainable()) n += l.rows * l.cols;
  return n;
}

NetworkWeights build_network(const EncoderSpec& spec, uint64_t seed) {
  NetworkWeights w;
  w.fingerprint = spec_fingerprint(spec);
  std::mt19937_64 rng(seed);
  for (const auto& l : spec_layout(spec)) {
    Tensor t(l.rows, l.cols);
    switch (l.kind) {
      case ParamKind::kWeight:
      case ParamKind::kBias: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.data) v = u(rng);
        break;
      }
      case ParamKind::kBnGamma:
      case ParamKind::kBnVar:
        t.fill(1.0);
        break;
      case ParamKind::kBnBeta:
      case ParamKind::kBnMean:
        break;  // zero
    }
    w.values.emplace(l.name, std::move(t));
  }
  return w;
}

void init_from_pretrained(NetworkWeights& target,
                          const EncoderSpec& target_spec,
                          const NetworkWeights& source,
                          const EncoderSpec& source_spec, uint64_t seed) {
  const auto layout = spec_layout(target_spec);
  (void)source_spec;
  // trunk copy
  for (const auto& l : layout) {
    if (!l.tdnn) continue;
    auto it = source.values.find(l.name);
    if (it == source.values.end())
      throw FormatError("init_from_pretrained: source missing trunk layer " +
                        l.name);
    const Tensor& s = it->second;
    if (s.rows != l.rows || s.cols != l.cols)
      throw FormatError("init_from_pretrained: shape mismatch at " + l.name);
    target.values[l.name] = s;
  }
  // head redraw: N = parameter count of the fc layer (weights + bias)
  std::mt19937_64 rng(seed);
  std::map<std::string, std::size_t> layer_n;
  for (const auto& l : layout) {
    if (l.tdnn) continue;
    if (l.kind == ParamKind::kWeight || l.kind == ParamKind::kBias) {
      const std::string prefix = l.name.substr(0, l.name.rfind('.'));
      layer_n[prefix] += l.rows * l.cols;
    }
  }
  for (const auto& l : layout) {
    if (l.tdnn) continue;
    Tensor& t = target.values[l.name];
    switch (l.kind) {
      case ParamKind::kWeight:
      case ParamKind::kBias: {
        const std::string prefix = l.name.substr(0, l.name.rfind('.'));
        const double bound =
            1.0 / std::sqrt(static_cast<double>(layer_n[prefix]));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.data) v = u(rng);
        break;
      }
      case ParamKind::kBnGamma:
      case ParamKind::kBnVar:
        t.fill(1.0);
        break;
      case ParamKind::kBnBeta:
      case ParamKind::kBnMean:
        t.fill(0.0);
        break;
    }
  }
}

namespace {

// Caches param node ids so every use of a tensor shares one node.
struct ParamNodes {
  Graph& g;
  NetworkWeights& weights;
  std::map<std::string, Tensor>* grads;
  std::map<std::string, Graph::NodeId> cache;

  Graph::NodeId operator()(const std::string& name) {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    auto wit = weights.values.find(name);
    if (wit == weights.values.end())
      throw FormatError("missing parameter " + name);
    Tensor* gptr = nullptr;
    if (grads) {
      auto [git, inserted] = grads->try_emplace(name, wit->second.rows,
                                                wit->second.cols);
      gptr = &git->second;
      (void)inserted;
    }
    Graph::NodeId id = g.param(name, &wit->second, gptr);
    cache.emplace(name, id);
    return id;
  }
};

Graph::NodeId fc_block(Graph& g, ParamNodes& p, NetworkWeights& w,
                       const std::string& prefix, Graph::NodeId x,
                       bool training, bool with_relu) {
  Graph::NodeId a = g.affine(x, p(prefix + ".w"), p(prefix + ".b"));
  Graph::NodeId bn =
      g.batch_norm(a, p(prefix + ".bn.gamma"), p(prefix + ".bn.beta"),
                   &w.values.at(prefix + ".bn.run_mean"),
                   &w.values.at(prefix + ".bn.run_var"), training);
  return with_relu ? g.relu(bn) : bn;
}

}  // namespace

EncoderTaps encode_batch(Graph& g, const EncoderSpec& spec,
                         NetworkWeights& weights,
                         std::map<std::string, Tensor>* grads,
                         const std::vector<const FeatureMatrix*>& utts,
                         bool training, std::mt19937_64& rng) {
  if (utts.empty()) throw UsageError("encode_batch: no utterances");
  const int rf = spec.receptive_field();
  for (const auto* u : utts)
    if (static_cast<int>(u->num_frames()) < rf)
      throw UsageError("encode_batch: utterance with " +
                       std::to_string(u->num_frames()) +
                       " frames is shorter than the receptive field (" +
                       std::to_string(rf) + ")");
  ParamNodes p{g, weights, grads, {}};
  const bool use_dropout =
      training && spec.head == HeadKind::kXvector && spec.dropout_rate > 0.0;

  std::vector<Graph::NodeId> pooled;
  pooled.reserve(utts.size());
  for (const auto* u : utts) {
    Graph::NodeId x = g.input(u->frames);
    for (std::size_t i = 0; i < spec.tdnn_stack.size(); ++i) {
      const auto& l = spec.tdnn_stack[i];
      const std::string prefix = "tdnn" + std::to_string(i + 1);
      Graph::NodeId a = g.tdnn_conv(x, p(prefix + ".w"), p(prefix + ".b"),
                                    l.context, l.dilation);
      Graph::NodeId bn = g.batch_norm(
          a, p(prefix + ".bn.gamma"), p(prefix + ".bn.beta"),
          &weights.values.at(prefix + ".bn.run_mean"),
          &weights.values.at(prefix + ".bn.run_var"), training);
      x = g.relu(bn);
      if (use_dropout) x = g.dropout(x, spec.dropout_rate, rng, true);
    }
    pooled.push_back(g.stats_pool(x));
  }
  Graph::NodeId batch =
      pooled.size() == 1 ? pooled[0] : g.concat_rows(pooled);

  EncoderTaps taps;
  switch (spec.head) {
    case HeadKind::kXvector: {
      Graph::NodeId a1 = g.affine(batch, p("fc1.w"), p("fc1.b"));
      taps.fc1_preact = a1;
      Graph::NodeId h = g.relu(g.batch_norm(
          a1, p("fc1.bn.gamma"), p("fc1.bn.beta"),
          &weights.values.at("fc1.bn.run_mean"),
          &weights.values.at("fc1.bn.run_var"), training));
      if (use_dropout) h = g.dropout(h, spec.dropout_rate, rng, true);
      Graph::NodeId a2 = g.affine(h, p("fc2.w"), p("fc2.b"));
      taps.fc2_preact = a2;
      h = g.relu(g.batch_norm(a2, p("fc2.bn.gamma"), p("fc2.bn.beta"),
                              &weights.values.at("fc2.bn.run_mean"),
                              &weights.values.at("fc2.bn.run_var"), training));
      if (use_dropout) h = g.dropout(h, spec.dropout_rate, rng, true);
      taps.logits = g.affine(h, p("out.w"), p("out.b"));
      break;
    }
    case HeadKind::kProtonet: {
      Graph::NodeId h = fc_block(g, p, weights, "fc1", batch, training, true);
      h = fc_block(g, p, weights, "fc2", h, training, true);
      h = fc_block(g, p, weights, "fc3", h, training, true);
      taps.embedding = fc_block(g, p, weights, "fc4", h, training, false);
      break;
    }
    case HeadKind::kRelationEncoder: {
      Graph::NodeId h = fc_block(g, p, weights, "fc1", batch, training, true);
      h = fc_block(g, p, weights, "fc2", h, training, true);
      taps.embedding = fc_block(g, p, weights, "fc3", h, training, false);
      break;
    }
  }
  return taps;
}

Graph::NodeId comparison_scores(Graph& g, const EncoderSpec& spec,
                                NetworkWeights& weights,
                                std::map<std::string, Tensor>* grads,
                                Graph::NodeId pairs, bool training) {
  if (!spec.has_comparison())
    throw UsageError("comparison_scores: spec has no comparison network");
  ParamNodes p{g, weights, grads, {}};
  Graph::NodeId h = fc_block(g, p, weights, "cmp1", pairs, training, true);
  return g.affine(h, p("cmp2.w"), p("cmp2.b"));
}

std::vector<double> embed(const NetworkWeights& weights,
                          const EncoderSpec& spec, const FeatureMatrix& f,
                          const std::string& tap) {
  Graph g;
  std::mt19937_64 rng(0);
  // inference never mutates the weights
  NetworkWeights& w = const_cast<NetworkWeights&>(weights);
  EncoderTaps taps = encode_batch(g, spec, w, nullptr, {&f}, false, rng);
  Graph::NodeId node = -1;
  if (tap == "fc1")
    node = taps.fc1_preact;
  else if (tap == "fc2")
    node = taps.fc2_preact;
  else if (tap == "emb")
    node = taps.embedding;
  if (node < 0)
    throw UsageError("embed: tap '" + tap + "' not valid for this spec");
  const Tensor& v = g.value(node);
  return std::vector<double>(v.data.begin(), v.data.end());
}

namespace {
constexpr char kWeightMagic[8] = {'M', 'S', 'P', 'K', 'W', 'G', 'T', '1'};
}

void save_weights(const NetworkWeights& w, const EncoderSpec& spec,
                  const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write weight file: " + path);
  os.write(kWeightMagic, 8);
  const uint64_t fp = spec_fingerprint(spec);
  os.write(reinterpret_cast<const char*>(&fp), 8);
  const std::string text = canonical_spec_text(spec);
  const uint32_t tlen = static_cast<uint32_t>(text.size());
  os.write(reinterpret_cast<const char*>(&tlen), 4);
  os.write(text.data(), tlen);
  const auto layout = spec_layout(spec);
  const uint32_t count = static_cast<uint32_t>(layout.size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& l : layout) {
    auto it = w.values.find(l.name);
    if (it == w.values.end())
      throw FormatError("save_weights: missing tensor " + l.name);
    const uint32_t nlen = static_cast<uint32_t>(l.name.size());
    const uint32_t rows = static_cast<uint32_t>(l.rows);
    const uint32_t cols = static_cast<uint32_t>(l.cols);
    os.write(reinterpret_cast<const char*>(&nlen), 4);
    os.write(l.name.data(), nlen);
    os.write(reinterpret_cast<const char*>(&rows), 4);
    os.write(reinterpret_cast<const char*>(&cols), 4);
    std::vector<float> buf(it->second.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(it->second.data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!os) throw IoError("write failed: " + path);
}

NetworkWeights load_weights(const std::string& path, const EncoderSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kWeightMagic, 8) != 0)
    throw FormatError(path + ": bad weight file magic");
  uint64_t fp = 0;
  is.read(reinterpret_cast<char*>(&fp), 8);
  uint32_t tlen = 0;
  is.read(reinterpret_cast<char*>(&tlen), 4);
  std::string text(tlen, '\0');
  is.read(text.data(), tlen);
  uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  if (!is) throw FormatError(path + ": truncated weight file header");

  const auto layout = spec_layout(spec);
  NetworkWeights out;
  out.fingerprint = spec_fingerprint(spec);
  std::size_t idx = 0;
  for (uint32_t k = 0; k < count; ++k) {
    uint32_t nlen = 0, rows = 0, cols = 0;
    is.read(reinterpret_cast<char*>(&nlen), 4);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    is.read(reinterpret_cast<char*>(&rows), 4);
    is.read(reinterpret_cast<char*>(&cols), 4);
    if (!is) throw FormatError(path + ": truncated weight file at tensor " +
                               std::to_string(k));
    if (idx >= layout.size())
      throw FormatError(path + ": incompatible spec, unexpected layer " +
                        name);
    const auto& l = layout[idx++];
    if (name != l.name || rows != l.rows || cols != l.cols)
      throw FormatError(path + ": incompatible spec at layer " + l.name +
                        " (file has " + name + " " + std::to_string(rows) +
                        "x" + std::to_string(cols) + ", spec wants " +
                        std::to_string(l.rows) + "x" + std::to_string(l.cols) +
                        ")");
    Tensor t(rows, cols);
    std::vector<float> buf(t.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
    if (static_cast<std::size_t>(is.gcount()) != buf.size() * 4)
      throw FormatError(path + ": truncated weight data at " + name);
    for (std::size_t i = 0; i < buf.size(); ++i) t.data[i] = buf[i];
    out.values.emplace(name, std::move(t));
  }
  if (idx != layout.size())
    throw FormatError(path + ": incompatible spec, missing layer " +
                      layout[idx].name);
  if (fp != spec_fingerprint(spec))
    throw FormatError(path + ": spec fingerprint mismatch (file spec: " +
                      text + ")");
  return out;
}

std::string load_weights_spec_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kWeightMagic, 8) != 0)
    throw FormatError(path + ": bad weight file magic");
  uint64_t fp = 0;
  is.read(reinterpret_cast<char*>(&fp), 8);
  uint32_t tlen = 0;
  is.read(reinterpret_cast<char*>(&tlen), 4);
  std::string text(tlen, '\0');
  is.read(text.data(), tlen);
  if (!is) throw FormatError(path + ": truncated weight file header");
  return text;
}

}  // namespace mspk
