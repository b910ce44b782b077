#include "megdec/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "megdec/meshing.hpp"

namespace megdec {

namespace fs = std::filesystem;

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::eegnet: return "eegnet";
    case Architecture::cascade: return "cascade";
    case Architecture::multiview: return "multiview";
  }
  return "?";
}

std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::none: return "none";
    case AttentionMode::self: return "self";
    case AttentionMode::self_global: return "self_global";
  }
  return "?";
}

Architecture parse_architecture(std::string_view s) {
  if (s == "eegnet") return Architecture::eegnet;
  if (s == "cascade") return Architecture::cascade;
  if (s == "multiview") return Architecture::multiview;
  throw ConfigError("unknown architecture '" + std::string(s) + "' (eegnet, cascade, multiview)");
}

AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "none") return AttentionMode::none;
  if (s == "self") return AttentionMode::self;
  if (s == "self_global") return AttentionMode::self_global;
  throw ConfigError("unknown attention mode '" + std::string(s) + "' (none, self, self_global)");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::defaults(Architecture a) {
  ModelConfig c;
  c.architecture = a;
  return c;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(classes >= 2, "classes must be at least 2");
  need(heads >= 1 && key_depth >= 1 && value_depth >= 1 && attn_channels >= 1,
       "attention widths must be positive");
  need(global_out >= 1, "global_out must be positive");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
  if (architecture == Architecture::eegnet) {
    need(eeg_filters >= 1 && depth_multiplier >= 1 && separable_filters >= 1, "filter counts must be positive");
    need(kernel_length >= 1 && separable_kernel >= 1, "kernel lengths must be positive");
    need(pool1 >= 1 && pool2 >= 1, "pool sizes must be positive");
    need(segment_length >= pool1 * pool2, "segment_length must cover both pooling stages");
    if (global_attention()) {
      need(global_state_width >= 1, "global_state_width must be positive");
      const std::size_t flat = separable_filters * (segment_length / pool1 / pool2);
      need(flat % global_state_width == 0,
           "flattened width " + std::to_string(flat) + " is not a multiple of global_state_width");
    }
  } else {
    need(streams >= 1 && depth >= 1, "streams and depth must be positive");
    need(!conv_filters.empty(), "conv_filters must not be empty");
    for (auto f : conv_filters) need(f >= 1, "conv_filters entries must be positive");
    need(kernel_h >= 1 && kernel_w >= 1, "kernel must be positive");
    need(fc_units >= 1 && lstm_hidden >= 1, "fc_units and lstm_hidden must be positive");
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "architecture=" << to_string(architecture) << '\n'
     << "attention=" << to_string(attention) << '\n'
     << "streams=" << streams << '\n'
     << "depth=" << depth << '\n'
     << "segment_length=" << segment_length << '\n'
     << "eeg_filters=" << eeg_filters << '\n'
     << "depth_multiplier=" << depth_multiplier << '\n'
     << "separable_filters=" << separable_filters << '\n'
     << "kernel_length=" << kernel_length << '\n'
     << "separable_kernel=" << separable_kernel << '\n'
     << "pool1=" << pool1 << '\n'
     << "pool2=" << pool2 << '\n'
     << "dropout=" << std::setprecision(17) << dropout << '\n'
     << "conv_filters=";
  for (std::size_t i = 0; i < conv_filters.size(); ++i) os << (i ? "," : "") << conv_filters[i];
  os << '\n'
     << "kernel_h=" << kernel_h << '\n'
     << "kernel_w=" << kernel_w << '\n'
     << "fc_units=" << fc_units << '\n'
     << "lstm_hidden=" << lstm_hidden << '\n'
     << "heads=" << heads << '\n'
     << "key_depth=" << key_depth << '\n'
     << "value_depth=" << value_depth << '\n'
     << "attn_channels=" << attn_channels << '\n'
     << "global_out=" << global_out << '\n'
     << "global_state_width=" << global_state_width << '\n'
     << "classes=" << classes << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || v[0] == '-') {
    throw ConfigError("model config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("model config: '" + key + "' expects a number, got '" + v + "'");
  return x;
}

}  // namespace

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq), v = line.substr(eq + 1);
    if (key == "architecture") c.architecture = parse_architecture(v);
    else if (key == "attention") c.attention = parse_attention_mode(v);
    else if (key == "streams") c.streams = parse_size(key, v);
    else if (key == "depth") c.depth = parse_size(key, v);
    else if (key == "segment_length") c.segment_length = parse_size(key, v);
    else if (key == "eeg_filters") c.eeg_filters = parse_size(key, v);
    else if (key == "depth_multiplier") c.depth_multiplier = parse_size(key, v);
    else if (key == "separable_filters") c.separable_filters = parse_size(key, v);
    else if (key == "kernel_length") c.kernel_length = parse_size(key, v);
    else if (key == "separable_kernel") c.separable_kernel = parse_size(key, v);
    else if (key == "pool1") c.pool1 = parse_size(key, v);
    else if (key == "pool2") c.pool2 = parse_size(key, v);
    else if (key == "dropout") c.dropout = parse_real(key, v);
    else if (key == "conv_filters") {
      c.conv_filters.clear();
      std::size_t start = 0;
      while (start <= v.size()) {
        const auto comma = v.find(',', start);
        const std::string part = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        c.conv_filters.push_back(parse_size(key, part));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }
    else if (key == "kernel_h") c.kernel_h = parse_size(key, v);
    else if (key == "kernel_w") c.kernel_w = parse_size(key, v);
    else if (key == "fc_units") c.fc_units = parse_size(key, v);
    else if (key == "lstm_hidden") c.lstm_hidden = parse_size(key, v);
    else if (key == "heads") c.heads = parse_size(key, v);
    else if (key == "key_depth") c.key_depth = parse_size(key, v);
    else if (key == "value_depth") c.value_depth = parse_size(key, v);
    else if (key == "attn_channels") c.attn_channels = parse_size(key, v);
    else if (key == "global_out") c.global_out = parse_size(key, v);
    else if (key == "global_state_width") c.global_state_width = parse_size(key, v);
    else if (key == "classes") c.classes = parse_size(key, v);
    else if (key == "seed") c.seed = parse_size(key, v);
    else throw ConfigError("model config: unknown key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& LayerEntry::param(const std::string& name, std::size_t copy) const {
  if (copy >= params.size()) throw ConfigError("layer '" + desc.name + "' has no weights for copy " + std::to_string(copy));
  for (const auto& [n, t] : params[copy]) {
    if (n == name) return t;
  }
  throw ConfigError("layer '" + desc.name + "' has no parameter '" + name + "'");
}

LayerEntry& ModelGraph::layer(const std::string& name) {
  for (auto& l : layers_) {
    if (l.desc.name == name) return l;
  }
  throw ConfigError("model has no layer '" + name + "'");
}

const LayerEntry& ModelGraph::layer(const std::string& name) const {
  return const_cast<ModelGraph*>(this)->layer(name);
}

bool ModelGraph::has_layer(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.desc.name == name) return true;
  }
  return false;
}

namespace {
std::string copy_prefix(const LayerEntry& l, std::size_t copy) {
  return l.copies > 1 ? l.desc.name + "#" + std::to_string(copy) : l.desc.name;
}
}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelGraph::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& l : layers_) {
    for (std::size_t c = 0; c < l.params.size(); ++c) {
      for (const auto& [n, t] : l.params[c]) out.emplace_back(copy_prefix(l, c) + "/" + n, t);
    }
  }
  return out;
}

std::vector<Tensor> ModelGraph::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::vector<std::pair<std::string, std::vector<double>*>> ModelGraph::named_state() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (auto& l : layers_) {
    for (std::size_t c = 0; c < l.bn.size(); ++c) {
      out.emplace_back(copy_prefix(l, c) + "/running_mean", &l.bn[c].running_mean);
      out.emplace_back(copy_prefix(l, c) + "/running_var", &l.bn[c].running_var);
    }
  }
  return out;
}

LayerEntry& ModelGraph::append(LayerDescriptor desc, const Shape& input_shape, std::size_t copies) {
  LayerEntry e;
  e.desc = std::move(desc);
  e.copies = copies;
  e.input_shape = input_shape;
  e.output_shape = output_shape(e.desc, input_shape);
  layers_.push_back(std::move(e));
  return layers_.back();
}

// ---------------------------------------------------------------------------
// Builders

namespace {

LayerDescriptor make(LayerKind kind, std::string name, std::map<std::string, long long> hyper = {},
                     double rate = 0.0) {
  LayerDescriptor d;
  d.kind = kind;
  d.name = std::move(name);
  d.hyper = std::move(hyper);
  d.rate = rate;
  return d;
}

long long ll(std::size_t v) { return static_cast<long long>(v); }

// Fan-based Glorot-uniform bound for a weight of the given layer.
double glorot_limit(const LayerEntry& l, const std::string& name, const Shape& s) {
  double fan_in = 0, fan_out = 0;
  if (s.size() == 4) {
    const double receptive = static_cast<double>(s[0] * s[1]);
    const bool per_channel = l.desc.kind == LayerKind::depthwise_conv2d || name == "depth_kernel";
    fan_in = receptive * (per_channel ? 1.0 : static_cast<double>(s[2]));
    fan_out = receptive * static_cast<double>(s[3]);
  } else if (s.size() == 2) {
    fan_in = static_cast<double>(s[0]);
    fan_out = static_cast<double>(s[1]);
  } else {
    fan_in = fan_out = static_cast<double>(shape_numel(s));
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

void initialize(ModelGraph& m) {
  std::mt19937_64 rng(m.config().seed);
  for (auto& l : m.layers()) {
    const auto shapes = param_shapes(l.desc, l.input_shape);
    l.params.assign(l.copies, {});
    if (l.desc.kind == LayerKind::batchnorm) l.bn.clear();
    for (std::size_t c = 0; c < l.copies; ++c) {
      if (l.desc.kind == LayerKind::batchnorm) {
        l.bn.push_back(BatchNormState::create(l.input_shape.back()));
        l.params[c].emplace_back("gamma", l.bn.back().gamma);
        l.params[c].emplace_back("beta", l.bn.back().beta);
        continue;
      }
      for (const auto& [name, shape] : shapes) {
        std::vector<double> v(shape_numel(shape), 0.0);
        if (name == "bias" && l.desc.kind == LayerKind::lstm) {
          const std::size_t h = shape[0] / 4;
          for (std::size_t i = h; i < 2 * h; ++i) v[i] = 1.0;
        } else if (name != "bias" && name != "conv_bias") {
          std::uniform_real_distribution<double> u(-1.0, 1.0);
          const double lim = glorot_limit(l, name, shape);
          for (auto& x : v) x = lim * u(rng);
        }
        l.params[c].emplace_back(name, Tensor::parameter(shape, std::move(v)));
      }
    }
  }
}

void stream_conv_stack(ModelGraph& m, const ModelConfig& c) {
  Shape in{kGridRows, kGridCols, c.depth};
  for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    std::map<std::string, long long> h{{"filters", ll(c.conv_filters[i])},
                                       {"kernel_h", ll(c.kernel_h)},
                                       {"kernel_w", ll(c.kernel_w)},
                                       {"padding", 1}};
    LayerKind kind = LayerKind::conv2d;
    if (i == 0 && c.self_attention()) {
      kind = LayerKind::aug_attention_conv;
      h["heads"] = ll(c.heads);
      h["key_depth"] = ll(c.key_depth);
      h["value_depth"] = ll(c.value_depth);
      h["attn_channels"] = ll(c.attn_channels);
      h["positions"] = 0;
    }
    in = m.append(make(kind, name, h), in, c.streams).output_shape;
  }
  in = m.append(make(LayerKind::flatten, "flatten"), in, c.streams).output_shape;
  m.append(make(LayerKind::dense, "fc", {{"units", ll(c.fc_units)}}), in, c.streams);
}

ModelGraph build_checked(const ModelConfig& cfg, Architecture expected, bool allocate);

ModelGraph build_eegnet_impl(const ModelConfig& c, bool allocate) {
  ModelGraph m(c);
  const Shape input{kSensors, c.segment_length, 1};
  m.append(make(LayerKind::input, "input"), input);
  Shape s;
  if (c.self_attention()) {
    s = m.append(make(LayerKind::aug_attention_conv, "aug_conv",
                      {{"filters", ll(c.eeg_filters)},
                       {"kernel_h", 1},
                       {"kernel_w", ll(c.kernel_length)},
                       {"padding", 1},
                       {"bias", 0},
                       {"heads", ll(c.heads)},
                       {"key_depth", ll(c.key_depth)},
                       {"value_depth", ll(c.value_depth)},
                       {"attn_channels", ll(c.attn_channels)},
                       {"positions", 1}}),
                 input)
            .output_shape;
  } else {
    s = m.append(make(LayerKind::conv2d, "conv",
                      {{"filters", ll(c.eeg_filters)}, {"kernel_h", 1}, {"kernel_w", ll(c.kernel_length)},
                       {"padding", 1}, {"bias", 0}}),
                 input)
            .output_shape;
  }
  s = m.append(make(LayerKind::batchnorm, "bn1"), s).output_shape;
  s = m.append(make(LayerKind::depthwise_conv2d, "depthwise",
                    {{"kernel_h", ll(kSensors)}, {"kernel_w", 1}, {"depth_multiplier", ll(c.depth_multiplier)},
                     {"padding", 0}, {"bias", 0}}),
               s)
          .output_shape;
  s = m.append(make(LayerKind::batchnorm, "bn2"), s).output_shape;
  s = m.append(make(LayerKind::avgpool, "pool1", {{"pool_h", 1}, {"pool_w", ll(c.pool1)}}), s).output_shape;
  s = m.append(make(LayerKind::dropout, "dropout1", {}, c.dropout), s).output_shape;
  s = m.append(make(LayerKind::separable_conv2d, "separable",
                    {{"filters", ll(c.separable_filters)}, {"kernel_h", 1}, {"kernel_w", ll(c.separable_kernel)},
                     {"padding", 1}, {"bias", 0}}),
               s)
          .output_shape;
  s = m.append(make(LayerKind::batchnorm, "bn3"), s).output_shape;
  s = m.append(make(LayerKind::avgpool, "pool2", {{"pool_h", 1}, {"pool_w", ll(c.pool2)}}), s).output_shape;
  s = m.append(make(LayerKind::dropout, "dropout2", {}, c.dropout), s).output_shape;
  s = m.append(make(LayerKind::flatten, "flatten"), s).output_shape;
  if (c.global_attention()) {
    const std::size_t w = c.global_state_width;
    s = m.append(make(LayerKind::global_attention, "global_attention",
                      {{"out", ll(c.global_out)}, {"target_width", ll(w)}}),
                 Shape{s[0] / w, w})
            .output_shape;
  }
  m.append(make(LayerKind::dense, "classifier", {{"units", ll(c.classes)}}), s);
  if (allocate) initialize(m);
  return m;
}

ModelGraph build_cascade_impl(const ModelConfig& c, bool allocate) {
  ModelGraph m(c);
  stream_conv_stack(m, c);
  Shape s = m.append(make(LayerKind::concat, "concat", {{"axis", 0}, {"extra", ll(c.streams - 1)}}),
                     Shape{1, c.fc_units})
                .output_shape;
  const Shape seq = m.append(make(LayerKind::lstm, "lstm1", {{"hidden", ll(c.lstm_hidden)}, {"return_sequences", 1}}), s)
                        .output_shape;
  s = m.append(make(LayerKind::lstm, "lstm2", {{"hidden", ll(c.lstm_hidden)}, {"return_sequences", 0}}), seq)
          .output_shape;
  if (c.global_attention()) {
    s = m.append(make(LayerKind::global_attention, "global_attention",
                      {{"out", ll(c.global_out)}, {"target_width", ll(c.lstm_hidden)}}),
                 seq)
            .output_shape;
  }
  s = m.append(make(LayerKind::dense, "fc_out", {{"units", ll(c.fc_units)}}), s).output_shape;
  m.append(make(LayerKind::dense, "classifier", {{"units", ll(c.classes)}}), s);
  if (allocate) initialize(m);
  return m;
}

ModelGraph build_multiview_impl(const ModelConfig& c, bool allocate) {
  ModelGraph m(c);
  stream_conv_stack(m, c);
  m.append(make(LayerKind::add, "add"), Shape{c.fc_units});
  m.append(make(LayerKind::dense, "temporal_fc", {{"units", ll(c.fc_units)}}), Shape{kSensors});
  Shape s = m.append(make(LayerKind::concat, "temporal_concat",
                          {{"axis", 0}, {"extra", ll((c.streams - 1) * c.depth)}}),
                     Shape{c.depth, c.fc_units})
                .output_shape;
  s = m.append(make(LayerKind::lstm, "lstm1", {{"hidden", ll(c.lstm_hidden)}, {"return_sequences", 1}}), s)
          .output_shape;
  if (c.global_attention()) {
    s = m.append(make(LayerKind::global_attention, "global_attention",
                      {{"out", ll(c.global_out)}, {"target_width", ll(c.lstm_hidden)}}),
                 s)
            .output_shape;
    // The attentional vector is read by the second LSTM as a sequence of scalars.
    s = Shape{s[0], 1};
  }
  s = m.append(make(LayerKind::lstm, "lstm2", {{"hidden", ll(c.lstm_hidden)}, {"return_sequences", 0}}), s)
          .output_shape;
  s = m.append(make(LayerKind::dense, "temporal_out", {{"units", ll(c.fc_units)}}), s).output_shape;
  s = m.append(make(LayerKind::concat, "merge", {{"axis", 0}, {"extra", ll(c.fc_units)}}), s).output_shape;
  m.append(make(LayerKind::dense, "classifier", {{"units", ll(c.classes)}}), s);
  if (allocate) initialize(m);
  return m;
}

ModelGraph build_checked(const ModelConfig& cfg, Architecture expected, bool allocate) {
  if (cfg.architecture != expected) {
    throw ConfigError("config describes a " + to_string(cfg.architecture) + " model, not " + to_string(expected));
  }
  cfg.validate();
  switch (expected) {
    case Architecture::eegnet: return build_eegnet_impl(cfg, allocate);
    case Architecture::cascade: return build_cascade_impl(cfg, allocate);
    case Architecture::multiview: return build_multiview_impl(cfg, allocate);
  }
  throw ConfigError("unknown architecture");
}

}  // namespace

ModelGraph build_eegnet(const ModelConfig& cfg) { return build_checked(cfg, Architecture::eegnet, true); }
ModelGraph build_cascade(const ModelConfig& cfg) { return build_checked(cfg, Architecture::cascade, true); }
ModelGraph build_multiview(const ModelConfig& cfg) { return build_checked(cfg, Architecture::multiview, true); }
ModelGraph build_model(const ModelConfig& cfg) { return build_checked(cfg, cfg.architecture, true); }

// ---------------------------------------------------------------------------
// Forward

std::size_t ModelInput::batch() const {
  if (segments.rank() > 0) return segments.dim(0);
  if (!spatial.empty() && spatial[0].rank() > 0) return spatial[0].dim(0);
  if (!temporal.empty() && temporal[0].rank() > 0) return temporal[0].dim(0);
  return 0;
}

namespace {

struct Ctx {
  ModelGraph& m;
  const ForwardOptions& opts;

  void keep(const std::string& key, const Tensor& t) const {
    if (opts.trace && opts.trace->keep_activations) opts.trace->activations[key] = t;
  }
};

std::optional<Tensor> maybe(const LayerEntry& l, const std::string& name, std::size_t copy) {
  for (const auto& [n, t] : l.params.at(copy)) {
    if (n == name) return t;
  }
  return std::nullopt;
}

MultiHeadConfig heads_of(const LayerEntry& l, std::size_t copy) {
  MultiHeadConfig h;
  h.heads = static_cast<std::size_t>(l.desc.get("heads"));
  h.key_depth = static_cast<std::size_t>(l.desc.get("key_depth"));
  h.value_depth = static_cast<std::size_t>(l.desc.get("value_depth"));
  h.w_q = l.param("w_q", copy);
  h.w_k = l.param("w_k", copy);
  h.w_v = l.param("w_v", copy);
  h.w_o = l.param("w_o", copy);
  return h;
}

Tensor dense_of(const LayerEntry& l, const Tensor& x, std::size_t copy = 0) {
  return dense(x, l.param("kernel", copy), maybe(l, "bias", copy));
}

Tensor apply_conv(const LayerEntry& l, const Tensor& x, std::size_t copy, AttentionPositions pos) {
  const Padding pad = l.desc.get_or("padding", 1) ? Padding::same : Padding::valid;
  if (l.desc.kind == LayerKind::aug_attention_conv) {
    return aug_attention_conv(x, l.param("conv_kernel", copy), maybe(l, "conv_bias", copy), heads_of(l, copy), pos);
  }
  return conv2d(x, l.param("kernel", copy), maybe(l, "bias", copy), pad);
}

Tensor apply_batchnorm(Ctx& ctx, const std::string& name, const Tensor& x) {
  LayerEntry& l = ctx.m.layer(name);
  return batchnorm(x, l.bn.at(0), ctx.opts.training);
}

Tensor apply_dropout(Ctx& ctx, const std::string& name, const Tensor& x) {
  const LayerEntry& l = ctx.m.layer(name);
  if (!ctx.opts.training || l.desc.rate == 0.0) return x;
  if (!ctx.opts.dropout_rng) throw ContractError("forward: training with dropout needs a dropout generator");
  return dropout(x, l.desc.rate, true, *ctx.opts.dropout_rng);
}

GlobalAttentionOutput apply_global(Ctx& ctx, const Tensor& source, const Tensor& target) {
  const LayerEntry& l = ctx.m.layer("global_attention");
  GlobalAttentionOutput g = global_attention_apply(source, target, {l.param("w_a"), l.param("w_c")});
  if (ctx.opts.trace) ctx.opts.trace->attention_weights = g.weights;
  ctx.keep("global_attention", g.attentional);
  return g;
}

void check_input(const Tensor& t, const Shape& expect, const std::string& what) {
  const Shape& s = t.shape();
  bool ok = s.size() == expect.size() + 1;
  for (std::size_t i = 0; ok && i < expect.size(); ++i) ok = s[i + 1] == expect[i];
  if (!ok) {
    throw ShapeError(what + ": expected [batch, " + shape_str(expect).substr(1) + ", got " + shape_str(s));
  }
}

void check_streams(const ModelConfig& c, const std::vector<Tensor>& v, const Shape& expect,
                   const std::string& what, std::size_t batch) {
  if (v.size() != c.streams) {
    throw ShapeError(what + " input: expected " + std::to_string(c.streams) + " streams, got " +
                     std::to_string(v.size()));
  }
  for (std::size_t s = 0; s < v.size(); ++s) {
    const std::string label = what + " stream " + std::to_string(s);
    check_input(v[s], expect, label);
    if (v[s].dim(0) != batch) throw ShapeError(label + ": batch size differs from stream 0");
  }
}

// Conv stack and per-stream dense for one spatial stream: [b,125].
Tensor spatial_stream(Ctx& ctx, const Tensor& x, std::size_t s) {
  const ModelConfig& c = ctx.m.config();
  Tensor h = x;
  for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    h = relu(apply_conv(ctx.m.layer(name), h, s, AttentionPositions::pixels));
    ctx.keep(name + "#" + std::to_string(s), h);
  }
  h = flatten(h);
  return relu(dense_of(ctx.m.layer("fc"), h, s));
}

Tensor forward_eegnet(Ctx& ctx, const ModelInput& in) {
  const ModelConfig& c = ctx.m.config();
  check_input(in.segments, {kSensors, c.segment_length, 1}, "segments");
  Tensor h;
  if (c.self_attention()) {
    h = apply_conv(ctx.m.layer("aug_conv"), in.segments, 0, AttentionPositions::rows);
    ctx.keep("aug_conv", h);
  } else {
    h = apply_conv(ctx.m.layer("conv"), in.segments, 0, AttentionPositions::pixels);
    ctx.keep("conv", h);
  }
  h = apply_batchnorm(ctx, "bn1", h);
  h = depthwise_conv2d(h, ctx.m.layer("depthwise").param("kernel"), std::nullopt, Padding::valid);
  h = elu(apply_batchnorm(ctx, "bn2", h));
  ctx.keep("depthwise", h);
  h = avgpool2d(h, 1, c.pool1);
  h = apply_dropout(ctx, "dropout1", h);
  const LayerEntry& sep = ctx.m.layer("separable");
  h = separable_conv2d(h, sep.param("depth_kernel"), sep.param("point_kernel"), std::nullopt, Padding::same);
  h = elu(apply_batchnorm(ctx, "bn3", h));
  ctx.keep("separable", h);
  h = avgpool2d(h, 1, c.pool2);
  h = apply_dropout(ctx, "dropout2", h);
  h = flatten(h);
  if (c.global_attention()) {
    const std::size_t b = h.dim(0), w = c.global_state_width, n = h.dim(1) / w;
    const Tensor states = reshape(h, {b, n, w});
    const Tensor target = reshape(slice(states, 1, n - 1, 1), {b, w});
    h = apply_global(ctx, states, target).attentional;
  }
  return dense_of(ctx.m.layer("classifier"), h);
}

Tensor forward_cascade(Ctx& ctx, const ModelInput& in) {
  const ModelConfig& c = ctx.m.config();
  const std::size_t b = in.batch();
  check_streams(c, in.spatial, {kGridRows, kGridCols, c.depth}, "spatial", b);
  std::vector<Tensor> steps;
  for (std::size_t s = 0; s < c.streams; ++s) {
    steps.push_back(reshape(spatial_stream(ctx, in.spatial[s], s), {b, 1, c.fc_units}));
  }
  const Tensor seq = concat(steps, 1);
  const LayerEntry& l1 = ctx.m.layer("lstm1");
  const LayerEntry& l2 = ctx.m.layer("lstm2");
  const Tensor out1 = lstm(seq, {l1.param("kernel"), l1.param("recurrent"), l1.param("bias")}, true);
  Tensor h = lstm(out1, {l2.param("kernel"), l2.param("recurrent"), l2.param("bias")}, false);
  if (c.global_attention()) h = apply_global(ctx, out1, h).attentional;
  h = relu(dense_of(ctx.m.layer("fc_out"), h));
  return dense_of(ctx.m.layer("classifier"), h);
}

Tensor forward_multiview(Ctx& ctx, const ModelInput& in) {
  const ModelConfig& c = ctx.m.config();
  const std::size_t b = in.batch();
  check_streams(c, in.spatial, {kGridRows, kGridCols, c.depth}, "spatial", b);
  check_streams(c, in.temporal, {kSensors, c.depth}, "temporal", b);

  Tensor spatial = spatial_stream(ctx, in.spatial[0], 0);
  for (std::size_t s = 1; s < c.streams; ++s) spatial = add(spatial, spatial_stream(ctx, in.spatial[s], s));

  const LayerEntry& tfc = ctx.m.layer("temporal_fc");
  std::vector<Tensor> parts;
  for (std::size_t s = 0; s < c.streams; ++s) {
    parts.push_back(relu(linear(transpose_last(in.temporal[s]), tfc.param("kernel"), tfc.param("bias"))));
  }
  const Tensor seq = concat(parts, 1);
  const LayerEntry& l1 = ctx.m.layer("lstm1");
  const LayerEntry& l2 = ctx.m.layer("lstm2");
  Tensor h = lstm(seq, {l1.param("kernel"), l1.param("recurrent"), l1.param("bias")}, true);
  if (c.global_attention()) {
    const std::size_t n = h.dim(1);
    const Tensor target = reshape(slice(h, 1, n - 1, 1), {b, c.lstm_hidden});
    const Tensor att = apply_global(ctx, h, target).attentional;
    h = reshape(att, {b, c.global_out, 1});
  }
  h = lstm(h, {l2.param("kernel"), l2.param("recurrent"), l2.param("bias")}, false);
  const Tensor temporal = relu(dense_of(ctx.m.layer("temporal_out"), h));
  return dense_of(ctx.m.layer("classifier"), concat({spatial, temporal}, 1));
}

}  // namespace

ForwardResult forward(ModelGraph& model, const ModelInput& input, const ForwardOptions& opts) {
  Ctx ctx{model, opts};
  if (input.batch() == 0) throw ShapeError("forward: empty batch");
  Tensor logits;
  switch (model.config().architecture) {
    case Architecture::eegnet: logits = forward_eegnet(ctx, input); break;
    case Architecture::cascade: logits = forward_cascade(ctx, input); break;
    case Architecture::multiview: logits = forward_multiview(ctx, input); break;
  }
  return {logits, softmax(logits, 1)};
}

// ---------------------------------------------------------------------------
// Accounting

const ParamRow& ParamTable::row(const std::string& layer) const {
  for (const auto& r : rows) {
    if (r.layer == layer) return r;
  }
  throw ConfigError("parameter table has no layer '" + layer + "'");
}

std::string ParamTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(18) << "layer" << std::setw(26) << "type" << std::setw(16) << "output"
     << std::right << std::setw(12) << "params" << std::setw(8) << "copies" << std::setw(12) << "total" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(18) << r.layer << std::setw(26) << r.kind << std::setw(16)
       << shape_str(r.output_shape) << std::right << std::setw(12) << r.per_copy << std::setw(8) << r.copies
       << std::setw(12) << r.total << '\n';
  }
  os << "trainable parameters: " << total << '\n';
  os << "non-trainable values: " << state_total << '\n';
  return os.str();
}

ParamTable count_params(const ModelGraph& model) {
  ParamTable t;
  for (const auto& l : model.layers()) {
    ParamRow r;
    r.layer = l.desc.name;
    r.kind = to_string(l.desc.kind);
    r.output_shape = l.output_shape;
    r.per_copy = param_count(l.desc, l.input_shape);
    r.copies = l.copies;
    r.total = r.per_copy * r.copies;
    r.state = state_count(l.desc, l.input_shape) * l.copies;
    t.total += r.total;
    t.state_total += r.state;
    t.rows.push_back(std::move(r));
  }
  return t;
}

ParamTable count_params(const ModelConfig& cfg) {
  return count_params(build_checked(cfg, cfg.architecture, false));
}

std::vector<ReferenceCount> reference_counts() {
  std::vector<ReferenceCount> out;
  auto add_row = [&](Architecture a, const ParamTable& t, const std::string& layer, std::size_t ref, bool pinned,
                     std::string note = "") {
    out.push_back({a, layer, ref, t.row(layer).per_copy, pinned, std::move(note)});
  };

  const ParamTable cas = count_params(ModelConfig::defaults(Architecture::cascade));
  add_row(Architecture::cascade, cas, "conv1", 619, false, "attention-augmented 7x7, 1 filter + 2 attention channels");
  add_row(Architecture::cascade, cas, "conv2", 296, true);
  add_row(Architecture::cascade, cas, "conv3", 396, true);
  add_row(Architecture::cascade, cas, "fc", 210125, true, "per stream");
  add_row(Architecture::cascade, cas, "lstm1", 5440, true);
  add_row(Architecture::cascade, cas, "lstm2", 840, true);
  add_row(Architecture::cascade, cas, "global_attention", 2660, false, "W_a 10x10, W_c 20x128");
  add_row(Architecture::cascade, cas, "fc_out", 16125, false);
  add_row(Architecture::cascade, cas, "classifier", 504, true);
  out.push_back({Architecture::cascade, "total", 2139869, cas.total, false,
                 "every stream keeps its own conv stack and dense layer"});

  const ParamTable mv = count_params(ModelConfig::defaults(Architecture::multiview));
  add_row(Architecture::multiview, mv, "conv1", 619, false);
  add_row(Architecture::multiview, mv, "conv2", 296, false);
  add_row(Architecture::multiview, mv, "conv3", 396, false);
  add_row(Architecture::multiview, mv, "fc", 210125, false, "per stream");
  add_row(Architecture::multiview, mv, "temporal_fc", 31125, true, "shared over all time columns");
  add_row(Architecture::multiview, mv, "lstm1", 5440, true);
  add_row(Architecture::multiview, mv, "global_attention", 2660, false, "on the first LSTM's output sequence");
  add_row(Architecture::multiview, mv, "lstm2", 480, false, "reads the 128-wide attentional vector as 128 scalar steps");
  add_row(Architecture::multiview, mv, "temporal_out", 1375, true);
  add_row(Architecture::multiview, mv, "classifier", 1004, true);

  // EEGNet: the listed batchnorm and separable counts do not fit the default
  // filter sizes, so those entries are pinned on explicit layer descriptors.
  ModelConfig ec = ModelConfig::defaults(Architecture::eegnet);
  const ParamTable eeg = count_params(ec);
  auto layer_count = [](LayerDescriptor d, const Shape& in) { return param_count(d, in); };
  LayerDescriptor sep;
  sep.kind = LayerKind::separable_conv2d;
  sep.name = "separable";
  sep.hyper = {{"filters", 16}, {"kernel_h", 1}, {"kernel_w", 14}, {"padding", 1}, {"bias", 1}};
  LayerDescriptor bn;
  bn.kind = LayerKind::batchnorm;
  bn.name = "bn";
  out.push_back({Architecture::eegnet, "separable (16 in, 1x14 depth kernel, 16 filters, bias)", 496,
                 layer_count(sep, {1, 89, 16}), true, "default model: " + std::to_string(eeg.row("separable").per_copy)});
  out.push_back({Architecture::eegnet, "batchnorm (2 channels)", 4, layer_count(bn, {1, 1, 2}), true,
                 "default model bn1: " + std::to_string(eeg.row("bn1").per_copy)});
  out.push_back({Architecture::eegnet, "batchnorm (4 channels)", 8, layer_count(bn, {1, 1, 4}), true,
                 "default model bn2/bn3: " + std::to_string(eeg.row("bn2").per_copy) + "/" +
                     std::to_string(eeg.row("bn3").per_copy)});
  add_row(Architecture::eegnet, eeg, "classifier", 516, true, "global attention output width 128");
  add_row(Architecture::eegnet, eeg, "aug_conv", 2211648, false, "row positions, 1425-step segments");
  add_row(Architecture::eegnet, eeg, "depthwise", 128, false, "(248,1) kernel, multiplier 2 over 18 channels");
  add_row(Architecture::eegnet, eeg, "global_attention", 2112, false, "8-wide states: W_a 8x8, W_c 16x128");
  return out;
}

std::string reference_report() {
  std::ostringstream os;
  os << "| model | item | reference | ours | status | note |\n";
  os << "|---|---|---:|---:|---|---|\n";
  for (const auto& r : reference_counts()) {
    const char* status = r.reference == r.ours ? "match" : (r.pinned ? "MISMATCH" : "differs (documented)");
    os << "| " << to_string(r.architecture) << " | " << r.item << " | " << r.reference << " | " << r.ours << " | "
       << status << (r.pinned ? ", pinned" : "") << " | " << r.note << " |\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "MEGDEC-CHECKPOINT 1";
constexpr const char* kHeaderEnd = "---";

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const fs::path& path) {
  unsigned char b[4];
  const auto at = static_cast<std::uint64_t>(is.tellg());
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path.string() + ": truncated checkpoint", at);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_tensor(std::ostream& os, const std::string& name, const Shape& shape, std::span<const double> v) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(os, static_cast<std::uint32_t>(d));
  for (double x : v) {
    const float f = static_cast<float>(x);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

}  // namespace

void save_checkpoint(const ModelGraph& model, const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  os << kCheckpointMagic << '\n' << model.config().to_text() << kHeaderEnd << '\n';
  auto params = model.named_parameters();
  auto state = const_cast<ModelGraph&>(model).named_state();
  put_u32(os, static_cast<std::uint32_t>(params.size() + state.size()));
  for (const auto& [name, t] : params) put_tensor(os, name, t.shape(), t.data());
  for (const auto& [name, v] : state) put_tensor(os, name, {v->size()}, *v);
  if (!os) throw ConfigError("failed writing '" + path.string() + "'");
}

ModelGraph load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw FormatError(path.string() + ": not a checkpoint", 0);
  }
  std::string header;
  bool closed = false;
  while (std::getline(is, line)) {
    if (line == kHeaderEnd) {
      closed = true;
      break;
    }
    header += line + '\n';
  }
  if (!closed) throw FormatError(path.string() + ": unterminated checkpoint header", static_cast<std::uint64_t>(is.gcount()));
  ModelGraph model = build_model(ModelConfig::from_text(header));

  std::map<std::string, std::pair<Shape, std::span<double>>> slots;
  for (auto& [name, t] : model.named_parameters()) {
    Tensor handle = t;
    slots[name] = {t.shape(), handle.mutable_data()};
  }
  for (auto& [name, v] : model.named_state()) slots[name] = {Shape{v->size()}, std::span<double>(*v)};

  const std::uint32_t count = get_u32(is, path);
  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = static_cast<std::uint64_t>(is.tellg());
    const std::uint32_t len = get_u32(is, path);
    if (len > 4096) throw FormatError(path.string() + ": implausible tensor name length", at);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError(path.string() + ": truncated checkpoint", at);
    const std::uint32_t rank = get_u32(is, path);
    if (rank > 8) throw FormatError(path.string() + ": implausible rank for '" + name + "'", at);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(is, path);
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError(path.string() + ": unexpected tensor '" + name + "'", at);
    if (it->second.first != shape) {
      throw FormatError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                            shape_str(it->second.first),
                        at);
    }
    for (double& x : it->second.second) {
      const std::uint32_t bits = get_u32(is, path);
      float f;
      std::memcpy(&f, &bits, 4);
      x = static_cast<double>(f);
    }
    ++filled;
  }
  if (filled != slots.size()) {
    throw FormatError(path.string() + ": checkpoint holds " + std::to_string(filled) + " of " +
                          std::to_string(slots.size()) + " tensors",
                      static_cast<std::uint64_t>(is.tellg()));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes", static_cast<std::uint64_t>(is.tellg()));
  }
  return model;
}

}  // namespace megdec
