#include "megdec/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "megdec/errors.hpp"
#include "megdec/meshing.hpp"

namespace megdec {

// ---------------------------------------------------------------------------
// Adam

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ContractError("adam_step: one gradient per parameter expected");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel()) {
      throw ContractError("adam_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                          " values for a parameter of shape " + shape_str(params[i].shape()));
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state belongs to a different parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      w[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.epsilon);
    }
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state, cfg);
}

// ---------------------------------------------------------------------------
// Samples

std::vector<std::string> SampleSet::subjects() const {
  std::set<std::string> s;
  for (const auto& x : samples) s.insert(x.subject);
  return {s.begin(), s.end()};
}

std::vector<std::size_t> SampleSet::indices_of(const std::string& subject) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].subject == subject) out.push_back(i);
  }
  return out;
}

SampleSet prepare_samples(const std::vector<Recording>& recs, const ModelConfig& cfg, const PrepConfig& prep,
                          const NormStats* stats, bool allow_seen) {
  SampleSet out;
  if (cfg.architecture == Architecture::eegnet) {
    for (const auto& r : recs) {
      for (auto& seg : segment_sliding(scale(r, prep.eegnet_scale), cfg.segment_length, prep.segment_overlap)) {
        Sample s;
        s.subject = r.subject_id;
        s.label = r.label;
        s.segment = std::move(seg);
        out.samples.push_back(std::move(s));
      }
    }
    return out;
  }
  if (stats == nullptr) throw ConfigError("prepare_samples: cascade and multiview inputs need normalization stats");
  if (!allow_seen) check_disjoint(*stats, subject_ids(recs));
  const bool temporal = cfg.architecture == Architecture::multiview;
  for (const auto& r : recs) {
    const Recording z = normalize(r, *stats);
    for (auto& ss : assemble_streams(z.samples, cfg.streams, cfg.depth, prep.stream_overlap, r.label)) {
      Sample s;
      s.subject = r.subject_id;
      s.label = r.label;
      s.spatial = std::move(ss.spatial);
      if (temporal) s.temporal = std::move(ss.temporal);
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

Tensor stack(const std::vector<const Tensor*>& items, const Shape& per) {
  const std::size_t n = shape_numel(per);
  std::vector<double> data;
  data.reserve(n * items.size());
  for (const Tensor* t : items) {
    if (t->shape() != per) throw ShapeError("make_batch: sample of shape " + shape_str(t->shape()) + ", expected " +
                                            shape_str(per));
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  Shape s{items.size()};
  s.insert(s.end(), per.begin(), per.end());
  return Tensor(std::move(s), std::move(data));
}

}  // namespace

Batch make_batch(const SampleSet& set, const std::vector<std::size_t>& indices, const ModelConfig& cfg) {
  if (indices.empty()) throw ContractError("make_batch: no samples");
  Batch b;
  std::vector<const Tensor*> items;
  for (std::size_t i : indices) b.labels.push_back(set.samples.at(i).label);
  if (cfg.architecture == Architecture::eegnet) {
    for (std::size_t i : indices) items.push_back(&set.samples[i].segment);
    b.input.segments = stack(items, {kSensors, cfg.segment_length});
    Shape s = b.input.segments.shape();
    s.push_back(1);
    b.input.segments = reshape(b.input.segments, s);
    return b;
  }
  for (std::size_t w = 0; w < cfg.streams; ++w) {
    items.clear();
    for (std::size_t i : indices) items.push_back(&set.samples[i].spatial.at(w));
    b.input.spatial.push_back(stack(items, {kGridRows, kGridCols, cfg.depth}));
    if (cfg.architecture == Architecture::multiview) {
      items.clear();
      for (std::size_t i : indices) items.push_back(&set.samples[i].temporal.at(w));
      b.input.temporal.push_back(stack(items, {kSensors, cfg.depth}));
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training

TrainConfig TrainConfig::defaults(Architecture a) {
  TrainConfig c;
  if (a == Architecture::eegnet) {
    c.batch_size = 16;
    c.micro_batch = 16;
  }
  return c;
}

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (micro_batch == 0) throw ConfigError("train: micro_batch must be >= 1");
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("train: validation_fraction must lie in [0, 1)");
  }
}

namespace {

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

int argmax_row(std::span<const double> v, std::size_t row, std::size_t width) {
  const double* p = v.data() + row * width;
  return static_cast<int>(std::max_element(p, p + width) - p);
}

std::vector<std::vector<std::size_t>> chunks(const std::vector<std::size_t>& idx, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < idx.size(); i += size) {
    out.emplace_back(idx.begin() + static_cast<long>(i),
                     idx.begin() + static_cast<long>(std::min(idx.size(), i + size)));
  }
  return out;
}

// Mean loss and accuracy in inference mode.
std::pair<double, double> score(ModelGraph& model, const SampleSet& set, const std::vector<std::size_t>& idx,
                                std::size_t batch) {
  NoGradGuard guard;
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& c : chunks(idx, batch)) {
    const Batch b = make_batch(set, c, model.config());
    const ForwardResult r = forward(model, b.input);
    const double l = softmax_cross_entropy(r.logits, b.labels).item();
    if (!std::isfinite(l)) throw NumericError("validation loss is not finite");
    loss += l * static_cast<double>(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      correct += argmax_row(r.logits.data(), i, r.logits.dim(1)) == b.labels[i];
    }
  }
  const double n = static_cast<double>(idx.size());
  return {loss / n, static_cast<double>(correct) / n};
}

struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> state;

  static Snapshot take(ModelGraph& m) {
    Snapshot s;
    for (const auto& p : m.parameters()) s.params.emplace_back(p.data().begin(), p.data().end());
    for (const auto& [n, v] : m.named_state()) s.state.push_back(*v);
    return s;
  }
  void restore(ModelGraph& m) const {
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) std::copy(params[i].begin(), params[i].end(), ps[i].mutable_data().begin());
    auto st = m.named_state();
    for (std::size_t i = 0; i < st.size(); ++i) *st[i].second = state[i];
  }
};

}  // namespace

TrainResult train(ModelGraph& model, const SampleSet& set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (set.empty()) throw ConfigError("train: empty training set");
  std::mt19937_64 split_rng = stream_rng(cfg.seed, 1);
  std::mt19937_64 shuffle_rng = stream_rng(cfg.seed, 2);
  std::mt19937_64 dropout_rng = stream_rng(cfg.seed, 3);

  // Hold out a share of every (subject, class) group for validation.
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < set.size(); ++i) groups[{set.samples[i].subject, set.samples[i].label}].push_back(i);
  std::vector<std::size_t> fit, val;
  for (auto& [key, idx] : groups) {
    std::shuffle(idx.begin(), idx.end(), split_rng);
    std::size_t nval = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(idx.size())));
    if (cfg.validation_fraction > 0.0 && idx.size() >= 2) nval = std::clamp<std::size_t>(nval, 1, idx.size() - 1);
    if (idx.size() < 2) nval = 0;
    val.insert(val.end(), idx.begin(), idx.begin() + static_cast<long>(nval));
    fit.insert(fit.end(), idx.begin() + static_cast<long>(nval), idx.end());
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());

  TrainResult res;
  res.train_samples = fit.size();
  res.val_samples = val.size();
  std::vector<Tensor> params = model.parameters();
  AdamState adam;
  Snapshot best = Snapshot::take(model);
  double best_loss = INFINITY;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(fit.begin(), fit.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : chunks(fit, cfg.batch_size)) {
      for (auto& p : params) p.zero_grad();
      for (const auto& part : chunks(batch, cfg.micro_batch)) {
        const Batch b = make_batch(set, part, model.config());
        Tape tape;
        ForwardOptions opts;
        opts.training = true;
        opts.dropout_rng = &dropout_rng;
        const ForwardResult r = forward(model, b.input, opts);
        const Tensor loss = softmax_cross_entropy(r.logits, b.labels);
        const double l = loss.item();
        if (!std::isfinite(l)) throw NumericError("training loss is not finite at epoch " + std::to_string(epoch));
        loss_sum += l * static_cast<double>(part.size());
        for (std::size_t i = 0; i < part.size(); ++i) {
          correct += argmax_row(r.logits.data(), i, r.logits.dim(1)) == b.labels[i];
        }
        tape.backward(scale(loss, static_cast<double>(part.size()) / static_cast<double>(batch.size())));
      }
      adam_step(params, adam, cfg.adam);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(fit.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(fit.size());
    if (!val.empty()) {
      std::tie(rec.val_loss, rec.val_accuracy) = score(model, set, val, cfg.micro_batch);
    } else {
      rec.val_loss = rec.train_loss;
      rec.val_accuracy = rec.train_accuracy;
    }
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      res.best_epoch = epoch;
      best = Snapshot::take(model);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  best.restore(model);
  res.best_val_loss = best_loss;
  return res;
}

std::vector<int> predict(ModelGraph& model, const SampleSet& set, std::size_t batch) {
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<int> out;
  out.reserve(set.size());
  NoGradGuard guard;
  for (const auto& c : chunks(idx, std::max<std::size_t>(1, batch))) {
    ModelInput in = make_batch(set, c, model.config()).input;
    const ForwardResult r = forward(model, in);
    for (std::size_t i = 0; i < c.size(); ++i) out.push_back(argmax_row(r.logits.data(), i, r.logits.dim(1)));
  }
  return out;
}

void summarize(Metrics& m) {
  if (m.subjects.empty()) {
    m.mean = m.std = 0.0;
    return;
  }
  const double n = static_cast<double>(m.subjects.size());
  double sum = 0.0;
  for (const auto& s : m.subjects) sum += s.accuracy();
  m.mean = sum / n;
  double var = 0.0;
  for (const auto& s : m.subjects) var += (s.accuracy() - m.mean) * (s.accuracy() - m.mean);
  m.std = std::sqrt(var / n);
}

Metrics evaluate_cross_subject(ModelGraph& model, const SampleSet& set, const std::vector<std::string>& subjects,
                               std::size_t batch) {
  SampleSet chosen;
  std::vector<std::size_t> owner;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    const auto idx = set.indices_of(subjects[k]);
    if (idx.empty()) throw ConfigError("evaluate: unknown subject '" + subjects[k] + "'");
    for (std::size_t i : idx) {
      Sample s = set.samples[i];
      s.label = 0;  // predictions are made before labels are looked at
      chosen.samples.push_back(std::move(s));
      owner.push_back(i);
    }
  }
  const std::vector<int> pred = predict(model, chosen, batch);
  const std::size_t classes = model.config().classes;
  Metrics m;
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::map<std::string, SubjectAccuracy> acc;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Sample& s = set.samples[owner[i]];
    m.confusion.at(static_cast<std::size_t>(s.label)).at(static_cast<std::size_t>(pred[i]))++;
    auto& a = acc[s.subject];
    a.subject = s.subject;
    a.total++;
    a.correct += pred[i] == s.label;
  }
  for (const auto& id : subjects) m.subjects.push_back(acc.at(id));
  summarize(m);
  return m;
}

// ---------------------------------------------------------------------------
// Metrics text

std::string Metrics::summary() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, std);
  return buf;
}

std::string Metrics::to_json() const {
  nlohmann::ordered_json j;
  j["mean"] = mean;
  j["std"] = std;
  j["summary"] = summary();
  auto& subs = j["subjects"] = nlohmann::ordered_json::array();
  for (const auto& s : subjects) {
    subs.push_back({{"id", s.subject}, {"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy()}});
  }
  j["confusion"] = confusion;
  auto& hist = j["history"] = nlohmann::ordered_json::array();
  for (const auto& e : history) {
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"train_accuracy", e.train_accuracy},
                    {"val_loss", e.val_loss},
                    {"val_accuracy", e.val_accuracy}});
  }
  return j.dump(2) + "\n";
}

Metrics Metrics::from_json(const std::string& text) {
  Metrics m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.mean = j.at("mean").get<double>();
    m.std = j.at("std").get<double>();
    for (const auto& s : j.at("subjects")) {
      m.subjects.push_back({s.at("id").get<std::string>(), s.at("correct").get<std::size_t>(),
                            s.at("total").get<std::size_t>()});
    }
    m.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& e : j.value("history", nlohmann::json::array())) {
      m.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                           e.at("train_accuracy").get<double>(), e.at("val_loss").get<double>(),
                           e.at("val_accuracy").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics json: ") + e.what(), 0);
  }
  return m;
}

std::string Metrics::history_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& e : history) {
    os << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ',' << e.val_accuracy
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Exports

AttentionExport export_attention_weights(ModelGraph& model, const SampleSet& set,
                                         const std::vector<std::size_t>& indices) {
  if (!model.config().global_attention()) {
    throw CapabilityError("attention weights: model '" + to_string(model.config().attention) +
                          "' has no global attention");
  }
  std::vector<std::size_t> idx = indices;
  if (idx.empty()) {
    idx.resize(set.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  if (idx.empty()) throw ConfigError("attention weights: no samples");
  AttentionExport e;
  e.min_sum = INFINITY;
  e.max_sum = -INFINITY;
  NoGradGuard guard;
  for (const auto& c : chunks(idx, 16)) {
    const Batch b = make_batch(set, c, model.config());
    ForwardTrace trace;
    ForwardOptions opts;
    opts.trace = &trace;
    forward(model, b.input, opts);
    const Tensor& w = trace.attention_weights;
    const std::size_t n = w.dim(1);
    if (e.mean.empty()) e.mean.assign(n, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      double sum = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        sum += w[i * n + t];
        e.mean[t] += w[i * n + t];
      }
      e.min_sum = std::min(e.min_sum, sum);
      e.max_sum = std::max(e.max_sum, sum);
    }
  }
  e.samples = idx.size();
  for (double& v : e.mean) v /= static_cast<double>(e.samples);
  return e;
}

std::vector<FeatureMap> export_feature_maps(ModelGraph& model, const Sample& sample,
                                            const std::vector<std::string>& layers, std::size_t stream) {
  const ModelConfig& cfg = model.config();
  for (const auto& name : layers) {
    const LayerKind k = model.layer(name).desc.kind;
    if (k != LayerKind::conv2d && k != LayerKind::depthwise_conv2d && k != LayerKind::separable_conv2d &&
        k != LayerKind::aug_attention_conv) {
      throw CapabilityError("feature maps: layer '" + name + "' is " + to_string(k) + ", not convolutional");
    }
  }
  const bool per_stream = cfg.architecture != Architecture::eegnet;
  if (per_stream && stream >= cfg.streams) {
    throw ConfigError("feature maps: stream " + std::to_string(stream) + " out of range");
  }
  SampleSet one;
  one.samples.push_back(sample);
  const Batch b = make_batch(one, {0}, cfg);
  ForwardTrace trace;
  trace.keep_activations = true;
  ForwardOptions opts;
  opts.trace = &trace;
  {
    NoGradGuard guard;
    forward(model, b.input, opts);
  }
  std::vector<FeatureMap> out;
  for (const auto& name : layers) {
    const std::string key = per_stream ? name + "#" + std::to_string(stream) : name;
    const Tensor& a = trace.activations.at(key);
    const std::size_t h = a.dim(1), w = a.dim(2), c = a.dim(3);
    for (std::size_t ch = 0; ch < c; ++ch) {
      FeatureMap m;
      m.layer = name;
      m.channel = ch;
      m.rows = h;
      m.cols = w;
      m.values.resize(h * w);
      for (std::size_t i = 0; i < h * w; ++i) m.values[i] = a[i * c + ch];
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::vector<double> normalized(const FeatureMap& map) {
  std::vector<double> out(map.values.size(), 0.0);
  if (map.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double span = *hi - *lo;
  if (span <= 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (map.values[i] - *lo) / span;
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  os.precision(17);
  return os;
}

std::string fmt(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Viridis-like ramp, good enough for a quick look.
std::string color(double t) {
  static const double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  char buf[8];
  int rgb[3];
  for (int k = 0; k < 3; ++k) rgb[k] = static_cast<int>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

}  // namespace

void write_attention_csv(const AttentionExport& e, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "position,weight\n";
  for (std::size_t t = 0; t < e.mean.size(); ++t) os << t << ',' << e.mean[t] << '\n';
}

void write_attention_svg(const AttentionExport& e, const std::filesystem::path& path) {
  const double bar = 24, gap = 6, height = 200, left = 50, top = 30;
  const double width = left + static_cast<double>(e.mean.size()) * (bar + gap) + 20;
  double peak = 0.0;
  for (double v : e.mean) peak = std::max(peak, v);
  if (peak <= 0.0) peak = 1.0;
  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width, 0) << "\" height=\"" << fmt(height + 70, 0)
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"18\">Average global attention weights (" << e.samples << " samples)</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << fmt(width - 10, 0) << "\" y2=\""
     << top + height << "\" stroke=\"black\"/>\n";
  for (std::size_t t = 0; t < e.mean.size(); ++t) {
    const double h = height * e.mean[t] / peak;
    const double x = left + static_cast<double>(t) * (bar + gap);
    os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(top + height - h) << "\" width=\"" << bar << "\" height=\""
       << fmt(h) << "\" fill=\"#3b528b\"/>\n";
    os << "<text x=\"" << fmt(x + bar / 2) << "\" y=\"" << top + height + 14 << "\" text-anchor=\"middle\">" << t + 1
       << "</text>\n";
  }
  os << "<text x=\"5\" y=\"" << top + 10 << "\">" << fmt(peak, 3) << "</text>\n";
  os << "</svg>\n";
}

void write_feature_maps_csv(const std::vector<FeatureMap>& maps, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "layer,channel,row,col,value\n";
  for (const auto& m : maps) {
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) {
        os << m.layer << ',' << m.channel << ',' << r << ',' << c << ',' << m.values[r * m.cols + c] << '\n';
      }
  }
}

void write_feature_maps_svg(const std::vector<FeatureMap>& maps, const std::filesystem::path& path) {
  std::size_t max_cols = 1;
  for (const auto& m : maps) max_cols = std::max(max_cols, m.cols);
  // Wide maps (EEGNet time axis) get thinner cells.
  const double cell = std::max(1.0, std::min(12.0, 600.0 / static_cast<double>(max_cols)));
  double y = 10;
  std::ostringstream body;
  for (const auto& m : maps) {
    body << "<text x=\"10\" y=\"" << fmt(y + 12) << "\">" << m.layer << " channel " << m.channel << "</text>\n";
    y += 18;
    const auto v = normalized(m);
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) {
        body << "<rect x=\"" << fmt(10 + static_cast<double>(c) * cell) << "\" y=\""
             << fmt(y + static_cast<double>(r) * cell) << "\" width=\"" << fmt(cell) << "\" height=\"" << fmt(cell)
             << "\" fill=\"" << color(v[r * m.cols + c]) << "\"/>\n";
      }
    y += static_cast<double>(m.rows) * cell + 12;
  }
  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(20 + static_cast<double>(max_cols) * cell, 0)
     << "\" height=\"" << fmt(y, 0) << "\" font-family=\"sans-serif\" font-size=\"11\" shape-rendering=\"crispEdges\">\n"
     << body.str() << "</svg>\n";
}

void write_history_svg(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  const double w = 480, h = 200, left = 50, top = 20;
  double max_loss = 0.0;
  for (const auto& e : history) max_loss = std::max({max_loss, e.train_loss, e.val_loss});
  if (max_loss <= 0.0) max_loss = 1.0;
  const double n = static_cast<double>(std::max<std::size_t>(2, history.size()) - 1);
  auto line = [&](auto get, double scale_to, const char* stroke) {
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"" << stroke << "\" points=\"";
    for (std::size_t i = 0; i < history.size(); ++i) {
      os << fmt(left + w * static_cast<double>(i) / n) << ',' << fmt(top + h - h * get(history[i]) / scale_to) << ' ';
    }
    os << "\"/>\n";
    return os.str();
  };
  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + w + 20 << "\" height=\"" << top + h + 40
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#999\"/>\n";
  os << line([](const EpochRecord& e) { return e.train_loss; }, max_loss, "#1f77b4");
  os << line([](const EpochRecord& e) { return e.val_loss; }, max_loss, "#ff7f0e");
  os << line([](const EpochRecord& e) { return e.train_accuracy; }, 1.0, "#2ca02c");
  os << line([](const EpochRecord& e) { return e.val_accuracy; }, 1.0, "#d62728");
  os << "<text x=\"" << left << "\" y=\"" << top + h + 16
     << "\">loss (blue train, orange val, max " << fmt(max_loss, 3)
     << "), accuracy (green train, red val)</text>\n";
  os << "</svg>\n";
}

}  // namespace megdec
