#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "model_helpers.hpp"
#include "megdec/errors.hpp"
#include "megdec/training.hpp"

using namespace megdec;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

// Scalar Adam written out longhand, the oracle for adam_step.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double w, double g, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return w - lr * mh / (std::sqrt(vh) + eps);
  }
};

std::vector<std::vector<double>> values(const ModelGraph& g) {
  std::vector<std::vector<double>> out;
  for (const auto& p : g.parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

// A random-input sample set for tiny models, labels cycling through classes.
SampleSet random_set(const ModelConfig& c, const std::vector<std::string>& subjects, std::size_t per_subject,
                     std::mt19937_64& rng) {
  SampleSet s;
  for (const auto& id : subjects) {
    for (std::size_t i = 0; i < per_subject; ++i) {
      const ModelInput in = random_input(c, 1, rng);
      Sample x;
      x.subject = id;
      x.label = static_cast<int>(i % c.classes);
      auto drop = [](const Tensor& t) {
        Shape sh(t.shape().begin() + 1, t.shape().end());
        return reshape(t, sh).clone();
      };
      if (in.segments.rank() > 0) {
        x.segment = reshape(in.segments, {kSensors, c.segment_length}).clone();
      }
      for (const auto& t : in.spatial) x.spatial.push_back(drop(t));
      for (const auto& t : in.temporal) x.temporal.push_back(drop(t));
      s.samples.push_back(std::move(x));
    }
  }
  return s;
}

ModelConfig small_eegnet() {
  ModelConfig c = ModelConfig::defaults(Architecture::eegnet);
  c.attention = AttentionMode::self_global;
  c.segment_length = 64;
  c.eeg_filters = 4;
  c.depth_multiplier = 1;
  c.separable_filters = 4;
  c.kernel_length = 8;
  c.separable_kernel = 4;
  c.pool1 = 2;
  c.pool2 = 4;
  c.global_state_width = 4;
  c.global_out = 16;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<Tensor> p{Tensor::parameter({3}, {1.0, -2.0, 0.5})};
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(p, {{0.0, 0.0, 0.0}}, st, AdamConfig{});
  CHECK(p[0][0] == 1.0);
  CHECK(p[0][1] == -2.0);
  CHECK(p[0][2] == 0.5);
  CHECK(st.step == 5);
}

TEST_CASE("adam: first step moves each coordinate by lr against the gradient sign") {
  const std::vector<double> g{3.0, -0.02, 1e-3, -250.0};
  std::vector<Tensor> p{Tensor::parameter({4}, {0.0, 0.0, 0.0, 0.0})};
  AdamState st;
  AdamConfig cfg;
  adam_step(p, {g}, st, cfg);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double expect = -cfg.lr * (g[i] > 0 ? 1.0 : -1.0);
    CHECK(std::abs(p[0][i] - expect) < cfg.lr * 1e-4);
  }
}

TEST_CASE("adam: quadratic (w-3)^2 follows the scalar recurrence and converges") {
  std::vector<Tensor> p{Tensor::parameter({1}, {0.0})};
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.1;
  ScalarAdam oracle;
  double w = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double g = 2.0 * (p[0][0] - 3.0);
    adam_step(p, {{g}}, st, cfg);
    w = oracle.step(w, 2.0 * (w - 3.0), 0.1);
    REQUIRE(std::abs(p[0][0] - w) < 1e-12);
  }
  CHECK(std::abs(p[0][0] - 3.0) < 0.1);
}

TEST_CASE("adam: gradient through the tape matches explicit gradients") {
  std::mt19937_64 rng(1);
  Tensor w = param({2, 3}, rng);
  Tensor x = rand_tensor({4, 2}, rng);
  std::vector<Tensor> ps{w};
  {
    Tape tape;
    Tensor loss = sum(mul(matmul(x, w), matmul(x, w)));
    tape.backward(loss);
  }
  const std::vector<double> g = w.grad();
  std::vector<Tensor> copy{Tensor::parameter(w.shape(), std::vector<double>(w.data().begin(), w.data().end()))};
  AdamState a, b;
  adam_step(ps, a, AdamConfig{});
  adam_step(copy, {g}, b, AdamConfig{});
  CHECK(max_abs_diff(ps[0].data(), copy[0].data()) == 0.0);
}

TEST_CASE("adam: contract and config errors") {
  std::vector<Tensor> p{Tensor::parameter({2}, {0.0, 0.0})};
  AdamState st;
  CHECK_THROWS_AS(adam_step(p, {{1.0}}, st, AdamConfig{}), ContractError);
  CHECK_THROWS_AS(adam_step(p, {}, st, AdamConfig{}), ContractError);
  AdamConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = AdamConfig{};
  bad.beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  TrainConfig t;
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  CHECK(TrainConfig::defaults(Architecture::eegnet).batch_size == 16);
  CHECK(TrainConfig::defaults(Architecture::cascade).batch_size == 64);
  CHECK(TrainConfig::defaults(Architecture::multiview).batch_size == 64);
  CHECK(TrainConfig{}.adam.lr == 1e-4);
}

TEST_CASE("sample preparation") {
  SynthSpec sp;
  sp.subjects = 9;
  sp.duration = 1.0;
  sp.sampling_rate = 128;
  sp.seed = 3;
  const auto recs = synth_generate(sp);
  const auto split = SplitSpec::for_setup(1, subject_ids(recs));
  std::vector<Recording> train_recs, test_recs;
  for (const auto& r : recs) {
    const bool tr = std::count(split.train_subjects.begin(), split.train_subjects.end(), r.subject_id) > 0;
    (tr ? train_recs : test_recs).push_back(r);
  }
  const NormStats stats = compute_norm_stats(train_recs);
  PrepConfig prep;

  SUBCASE("eegnet segments are scaled windows") {
    ModelConfig c = small_eegnet();
    const SampleSet s = prepare_samples(train_recs, c, prep, nullptr, true);
    const std::size_t per = segment_count(128, 64, prep.segment_overlap);
    CHECK(s.size() == train_recs.size() * per);
    const Sample& x = s.samples[1];
    CHECK(x.segment.shape() == Shape{kSensors, 64});
    const std::size_t start = segment_stride(64, prep.segment_overlap);
    CHECK(x.segment.at({5, 3}) == doctest::Approx(train_recs[0].samples.at({5, start + 3}) * 1e5).epsilon(1e-12));
    const Batch b = make_batch(s, {0, 1, 2}, c);
    CHECK(b.input.segments.shape() == Shape{3, kSensors, 64, 1});
    CHECK(b.labels.size() == 3);
  }
  SUBCASE("stream samples are normalized and shaped") {
    ModelConfig c = tiny_config(Architecture::multiview, AttentionMode::none);
    c.streams = 4;
    c.depth = 5;
    const SampleSet s = prepare_samples(train_recs, c, prep, &stats, true);
    CHECK(s.size() == train_recs.size() * stream_sample_count(128, 4, 5, prep.stream_overlap));
    CHECK(s.samples[0].spatial.size() == 4);
    CHECK(s.samples[0].temporal.size() == 4);
    const Recording z = normalize(train_recs[0], stats);
    CHECK(s.samples[0].temporal[1].at({7, 2}) == z.samples.at({7, 5 + 2}));
    const Batch b = make_batch(s, {0, 3}, c);
    CHECK(b.input.spatial[3].shape() == Shape{2, kGridRows, kGridCols, 5});
    CHECK(b.input.temporal[0].shape() == Shape{2, kSensors, 5});
    c.architecture = Architecture::cascade;
    CHECK(prepare_samples(train_recs, c, prep, &stats, true).samples[0].temporal.empty());
  }
  SUBCASE("cross-subject discipline") {
    ModelConfig c = tiny_config(Architecture::cascade, AttentionMode::none);
    CHECK_THROWS_AS(prepare_samples(train_recs, c, prep, nullptr, true), ConfigError);
    CHECK_THROWS_AS(prepare_samples(train_recs, c, prep, &stats, false), ContractError);
    CHECK_NOTHROW(prepare_samples(test_recs, c, prep, &stats, false));
  }
}

TEST_CASE("train: one batch changes parameters; empty set is rejected") {
  std::mt19937_64 rng(2);
  ModelConfig c = tiny_config(Architecture::cascade, AttentionMode::self_global);
  ModelGraph g = build_model(c);
  const auto before = values(g);
  const SampleSet s = random_set(c, {"A"}, 4, rng);
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 8;
  t.validation_fraction = 0.0;
  const TrainResult r = train(g, s, t);
  CHECK(r.history.size() == 1);
  CHECK(r.train_samples == 4);
  CHECK(values(g) != before);
  CHECK_THROWS_AS(train(g, SampleSet{}, t), ConfigError);
}

TEST_CASE("train: identical seeds give bit-identical parameters") {
  for (auto a : kArchitectures) {
    INFO(to_string(a));
    ModelConfig c = tiny_config(a, AttentionMode::self_global);
    c.dropout = 0.3;
    std::mt19937_64 rng(3);
    const SampleSet s = random_set(c, {"A", "B"}, 6, rng);
    TrainConfig t;
    t.epochs = 3;
    t.batch_size = 4;
    t.micro_batch = 2;
    t.seed = 11;
    ModelGraph g1 = build_model(c), g2 = build_model(c);
    const TrainResult r1 = train(g1, s, t);
    const TrainResult r2 = train(g2, s, t);
    CHECK(values(g1) == values(g2));
    CHECK(r1.history.back().train_loss == r2.history.back().train_loss);
    t.seed = 12;
    ModelGraph g3 = build_model(c);
    train(g3, s, t);
    CHECK(values(g3) != values(g1));
  }
}

TEST_CASE("train: micro-batching only changes memory, not the update") {
  // No batchnorm in cascade, so split batches must give the same gradient.
  ModelConfig c = tiny_config(Architecture::cascade, AttentionMode::self);
  std::mt19937_64 rng(4);
  const SampleSet s = random_set(c, {"A"}, 8, rng);
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 8;
  t.validation_fraction = 0.0;
  t.micro_batch = 8;
  ModelGraph g1 = build_model(c), g2 = build_model(c);
  train(g1, s, t);
  t.micro_batch = 3;
  train(g2, s, t);
  const auto a = values(g1), b = values(g2);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("train: validation split is stratified and the best epoch is kept") {
  ModelConfig c = tiny_config(Architecture::eegnet, AttentionMode::none);
  std::mt19937_64 rng(5);
  const SampleSet s = random_set(c, {"A", "B", "C"}, 8, rng);
  TrainConfig t;
  t.epochs = 6;
  t.batch_size = 4;
  t.adam.lr = 0.05;  // large enough to make validation loss move around
  ModelGraph g = build_model(c);
  std::vector<std::vector<std::vector<double>>> snaps;
  const TrainResult r = train(g, s, t);
  // 8 samples per subject, 2 per class: one of each pair goes to validation.
  CHECK(r.val_samples == 12);
  CHECK(r.train_samples == 12);
  double best = INFINITY;
  std::size_t arg = 0;
  for (const auto& e : r.history) {
    if (e.val_loss < best) {
      best = e.val_loss;
      arg = e.epoch;
    }
  }
  CHECK(r.best_epoch == arg);
  CHECK(r.best_val_loss == best);
}

TEST_CASE("train: early stopping honours patience") {
  ModelConfig c = tiny_config(Architecture::cascade, AttentionMode::none);
  std::mt19937_64 rng(6);
  const SampleSet s = random_set(c, {"A"}, 8, rng);
  TrainConfig t;
  t.epochs = 50;
  t.patience = 2;
  t.batch_size = 2;
  t.adam.lr = 0.01;  // random labels: validation loss turns up once the model memorizes
  ModelGraph g = build_model(c);
  const TrainResult r = train(g, s, t);
  CHECK(r.history.size() < 50);
  CHECK(r.history.size() == r.best_epoch + t.patience);
}

TEST_CASE("fixed-batch loss is non-increasing for every architecture and mode") {
  for (auto a : kArchitectures) {
    for (auto m : kModes) {
      INFO(std::string(to_string(a) + "/" + to_string(m)));
      ModelConfig c = tiny_config(a, m);
      ModelGraph g = build_model(c);
      std::mt19937_64 rng(7);
      const SampleSet s = random_set(c, {"A"}, 8, rng);
      std::vector<std::size_t> idx(8);
      std::iota(idx.begin(), idx.end(), 0);
      const Batch b = make_batch(s, idx, c);
      std::vector<Tensor> params = g.parameters();
      AdamState st;
      std::vector<double> losses;
      for (int step = 0; step <= 20; ++step) {
        for (auto& p : params) p.zero_grad();
        Tape tape;
        ForwardOptions o;
        o.training = true;
        const Tensor loss = softmax_cross_entropy(forward(g, b.input, o).logits, b.labels);
        losses.push_back(loss.item());
        tape.backward(loss);
        adam_step(params, st, AdamConfig{});
      }
      int down = 0;
      for (std::size_t i = 1; i < losses.size(); ++i) down += losses[i] <= losses[i - 1];
      CHECK(down >= 18);
    }
  }
}

TEST_CASE("evaluation: metrics arithmetic") {
  SUBCASE("perfect classifier") {
    Metrics m;
    for (int i = 0; i < 6; ++i) m.subjects.push_back({"S" + std::to_string(i), 9, 9});
    summarize(m);
    CHECK(m.mean == 1.0);
    CHECK(m.std == 0.0);
    CHECK(m.summary() == "1.00 ± 0.00");
  }
  SUBCASE("population std over exactly six subjects") {
    const std::vector<std::size_t> correct{10, 8, 6, 9, 7, 10};
    Metrics m;
    for (std::size_t i = 0; i < 6; ++i) m.subjects.push_back({"S" + std::to_string(i), correct[i], 10});
    summarize(m);
    double mean = 0.0;
    for (auto c : correct) mean += c / 10.0;
    mean /= 6.0;
    double var = 0.0;
    for (auto c : correct) var += (c / 10.0 - mean) * (c / 10.0 - mean);
    CHECK(m.mean == doctest::Approx(mean).epsilon(1e-15));
    CHECK(m.std == doctest::Approx(std::sqrt(var / 6.0)).epsilon(1e-15));
    CHECK(m.std < std::sqrt(var / 5.0));
  }
  SUBCASE("uniform random predictions sit at chance") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> pick(0, 3);
    Metrics m;
    for (int s = 0; s < 6; ++s) {
      SubjectAccuracy a{"S" + std::to_string(s), 0, 2000};
      for (int i = 0; i < 2000; ++i) a.correct += pick(rng) == i % 4;
      m.subjects.push_back(a);
    }
    summarize(m);
    // Binomial sd of one subject is sqrt(.25*.75/2000) ~ 0.0097.
    CHECK(std::abs(m.mean - 0.25) < 0.02);
  }
}

TEST_CASE("evaluation: confusion totals, unknown subjects, labels unused") {
  ModelConfig c = tiny_config(Architecture::multiview, AttentionMode::self_global);
  ModelGraph g = build_model(c);
  std::mt19937_64 rng(9);
  SampleSet s = random_set(c, {"A", "B", "C"}, 5, rng);
  const Metrics m = evaluate_cross_subject(g, s, {"A", "C"});
  REQUIRE(m.subjects.size() == 2);
  CHECK(m.subjects[0].subject == "A");
  std::size_t total = 0;
  for (const auto& row : m.confusion)
    for (auto v : row) total += v;
  CHECK(total == 10);
  CHECK(m.subjects[0].total == 5);
  CHECK_THROWS_AS(evaluate_cross_subject(g, s, {"A", "Z"}), ConfigError);

  const std::vector<int> p1 = predict(g, s);
  for (auto& x : s.samples) x.label = (x.label + 1) % 4;
  CHECK(predict(g, s) == p1);
  // Batch size does not change predictions.
  CHECK(predict(g, s, 1) == p1);
}

TEST_CASE("metrics json round trip and csv history") {
  Metrics m;
  m.subjects = {{"S13", 7, 9}, {"S14", 9, 9}};
  summarize(m);
  m.confusion = {{1, 0}, {2, 3}};
  m.history = {{1, 1.25, 0.5, 1.5, 0.25}, {2, 0.75, 0.75, 1.0, 0.5}};
  const Metrics r = Metrics::from_json(m.to_json());
  CHECK(r.to_json() == m.to_json());
  CHECK(r.subjects[0].subject == "S13");
  CHECK(r.std == m.std);
  const std::string csv = m.history_csv();
  CHECK(csv.rfind("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK_THROWS_AS(Metrics::from_json("{\"mean\": 1}"), FormatError);
}

TEST_CASE("attention weight export") {
  std::mt19937_64 rng(10);
  SUBCASE("needs global attention") {
    ModelConfig c = tiny_config(Architecture::cascade, AttentionMode::self);
    ModelGraph g = build_model(c);
    const SampleSet s = random_set(c, {"A"}, 2, rng);
    CHECK_THROWS_AS(export_attention_weights(g, s), CapabilityError);
  }
  for (auto a : kArchitectures) {
    INFO(to_string(a));
    ModelConfig c = tiny_config(a, AttentionMode::self_global);
    ModelGraph g = build_model(c);
    const SampleSet s = random_set(c, {"A", "B"}, 10, rng);
    const AttentionExport one = export_attention_weights(g, s, {3});
    ForwardTrace tr;
    ForwardOptions o;
    o.trace = &tr;
    forward(g, make_batch(s, {3}, c).input, o);
    CHECK(max_abs_diff(one.mean, tr.attention_weights.data()) == 0.0);
    const AttentionExport all = export_attention_weights(g, s);
    CHECK(all.samples == 20);
    CHECK(std::abs(std::accumulate(all.mean.begin(), all.mean.end(), 0.0) - 1.0) < 1e-9);
    CHECK(std::abs(all.min_sum - 1.0) < 1e-9);
    CHECK(std::abs(all.max_sum - 1.0) < 1e-9);
  }
  SUBCASE("cascade weights cover the ten streams") {
    ModelConfig c = ModelConfig::defaults(Architecture::cascade);
    ModelGraph g = build_model(c);
    const SampleSet s = random_set(c, {"A"}, 1, rng);
    CHECK(export_attention_weights(g, s).mean.size() == 10);
  }
}

TEST_CASE("feature map export") {
  std::mt19937_64 rng(11);
  SUBCASE("zero input gives zero maps in bias-free layers") {
    ModelConfig c = tiny_config(Architecture::eegnet, AttentionMode::self);
    ModelGraph g = build_model(c);
    Sample x;
    x.segment = Tensor({kSensors, c.segment_length}, 0.0);
    const auto maps = export_feature_maps(g, x, {"aug_conv"});
    REQUIRE(maps.size() == g.layer("aug_conv").output_shape.back());
    for (const auto& m : maps) CHECK(*std::max_element(m.values.begin(), m.values.end()) == 0.0);
    for (const auto& m : maps) CHECK(*std::min_element(m.values.begin(), m.values.end()) == 0.0);
  }
  SUBCASE("identity kernel reproduces the input channel") {
    ModelConfig c = tiny_config(Architecture::cascade, AttentionMode::none);
    ModelGraph g = build_model(c);
    Tensor k = g.layer("conv1").param("kernel", 1);
    auto kv = k.mutable_data();
    std::fill(kv.begin(), kv.end(), 0.0);
    const std::size_t kw = c.kernel_w, d = c.depth, co = c.conv_filters[0];
    kv[((1 * kw + 1) * d + 1) * co + 0] = 1.0;  // centre tap, input channel 1 -> output 0
    Tensor bias = g.layer("conv1").param("bias", 1);
    std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), 0.0);
    SampleSet s = random_set(c, {"A"}, 1, rng);
    Sample x = s.samples[0];
    for (auto& t : x.spatial) {
      for (double& v : t.mutable_data()) v = std::abs(v);
    }
    const auto maps = export_feature_maps(g, x, {"conv1"}, 1);
    REQUIRE(maps.size() == co);
    std::vector<double> channel;
    for (std::size_t i = 0; i < kGridRows * kGridCols; ++i) channel.push_back(x.spatial[1][i * d + 1]);
    CHECK(max_abs_diff(maps[0].values, channel) == 0.0);
  }
  SUBCASE("cascade maps keep the 20x21 grid") {
    ModelConfig c = tiny_config(Architecture::cascade, AttentionMode::self);
    ModelGraph g = build_model(c);
    const SampleSet s = random_set(c, {"A"}, 1, rng);
    const auto maps = export_feature_maps(g, s.samples[0], {"conv1", "conv2"}, 0);
    CHECK(maps.size() == g.layer("conv1").output_shape.back() + g.layer("conv2").output_shape.back());
    for (const auto& m : maps) {
      CHECK(m.rows == kGridRows);
      CHECK(m.cols == kGridCols);
      const auto n = normalized(m);
      CHECK(*std::min_element(n.begin(), n.end()) >= 0.0);
      CHECK(*std::max_element(n.begin(), n.end()) <= 1.0);
    }
    CHECK_THROWS_AS(export_feature_maps(g, s.samples[0], {"fc"}), CapabilityError);
    CHECK_THROWS_AS(export_feature_maps(g, s.samples[0], {"lstm1"}), CapabilityError);
    CHECK_THROWS_AS(export_feature_maps(g, s.samples[0], {"conv9"}), ConfigError);
    CHECK_THROWS_AS(export_feature_maps(g, s.samples[0], {"conv1"}, 5), ConfigError);
  }
}

TEST_CASE("export files") {
  const fs::path dir = fs::temp_directory_path() / "megdec_test_training_exports";
  fs::remove_all(dir);
  fs::create_directories(dir);
  AttentionExport e;
  e.mean = {0.1, 0.2, 0.7};
  e.samples = 4;
  write_attention_csv(e, dir / "a.csv");
  write_attention_svg(e, dir / "a.svg");
  std::ifstream in(dir / "a.csv");
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "position,weight");
  std::getline(in, line);
  CHECK(line == "0,0.10000000000000001");
  FeatureMap m{"conv1", 0, 2, 2, {0.0, 1.0, 2.0, 4.0}};
  CHECK(normalized(m) == std::vector<double>{0.0, 0.25, 0.5, 1.0});
  write_feature_maps_csv({m}, dir / "f.csv");
  write_feature_maps_svg({m}, dir / "f.svg");
  write_history_svg({{1, 1.0, 0.5, 1.2, 0.4}, {2, 0.8, 0.6, 1.0, 0.5}}, dir / "h.svg");
  for (const char* f : {"a.svg", "f.svg", "h.svg"}) {
    std::ifstream s(dir / f);
    std::string first;
    std::getline(s, first);
    CHECK(first.rfind("<svg", 0) == 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("small attention EEGNet learns the synthetic task") {
  SynthSpec sp;
  sp.subjects = 4;
  sp.duration = 2.0;
  sp.sampling_rate = 128;
  sp.snr = 100;
  sp.seed = 5;
  const auto recs = synth_generate(sp);
  const ModelConfig c = small_eegnet();
  TrainConfig t = TrainConfig::defaults(Architecture::eegnet);
  t.epochs = 50;
  t.patience = 50;
  const SampleSet s = prepare_samples(recs, c, t.prep, nullptr, true);
  ModelGraph g = build_model(c);
  const TrainResult r = train(g, s, t);
  const Metrics m = evaluate_cross_subject(g, s, subject_ids(recs));
  MESSAGE("training-set accuracy " << m.summary() << " after " << r.history.size() << " epochs");
  CHECK(m.mean >= 0.95);
}
