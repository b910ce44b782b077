#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "megdec/errors.hpp"
#include "megdec/training.hpp"

namespace megdec::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kToolVersion = "0.1.0";

// Missing or unusable input data; maps to the data exit code.
class DataError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Option groups

struct ModelOpts {
  std::string arch = "cascade";
  std::string attention = "self_global";
  std::map<std::string, std::string> fields;  // ModelConfig key -> raw flag value
};

// Field flags are taken from ModelConfig::to_text so the two never drift apart.
std::vector<std::string> model_field_names() {
  std::vector<std::string> keys;
  std::istringstream in(ModelConfig{}.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const std::string key = line.substr(0, line.find('='));
    if (key != "architecture" && key != "attention" && key != "seed") keys.push_back(key);
  }
  return keys;
}

void add_model_opts(CLI::App* sub, ModelOpts& o) {
  sub->add_option("--arch", o.arch, "eegnet, cascade or multiview")
      ->check(CLI::IsMember({"eegnet", "cascade", "multiview"}))
      ->capture_default_str();
  sub->add_option("--attention", o.attention, "none, self or self_global")
      ->check(CLI::IsMember({"none", "self", "self_global"}))
      ->capture_default_str();
  for (const auto& key : model_field_names()) {
    o.fields[key];
    sub->add_option("--" + key, o.fields[key], "model field (default: architecture default)");
  }
}

ModelConfig model_config(const ModelOpts& o, std::uint64_t seed) {
  std::string text = ModelConfig::defaults(parse_architecture(o.arch)).to_text();
  text += "attention=" + o.attention + "\nseed=" + std::to_string(seed) + "\n";
  for (const auto& [k, v] : o.fields) {
    if (!v.empty()) text += k + "=" + v + "\n";
  }
  ModelConfig c = ModelConfig::from_text(text);
  c.validate();
  return c;
}

struct TrainOpts {
  std::optional<double> lr, beta1, beta2, epsilon, validation_fraction;
  std::optional<std::size_t> batch_size, micro_batch, epochs, patience;
};

struct PrepOpts {
  std::optional<double> segment_overlap, stream_overlap, eegnet_scale;
};

void add_prep_opts(CLI::App* sub, PrepOpts& p) {
  sub->add_option("--segment_overlap", p.segment_overlap, "EEGNet window overlap (default 0.33)");
  sub->add_option("--stream_overlap", p.stream_overlap, "share of streams common to consecutive samples (default 0.5)");
  sub->add_option("--eegnet_scale", p.eegnet_scale, "EEGNet input scale factor (default 1e5)");
}

void add_train_opts(CLI::App* sub, TrainOpts& t) {
  sub->add_option("--lr", t.lr, "Adam learning rate (default 1e-4)");
  sub->add_option("--beta1", t.beta1);
  sub->add_option("--beta2", t.beta2);
  sub->add_option("--epsilon", t.epsilon);
  sub->add_option("--batch_size", t.batch_size, "default 64, EEGNet 16");
  sub->add_option("--micro_batch", t.micro_batch, "gradient accumulation chunk");
  sub->add_option("--epochs", t.epochs, "maximum epochs (default 100)");
  sub->add_option("--patience", t.patience, "early stopping patience (default 10)");
  sub->add_option("--validation_fraction", t.validation_fraction, "default 0.2");
}

PrepConfig prep_config(const PrepOpts& p) {
  PrepConfig c;
  if (p.segment_overlap) c.segment_overlap = *p.segment_overlap;
  if (p.stream_overlap) c.stream_overlap = *p.stream_overlap;
  if (p.eegnet_scale) c.eegnet_scale = *p.eegnet_scale;
  return c;
}

TrainConfig train_config(const TrainOpts& t, const PrepOpts& p, Architecture a, std::uint64_t seed) {
  TrainConfig c = TrainConfig::defaults(a);
  if (t.lr) c.adam.lr = *t.lr;
  if (t.beta1) c.adam.beta1 = *t.beta1;
  if (t.beta2) c.adam.beta2 = *t.beta2;
  if (t.epsilon) c.adam.epsilon = *t.epsilon;
  if (t.batch_size) c.batch_size = *t.batch_size;
  if (t.micro_batch) c.micro_batch = *t.micro_batch;
  if (t.epochs) c.epochs = *t.epochs;
  if (t.patience) c.patience = *t.patience;
  if (t.validation_fraction) c.validation_fraction = *t.validation_fraction;
  c.prep = prep_config(p);
  c.seed = seed;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// JSON pieces

json model_json(const ModelConfig& c) {
  json j = json::object();
  std::istringstream in(c.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

json prep_json(const PrepConfig& p) {
  return {{"segment_overlap", p.segment_overlap}, {"stream_overlap", p.stream_overlap},
          {"eegnet_scale", p.eegnet_scale}};
}

json train_json(const TrainConfig& c) {
  return {{"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"batch_size", c.batch_size},
          {"micro_batch", c.micro_batch},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed},
          {"prep", prep_json(c.prep)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

struct RunInfo {
  std::string verb;
  std::vector<std::string> args;
};

void write_manifest(const fs::path& dir, const RunInfo& run, json extra) {
  json m;
  m["tool"] = "megdec";
  m["version"] = kToolVersion;
  m["compiler"] = __VERSION__;
  m["command"] = run.verb;
  m["argv"] = run.args;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// Normalization statistics and sample preparation settings used by a model.
struct Preprocessing {
  NormStats stats;
  PrepConfig prep;
};

json preprocessing_json(const Preprocessing& p) {
  return {{"subjects", p.stats.subjects}, {"mean", p.stats.mean}, {"std", p.stats.std}, {"prep", prep_json(p.prep)}};
}

Preprocessing read_preprocessing(const fs::path& path) {
  const json j = read_json(path);
  try {
    Preprocessing p;
    p.stats.subjects = j.at("subjects").get<std::set<std::string>>();
    p.stats.mean = j.at("mean").get<std::vector<double>>();
    p.stats.std = j.at("std").get<std::vector<double>>();
    const auto& q = j.at("prep");
    p.prep.segment_overlap = q.at("segment_overlap").get<double>();
    p.prep.stream_overlap = q.at("stream_overlap").get<double>();
    p.prep.eegnet_scale = q.at("eegnet_scale").get<double>();
    return p;
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

json tensor_json(const Tensor& t) {
  const auto d = t.data();
  std::vector<std::uint8_t> bytes(d.size() * sizeof(double));
  if (!d.empty()) std::memcpy(bytes.data(), d.data(), bytes.size());
  return {{"shape", t.shape()}, {"data", json::binary(std::move(bytes))}};
}

std::vector<std::uint8_t> samples_cbor(const SampleSet& set) {
  json arr = json::array();
  for (const auto& s : set.samples) {
    json j;
    j["subject"] = s.subject;
    j["label"] = s.label;
    if (s.segment.numel() > 0) j["segment"] = tensor_json(s.segment);
    j["spatial"] = json::array();
    for (const auto& t : s.spatial) j["spatial"].push_back(tensor_json(t));
    j["temporal"] = json::array();
    for (const auto& t : s.temporal) j["temporal"].push_back(tensor_json(t));
    arr.push_back(std::move(j));
  }
  return json::to_cbor(arr);
}

// ---------------------------------------------------------------------------
// Data

struct Split {
  SplitSpec spec;
  std::vector<Recording> train;
  std::vector<Recording> test;
  std::string checksum;
};

Split load_split(const fs::path& data, int setup) {
  if (!fs::is_directory(data)) throw DataError("data directory '" + data.string() + "' does not exist");
  std::vector<Recording> recs = read_dataset(data);
  if (recs.empty()) throw DataError("no .megr recordings in '" + data.string() + "'");
  Split s;
  try {
    s.spec = SplitSpec::for_setup(setup, subject_ids(recs));
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  const std::set<std::string> train(s.spec.train_subjects.begin(), s.spec.train_subjects.end());
  const std::set<std::string> test(s.spec.test_subjects.begin(), s.spec.test_subjects.end());
  for (auto& r : recs) {
    if (train.count(r.subject_id)) s.train.push_back(std::move(r));
    else if (test.count(r.subject_id)) s.test.push_back(std::move(r));
  }
  s.checksum = dataset_checksum(data);
  return s;
}

fs::path prepare_out(const std::string& out) {
  fs::create_directories(out);
  return out;
}

json metrics_summary(const Metrics& m) { return {{"mean", m.mean}, {"std", m.std}, {"summary", m.summary()}}; }

// ---------------------------------------------------------------------------
// Commands

struct SynthOpts {
  SynthSpec spec;
  std::string out;
  bool force = false;
};

int cmd_synth(const SynthOpts& o, const RunInfo& run) {
  const fs::path out = prepare_out(o.out);
  std::size_t existing = 0;
  for (const auto& e : fs::directory_iterator(out)) existing += e.path().extension() == ".megr";
  if (existing > 0) {
    if (!o.force) throw DataError("'" + out.string() + "' already holds recordings (use --force to replace them)");
    for (const auto& e : fs::directory_iterator(out)) {
      if (e.path().extension() == ".megr") fs::remove(e.path());
    }
  }
  const auto recs = synth_generate(o.spec);
  write_dataset(recs, out);
  const std::string sum = dataset_checksum(out);
  std::cout << "wrote " << recs.size() << " recordings to " << out.string() << "\nchecksum " << sum << "\n";
  const auto& s = o.spec;
  write_manifest(out, run,
                 {{"seed", s.seed},
                  {"synth",
                   {{"subjects", s.subjects},
                    {"classes", s.classes},
                    {"duration", s.duration},
                    {"rate", s.sampling_rate},
                    {"snr", s.snr},
                    {"amplitude", s.amplitude},
                    {"recordings_per_class", s.recordings_per_class}}},
                  {"checksum", sum},
                  {"recordings", recs.size()}});
  return kExitOk;
}

struct ImportOpts {
  std::string csv, subject, label, out;
  double rate = kReferenceRate;
};

int cmd_import(const ImportOpts& o, const RunInfo& run) {
  if (!fs::is_regular_file(o.csv)) throw DataError("csv file '" + o.csv + "' does not exist");
  const int label = label_from_name(o.label);
  const Recording rec = import_csv(o.csv, o.subject, label, o.rate);
  const fs::path out = prepare_out(o.out);
  std::string stem = o.subject + "_" + label_name(label);
  fs::path file = out / (stem + ".megr");
  for (int n = 1; fs::exists(file); ++n) file = out / (stem + "_" + std::to_string(n) + ".megr");
  write_recording(rec, file);
  std::cout << "wrote " << file.string() << " (" << rec.steps() << " steps)\n";

  // Imports accumulate in one manifest so the directory can be rebuilt from it.
  json imports = json::array();
  const fs::path mpath = out / "manifest.json";
  if (fs::exists(mpath)) {
    const json old = read_json(mpath);
    if (old.value("command", "") == "import") imports = old.value("imports", json::array());
  }
  imports.push_back({{"argv", run.args},
                     {"csv", o.csv},
                     {"subject", o.subject},
                     {"label", label_name(label)},
                     {"rate", o.rate},
                     {"file", file.filename().string()}});
  write_manifest(out, run, {{"imports", imports}, {"checksum", dataset_checksum(out)}});
  return kExitOk;
}

struct DataOpts {
  std::string data, out;
  int setup = 2;
  std::uint64_t seed = 0;
};

void add_data_opts(CLI::App* sub, DataOpts& d, bool seed) {
  sub->add_option("--data", d.data, "dataset directory of .megr files")->required();
  sub->add_option("--out", d.out, "output directory")->required();
  sub->add_option("--setup", d.setup, "1 (3 training subjects) or 2 (12)")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();
  if (seed) sub->add_option("--seed", d.seed, "model initialization, split, shuffle and dropout seed")->capture_default_str();
}

int cmd_preprocess(const DataOpts& d, const ModelOpts& mo, const PrepOpts& po, const RunInfo& run) {
  const ModelConfig mc = model_config(mo, d.seed);
  const Split s = load_split(d.data, d.setup);
  Preprocessing pp{compute_norm_stats(s.train), prep_config(po)};
  const SampleSet train = prepare_samples(s.train, mc, pp.prep, &pp.stats, true);
  const SampleSet test = prepare_samples(s.test, mc, pp.prep, &pp.stats, false);
  const fs::path out = prepare_out(d.out);
  write_text(out / "preprocessing.json", preprocessing_json(pp).dump(2) + "\n");
  for (const auto& [name, set] : {std::pair{"train.samples", &train}, std::pair{"test.samples", &test}}) {
    const auto bytes = samples_cbor(*set);
    std::ofstream f(out / name, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed for '" + (out / name).string() + "'");
  }
  std::cout << "train samples " << train.size() << ", test samples " << test.size() << "\n";
  write_manifest(out, run,
                 {{"seed", d.seed},
                  {"setup", d.setup},
                  {"data", d.data},
                  {"data_checksum", s.checksum},
                  {"model", model_json(mc)},
                  {"prep", prep_json(pp.prep)},
                  {"train_subjects", s.spec.train_subjects},
                  {"test_subjects", s.spec.test_subjects},
                  {"train_samples", train.size()},
                  {"test_samples", test.size()}});
  return kExitOk;
}

int cmd_train(const DataOpts& d, const ModelOpts& mo, const TrainOpts& to, const PrepOpts& po, bool quiet,
              const RunInfo& run) {
  const ModelConfig mc = model_config(mo, d.seed);
  const TrainConfig tc = train_config(to, po, mc.architecture, d.seed);
  const Split s = load_split(d.data, d.setup);
  const Preprocessing pp{compute_norm_stats(s.train), tc.prep};
  const SampleSet train_set = prepare_samples(s.train, mc, pp.prep, &pp.stats, true);
  const SampleSet test_set = prepare_samples(s.test, mc, pp.prep, &pp.stats, false);

  ModelGraph model = build_model(mc);
  const TrainResult res = megdec::train(model, train_set, tc, [&](const EpochRecord& e) {
    if (!quiet) {
      std::cout << "epoch " << e.epoch << "  loss " << e.train_loss << "  acc " << e.train_accuracy << "  val_loss "
                << e.val_loss << "  val_acc " << e.val_accuracy << std::endl;
    }
  });
  Metrics test = evaluate_cross_subject(model, test_set, s.spec.test_subjects);
  test.history = res.history;
  const Metrics fit = evaluate_cross_subject(model, train_set, s.spec.train_subjects);

  const fs::path out = prepare_out(d.out);
  save_checkpoint(model, out / "model.ckpt");
  write_text(out / "preprocessing.json", preprocessing_json(pp).dump(2) + "\n");
  write_text(out / "metrics.json", test.to_json());
  write_text(out / "train_metrics.json", fit.to_json());
  write_text(out / "history.csv", test.history_csv());
  write_history_svg(test.history, out / "history.svg");
  std::cout << "best epoch " << res.best_epoch << ", test accuracy " << test.summary() << ", training accuracy "
            << fit.summary() << "\n";
  write_manifest(out, run,
                 {{"seed", d.seed},
                  {"setup", d.setup},
                  {"data", d.data},
                  {"data_checksum", s.checksum},
                  {"model", model_json(mc)},
                  {"train", train_json(tc)},
                  {"train_subjects", s.spec.train_subjects},
                  {"test_subjects", s.spec.test_subjects},
                  {"best_epoch", res.best_epoch},
                  {"test", metrics_summary(test)},
                  {"training", metrics_summary(fit)},
                  {"outputs",
                   {"model.ckpt", "preprocessing.json", "metrics.json", "train_metrics.json", "history.csv",
                    "history.svg"}}});
  return kExitOk;
}

struct CheckpointOpts {
  std::string checkpoint, preprocessing;
};

void add_checkpoint_opts(CLI::App* sub, CheckpointOpts& c) {
  sub->add_option("--checkpoint", c.checkpoint, "model checkpoint written by train")->required();
  sub->add_option("--preprocessing", c.preprocessing, "normalization file (default: next to the checkpoint)");
}

struct Loaded {
  ModelGraph model;
  Preprocessing pp;
};

Loaded load_model(const CheckpointOpts& c) {
  if (!fs::is_regular_file(c.checkpoint)) throw DataError("checkpoint '" + c.checkpoint + "' does not exist");
  const fs::path pre =
      c.preprocessing.empty() ? fs::path(c.checkpoint).parent_path() / "preprocessing.json" : fs::path(c.preprocessing);
  return {load_checkpoint(c.checkpoint), read_preprocessing(pre)};
}

int cmd_eval(const DataOpts& d, const CheckpointOpts& c, const RunInfo& run) {
  Loaded l = load_model(c);
  const Split s = load_split(d.data, d.setup);
  const SampleSet test_set = prepare_samples(s.test, l.model.config(), l.pp.prep, &l.pp.stats, false);
  const Metrics m = evaluate_cross_subject(l.model, test_set, s.spec.test_subjects);
  const fs::path out = prepare_out(d.out);
  write_text(out / "metrics.json", m.to_json());
  std::cout << "test accuracy " << m.summary() << "\n";
  for (const auto& sa : m.subjects) std::cout << "  " << sa.subject << "  " << sa.correct << "/" << sa.total << "\n";
  write_manifest(out, run,
                 {{"checkpoint", c.checkpoint},
                  {"data", d.data},
                  {"data_checksum", s.checksum},
                  {"setup", d.setup},
                  {"model", model_json(l.model.config())},
                  {"test_subjects", s.spec.test_subjects},
                  {"test", metrics_summary(m)},
                  {"outputs", {"metrics.json"}}});
  return kExitOk;
}

struct InspectOpts {
  std::size_t samples = 500;
  std::size_t sample = 0;
  std::size_t stream = 0;
  std::vector<std::string> layers;
};

bool is_conv(LayerKind k) {
  return k == LayerKind::conv2d || k == LayerKind::depthwise_conv2d || k == LayerKind::separable_conv2d ||
         k == LayerKind::aug_attention_conv;
}

int cmd_inspect(const DataOpts& d, const CheckpointOpts& c, const InspectOpts& io, const RunInfo& run) {
  Loaded l = load_model(c);
  const Split s = load_split(d.data, d.setup);
  const SampleSet set = prepare_samples(s.test, l.model.config(), l.pp.prep, &l.pp.stats, false);
  if (io.sample >= set.size()) {
    throw ConfigError("--sample " + std::to_string(io.sample) + " is out of range (" + std::to_string(set.size()) +
                      " test samples)");
  }
  const fs::path out = prepare_out(d.out);
  json outputs = json::array();
  json extra;

  if (l.model.config().global_attention()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < std::min(io.samples, set.size()); ++i) idx.push_back(i);
    const AttentionExport e = export_attention_weights(l.model, set, idx);
    write_attention_csv(e, out / "attention.csv");
    write_attention_svg(e, out / "attention.svg");
    outputs.push_back("attention.csv");
    outputs.push_back("attention.svg");
    const auto [lo, hi] = std::minmax_element(e.mean.begin(), e.mean.end());
    std::cout << "attention over " << e.samples << " samples, " << e.mean.size() << " positions, weight range [" << *lo
              << ", " << *hi << "]\n";
    extra["attention"] = {{"samples", e.samples}, {"positions", e.mean.size()}, {"min_sum", e.min_sum},
                          {"max_sum", e.max_sum}};
  } else {
    std::cout << "model has no global attention; skipping the attention export\n";
  }

  std::vector<std::string> layers = io.layers;
  if (layers.empty()) {
    for (const auto& e : l.model.layers()) {
      if (is_conv(e.desc.kind)) layers.push_back(e.desc.name);
    }
  }
  const auto maps = export_feature_maps(l.model, set.samples[io.sample], layers, io.stream);
  write_feature_maps_csv(maps, out / "feature_maps.csv");
  write_feature_maps_svg(maps, out / "feature_maps.svg");
  outputs.push_back("feature_maps.csv");
  outputs.push_back("feature_maps.svg");
  std::cout << "feature maps: " << maps.size() << " channels from " << layers.size() << " layers\n";

  extra["checkpoint"] = c.checkpoint;
  extra["data"] = d.data;
  extra["data_checksum"] = s.checksum;
  extra["setup"] = d.setup;
  extra["sample"] = io.sample;
  extra["stream"] = io.stream;
  extra["layers"] = layers;
  extra["outputs"] = outputs;
  write_manifest(out, run, extra);
  return kExitOk;
}

int cmd_params(const ModelOpts& mo, bool reference, const std::string& out_dir, const RunInfo& run) {
  const ModelConfig mc = model_config(mo, 0);
  const ParamTable t = count_params(mc);
  std::string text = t.to_text();
  if (reference) text += "\n" + reference_report();
  std::cout << text;
  if (!out_dir.empty()) {
    const fs::path out = prepare_out(out_dir);
    write_text(out / "params.txt", text);
    write_manifest(out, run, {{"model", model_json(mc)}, {"total", t.total}, {"outputs", {"params.txt"}}});
  }
  return kExitOk;
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"MEG brain-state decoding toolkit", "megdec"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  RunInfo run;
  for (int i = 1; i < argc; ++i) run.args.emplace_back(argv[i]);

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--subjects", so.spec.subjects)->capture_default_str();
  synth->add_option("--classes", so.spec.classes)->capture_default_str();
  synth->add_option("--duration", so.spec.duration, "seconds per recording")->capture_default_str();
  synth->add_option("--rate", so.spec.sampling_rate, "sampling rate in Hz")->capture_default_str();
  synth->add_option("--seed", so.spec.seed)->capture_default_str();
  synth->add_option("--snr", so.spec.snr)->capture_default_str();
  synth->add_option("--amplitude", so.spec.amplitude)->capture_default_str();
  synth->add_option("--recordings_per_class", so.spec.recordings_per_class)->capture_default_str();
  synth->add_option("--out", so.out, "output directory")->required();
  synth->add_flag("--force", so.force, "replace recordings already in --out");

  ImportOpts io;
  auto* imp = app.add_subcommand("import", "convert a CSV recording to MEGR");
  imp->add_option("--csv", io.csv, "one row per time step, 248 columns, no header")->required();
  imp->add_option("--subject", io.subject)->required();
  imp->add_option("--label", io.label, "rest, story_math, working_memory, motor or 0..3")->required();
  imp->add_option("--rate", io.rate, "sampling rate in Hz")->capture_default_str();
  imp->add_option("--out", io.out, "dataset directory")->required();

  DataOpts pd;
  ModelOpts pm;
  PrepOpts pp;
  auto* pre = app.add_subcommand("preprocess", "materialize training and test samples");
  add_data_opts(pre, pd, true);
  add_model_opts(pre, pm);
  add_prep_opts(pre, pp);

  DataOpts td;
  ModelOpts tm;
  TrainOpts tt;
  PrepOpts tp;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "train a model and evaluate it on the held-out subjects");
  add_data_opts(tr, td, true);
  add_model_opts(tr, tm);
  add_train_opts(tr, tt);
  add_prep_opts(tr, tp);
  tr->add_flag("--quiet", quiet, "no per-epoch output");

  DataOpts ed;
  CheckpointOpts ec;
  auto* ev = app.add_subcommand("eval", "cross-subject metrics for a checkpoint");
  add_data_opts(ev, ed, false);
  add_checkpoint_opts(ev, ec);

  DataOpts id;
  CheckpointOpts ic;
  InspectOpts ii;
  auto* ins = app.add_subcommand("inspect", "export attention weights and feature maps");
  add_data_opts(ins, id, false);
  add_checkpoint_opts(ins, ic);
  ins->add_option("--samples", ii.samples, "test samples averaged for the attention export")->capture_default_str();
  ins->add_option("--sample", ii.sample, "test sample used for the feature maps")->capture_default_str();
  ins->add_option("--stream", ii.stream, "input stream used for the feature maps")->capture_default_str();
  ins->add_option("--layers", ii.layers, "convolutional layer names (default: all)")->delimiter(',');

  ModelOpts am;
  bool reference = false;
  std::string params_out;
  auto* par = app.add_subcommand("params", "print the parameter table of a configuration");
  add_model_opts(par, am);
  par->add_flag("--reference", reference, "append the published counts next to ours");
  par->add_option("--out", params_out, "also write params.txt and a manifest here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (synth->parsed()) return run.verb = "synth", cmd_synth(so, run);
  if (imp->parsed()) return run.verb = "import", cmd_import(io, run);
  if (pre->parsed()) return run.verb = "preprocess", cmd_preprocess(pd, pm, pp, run);
  if (tr->parsed()) return run.verb = "train", cmd_train(td, tm, tt, tp, quiet, run);
  if (ev->parsed()) return run.verb = "eval", cmd_eval(ed, ec, run);
  if (ins->parsed()) return run.verb = "inspect", cmd_inspect(id, ic, ii, run);
  run.verb = "params";
  return cmd_params(am, reference, params_out, run);
}

}  // namespace

int run(int argc, const char* const* argv) {
  try {
    return dispatch(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const InsufficientDataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace megdec::cli
