// Copyright 2026 The recsae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "recsae/cli.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "recsae/analysis.h"
#include "recsae/dataset.h"
#include "recsae/error.h"
#include "recsae/fidelity.h"
#include "recsae/hash.h"
#include "recsae/intervene.h"
#include "recsae/recommender.h"
#include "recsae/sae.h"
#include "recsae/synth.h"

namespace recsae {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kToolVersion = "0.1.0";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

std::string content_hash(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// Files written by one command. Unless committed, everything written is
// removed again, along with the directory if this run created it.
class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    if (fs::exists(dir_)) {
      if (!fs::is_directory(dir_)) {
        throw ConfigError("--out " + dir_.string() + " is not a directory");
      }
    } else {
      fs::create_directories(dir_);
      created_ = true;
    }
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  ~OutputDir() {
    if (committed_) return;
    std::error_code ec;
    for (const fs::path& p : written_) fs::remove(p, ec);
    if (created_) fs::remove(dir_, ec);
  }

  const fs::path& path() const { return dir_; }

  // Writes via a temporary name and returns the content hash.
  std::string write(const std::string& name, const std::string& content) {
    const fs::path final_path = dir_ / name;
    const fs::path tmp = dir_ / (name + ".partial");
    written_.push_back(tmp);
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + tmp.string());
      out << content;
      if (!out) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, final_path);
    written_.back() = final_path;
    return content_hash(content);
  }

  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool created_ = false;
  bool committed_ = false;
};

struct Globals {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out = ".";
};

// One subcommand invocation: effective config, inputs, outputs, timing.
class Run {
 public:
  Run(std::string command, const Globals& g)
      : command_(std::move(command)),
        out_(g.out),
        start_(std::chrono::steady_clock::now()) {}

  OutputDir& out() { return out_; }

  void input(const std::string& role, const fs::path& path,
             const std::string& fingerprint) {
    inputs_.push_back({{"role", role},
                       {"path", path.string()},
                       {"fingerprint", fingerprint}});
  }

  void output(const std::string& name, const std::string& content,
              std::optional<std::string> fingerprint = std::nullopt) {
    const std::string hash = out_.write(name, content);
    json entry = {{"file", name}, {"content_hash", hash}};
    if (fingerprint) entry["fingerprint"] = *fingerprint;
    outputs_.push_back(std::move(entry));
  }

  void finish(json config, std::optional<uint64_t> seed) {
    const double wall = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start_)
                            .count();
    json manifest = {{"schema", "manifest/1"},
                     {"tool", "recsae"},
                     {"version", kToolVersion},
                     {"command", command_},
                     {"config", std::move(config)},
                     {"seed", seed ? json(*seed) : json(nullptr)},
                     {"inputs", inputs_},
                     {"outputs", outputs_},
                     {"wall_time_seconds", wall}};
    out_.write("manifest.json", manifest.dump(2) + "\n");
    out_.commit();
  }

 private:
  std::string command_;
  OutputDir out_;
  std::chrono::steady_clock::time_point start_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  json j = read_json(g.config_path);
  if (!j.is_object()) throw ConfigError("--config must hold a JSON object");
  return j;
}

json section(const json& cfg, const char* name) {
  if (!cfg.contains(name)) return json::object();
  if (!cfg.at(name).is_object()) {
    throw ConfigError(std::string("config section '") + name +
                      "' must be an object");
  }
  return cfg.at(name);
}

template <typename T>
void set_if(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what);
  if (!fs::exists(path)) {
    throw DataError(std::string(what) + " not found: " + path);
  }
}

std::vector<double> parse_doubles(const std::string& list, const char* what) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad number '") + tok + "' in " + what);
    }
  }
  return out;
}

std::vector<uint64_t> parse_seeds(const std::string& list) {
  std::vector<uint64_t> out;
  for (double v : parse_doubles(list, "--seeds")) {
    if (v < 0 || v != static_cast<double>(static_cast<uint64_t>(v))) {
      throw ConfigError("seeds must be non-negative integers");
    }
    out.push_back(static_cast<uint64_t>(v));
  }
  return out;
}

// Loaded artifacts, cross-checked by fingerprint.
struct Artifacts {
  InteractionDataset dataset;
  RecommenderModel model;
  SaeBundle sae;
};

InteractionDataset load_dataset(Run& run, const std::string& path) {
  require_file(path, "dataset artifact");
  InteractionDataset ds = InteractionDataset::from_json(read_json(path));
  run.input("dataset", path, ds.fingerprint());
  return ds;
}

RecommenderModel load_model(Run& run, const std::string& path,
                            const InteractionDataset& ds) {
  require_file(path, "recommender checkpoint");
  RecommenderModel m = RecommenderModel::from_json(read_json(path));
  const std::string fp = ds.fingerprint();
  if (m.dataset_fingerprint != fp) {
    throw ConfigError("fingerprint mismatch: recommender " + path +
                      " was trained on dataset " + m.dataset_fingerprint +
                      ", given dataset is " + fp);
  }
  run.input("recommender", path, m.fingerprint());
  return m;
}

SaeBundle load_sae(Run& run, const std::string& path,
                   const RecommenderModel& model) {
  require_file(path, "autoencoder checkpoint");
  SaeBundle b = SaeBundle::from_json(read_json(path));
  const std::string fp = model.fingerprint();
  if (b.recommender_fingerprint != fp) {
    throw ConfigError("fingerprint mismatch: autoencoder " + path +
                      " was trained on recommender " +
                      b.recommender_fingerprint + ", given recommender is " +
                      fp);
  }
  if (b.user_sae().dim() != model.dim) {
    throw ConfigError("autoencoder dim does not match the recommender");
  }
  run.input("sae", path, b.fingerprint());
  return b;
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string ratings;
  std::string metadata;
  std::optional<std::string> format;
  std::optional<size_t> min_user_positives;
  std::optional<size_t> test_per_user;
  std::optional<double> val_fraction;
};

void cmd_prepare(const Globals& g, const PrepareArgs& a, std::ostream& out,
                 std::ostream& err) {
  const json cfg_all = load_config(g);
  json cfg = section(cfg_all, "dataset");
  if (!a.ratings.empty()) cfg["ratings"] = a.ratings;
  if (!a.metadata.empty()) cfg["metadata"] = a.metadata;
  set_if(cfg, "format", a.format);
  set_if(cfg, "min_user_positives", a.min_user_positives);
  set_if(cfg, "test_per_user", a.test_per_user);
  set_if(cfg, "val_fraction", a.val_fraction);
  if (g.seed) cfg["seed"] = *g.seed;

  DatasetConfig dc;
  std::string ratings, metadata, format;
  uint64_t seed = 0;
  try {
    ratings = cfg.value("ratings", std::string());
    metadata = cfg.value("metadata", std::string());
    format = cfg.value("format", std::string("ml1m"));
    dc.min_user_positives = cfg.value("min_user_positives", dc.min_user_positives);
    dc.test_per_user = cfg.value("test_per_user", dc.test_per_user);
    dc.val_fraction = cfg.value("val_fraction", dc.val_fraction);
    seed = cfg.value("seed", uint64_t{0});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad dataset config: ") + e.what());
  }
  cfg["format"] = format;
  cfg["seed"] = seed;
  require_file(ratings, "ratings file");
  if (format != "ml1m" && format != "lastfm") {
    throw ConfigError("unknown format '" + format + "' (ml1m or lastfm)");
  }

  Run run("prepare", g);
  LoadStats stats;
  const auto raw = format == "ml1m" ? load_movielens(ratings, &stats)
                                    : load_lastfm(ratings, {}, &stats);
  run.input("ratings", ratings, content_hash(read_text(ratings)));
  for (const std::string& w : stats.warnings) err << "warning: " << w << "\n";
  InteractionDataset ds = build_dataset(raw, dc, seed);
  if (!metadata.empty()) {
    require_file(metadata, "metadata file");
    ds.attach_metadata(load_metadata(metadata));
    run.input("metadata", metadata, content_hash(read_text(metadata)));
  }
  json prov = ds.provenance();
  prov["format"] = format;
  ds.set_provenance(prov);

  const json summary = {
      {"users", ds.n_users()},
      {"items", ds.n_items()},
      {"positives", ds.positives().size()},
      {"train", ds.split_size(Split::kTrain)},
      {"val", ds.split_size(Split::kVal)},
      {"test", ds.split_size(Split::kTest)},
      {"lines", stats.lines},
      {"malformed_lines", stats.malformed},
      {"fingerprint", ds.fingerprint()}};
  run.output("dataset.json", ds.to_json().dump() + "\n", ds.fingerprint());
  run.output("summary.json", summary.dump(2) + "\n");
  run.finish(cfg, seed);
  out << summary.dump(2) << "\n";
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::optional<size_t> users, items, concepts, positives_per_user;
  std::optional<double> noise;
};

void cmd_synth(const Globals& g, const SynthArgs& a, std::ostream& out) {
  json cfg = section(load_config(g), "synth");
  set_if(cfg, "n_users", a.users);
  set_if(cfg, "n_items", a.items);
  set_if(cfg, "n_concepts", a.concepts);
  set_if(cfg, "noise", a.noise);
  set_if(cfg, "positives_per_user", a.positives_per_user);
  if (g.seed) cfg["seed"] = *g.seed;
  const SynthConfig sc = SynthConfig::from_json(cfg);
  const SynthData data = generate_synthetic(sc);

  Run run("synth", g);
  std::ostringstream ratings;
  for (const RawInteraction& r : data.interactions) {
    ratings << r.user_id << "::" << r.item_id << "::" << r.value << "::"
            << r.timestamp.value_or(0) << "\n";
  }
  std::ostringstream items;
  for (const MetadataRow& row : data.metadata) {
    items << row.item_id << "\t" << row.metadata.title << "\t";
    for (size_t l = 0; l < row.metadata.labels.size(); ++l) {
      items << (l ? "|" : "") << row.metadata.labels[l];
    }
    items << "\t";
    if (row.metadata.year) items << *row.metadata.year;
    items << "\n";
  }
  run.output("ratings.dat", ratings.str());
  run.output("items.tsv", items.str());
  run.output("ground_truth.json", data.ground_truth().dump(2) + "\n");
  run.finish(sc.to_json(), sc.seed);
  out << "wrote " << data.interactions.size() << " interactions for "
      << sc.n_users << " users and " << sc.n_items << " items to "
      << g.out << "\n";
}

// -------------------------------------------------------------- train-rec

struct TrainRecArgs {
  std::string dataset;
  std::optional<std::string> model;
  std::optional<size_t> epochs, batch_size, negatives, dim, patience;
  std::optional<double> lr;
};

void cmd_train_rec(const Globals& g, const TrainRecArgs& a, std::ostream& out) {
  json cfg = section(load_config(g), "train");
  set_if(cfg, "model", a.model);
  set_if(cfg, "epochs", a.epochs);
  set_if(cfg, "batch_size", a.batch_size);
  set_if(cfg, "negatives_per_positive", a.negatives);
  set_if(cfg, "dim", a.dim);
  set_if(cfg, "patience", a.patience);
  set_if(cfg, "learning_rate", a.lr);
  if (g.seed) cfg["seed"] = *g.seed;
  TrainConfig tc;
  ModelKind kind;
  try {
    tc = TrainConfig::from_json(cfg);
    kind = parse_model_kind(cfg.value("model", std::string("mf")));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }

  Run run("train-rec", g);
  const InteractionDataset ds = load_dataset(run, a.dataset);
  const TrainResult result = train_recommender(ds, tc, kind);
  std::string log = "epoch,mean_loss,val_mpr\n";
  for (const EpochLog& e : result.log) {
    log += std::to_string(e.epoch) + "," + fmt(e.mean_loss) + "," +
           fmt(e.val_mpr) + "\n";
  }
  json summary = {{"model", to_string(kind)},
                  {"best_epoch", result.best_epoch},
                  {"fingerprint", result.model.fingerprint()}};
  if (ds.split_size(Split::kTest) > 0) {
    summary["test_mpr"] = mpr(result.model, ds, Split::kTest);
  }
  run.output("recmodel.json", result.model.to_json().dump() + "\n",
             result.model.fingerprint());
  run.output("train_log.csv", log);
  run.output("train_summary.json", summary.dump(2) + "\n");
  json effective = tc.to_json();
  effective["model"] = to_string(kind);
  run.finish(effective, tc.seed);
  out << summary.dump(2) << "\n";
}

// -------------------------------------------------------------- train-sae

struct SaeArgs {
  std::optional<size_t> width, levels, epochs, batch_size, pairs, steps;
  std::optional<double> alpha, beta, lambda1, lambda2, rho, lr;
  std::optional<std::string> stat;
  bool separate = false;
  bool planted = false;

  // Base config (planted-suite defaults or library defaults), then the
  // config file section, then flags.
  SaeTrainConfig resolve(const Globals& g, const json& cfg_all) const {
    json cfg = section(cfg_all, "sae");
    json loss = cfg.value("loss", json::object());
    set_if(loss, "alpha", alpha);
    set_if(loss, "beta", beta);
    set_if(loss, "lambda1", lambda1);
    set_if(loss, "lambda2", lambda2);
    set_if(loss, "rho", rho);
    set_if(loss, "batch_size", batch_size);
    set_if(loss, "pred_pairs", pairs);
    set_if(loss, "activation_stat", stat);
    cfg["loss"] = loss;
    set_if(cfg, "width", width);
    set_if(cfg, "nested_levels", levels);
    set_if(cfg, "epochs", epochs);
    set_if(cfg, "steps_per_epoch", steps);
    set_if(cfg, "learning_rate", lr);
    if (separate) cfg["shared"] = false;
    if (g.seed) cfg["seed"] = *g.seed;
    try {
      return SaeTrainConfig::from_json(
          cfg, planted ? planted_sae_config() : SaeTrainConfig());
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad sae config: ") + e.what());
    }
  }
};

void add_sae_options(CLI::App* cmd, SaeArgs& a) {
  cmd->add_option("--width", a.width, "Bottleneck size m");
  cmd->add_option("--levels", a.levels, "Matryoshka levels (0 disables)");
  cmd->add_option("--epochs", a.epochs, "Training epochs");
  cmd->add_option("--steps-per-epoch", a.steps, "Steps per epoch");
  cmd->add_option("--batch-size", a.batch_size, "Embedding rows per tower");
  cmd->add_option("--pairs", a.pairs, "User-item pairs per step");
  cmd->add_option("--alpha", a.alpha, "Embedding loss weight");
  cmd->add_option("--beta", a.beta, "Prediction loss weight");
  cmd->add_option("--lambda1", a.lambda1, "L1 weight");
  cmd->add_option("--lambda2", a.lambda2, "KL weight");
  cmd->add_option("--rho", a.rho, "Target activation rate");
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--activation-stat", a.stat, "soft_clip or indicator");
  cmd->add_flag("--separate", a.separate, "One autoencoder per tower");
  cmd->add_flag("--planted-defaults", a.planted,
                "Start from the planted-concept suite settings");
}

struct TrainSaeArgs {
  std::string dataset, recmodel;
  SaeArgs sae;
};

void cmd_train_sae(const Globals& g, const TrainSaeArgs& a, std::ostream& out) {
  const SaeTrainConfig sc = a.sae.resolve(g, load_config(g));
  Run run("train-sae", g);
  const InteractionDataset ds = load_dataset(run, a.dataset);
  const RecommenderModel model = load_model(run, a.recmodel, ds);
  SaeTrainResult result = train_sae(model, ds, sc);
  result.bundle.recommender_fingerprint = model.fingerprint();

  std::string report = "epoch,emb,pred,l1,kl,total,dead_fraction\n";
  for (const SaeEpochReport& r : result.report) {
    report += std::to_string(r.epoch) + "," + fmt(r.emb) + "," + fmt(r.pred) +
              "," + fmt(r.l1) + "," + fmt(r.kl) + "," + fmt(r.total) + "," +
              fmt(r.dead_fraction) + "\n";
  }
  run.output("sae.json", result.bundle.to_json().dump() + "\n",
             result.bundle.fingerprint());
  run.output("sae_report.csv", report);
  run.finish(sc.to_json(), sc.seed);
  const SaeEpochReport& last = result.report.back();
  out << "trained " << (sc.shared ? "shared" : "separate")
      << " autoencoder, final loss " << fmt(last.total) << " (emb "
      << fmt(last.emb) << ", pred " << fmt(last.pred) << ")\n";
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string dataset, recmodel, sae, labels;
  std::optional<size_t> k_max, top_t, decade_k;
};

void cmd_analyze(const Globals& g, const AnalyzeArgs& a, std::ostream& out) {
  json cfg = section(load_config(g), "analyze");
  set_if(cfg, "k_max", a.k_max);
  set_if(cfg, "top_t", a.top_t);
  set_if(cfg, "decade_k", a.decade_k);
  if (!a.labels.empty()) cfg["labels"] = a.labels;
  size_t k_max = 50, top_t = 30, decade_k = 50;
  std::string labels_path;
  try {
    k_max = cfg.value("k_max", k_max);
    top_t = cfg.value("top_t", top_t);
    decade_k = cfg.value("decade_k", decade_k);
    labels_path = cfg.value("labels", std::string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad analyze config: ") + e.what());
  }
  if (k_max == 0 || top_t == 0) throw ConfigError("K and T must be positive");
  cfg = {{"k_max", k_max}, {"top_t", top_t}, {"decade_k", decade_k}, {"labels", labels_path}};

  Run run("analyze", g);
  const InteractionDataset ds = load_dataset(run, a.dataset);
  const RecommenderModel model = load_model(run, a.recmodel, ds);
  const SaeBundle bundle = load_sae(run, a.sae, model);
  std::map<size_t, std::string> labels;
  if (!labels_path.empty()) {
    require_file(labels_path, "label file");
    labels = load_neuron_labels(labels_path);
    run.input("labels", labels_path, content_hash(read_text(labels_path)));
  }

  const Matrix acts = neuron_activations(bundle, model, Side::kItem);
  const MonosemanticityResult mono = monosemanticity_score(acts, model.item_embeddings, top_t);
  std::vector<size_t> ks;
  for (size_t k : {size_t{10}, size_t{20}, size_t{50}}) {
    if (k <= k_max) ks.push_back(k);
  }
  if (ks.empty()) ks.push_back(k_max);
  const auto reports = neuron_reports(acts, ds, mono, labels, ks, k_max);
  run.output("neurons.json", export_neurons(reports, ds).dump(1) + "\n");

  std::set<std::string> all_labels;
  bool any_year = false;
  for (const ItemMetadata& md : ds.metadata()) {
    all_labels.insert(md.labels.begin(), md.labels.end());
    any_year |= md.year.has_value();
  }
  json summary = {{"monosemanticity", std::isnan(mono.aggregate)
                                          ? json(nullptr)
                                          : json(mono.aggregate)},
                  {"skipped_neurons", mono.skipped},
                  {"width", acts.cols()}};
  json per = json::array();
  for (const auto& v : mono.per_neuron) per.push_back(v ? json(*v) : json(nullptr));
  summary["per_neuron_monosemanticity"] = std::move(per);
  if (!all_labels.empty()) {
    std::string label_csv, neuron_csv;
    for (const std::string& l : all_labels) {
      std::string block = label_profile_csv(label_activation_profile(acts, ds.metadata(), l));
      label_csv += label_csv.empty() ? block : block.substr(block.find('\n') + 1);
    }
    for (size_t j = 0; j < acts.cols(); ++j) {
      std::string block = neuron_profile_csv(neuron_label_profile(acts, ds.metadata(), j));
      neuron_csv += neuron_csv.empty() ? block : block.substr(block.find('\n') + 1);
    }
    run.output("label_profiles.csv", label_csv);
    run.output("neuron_profiles.csv", neuron_csv);
    const std::vector<std::string> lv(all_labels.begin(), all_labels.end());
    json best = json::object();
    for (const auto& [label, np] : best_neuron_per_label(acts, ds.metadata(), lv, ks.front())) {
      best[label] = {{"neuron", np.first}, {"purity", np.second}};
    }
    summary["best_neuron_per_label"] = {{"k", ks.front()}, {"labels", best}};
  }
  if (any_year) {
    std::string csv;
    for (size_t j = 0; j < acts.cols(); ++j) {
      std::string block = decade_histogram_csv(
          j, temporal_profile(acts, ds.metadata(), j, decade_k));
      csv += csv.empty() ? block : block.substr(block.find('\n') + 1);
    }
    run.output("decades.csv", csv);
  }
  // The neuron whose top items sit closest to the head of the catalog.
  std::optional<size_t> pop_neuron;
  double pop_best = 2.0;
  for (const NeuronReport& r : reports) {
    if (r.top_items.empty() || !(r.top_items.front().activation > 0.0)) continue;
    const double v = r.popularity_percentile_at.at(ks.front());
    if (v < pop_best) {
      pop_best = v;
      pop_neuron = r.neuron;
    }
  }
  if (pop_neuron) {
    summary["popularity_neuron"] = {{"neuron", *pop_neuron},
                                    {"k", ks.front()},
                                    {"top_distance", pop_best}};
  }
  summary["purity_reported"] = !labels.empty();
  run.output("analysis_summary.json", summary.dump(2) + "\n");
  run.finish(cfg, std::nullopt);
  out << summary.dump(2) << "\n";
}

// --------------------------------------------------------------- fidelity

struct FidelityArgs {
  std::string dataset, recmodel, sae;
  std::optional<size_t> depth, max_users;
  std::optional<double> persistence;
};

FidelityOptions resolve_fidelity(const json& cfg_all, const Globals& g,
                                 std::optional<size_t> depth,
                                 std::optional<size_t> max_users,
                                 std::optional<double> persistence,
                                 json* effective) {
  json cfg = section(cfg_all, "fidelity");
  set_if(cfg, "depth", depth);
  set_if(cfg, "max_users", max_users);
  set_if(cfg, "persistence", persistence);
  if (g.seed) cfg["seed"] = *g.seed;
  FidelityOptions o;
  try {
    o.depth = cfg.value("depth", o.depth);
    o.max_users = cfg.value("max_users", o.max_users);
    o.persistence = cfg.value("persistence", o.persistence);
    o.exclude_train = cfg.value("exclude_train", o.exclude_train);
    o.seed = cfg.value("seed", o.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad fidelity config: ") + e.what());
  }
  *effective = {{"depth", o.depth},
                {"max_users", o.max_users},
                {"persistence", o.persistence},
                {"exclude_train", o.exclude_train},
                {"seed", o.seed}};
  return o;
}

void cmd_fidelity(const Globals& g, const FidelityArgs& a, std::ostream& out) {
  json effective;
  const FidelityOptions o = resolve_fidelity(load_config(g), g, a.depth,
                                             a.max_users, a.persistence, &effective);
  Run run("fidelity", g);
  const InteractionDataset ds = load_dataset(run, a.dataset);
  const RecommenderModel model = load_model(run, a.recmodel, ds);
  const SaeBundle bundle = load_sae(run, a.sae, model);
  const FidelityResult f = evaluate_fidelity(model, bundle, ds, o);
  std::string csv = "user_id,rbo,kendall_tau,shared_items\n";
  for (size_t k = 0; k < f.users.size(); ++k) {
    csv += ds.user_ids()[f.users[k]] + "," + fmt(f.rbo[k]) + "," +
           (std::isnan(f.tau[k]) ? std::string() : fmt(f.tau[k])) + "," +
           std::to_string(f.shared[k]) + "\n";
  }
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  const json summary = {{"users", f.users.size()},
                        {"depth", o.depth},
                        {"persistence", o.persistence},
                        {"rbo_mean", num(f.rbo_mean)},
                        {"rbo_std", num(f.rbo_std)},
                        {"tau_mean", num(f.tau_mean)},
                        {"tau_std", num(f.tau_std)},
                        {"tau_undefined", f.tau_undefined}};
  run.output("fidelity.json", summary.dump(2) + "\n");
  run.output("fidelity_users.csv", csv);
  run.finish(effective, o.seed);
  out << summary.dump(2) << "\n";
}

// ------------------------------------------------------------------ sweep

struct SweepArgs {
  std::string dataset, recmodel;
  std::optional<std::string> betas, seeds;
  std::optional<size_t> depth, max_users, top_t;
  std::optional<double> persistence;
  SaeArgs sae;
};

void cmd_sweep(const Globals& g, const SweepArgs& a, std::ostream& out) {
  const json cfg_all = load_config(g);
  const SaeTrainConfig base = a.sae.resolve(g, cfg_all);
  json fid_effective;
  const FidelityOptions fo = resolve_fidelity(cfg_all, g, a.depth, a.max_users,
                                              a.persistence, &fid_effective);
  json cfg = section(cfg_all, "sweep");
  std::vector<double> betas = {0.0, 0.5, 1.0, 2.0, 4.0};
  std::vector<uint64_t> seeds = {base.seed};
  size_t top_t = 30;
  try {
    if (cfg.contains("betas")) betas = cfg.at("betas").get<std::vector<double>>();
    if (cfg.contains("seeds")) seeds = cfg.at("seeds").get<std::vector<uint64_t>>();
    top_t = cfg.value("top_t", top_t);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad sweep config: ") + e.what());
  }
  if (a.betas) betas = parse_doubles(*a.betas, "--betas");
  if (a.seeds) seeds = parse_seeds(*a.seeds);
  if (a.top_t) top_t = *a.top_t;

  Run run("sweep", g);
  const InteractionDataset ds = load_dataset(run, a.dataset);
  const RecommenderModel model = load_model(run, a.recmodel, ds);
  const auto rows = beta_sweep(ds, model, base, betas, seeds, fo, top_t);
  const std::string csv = sweep_csv(rows);
  run.output("sweep.csv", csv);
  run.finish({{"sae", base.to_json()},
              {"fidelity", fid_effective},
              {"betas", betas},
              {"seeds", seeds},
              {"top_t", top_t}},
             std::nullopt);
  out << csv;
}

// -------------------------------------------------------------- intervene

struct IntervenedArgs {
  std::string dataset, recmodel, sae, spec;
  std::optional<size_t> top_n;
  std::optional<std::string> sweep_values, mode, exposure_label;
  std::optional<size_t> sweep_neuron;
  std::optional<double> threshold;
  bool reconstructed_pool = false;
  bool include_train = false;
};

void cmd_intervene(const Globals& g, const IntervenedArgs& a, std::ostream& out,
                   std::ostream& err) {
  json cfg = section(load_config(g), "intervene");
  set_if(cfg, "top_n", a.top_n);
  set_if(cfg, "threshold", a.threshold);
  if (a.reconstructed_pool) cfg["reconstructed_pool"] = true;
  if (a.include_train) cfg["exclude_train"] = false;
  double threshold = 0.6;
  bool pool = false, exclude_train = true;
  std::optional<size_t> top_n;
  try {
    threshold = cfg.value("threshold", threshold);
    pool = cfg.value("reconstructed_pool", pool);
    exclude_train = cfg.value("exclude_train", exclude_train);
    if (cfg.contains("top_n")) top_n = cfg.at("top_n").get<size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad intervene config: ") + e.what());
  }

  Run run("intervene", g);
  const InteractionDataset ds = load_dataset(run, a.dataset);
  const RecommenderModel model = load_model(run, a.recmodel, ds);
  const SaeBundle bundle = load_sae(run, a.sae, model);
  require_file(a.spec, "intervention spec");
  const InterventionSpec spec = InterventionSpec::from_json(read_json(a.spec), ds);
  run.input("spec", a.spec, content_hash(read_text(a.spec)));
  const std::string before_hash = model.fingerprint() + bundle.fingerprint();

  std::vector<std::string> warnings;
  json report = {{"schema", "intervention-report/1"},
                 {"spec", spec.to_json(ds)}};

  if (spec.side == Side::kItem) {
    const size_t n = top_n.value_or(30);
    const Vector edited = apply_intervention(bundle, model, spec, &warnings);
    const Vector plain = reconstruct(bundle.item_sae(), model.item_embeddings.row(spec.entity));
    const std::vector<uint32_t> users = resolve_audience(spec.audience, ds, threshold);
    json per_user = json::array();
    double before_sum = 0.0, after_sum = 0.0;
    for (uint32_t u : users) {
      const auto excl = exclude_train ? ds.items_of(u, Split::kTrain)
                                      : std::span<const uint32_t>{};
      const size_t rb = rank_of_item(model, bundle, u, spec.entity, plain, pool, excl);
      const size_t ra = rank_of_item(model, bundle, u, spec.entity, edited, pool, excl);
      before_sum += rb;
      after_sum += ra;
      per_user.push_back({{"user_id", ds.user_ids()[u]}, {"rank_before", rb}, {"rank_after", ra}});
    }
    report["audience_size"] = users.size();
    if (!users.empty()) {
      report["mean_rank_before"] = before_sum / users.size();
      report["mean_rank_after"] = after_sum / users.size();
    }
    report["per_user"] = std::move(per_user);

    if (a.sweep_values) {
      const std::vector<double> values = parse_doubles(*a.sweep_values, "--sweep-values");
      size_t neuron = 0;
      if (a.sweep_neuron) {
        neuron = *a.sweep_neuron;
      } else if (!spec.edits.empty()) {
        neuron = spec.edits.front().neuron;
      } else {
        throw ConfigError("--sweep-values needs --sweep-neuron or an edit");
      }
      std::vector<Segment> segments;
      switch (spec.audience.kind) {
        case Audience::Kind::kAll:
          segments = label_segments(ds, threshold);
          segments.push_back({"all", users});
          break;
        case Audience::Kind::kLabel:
          segments.push_back({spec.audience.label, users});
          break;
        case Audience::Kind::kUsers:
          segments.push_back({"custom", users});
          break;
      }
      PromotionOptions po;
      po.top_n = n;
      po.mode = a.mode ? parse_edit_mode(*a.mode) : EditMode::kSet;
      po.reconstructed_pool = pool;
      po.exclude_train = exclude_train;
      const RankTrajectory t =
          promotion_sweep(bundle, model, ds, spec.entity, neuron, values, segments, po);
      run.output("trajectory.csv", trajectory_csv(t));
    }
  } else {
    const size_t n = top_n.value_or(10);
    if (spec.audience.kind == Audience::Kind::kAll) {
      // Single user: top-N before and after editing their own code.
      const SaeModel& sae = bundle.user_sae();
      Vector z = encode(sae, model.user_embeddings.row(spec.entity));
      const Vector before = decode(sae, z);
      apply_edits(z, spec.edits, &warnings);
      const Vector after = decode(sae, z);
      const auto excl = exclude_train ? ds.items_of(spec.entity, Split::kTrain)
                                      : std::span<const uint32_t>{};
      const Matrix pool_items = pool ? reconstruct_table(bundle.item_sae(), model.item_embeddings)
                                     : model.item_embeddings;
      auto ids = [&](const std::vector<uint32_t>& list) {
        json j = json::array();
        for (uint32_t i : list) j.push_back(ds.item_ids()[i]);
        return j;
      };
      report["top_before"] = ids(rank_items(score_all(model, before, pool_items), n, excl));
      report["top_after"] = ids(rank_items(score_all(model, after, pool_items), n, excl));
    } else {
      // Cohort suppression: the edits must scale neurons by one factor.
      if (spec.edits.empty()) throw ConfigError("cohort suppression needs edits");
      std::vector<size_t> neurons;
      const double scale = spec.edits.front().value;
      for (const NeuronEdit& e : spec.edits) {
        if (e.mode != EditMode::kScale || e.value != scale) {
          throw ConfigError("cohort suppression edits must all be 'scale' with one value");
        }
        neurons.push_back(e.neuron);
      }
      std::string label = a.exposure_label.value_or(spec.audience.label);
      if (label.empty()) throw ConfigError("--exposure-label is required for an explicit cohort");
      const std::vector<uint32_t> cohort = resolve_audience(spec.audience, ds, threshold);
      SuppressionOptions so;
      so.top_n = n;
      so.scale = scale;
      so.reconstructed_pool = pool;
      so.exclude_train = exclude_train;
      const SuppressionReport s =
          suppress_for_cohort(bundle, model, ds, cohort, neurons, label, so);
      report["cohort_size"] = cohort.size();
      report["exposure_label"] = label;
      report["top_n"] = n;
      report["exposure_before"] = s.total_before;
      report["exposure_after"] = s.total_after;
      report["reduction"] = s.reduction;
    }
  }
  if (model.fingerprint() + bundle.fingerprint() != before_hash) {
    throw NumericError("intervention modified a frozen model");
  }
  for (const std::string& w : warnings) err << "warning: " << w << "\n";
  report["warnings"] = warnings;
  run.output("intervention_report.json", report.dump(2) + "\n");
  cfg["threshold"] = threshold;
  cfg["reconstructed_pool"] = pool;
  cfg["exclude_train"] = exclude_train;
  if (top_n) cfg["top_n"] = *top_n;
  run.finish(cfg, std::nullopt);
  out << report.dump(2) << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Sparse autoencoders over frozen two-tower recommenders"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--out", g.out, "Output directory");

  PrepareArgs prepare;
  auto* c_prepare = app.add_subcommand("prepare", "Parse ratings and build a dataset artifact");
  c_prepare->add_option("--ratings", prepare.ratings, "Ratings file");
  c_prepare->add_option("--metadata", prepare.metadata, "Item metadata TSV");
  c_prepare->add_option("--format", prepare.format, "ml1m or lastfm");
  c_prepare->add_option("--min-user-positives", prepare.min_user_positives);
  c_prepare->add_option("--test-per-user", prepare.test_per_user);
  c_prepare->add_option("--val-fraction", prepare.val_fraction);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a planted-concept dataset");
  c_synth->add_option("--users", synth.users);
  c_synth->add_option("--items", synth.items);
  c_synth->add_option("--concepts", synth.concepts);
  c_synth->add_option("--noise", synth.noise);
  c_synth->add_option("--positives-per-user", synth.positives_per_user);

  TrainRecArgs train_rec;
  auto* c_train_rec = app.add_subcommand("train-rec", "Train an MF or NCF recommender");
  c_train_rec->add_option("--dataset", train_rec.dataset, "Dataset artifact")->required();
  c_train_rec->add_option("--model", train_rec.model, "mf or ncf");
  c_train_rec->add_option("--epochs", train_rec.epochs);
  c_train_rec->add_option("--batch-size", train_rec.batch_size);
  c_train_rec->add_option("--negatives", train_rec.negatives);
  c_train_rec->add_option("--dim", train_rec.dim);
  c_train_rec->add_option("--patience", train_rec.patience);
  c_train_rec->add_option("--lr", train_rec.lr);

  TrainSaeArgs train_sae_args;
  auto* c_train_sae = app.add_subcommand("train-sae", "Train an autoencoder on frozen embeddings");
  c_train_sae->add_option("--dataset", train_sae_args.dataset)->required();
  c_train_sae->add_option("--recmodel", train_sae_args.recmodel)->required();
  add_sae_options(c_train_sae, train_sae_args.sae);

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "Neuron reports, profiles and monosemanticity");
  c_analyze->add_option("--dataset", analyze.dataset)->required();
  c_analyze->add_option("--recmodel", analyze.recmodel)->required();
  c_analyze->add_option("--sae", analyze.sae)->required();
  c_analyze->add_option("--labels", analyze.labels, "TSV neuron_index<TAB>label");
  c_analyze->add_option("--k-max", analyze.k_max);
  c_analyze->add_option("--top-t", analyze.top_t);
  c_analyze->add_option("--decade-k", analyze.decade_k);

  FidelityArgs fidelity;
  auto* c_fidelity = app.add_subcommand("fidelity", "RBO and Kendall tau of reconstructed rankings");
  c_fidelity->add_option("--dataset", fidelity.dataset)->required();
  c_fidelity->add_option("--recmodel", fidelity.recmodel)->required();
  c_fidelity->add_option("--sae", fidelity.sae)->required();
  c_fidelity->add_option("--depth", fidelity.depth);
  c_fidelity->add_option("--max-users", fidelity.max_users);
  c_fidelity->add_option("--persistence", fidelity.persistence);

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Beta sweep of fidelity and monosemanticity");
  c_sweep->add_option("--dataset", sweep.dataset)->required();
  c_sweep->add_option("--recmodel", sweep.recmodel)->required();
  c_sweep->add_option("--betas", sweep.betas, "Comma-separated beta values");
  c_sweep->add_option("--seeds", sweep.seeds, "Comma-separated seeds");
  c_sweep->add_option("--depth", sweep.depth);
  c_sweep->add_option("--max-users", sweep.max_users);
  c_sweep->add_option("--persistence", sweep.persistence);
  c_sweep->add_option("--top-t", sweep.top_t);
  add_sae_options(c_sweep, sweep.sae);

  IntervenedArgs intervene;
  auto* c_intervene = app.add_subcommand("intervene", "Edit neuron activations and re-rank");
  c_intervene->add_option("--dataset", intervene.dataset)->required();
  c_intervene->add_option("--recmodel", intervene.recmodel)->required();
  c_intervene->add_option("--sae", intervene.sae)->required();
  c_intervene->add_option("--spec", intervene.spec, "intervention/1 JSON")->required();
  c_intervene->add_option("--top-n", intervene.top_n);
  c_intervene->add_option("--sweep-values", intervene.sweep_values, "Comma-separated, increasing");
  c_intervene->add_option("--sweep-neuron", intervene.sweep_neuron);
  c_intervene->add_option("--mode", intervene.mode, "set or add for the sweep");
  c_intervene->add_option("--exposure-label", intervene.exposure_label);
  c_intervene->add_option("--threshold", intervene.threshold, "Segment label share");
  c_intervene->add_flag("--reconstructed-pool", intervene.reconstructed_pool);
  c_intervene->add_flag("--include-train", intervene.include_train);

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return static_cast<int>(ErrorKind::kConfig);
  }

  try {
    if (*c_prepare) cmd_prepare(g, prepare, out, err);
    else if (*c_synth) cmd_synth(g, synth, out);
    else if (*c_train_rec) cmd_train_rec(g, train_rec, out);
    else if (*c_train_sae) cmd_train_sae(g, train_sae_args, out);
    else if (*c_analyze) cmd_analyze(g, analyze, out);
    else if (*c_fidelity) cmd_fidelity(g, fidelity, out);
    else if (*c_sweep) cmd_sweep(g, sweep, out);
    else if (*c_intervene) cmd_intervene(g, intervene, out, err);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const json::exception& e) {
    err << "error: malformed artifact: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  }
}

}  // namespace recsae
