// Copyright 2026 The HVP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hvp/cli/config.hpp"
#include "hvp/container.hpp"
#include "hvp/errors.hpp"
#include "hvp/evalsuite.hpp"
#include "hvp/featstore.hpp"
#include "hvp/hvpmodel.hpp"
#include "hvp/synthviews.hpp"
#include "hvp/trainer.hpp"
#include "hvp/weights.hpp"

namespace hvp::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kInternal = 1, kValidation = 2, kAbort = 3, kIo = 4 };

/// Runs a command and maps failures to exit codes, printing the reason.
inline int run_guarded(const std::function<void()>& fn, std::ostream& err = std::cerr) {
  try {
    fn();
    return kOk;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kAbort;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {  // config and shape errors
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::out_of_range& e) {  // lookup errors
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::logic_error& e) {  // contract errors
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

struct CommonOptions {
  std::optional<fs::path> config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::ostream* log = &std::cerr;
};

namespace detail {

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config ? load_config(*o.config) : RunConfig{};
  if (o.seed) c.apply_seed(*o.seed);
  c.validate();
  return c;
}

inline void prepare_out_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw ConfigError("--out is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw IoError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

/// Collects the run manifest and writes it as run.json.
class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& cfg)
      : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["code_version"] = train::kCodeVersion;
    j_["config"] = cfg.to_json();
    j_["started_at"] = utc_now();
    j_["outputs"] = json::array();
  }

  void set(const std::string& key, json value) { j_[key] = std::move(value); }
  void output(const fs::path& p) { j_["outputs"].push_back(p.filename().string()); }

  void write(const fs::path& dir) {
    j_["finished_at"] = utc_now();
    j_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    io::write_file(dir / "run.json", j_.dump(1) + "\n");
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

/// Deterministic back-reference from an artifact to its run.json.
inline json run_reference(const std::string& command, const std::string& config_hash = "") {
  json j{{"manifest", "run.json"}, {"command", command}};
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j;
}

inline void write_text(const fs::path& path, const std::string& text, RunManifest& m) {
  io::write_file(path, text);
  m.output(path);
}

/// RunRecord without its wall time, which lives in run.json.
inline std::string record_text(const train::RunRecord& r, const json& run) {
  auto j = r.to_json();
  j.erase("wall_seconds");
  j["run"] = run;
  return j.dump(1) + "\n";
}

inline train::EpochCallback epoch_logger(std::ostream* log, std::string prefix) {
  return [log, prefix](const train::EpochStats& e) {
    if (!log) return;
    *log << prefix << "epoch " << e.epoch << " steps=" << e.steps << " l_r=" << e.l_r << " l_u=" << e.l_u
         << " l_u'=" << e.l_u_prime << " total=" << e.total << "\n";
  };
}

inline void check_view_size(const synth::Dataset& ds, std::size_t expected, const std::string& what) {
  if (ds.config.view_size != expected)
    throw ConfigError("dataset view_size " + std::to_string(ds.config.view_size) + " does not match " + what + " " +
                      std::to_string(expected));
}

inline std::vector<synth::ShapeViews> split_views(const synth::Dataset& ds, bool train, bool test) {
  return ds.unlabeled(train, test);
}

inline std::string dataset_id(const fs::path& dir) { return io::hex64(synth::dataset_hash(dir)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// gen

inline synth::Dataset cmd_gen(const CommonOptions& o) {
  const auto cfg = detail::resolve_config(o);
  detail::prepare_out_dir(o.out, o.force);
  detail::RunManifest manifest("gen", cfg);
  const auto ds = synth::generate_dataset(cfg.dataset);
  synth::write_dataset(ds, o.out);
  manifest.output(o.out / "manifest.json");
  for (const auto& s : ds.shapes) manifest.output(o.out / synth::shape_file_name(s.shape_id()));
  manifest.set("dataset_hash", detail::dataset_id(o.out));
  manifest.write(o.out);
  if (o.log) *o.log << "wrote " << ds.shapes.size() << " shapes to " << o.out.string() << "\n";
  return ds;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions : CommonOptions {
  fs::path data;
};

inline train::TrainResult cmd_train(const TrainOptions& o) {
  const auto cfg = detail::resolve_config(o);
  const auto ds = synth::read_dataset(o.data);
  detail::check_view_size(ds, cfg.model.view_size, "config view_size");
  detail::prepare_out_dir(o.out, o.force);
  const std::string data_id = detail::dataset_id(o.data);
  detail::RunManifest manifest("train", cfg);
  manifest.set("dataset_hash", data_id);

  const bool known = cfg.mode == TrainMode::known;
  const auto shapes = detail::split_views(ds, true, known);
  auto result =
      train::train_known(shapes, cfg.model, cfg.train, synth::make_dodecahedron_rig(), detail::epoch_logger(o.log, ""),
                         data_id);
  result.record.mode = known ? "known" : "unknown-pretrain";

  auto provenance = detail::run_reference("train", result.record.config_hash);
  provenance["dataset_hash"] = data_id;
  io::save_weights(result.params, o.out / "weights.hvpw", provenance);
  manifest.output(o.out / "weights.hvpw");
  feat::save_table(result.table, o.out / "features.tbl", provenance);
  manifest.output(o.out / "features.tbl");
  detail::write_text(o.out / "losses.csv", result.record.loss_csv(), manifest);
  detail::write_text(o.out / "run_record.json", detail::record_text(result.record, provenance), manifest);
  manifest.set("config_hash", result.record.config_hash);
  manifest.set("train_wall_seconds", result.record.wall_seconds);
  manifest.write(o.out);
  return result;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedOptions : CommonOptions {
  fs::path data;
  fs::path weights;
};

inline train::TrainResult cmd_embed(const EmbedOptions& o) {
  const auto cfg = detail::resolve_config(o);
  if (!fs::exists(o.weights)) throw IoError("pretrained weights not found: " + o.weights.string());
  const auto params = io::load_weights(o.weights);
  const auto ds = synth::read_dataset(o.data);
  detail::check_view_size(ds, params.config.view_size, "the weights' view_size");
  detail::prepare_out_dir(o.out, o.force);
  const std::string data_id = detail::dataset_id(o.data);
  detail::RunManifest manifest("embed", cfg);
  manifest.set("dataset_hash", data_id);
  manifest.set("weights", fs::absolute(o.weights).string());
  manifest.set("weights_fnv1a", io::hex64(io::fnv1a(io::read_file(o.weights))));

  auto tcfg = cfg.train;
  tcfg.use_global_feature = true;
  tcfg.aggregation = train::Aggregation::implicit_f;
  const auto shapes = detail::split_views(ds, false, true);
  auto result = train::embed_unknown(shapes, params, tcfg, synth::make_dodecahedron_rig(),
                                     detail::epoch_logger(o.log, "embed "), data_id);
  auto provenance = detail::run_reference("embed", result.record.config_hash);
  provenance["dataset_hash"] = data_id;
  feat::save_table(result.table, o.out / "features.tbl", provenance);
  manifest.output(o.out / "features.tbl");
  detail::write_text(o.out / "losses.csv", result.record.loss_csv(), manifest);
  detail::write_text(o.out / "run_record.json", detail::record_text(result.record, provenance), manifest);
  manifest.set("config_hash", result.record.config_hash);
  manifest.write(o.out);
  return result;
}

// ---------------------------------------------------------------------------
// eval

struct Metrics {
  eval::ProbeResult probe;
  eval::RetrievalResult retrieval;
  std::size_t n_train = 0, n_test = 0;
};

/// Probe trained on the training split, scored on the test split; retrieval
/// among the test shapes. `rows` holds one descriptor per id in `ids`.
inline Metrics evaluate_descriptors(const synth::Dataset& ds, const std::vector<int>& ids,
                                    const std::vector<std::vector<double>>& rows, const EvalConfig& ecfg) {
  std::map<int, std::size_t> where;
  for (std::size_t i = 0; i < ids.size(); ++i) where[ids[i]] = i;
  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte, idte;
  for (const auto& s : ds.shapes) {
    auto it = where.find(s.shape_id());
    if (it == where.end()) throw ConfigError("no feature for shape_id " + std::to_string(s.shape_id()));
    (s.split == synth::Split::train ? xtr : xte).push_back(rows[it->second]);
    (s.split == synth::Split::train ? ytr : yte).push_back(s.class_id);
    if (s.split == synth::Split::test) idte.push_back(s.shape_id());
  }
  if (where.size() != ds.shapes.size()) {
    for (int id : ids) {
      bool found = false;
      for (const auto& s : ds.shapes) found |= s.shape_id() == id;
      if (!found) throw ConfigError("feature table has shape_id " + std::to_string(id) + " not in the dataset");
    }
  }
  if (xtr.empty() || xte.empty()) throw ConfigError("evaluation needs shapes in both the train and test splits");
  Metrics m;
  m.n_train = xtr.size();
  m.n_test = xte.size();
  const auto probe = eval::train_linear_probe(
      xtr, ytr, {.l2_weight = ecfg.probe_l2, .iters = ecfg.probe_iters, .seed = ecfg.seed});
  m.probe = eval::classify(probe, xte, yte);
  m.retrieval = eval::retrieval_map(idte, xte, yte, ecfg.pr_points);
  return m;
}

inline json metrics_json(const Metrics& m) {
  return {{"ins_acc", m.probe.ins_acc},
          {"cla_acc", m.probe.cla_acc},
          {"map", m.retrieval.map},
          {"n_train", m.n_train},
          {"n_test", m.n_test},
          {"classes", m.probe.classes},
          {"skipped_queries", m.retrieval.skipped}};
}

struct EvalOptions : CommonOptions {
  fs::path data;
  std::vector<fs::path> features;
};

inline Metrics cmd_eval(const EvalOptions& o) {
  const auto cfg = detail::resolve_config(o);
  if (o.features.empty()) throw ConfigError("eval needs at least one --features table");
  const auto ds = synth::read_dataset(o.data);
  std::vector<int> ids;
  std::vector<std::vector<double>> rows;
  std::optional<std::size_t> dim;
  for (const auto& path : o.features) {
    const auto t = feat::load_table(path, dim.value_or(0));
    dim = t.dim();
    for (int id : t.ids()) {
      if (std::find(ids.begin(), ids.end(), id) != ids.end())
        throw ConfigError("shape_id " + std::to_string(id) + " appears in more than one feature table");
      ids.push_back(id);
      auto r = t.row(id);
      rows.emplace_back(r.begin(), r.end());
    }
  }
  const auto m = evaluate_descriptors(ds, ids, rows, cfg.eval);
  detail::prepare_out_dir(o.out, o.force);
  detail::RunManifest manifest("eval", cfg);
  manifest.set("dataset_hash", detail::dataset_id(o.data));
  json inputs = json::array();
  for (const auto& p : o.features) inputs.push_back(fs::absolute(p).string());
  manifest.set("features", inputs);

  auto mj = metrics_json(m);
  json names = json::array();
  for (int c : m.probe.classes) names.push_back(synth::class_name(c));
  mj["class_names"] = names;
  mj["run"] = detail::run_reference("eval");
  detail::write_text(o.out / "metrics.json", mj.dump(1) + "\n", manifest);

  std::ostringstream conf;
  for (const auto& row : m.probe.confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) conf << (k ? "," : "") << json(row[k]).dump();
    conf << "\n";
  }
  detail::write_text(o.out / "confusion.csv", conf.str(), manifest);

  std::ostringstream pr;
  pr << "recall,precision\n";
  for (const auto& [r, p] : m.retrieval.pr_points) pr << json(r).dump() << "," << json(p).dump() << "\n";
  detail::write_text(o.out / "pr.csv", pr.str(), manifest);
  manifest.write(o.out);
  if (o.log)
    *o.log << "ins_acc=" << m.probe.ins_acc << " cla_acc=" << m.probe.cla_acc << " map=" << m.retrieval.map << "\n";
  return m;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOptions : CommonOptions {
  fs::path data;
};

inline std::vector<train::AblationRow> cmd_ablate(const AblateOptions& o) {
  const auto cfg = detail::resolve_config(o);
  const auto ds = synth::read_dataset(o.data);
  detail::check_view_size(ds, cfg.model.view_size, "config view_size");
  detail::prepare_out_dir(o.out, o.force);
  const std::string data_id = detail::dataset_id(o.data);
  detail::RunManifest manifest("ablate", cfg);
  manifest.set("dataset_hash", data_id);

  std::vector<train::AblationArm> arms;
  for (const auto& t : cfg.ablate.tables) {
    const auto add = t == "loss" ? train::loss_arms(cfg.train)
                     : t == "direction" ? train::direction_arms(cfg.train)
                                        : train::aggregation_arms(cfg.train);
    arms.insert(arms.end(), add.begin(), add.end());
  }
  const auto rows = train::run_ablation(
      arms, detail::split_views(ds, true, true), cfg.model, synth::make_dodecahedron_rig(),
      [&](const train::AblationArm& arm, const train::Descriptors& d) {
        if (o.log) *o.log << "evaluating " << arm.table << "/" << arm.name << "\n";
        return metrics_json(evaluate_descriptors(ds, d.ids, eval::to_double_rows(d.rows), cfg.eval));
      },
      detail::epoch_logger(o.log, ""));

  json out = json::array();
  std::ostringstream csv;
  csv << "table,arm,ins_acc,cla_acc,map,final_total,config_hash\n";
  for (const auto& r : rows) {
    const double final_total = r.record.epochs.empty() ? 0.0 : r.record.epochs.back().total;
    out.push_back({{"table", r.arm.table},
                   {"arm", r.arm.name},
                   {"train", r.arm.train.to_json()},
                   {"metrics", r.metrics},
                   {"final_total", final_total},
                   {"config_hash", r.record.config_hash}});
    csv << r.arm.table << "," << r.arm.name << "," << r.metrics["ins_acc"].dump() << ","
        << r.metrics["cla_acc"].dump() << "," << r.metrics["map"].dump() << "," << json(final_total).dump() << ","
        << r.record.config_hash << "\n";
  }
  const json ablation{{"run", detail::run_reference("ablate")}, {"arms", out}};
  detail::write_text(o.out / "ablation.json", ablation.dump(1) + "\n", manifest);
  detail::write_text(o.out / "ablation.csv", csv.str(), manifest);
  manifest.write(o.out);
  return rows;
}

// ---------------------------------------------------------------------------
// render-views

struct RenderOptions : CommonOptions {
  fs::path data;
  fs::path weights;
  std::optional<fs::path> features;
  int shape_id = 0;
};

inline std::string pair_file(std::size_t pair, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "pair_%02zu_%s.pgm", pair, what);
  return buf;
}

/// Values as stored in an 8-bit PGM.
inline std::vector<float> quantize(std::span<const float> v) {
  std::vector<float> q(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) q[i] = float(synth::to_byte(v[i])) / 255.0f;
  return q;
}

inline double sq_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i] - b[i]) * double(a[i] - b[i]);
  return s;
}

/// Writes, per view pair, the ground-truth current view, the current view
/// generated from each patch set and the generated opposite view, plus
/// distances.csv computed on the quantized images.
inline void cmd_render_views(const RenderOptions& o) {
  if (!fs::exists(o.weights)) throw IoError("weights not found: " + o.weights.string());
  const auto params = io::load_weights(o.weights);
  const auto ds = synth::read_dataset(o.data);
  detail::check_view_size(ds, params.config.view_size, "the weights' view_size");
  const synth::ViewSet* shape = nullptr;
  for (const auto& s : ds.shapes)
    if (s.shape_id() == o.shape_id) shape = &s;
  if (!shape) throw LookupError("shape_id " + std::to_string(o.shape_id) + " not in dataset");
  ad::Tensor<float> global;
  if (params.config.use_global_feature) {
    if (!o.features) throw ConfigError("--features is required for a model trained with F");
    const auto table = feat::load_table(*o.features, params.config.feature_dim);
    global = table.tensor<float>(o.shape_id, false);
  }
  const RunConfig cfg = o.config ? detail::resolve_config(o) : RunConfig{};
  detail::prepare_out_dir(o.out, o.force);
  detail::RunManifest manifest("render-views", cfg);
  manifest.set("shape_id", o.shape_id);
  manifest.set("weights", fs::absolute(o.weights).string());

  const auto rig = synth::make_dodecahedron_rig();
  const std::size_t w = params.config.view_size;
  std::vector<std::vector<float>> gt(synth::kViews), from_i(synth::kViews), from_o(synth::kViews),
      opposite(synth::kViews);
  for (const auto& vp : synth::view_pairs(shape->views, rig)) {
    const std::size_t k = vp.current_index;
    const auto pair = model::prepare_pair(vp, params);
    const auto gen_i = model::generate_view(model::encode(global, pair.f_i, params), params);
    const auto gen_o = model::generate_view(model::encode(global, pair.f_o, params), params);
    const auto gen_opp = model::generate_view(model::abstract_view(gen_i, params), params);
    gt[k] = quantize(vp.current);
    from_i[k] = quantize(gen_i.data());
    from_o[k] = quantize(gen_o.data());
    opposite[k] = quantize(gen_opp.data());
    synth::write_pgm(o.out / pair_file(k, "current"), vp.current, w, w);
    synth::write_pgm(o.out / pair_file(k, "gen_current_from_i"), gen_i.data(), w, w);
    synth::write_pgm(o.out / pair_file(k, "gen_current_from_o"), gen_o.data(), w, w);
    synth::write_pgm(o.out / pair_file(k, "gen_opposite"), gen_opp.data(), w, w);
    for (const char* what : {"current", "gen_current_from_i", "gen_current_from_o", "gen_opposite"})
      manifest.output(o.out / pair_file(k, what));
  }
  std::ostringstream csv;
  csv << "pair,opposite_pair,current_from_i,current_from_o,opposite\n";
  for (std::size_t k = 0; k < synth::kViews; ++k) {
    const std::size_t opp = rig.opposite[k];
    csv << k << "," << opp << "," << json(sq_distance(from_i[k], gt[k])).dump() << ","
        << json(sq_distance(from_o[k], gt[k])).dump() << "," << json(sq_distance(opposite[k], gt[opp])).dump()
        << "\n";
  }
  detail::write_text(o.out / "distances.csv", csv.str(), manifest);
  manifest.write(o.out);
}

}  // namespace hvp::cli
