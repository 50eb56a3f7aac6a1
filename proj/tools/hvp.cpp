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

#include <CLI11.hpp>

#include <iostream>

#include "hvp/cli/commands.hpp"

namespace {

void add_common(CLI::App* cmd, hvp::cli::CommonOptions& o, bool needs_out = true) {
  cmd->add_option_function<std::string>("--config", [&o](const std::string& p) { o.config = p; },
                                        "JSON run configuration");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option_function<std::uint64_t>("--seed", [&o](std::uint64_t s) { o.seed = s; },
                                          "Override every seed in the configuration");
  cmd->add_flag("--force", o.force, "Write into a non-empty output directory");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace hvp::cli;
  CLI::App app{"Hierarchical view predictor: synthetic data, training and evaluation"};
  app.require_subcommand(1);

  CommonOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate the synthetic multi-view dataset");
  add_common(gen_cmd, gen);

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train the network and per-shape features");
  add_common(train_cmd, tr);
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();

  EmbedOptions em;
  auto* embed_cmd = app.add_subcommand("embed", "Fit features of test-split shapes with frozen weights");
  add_common(embed_cmd, em);
  embed_cmd->add_option("--data", em.data, "Dataset directory")->required();
  embed_cmd->add_option("--weights", em.weights, "Pretrained weights file")->required();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Classification probe and retrieval metrics");
  add_common(eval_cmd, ev);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--features", ev.features, "Feature table (repeatable)")->required();

  AblateOptions ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the ablation tables");
  add_common(ablate_cmd, ab);
  ablate_cmd->add_option("--data", ab.data, "Dataset directory")->required();

  RenderOptions rv;
  auto* render_cmd = app.add_subcommand("render-views", "Write generated and ground-truth views of one shape");
  add_common(render_cmd, rv);
  render_cmd->add_option("--data", rv.data, "Dataset directory")->required();
  render_cmd->add_option("--weights", rv.weights, "Trained weights file")->required();
  render_cmd->add_option_function<std::string>("--features", [&rv](const std::string& p) { rv.features = p; },
                                               "Feature table holding the shape");
  render_cmd->add_option("--shape-id", rv.shape_id, "Shape to render")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (*gen_cmd) return run_guarded([&] { cmd_gen(gen); });
  if (*train_cmd) return run_guarded([&] { cmd_train(tr); });
  if (*embed_cmd) return run_guarded([&] { cmd_embed(em); });
  if (*eval_cmd) return run_guarded([&] { cmd_eval(ev); });
  if (*ablate_cmd) return run_guarded([&] { cmd_ablate(ab); });
  if (*render_cmd) return run_guarded([&] { cmd_render_views(rv); });
  return kValidation;
}
