#include <CLI11.hpp>

#include "partscope/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"partscope: self-supervised object part discovery and evaluation"};
  app.require_subcommand(1);

  partscope::cli::SynthGenerateArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-generate", "generate a synthetic part dataset");
  synth_cmd->add_option("--spec", synth.spec_path, "generator spec file")->required();
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();

  partscope::cli::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train the part segmenter");
  train_cmd->add_option("--config", train.config_path, "training config file")->required();
  train_cmd->add_option("--data", train.data_manifest, "dataset manifest")->required();
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  std::string train_class, train_resume, train_saliency;
  train_cmd->add_option("--class", train_class, "train on a single class");
  train_cmd->add_option("--resume", train_resume, "resume from a trainer checkpoint");
  train_cmd->add_option("--saliency", train_saliency,
                        "directory of replacement foreground masks (<id>.pgm)");

  partscope::cli::EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "segmenter checkpoint")->required();
  eval_cmd->add_option("--data", eval.data_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--split", eval.split, "split to score (default test)");
  eval_cmd->add_option("--report", eval.report_path, "report output file")->required();
  std::string eval_class, eval_saliency;
  eval_cmd->add_option("--class", eval_class, "restrict to a single class");
  eval_cmd->add_option("--saliency", eval_saliency,
                       "directory of replacement foreground masks (<id>.pgm)");

  partscope::cli::BaselineArgs baseline;
  auto* baseline_cmd = app.add_subcommand("baseline", "run an evaluation baseline");
  baseline_cmd
      ->add_option("--kind", baseline.kind, "kmeans | midpoint | kp-center | single-kp")
      ->required();
  baseline_cmd->add_option("--data", baseline.data_manifest, "dataset manifest")->required();
  baseline_cmd->add_option("--report", baseline.report_path, "report output file")->required();
  std::string baseline_config;
  baseline_cmd->add_option("--config", baseline_config, "config for provider/K/seed (kmeans)");
  baseline_cmd->add_option("--kp-index", baseline.keypoint_index,
                           "keypoint index for single-kp (default 0)");

  partscope::cli::VisualizeArgs viz;
  auto* viz_cmd = app.add_subcommand("visualize", "write part overlay images");
  viz_cmd->add_option("--checkpoint", viz.checkpoint, "segmenter checkpoint")->required();
  viz_cmd->add_option("--data", viz.data_manifest, "dataset manifest")->required();
  viz_cmd->add_option("--out", viz.out_dir, "output directory")->required();
  viz_cmd->add_option("--n", viz.count, "number of overlays (default 8)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : partscope::cli::kUsageError;
  }

  if (synth_cmd->parsed()) return partscope::cli::run_synth_generate(synth);
  if (train_cmd->parsed()) {
    if (!train_class.empty()) train.class_filter = train_class;
    if (!train_resume.empty()) train.resume_from = train_resume;
    if (!train_saliency.empty()) train.saliency_dir = train_saliency;
    return partscope::cli::run_train(train);
  }
  if (eval_cmd->parsed()) {
    if (!eval_class.empty()) eval.class_filter = eval_class;
    if (!eval_saliency.empty()) eval.saliency_dir = eval_saliency;
    return partscope::cli::run_eval(eval);
  }
  if (baseline_cmd->parsed()) {
    if (!baseline_config.empty()) baseline.config_path = baseline_config;
    return partscope::cli::run_baseline(baseline);
  }
  if (viz_cmd->parsed()) return partscope::cli::run_visualize(viz);
  return partscope::cli::kUsageError;
}
