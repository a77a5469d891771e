#include "partscope/cli.hpp"

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>

#include "partscope/dataset.hpp"
#include "partscope/errors.hpp"
#include "partscope/pipeline.hpp"
#include "partscope/trainer.hpp"

namespace partscope::cli {

namespace {

// Uniform exception -> exit code mapping for every subcommand.
int guarded(const char* command, int (*body)(const void*), const void* args) {
  try {
    return body(args);
  } catch (const ConfigError& e) {
    std::cerr << command << ": " << e.what() << "\n";
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << command << ": " << e.what() << "\n";
    return kUsageError;
  } catch (const IoError& e) {
    std::cerr << command << ": " << e.what() << "\n";
    return kIoError;
  } catch (const NumericError& e) {
    std::cerr << command << ": " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    std::cerr << command << ": unexpected error: " << e.what() << "\n";
    return 1;
  }
}

std::vector<data::Sample> load_filtered(const data::Manifest& manifest, const std::string& split,
                                        const std::optional<std::string>& class_filter,
                                        const std::optional<std::string>& saliency_dir) {
  std::vector<data::Sample> samples = data::load_split(manifest, split);
  if (class_filter.has_value())
    std::erase_if(samples,
                  [&](const data::Sample& s) { return s.class_name != *class_filter; });
  if (samples.empty()) throw ConfigError("split `" + split + "` has no samples");
  if (saliency_dir.has_value()) data::substitute_foregrounds(samples, *saliency_dir);
  return samples;
}

TrainConfig baseline_config(const BaselineArgs& args) {
  if (args.config_path.has_value()) return load_train_config(*args.config_path);
  TrainConfig cfg;
  return cfg;
}

}  // namespace

int run_synth_generate(const SynthGenerateArgs& args) {
  return guarded("synth-generate",
                 [](const void* p) {
                   const auto& a = *static_cast<const SynthGenerateArgs*>(p);
                   if (!std::filesystem::exists(a.spec_path))
                     throw ConfigError("spec file not found: " + a.spec_path);
                   const data::SyntheticSpec spec = data::load_synthetic_spec(a.spec_path);
                   const std::filesystem::path manifest = data::generate(spec, a.out_dir);
                   std::cout << manifest.string() << "\n";
                   return kOk;
                 },
                 &args);
}

int run_train(const TrainArgs& args) {
  return guarded("train",
                 [](const void* p) {
                   const auto& a = *static_cast<const TrainArgs*>(p);
                   const TrainConfig cfg = load_train_config(a.config_path);
                   const data::Manifest manifest = data::load_manifest(a.data_manifest);
                   const TrainOutput out = train(
                       cfg, manifest, a.out_dir,
                       a.class_filter,
                       a.resume_from.has_value()
                           ? std::optional<std::filesystem::path>(*a.resume_from)
                           : std::nullopt,
                       a.saliency_dir.has_value()
                           ? std::optional<std::filesystem::path>(*a.saliency_dir)
                           : std::nullopt);
                   std::cout << "checkpoint: " << out.checkpoint.string() << "\n"
                             << "losses: " << out.loss_csv.string() << "\n"
                             << "steps: " << out.final_step << "\n";
                   return kOk;
                 },
                 &args);
}

int run_eval(const EvalArgs& args) {
  return guarded("eval",
                 [](const void* p) {
                   const auto& a = *static_cast<const EvalArgs*>(p);
                   if (!std::filesystem::exists(a.checkpoint))
                     throw ConfigError("checkpoint not found: " + a.checkpoint);
                   const ToyUnet model = ToyUnet::load_checkpoint(a.checkpoint);
                   const data::Manifest manifest = data::load_manifest(a.data_manifest);
                   const auto train_samples =
                       load_filtered(manifest, "train", a.class_filter, a.saliency_dir);
                   const auto eval_samples =
                       load_filtered(manifest, a.split, a.class_filter, a.saliency_dir);
                   const metrics::EvalReport report =
                       pipeline::evaluate_model(model, train_samples, eval_samples);
                   metrics::write_report(a.report_path, report);
                   std::cout << "report: " << a.report_path << "\n";
                   return kOk;
                 },
                 &args);
}

int run_baseline(const BaselineArgs& args) {
  return guarded("baseline",
                 [](const void* p) {
                   const auto& a = *static_cast<const BaselineArgs*>(p);
                   const data::Manifest manifest = data::load_manifest(a.data_manifest);
                   const auto train_samples =
                       load_filtered(manifest, "train", std::nullopt, std::nullopt);
                   const auto test_samples =
                       load_filtered(manifest, "test", std::nullopt, std::nullopt);
                   metrics::EvalReport report;
                   if (a.kind == "kmeans") {
                     const TrainConfig cfg = baseline_config(a);
                     const auto provider = make_provider(cfg.provider);
                     report = pipeline::run_kmeans_baseline(*provider, train_samples,
                                                            test_samples, cfg.k_parts, cfg.seed)
                                  .report;
                   } else if (a.kind == "midpoint") {
                     report = pipeline::run_landmark_baseline(
                         metrics::LandmarkBaseline::ImageMidpoint, train_samples, test_samples);
                   } else if (a.kind == "kp-center") {
                     report = pipeline::run_landmark_baseline(
                         metrics::LandmarkBaseline::GtKeypointCenter, train_samples,
                         test_samples);
                   } else if (a.kind == "single-kp") {
                     report = pipeline::run_landmark_baseline(
                         metrics::LandmarkBaseline::SingleGtKeypoint, train_samples, test_samples,
                         a.keypoint_index);
                   } else {
                     throw ConfigError("unknown baseline kind `" + a.kind + "`");
                   }
                   metrics::write_report(a.report_path, report);
                   std::cout << "report: " << a.report_path << "\n";
                   return kOk;
                 },
                 &args);
}

int run_visualize(const VisualizeArgs& args) {
  return guarded("visualize",
                 [](const void* p) {
                   const auto& a = *static_cast<const VisualizeArgs*>(p);
                   if (!std::filesystem::exists(a.checkpoint))
                     throw ConfigError("checkpoint not found: " + a.checkpoint);
                   const ToyUnet model = ToyUnet::load_checkpoint(a.checkpoint);
                   const data::Manifest manifest = data::load_manifest(a.data_manifest);
                   const auto samples = data::load_split(manifest, "test");
                   const std::size_t n =
                       pipeline::write_overlays(model, samples, a.out_dir, a.count);
                   std::cout << "wrote " << n << " overlays to " << a.out_dir << "\n";
                   return kOk;
                 },
                 &args);
}

}  // namespace partscope::cli
