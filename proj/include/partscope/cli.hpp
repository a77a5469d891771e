#pragma once

#include <optional>
#include <string>

namespace partscope::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 2;
inline constexpr int kIoError = 3;
inline constexpr int kNumericError = 4;

struct SynthGenerateArgs {
  std::string spec_path;
  std::string out_dir;
};

struct TrainArgs {
  std::string config_path;
  std::string data_manifest;
  std::string out_dir;
  std::optional<std::string> class_filter;
  std::optional<std::string> resume_from;
  std::optional<std::string> saliency_dir;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data_manifest;
  std::string split = "test";
  std::string report_path;
  std::optional<std::string> class_filter;
  std::optional<std::string> saliency_dir;
};

struct BaselineArgs {
  std::string kind;  // kmeans | midpoint | kp-center | single-kp
  std::string data_manifest;
  std::string report_path;
  std::optional<std::string> config_path;  // provider/K/seed for kmeans
  int keypoint_index = 0;
};

struct VisualizeArgs {
  std::string checkpoint;
  std::string data_manifest;
  std::string out_dir;
  std::size_t count = 8;
};

int run_synth_generate(const SynthGenerateArgs& args);
int run_train(const TrainArgs& args);
int run_eval(const EvalArgs& args);
int run_baseline(const BaselineArgs& args);
int run_visualize(const VisualizeArgs& args);

}  // namespace partscope::cli
