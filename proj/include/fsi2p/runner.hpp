#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fsi2p/checkpoint.hpp"
#include "fsi2p/config.hpp"
#include "fsi2p/model.hpp"

namespace fsi2p {

void run_gen_data(const RunConfig& config);

struct TrainRow {
  Index step = 0;
  double loss_coarse = 0, loss_fine = 0, loss_rl = 0, reward = 0, baseline = 0;
  std::array<int, 3> depths{};
  double wall_ms = 0;
};

inline constexpr const char* kTrainCsvHeader =
    "step,loss_coarse,loss_fine,loss_rl,reward,baseline,depth_a,depth_b,depth_c,wall_ms";

struct TrainResult {
  ModelParams params;
  double baseline = 0.0;
  std::vector<TrainRow> rows;
  std::filesystem::path checkpoint;
  std::filesystem::path csv;
};

// Trains on <dataset>/train and writes <out>/train.csv and <out>/checkpoint.bin.
TrainResult run_train(const RunConfig& config);
// Same loop over already loaded samples.
TrainResult train_on(const RunConfig& config, const std::vector<SyntheticSample>& samples);

struct SampleEval {
  Index sample = 0;
  RegistrationMetrics metrics;
  Index fine_matches = 0;
  std::array<int, 3> depths{};
  double mmd = 0.0;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  double inlier_ratio = 0.0;
  double feature_match_recall = 0.0;
  double registration_recall = 0.0;
  double mean_mmd = 0.0;
  std::array<Index, kActionCount> depth_histogram{};
  std::string summary() const;
};

inline constexpr const char* kEvalCsvHeader =
    "sample,inlier_ratio,fine_matches,feature_match,registered,rmse,rotation_error_deg,"
    "translation_error,depth_a,depth_b,depth_c,mmd";

// Greedy (or fixed-depth) evaluation of a checkpoint on <dataset>/<eval_split>;
// writes <out>/eval.csv and <out>/eval_summary.txt.
EvalReport run_eval(const RunConfig& config, const std::filesystem::path& checkpoint);
EvalReport evaluate(const RunConfig& config, const ModelParams& params,
                    const std::vector<SyntheticSample>& samples);

// Least-squares slope of log(seconds) against log(tokens).
double loglog_slope(const std::vector<double>& tokens, const std::vector<double>& seconds);

struct BenchReport {
  std::vector<double> tokens;
  std::vector<double> sweep_seconds, attention_seconds;
  double sweep_slope = 0.0, attention_slope = 0.0;
  double linear_stub_slope = 0.0, quadratic_stub_slope = 0.0;
  std::vector<double> mmd_by_depth;  // attention stack depths 1..6
};

// Writes <out>/bench_scaling.csv and <out>/bench_mmd.csv. The drift probe uses
// the checkpoint's attention block when one is given.
BenchReport run_bench(const RunConfig& config,
                      const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

// MMD between unit-normalised image and point tokens after 1..max_depth
// applications of the attention block.
std::vector<double> attention_drift(const Model& model, const ModelParams& params,
                                    const SampleInputs& inputs, int max_depth, double bandwidth);

}  // namespace fsi2p
