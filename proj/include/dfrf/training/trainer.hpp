#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfrf/dataio/scene.hpp"
#include "dfrf/renderer/pipeline.hpp"
#include "dfrf/training/adam.hpp"

// Base training across identities (a coarse field-only stage, then the joint
// stage with the warp field switched on) and few-shot fine-tuning.

namespace dfrf::training {

struct TrainConfig {
  renderer::ModelConfig model;
  std::int64_t coarse_iters = 3000;
  std::int64_t joint_iters = 2000;
  std::int64_t finetune_iters = 1000;
  double lr_start = 5e-4;
  double lr_end = 5e-5;
  double lambda = renderer::kDefaultLambda;
  std::int64_t rays = 1024;
  int samples = 64;
  int n_references = 4;
  std::uint64_t seed = 1;
  diffmath::Profile profile = diffmath::Profile::F32;
  std::int64_t log_every = 100;
  /// Holds the warp output at zero during the joint stage (ablation).
  bool freeze_warp = false;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

std::string to_json(const TrainConfig& config);
/// Overlays the keys present in `json` onto `base`; unknown keys are an
/// error so that typos never pass silently.
TrainConfig overlay_json(const TrainConfig& base, const std::string& json);

/// Raised when a loss turns non-finite. The message carries the dump of the
/// offending batch.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Real>
struct TrainState {
  TrainConfig config;
  renderer::Model<Real> model;
  AdamState<Real> adam;
  std::mt19937_64 sampler;
  std::int64_t iteration = 0;  // steps taken in the current run

  explicit TrainState(const TrainConfig& config);
};

struct LogRecord {
  std::int64_t iteration;
  renderer::Stage stage;
  double l_mse, l_reg, total, wall_ms;
};

std::string to_json_line(const LogRecord& record);

struct RunHooks {
  std::ostream* log = nullptr;                 // JSON lines
  std::filesystem::path dump_dir;              // non-finite loss dumps; empty = message only
  std::function<void(const LogRecord&)> on_log;
};

/// Frames held out for evaluation: every fifth frame (t % 5 == 4).
bool is_held_out(std::int64_t frame);
std::vector<std::int64_t> training_frames(const dataio::Scene& scene);
std::vector<std::int64_t> held_out_frames(const dataio::Scene& scene);
/// Deterministic references for fine-tuning and inference: the first n
/// training frames.
std::vector<std::int64_t> first_references(const dataio::Scene& scene, int n);

/// Coarse then joint base training over `scenes` (at least two). Each step
/// draws a scene, a target frame, n_references distinct other frames of the
/// same scene and a ray batch.
template <typename Real>
TrainState<Real> train_base(const std::vector<dataio::Scene>& scenes, const TrainConfig& config,
                            const RunHooks& hooks = {});

/// Joint-stage optimisation of every parameter on the training frames of
/// one clip, with its first n_references training frames as references.
/// `base` is not modified. Adam moments start fresh.
template <typename Real>
TrainState<Real> finetune(const TrainState<Real>& base, const dataio::Scene& clip, const TrainConfig& config,
                          const RunHooks& hooks = {});

/// Checkpoint with model parameters, Adam moments, sampler state and the
/// configuration snapshot.
template <typename Real>
void save_state(const std::filesystem::path& path, const TrainState<Real>& state);
template <typename Real>
TrainState<Real> load_state(const std::filesystem::path& path);

/// FNV-1a over the raw bytes of the given parameters.
template <typename Real>
std::uint64_t parameter_hash(const diffmath::ParamList<Real>& params);

/// Renders a frame of `scene` with its deterministic references.
template <typename Real>
dataio::Image render_scene_frame(const renderer::Model<Real>& model, const dataio::Scene& scene,
                                 std::int64_t frame, int n_references, const renderer::RenderSettings& settings);

struct FrameScore {
  std::int64_t frame;
  double psnr, ssim;
};

template <typename Real>
std::vector<FrameScore> evaluate(const renderer::Model<Real>& model, const dataio::Scene& scene,
                                 const std::vector<std::int64_t>& frames, int n_references,
                                 const renderer::RenderSettings& settings);

}  // namespace dfrf::training
