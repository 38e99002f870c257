#include "dfrf/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dfrf/dataio/checkpoint.hpp"
#include "dfrf/dataio/errors.hpp"
#include "dfrf/dataio/metrics.hpp"
#include "json.hpp"

namespace dfrf::training {

namespace dm = diffmath;
namespace rd = renderer;
namespace io = dataio;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  require(coarse_iters >= 0 && joint_iters >= 0 && finetune_iters >= 0, "iteration counts must be non-negative");
  require(lr_start > 0 && lr_end > 0, "learning rates must be positive");
  require(lambda >= 0, "lambda must be non-negative");
  require(rays >= 1, "rays must be positive");
  require(samples >= 2, "samples must be at least 2");
  require(n_references >= 1, "n_references must be positive");
  require(log_every >= 1, "log_every must be positive");
  const auto& f = model.field;
  require(f.layers >= 1 && f.width >= 2 && f.skip >= 0 && f.skip < f.layers, "field: need layers >= 1, width >= 2, skip < layers");
  require(model.condition_dim >= 1 && model.feature_dim >= 1 && model.warp_hidden >= 1 &&
              model.attention_hidden >= 1 && model.filter_hidden >= 1,
          "model dimensions must be positive");
  require(model.filter_window >= 1 && model.filter_window % 2 == 1, "filter_window must be odd");
}

namespace {

const char* profile_key(dm::Profile p) { return p == dm::Profile::F32 ? "f32" : "f64"; }

json config_tree(const TrainConfig& c) {
  return {
      {"model",
       {{"field", {{"layers", c.model.field.layers}, {"width", c.model.field.width}, {"skip", c.model.field.skip}}},
        {"condition_dim", c.model.condition_dim},
        {"feature_dim", c.model.feature_dim},
        {"warp_hidden", c.model.warp_hidden},
        {"attention_hidden", c.model.attention_hidden},
        {"filter_hidden", c.model.filter_hidden},
        {"filter_window", c.model.filter_window}}},
      {"coarse_iters", c.coarse_iters},
      {"joint_iters", c.joint_iters},
      {"finetune_iters", c.finetune_iters},
      {"lr_start", c.lr_start},
      {"lr_end", c.lr_end},
      {"lambda", c.lambda},
      {"rays", c.rays},
      {"samples", c.samples},
      {"n_references", c.n_references},
      {"seed", c.seed},
      {"profile", profile_key(c.profile)},
      {"log_every", c.log_every},
      {"freeze_warp", c.freeze_warp},
  };
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; }))
      throw std::invalid_argument("config: unknown key '" + where + item.key() + "'");
  }
}

TrainConfig overlay_tree(TrainConfig c, const json& j) {
  reject_unknown(j,
                 {"model", "coarse_iters", "joint_iters", "finetune_iters", "lr_start", "lr_end", "lambda", "rays",
                  "samples", "n_references", "seed", "profile", "log_every", "freeze_warp"},
                 "");
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"field", "condition_dim", "feature_dim", "warp_hidden", "attention_hidden", "filter_hidden",
                    "filter_window"},
                   "model.");
    if (m.contains("field")) {
      const auto& f = m.at("field");
      reject_unknown(f, {"layers", "width", "skip"}, "model.field.");
      take(f, "layers", c.model.field.layers);
      take(f, "width", c.model.field.width);
      take(f, "skip", c.model.field.skip);
    }
    take(m, "condition_dim", c.model.condition_dim);
    take(m, "feature_dim", c.model.feature_dim);
    take(m, "warp_hidden", c.model.warp_hidden);
    take(m, "attention_hidden", c.model.attention_hidden);
    take(m, "filter_hidden", c.model.filter_hidden);
    take(m, "filter_window", c.model.filter_window);
  }
  take(j, "coarse_iters", c.coarse_iters);
  take(j, "joint_iters", c.joint_iters);
  take(j, "finetune_iters", c.finetune_iters);
  take(j, "lr_start", c.lr_start);
  take(j, "lr_end", c.lr_end);
  take(j, "lambda", c.lambda);
  take(j, "rays", c.rays);
  take(j, "samples", c.samples);
  take(j, "n_references", c.n_references);
  take(j, "seed", c.seed);
  take(j, "log_every", c.log_every);
  take(j, "freeze_warp", c.freeze_warp);
  if (j.contains("profile")) {
    std::string p;
    take(j, "profile", p);
    if (p == "f32")
      c.profile = dm::Profile::F32;
    else if (p == "f64")
      c.profile = dm::Profile::F64;
    else
      throw std::invalid_argument("config: profile must be \"f32\" or \"f64\", got \"" + p + "\"");
  }
  return c;
}

}  // namespace

std::string to_json(const TrainConfig& config) { return config_tree(config).dump(2); }

TrainConfig overlay_json(const TrainConfig& base, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return overlay_tree(base, j);
}

std::string to_json_line(const LogRecord& r) {
  json j = {{"iteration", r.iteration}, {"stage", rd::stage_name(r.stage)}, {"l_mse", r.l_mse},
            {"l_reg", r.l_reg},         {"total", r.total},                   {"wall_ms", r.wall_ms}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Frame selection

bool is_held_out(std::int64_t frame) { return frame % 5 == 4; }

std::vector<std::int64_t> training_frames(const io::Scene& scene) {
  std::vector<std::int64_t> out;
  for (std::int64_t f = 0; f < scene.size(); ++f)
    if (!is_held_out(f)) out.push_back(f);
  return out;
}

std::vector<std::int64_t> held_out_frames(const io::Scene& scene) {
  std::vector<std::int64_t> out;
  for (std::int64_t f = 0; f < scene.size(); ++f)
    if (is_held_out(f)) out.push_back(f);
  return out;
}

std::vector<std::int64_t> first_references(const io::Scene& scene, int n) {
  auto frames = training_frames(scene);
  if (static_cast<std::int64_t>(frames.size()) < n)
    throw std::invalid_argument("scene " + scene.id + " has " + std::to_string(frames.size()) +
                                " training frames, fewer than " + std::to_string(n) + " references");
  frames.resize(static_cast<std::size_t>(n));
  return frames;
}

// ---------------------------------------------------------------------------
// Training loop

template <typename Real>
TrainState<Real>::TrainState(const TrainConfig& c)
    : config(c), model(c.model, c.seed), sampler(c.seed ^ 0x9e3779b97f4a7c15ULL) {}

namespace {

std::int64_t uniform(std::mt19937_64& rng, std::int64_t n) {
  return std::uniform_int_distribution<std::int64_t>(0, n - 1)(rng);
}

struct Batch {
  const io::Scene* scene;
  std::int64_t target;
  std::vector<std::int64_t> references;
  std::vector<std::int64_t> pixels;
};

std::vector<std::int64_t> random_pixels(std::mt19937_64& rng, const io::Scene& scene, std::int64_t rays) {
  std::vector<std::int64_t> pixels(static_cast<std::size_t>(rays));
  for (auto& p : pixels) p = uniform(rng, scene.height * scene.width);
  return pixels;
}

[[noreturn]] void abort_non_finite(const Batch& batch, rd::Stage stage, std::int64_t iteration, double l_mse,
                                   double l_reg, const RunHooks& hooks) {
  json dump = {{"iteration", iteration},   {"stage", rd::stage_name(stage)}, {"scene", batch.scene->id},
               {"target", batch.target},    {"references", batch.references}, {"pixels", batch.pixels},
               {"l_mse", std::to_string(l_mse)}, {"l_reg", std::to_string(l_reg)}};
  std::string where;
  if (!hooks.dump_dir.empty()) {
    std::filesystem::create_directories(hooks.dump_dir);
    const auto path = hooks.dump_dir / ("nonfinite_" + std::to_string(iteration) + ".json");
    std::ofstream(path) << dump.dump(1) << '\n';
    where = " (dump written to " + path.string() + ")";
  }
  throw NumericalError("non-finite loss at iteration " + std::to_string(iteration) + where + ": " + dump.dump());
}

template <typename Real>
LogRecord take_step(TrainState<Real>& state, const Batch& batch, rd::Stage stage, double lr,
                    const RunHooks& hooks) {
  const auto& cfg = state.config;
  const auto& scene = *batch.scene;
  const auto& frame = scene.frames[static_cast<std::size_t>(batch.target)];
  const auto rays = rd::make_rays(frame, batch.pixels, cfg.samples, rd::bounds_of(scene), &state.sampler);
  const dm::Tensor<Real> truth({rays.rays, 3}, std::vector<Real>(rays.target.begin(), rays.target.end()));

  dm::Tape<Real> tape;
  dm::Tensor<Real> loss, l_mse, l_reg;
  {
    auto recording = tape.activate();
    const auto refs = rd::prepare_references(state.model, scene, batch.references);
    const auto cond = state.model.filter.filter(scene.track, frame.condition_index, cfg.model.filter_window);
    const auto out = rd::forward(state.model, refs, cond, rays, stage, scene.world_scale);
    l_mse = rd::mse_loss(out.rgb, truth);
    if (stage == rd::Stage::Joint) {
      l_reg = out.reg;
      loss = rd::total_loss(l_mse, l_reg, cfg.lambda);
    } else {
      loss = l_mse;
    }
  }
  const double mse = l_mse.item(), reg = l_reg.defined() ? static_cast<double>(l_reg.item()) : 0.0;
  const double total = loss.item();
  if (!std::isfinite(total) || !std::isfinite(mse) || !std::isfinite(reg))
    abort_non_finite(batch, stage, state.iteration, mse, reg, hooks);

  const auto grads = tape.backward(loss);
  auto params = state.model.parameters();
  if (cfg.freeze_warp)
    std::erase_if(params, [](const auto& p) { return p.name.rfind("warp.", 0) == 0; });
  adam_step(params, grads, state.adam, lr);
  return {state.iteration, stage, mse, reg, rd::total_loss(mse, reg, stage == rd::Stage::Joint ? cfg.lambda : 0.0).total,
          0.0};
}

void emit(const LogRecord& record, const RunHooks& hooks) {
  if (hooks.log) *hooks.log << to_json_line(record) << '\n' << std::flush;
  if (hooks.on_log) hooks.on_log(record);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

template <typename Real>
TrainState<Real> train_base(const std::vector<io::Scene>& scenes, const TrainConfig& config, const RunHooks& hooks) {
  config.validate();
  if (scenes.size() < 2) throw std::invalid_argument("base training needs at least two scenes");
  for (const auto& s : scenes) {
    if (s.size() < config.n_references + 1)
      throw std::invalid_argument("scene " + s.id + " has " + std::to_string(s.size()) + " frames; " +
                                  std::to_string(config.n_references) + " references need at least " +
                                  std::to_string(config.n_references + 1));
    if (s.track.dim != config.model.condition_dim)
      throw std::invalid_argument("scene " + s.id + " has condition dimension " + std::to_string(s.track.dim) +
                                  ", the model expects " + std::to_string(config.model.condition_dim));
  }

  TrainState<Real> state(config);
  const std::int64_t total = config.coarse_iters + config.joint_iters;
  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t it = 0; it < total; ++it) {
    const auto stage = it < config.coarse_iters ? rd::Stage::Coarse : rd::Stage::Joint;
    Batch batch;
    batch.scene = &scenes[static_cast<std::size_t>(uniform(state.sampler, static_cast<std::int64_t>(scenes.size())))];
    const std::int64_t frames = batch.scene->size();
    batch.target = uniform(state.sampler, frames);
    // n distinct references from the other frames (partial Fisher-Yates).
    std::vector<std::int64_t> pool;
    for (std::int64_t f = 0; f < frames; ++f)
      if (f != batch.target) pool.push_back(f);
    for (int k = 0; k < config.n_references; ++k) {
      const auto j = k + uniform(state.sampler, static_cast<std::int64_t>(pool.size()) - k);
      std::swap(pool[k], pool[j]);
      batch.references.push_back(pool[k]);
    }
    batch.pixels = random_pixels(state.sampler, *batch.scene, config.rays);
    auto record = take_step(state, batch, stage, decayed_lr(config.lr_start, config.lr_end, it, total), hooks);
    ++state.iteration;
    if (it % config.log_every == 0 || it + 1 == total) {
      record.wall_ms = elapsed_ms(start);
      emit(record, hooks);
    }
  }
  return state;
}

template <typename Real>
TrainState<Real> finetune(const TrainState<Real>& base, const io::Scene& clip, const TrainConfig& config,
                          const RunHooks& hooks) {
  TrainConfig cfg = config;
  cfg.model = base.config.model;
  cfg.validate();
  const auto references = first_references(clip, cfg.n_references);
  std::vector<std::int64_t> targets;
  for (auto f : training_frames(clip))
    if (std::find(references.begin(), references.end(), f) == references.end()) targets.push_back(f);
  if (targets.empty())
    throw std::invalid_argument("clip " + clip.id + " needs at least " + std::to_string(cfg.n_references + 1) +
                                " training frames");
  if (clip.track.dim != cfg.model.condition_dim)
    throw std::invalid_argument("clip " + clip.id + " has condition dimension " + std::to_string(clip.track.dim) +
                                ", the model expects " + std::to_string(cfg.model.condition_dim));

  TrainState<Real> state(cfg);
  state.model = base.model.clone();
  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t it = 0; it < cfg.finetune_iters; ++it) {
    Batch batch{&clip, targets[static_cast<std::size_t>(uniform(state.sampler, static_cast<std::int64_t>(targets.size())))],
                references, {}};
    batch.pixels = random_pixels(state.sampler, clip, cfg.rays);
    auto record = take_step(state, batch, rd::Stage::Joint,
                            decayed_lr(cfg.lr_start, cfg.lr_end, it, cfg.finetune_iters), hooks);
    ++state.iteration;
    if (it % cfg.log_every == 0 || it + 1 == cfg.finetune_iters) {
      record.wall_ms = elapsed_ms(start);
      emit(record, hooks);
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Persistence

template <typename Real>
void save_state(const std::filesystem::path& path, const TrainState<Real>& state) {
  io::Checkpoint<Real> ckpt;
  json meta = {{"train", config_tree(state.config)}, {"iteration", state.iteration}};
  json steps = json::object();
  ckpt.tensors = state.model.parameters();
  for (const auto& [name, slot] : state.adam.slots) {
    const std::int64_t n = static_cast<std::int64_t>(slot.m.size());
    ckpt.tensors.push_back({"adam.m." + name, dm::Tensor<Real>({n}, slot.m)});
    ckpt.tensors.push_back({"adam.v." + name, dm::Tensor<Real>({n}, slot.v)});
    steps[name] = slot.step;
  }
  meta["adam_steps"] = steps;
  ckpt.config_json = meta.dump();
  std::ostringstream rng;
  rng << state.sampler;
  ckpt.rng_state = rng.str();
  io::save_checkpoint(path, ckpt);
}

template <typename Real>
TrainState<Real> load_state(const std::filesystem::path& path) {
  auto ckpt = io::load_checkpoint<Real>(path);
  json meta;
  try {
    meta = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw io::DataError(io::ErrorCode::CorruptTable, path.string() + ": configuration snapshot: " + e.what());
  }
  TrainConfig config;
  try {
    config = overlay_tree(TrainConfig{}, meta.at("train"));
  } catch (const std::exception& e) {
    throw io::DataError(io::ErrorCode::CorruptTable, path.string() + ": configuration snapshot: " + e.what());
  }
  TrainState<Real> state(config);
  try {
    state.model.assign(ckpt.tensors);
  } catch (const std::invalid_argument& e) {
    throw io::DataError(io::ErrorCode::CorruptTable, path.string() + ": " + e.what());
  }
  state.iteration = meta.value("iteration", std::int64_t{0});
  std::unordered_map<std::string, const dm::Tensor<Real>*> by_name;
  for (const auto& t : ckpt.tensors) by_name.emplace(t.name, &t.tensor);
  if (meta.contains("adam_steps")) {
    for (const auto& item : meta.at("adam_steps").items()) {
      const auto m = by_name.find("adam.m." + item.key()), v = by_name.find("adam.v." + item.key());
      if (m == by_name.end() || v == by_name.end())
        throw io::DataError(io::ErrorCode::CorruptTable, path.string() + ": missing moments for " + item.key());
      auto& slot = state.adam.slots[item.key()];
      slot.m.assign(m->second->data().begin(), m->second->data().end());
      slot.v.assign(v->second->data().begin(), v->second->data().end());
      slot.step = item.value().get<std::int64_t>();
    }
  }
  std::istringstream rng(ckpt.rng_state);
  rng >> state.sampler;
  if (!rng) throw io::DataError(io::ErrorCode::CorruptTable, path.string() + ": unreadable RNG state");
  return state;
}

template <typename Real>
std::uint64_t parameter_hash(const dm::ParamList<Real>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    mix(p.tensor.data().data(), p.tensor.data().size_bytes());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

template <typename Real>
io::Image render_scene_frame(const rd::Model<Real>& model, const io::Scene& scene, std::int64_t frame,
                             int n_references, const rd::RenderSettings& settings) {
  if (frame < 0 || frame >= scene.size())
    throw std::invalid_argument("frame " + std::to_string(frame) + " is outside scene " + scene.id);
  const auto references = first_references(scene, n_references);
  const auto refs = rd::prepare_references(model, scene, references);
  const auto& camera = scene.frames[static_cast<std::size_t>(frame)];
  const auto cond = model.filter.filter(scene.track, camera.condition_index, model.config.filter_window);
  return rd::render_frame(model, camera, refs, cond, rd::bounds_of(scene), settings);
}

template <typename Real>
std::vector<FrameScore> evaluate(const rd::Model<Real>& model, const io::Scene& scene,
                                 const std::vector<std::int64_t>& frames, int n_references,
                                 const rd::RenderSettings& settings) {
  std::vector<FrameScore> scores;
  for (auto f : frames) {
    const auto image = render_scene_frame(model, scene, f, n_references, settings);
    const auto& truth = scene.frames[static_cast<std::size_t>(f)].image;
    scores.push_back({f, io::psnr(image, truth), io::ssim(image, truth)});
  }
  return scores;
}

#define DFRF_INSTANTIATE_TRAINING(Real)                                                                             \
  template struct TrainState<Real>;                                                                                 \
  template TrainState<Real> train_base(const std::vector<io::Scene>&, const TrainConfig&, const RunHooks&);         \
  template TrainState<Real> finetune(const TrainState<Real>&, const io::Scene&, const TrainConfig&,                 \
                                     const RunHooks&);                                                              \
  template void save_state(const std::filesystem::path&, const TrainState<Real>&);                                  \
  template TrainState<Real> load_state(const std::filesystem::path&);                                               \
  template std::uint64_t parameter_hash(const dm::ParamList<Real>&);                                                \
  template io::Image render_scene_frame(const rd::Model<Real>&, const io::Scene&, std::int64_t, int,                \
                                        const rd::RenderSettings&);                                                 \
  template std::vector<FrameScore> evaluate(const rd::Model<Real>&, const io::Scene&, const std::vector<std::int64_t>&, \
                                            int, const rd::RenderSettings&);

DFRF_INSTANTIATE_TRAINING(float)
DFRF_INSTANTIATE_TRAINING(double)

}  // namespace dfrf::training
