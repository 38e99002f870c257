// dfrf: data generation, base training, fine-tuning, rendering, evaluation
// and gradient checks from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <unistd.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dfrf/dataio/checkpoint.hpp"
#include "dfrf/dataio/errors.hpp"
#include "dfrf/dataio/metrics.hpp"
#include "dfrf/dataio/synthetic.hpp"
#include "dfrf/runtime.hpp"
#include "dfrf/training/trainer.hpp"
#include "dfrf/verify/gradsuites.hpp"

namespace fs = std::filesystem;
namespace io = dfrf::dataio;
namespace rd = dfrf::renderer;
namespace tr = dfrf::training;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Collects a command's outputs in a sibling directory and moves them under
// --out only once the command has succeeded, so a failure leaves nothing
// behind.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path out) : out_(normalise(std::move(out))) {
    staging_ = out_.parent_path() / ("." + out_.filename().string() + ".partial-" + std::to_string(::getpid()));
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~StagedOutput() {
    std::error_code ec;
    if (!committed_) fs::remove_all(staging_, ec);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  fs::path operator/(const std::string& name) const { return staging_ / name; }
  const fs::path& dir() const { return staging_; }

  void commit() {
    fs::create_directories(out_);
    for (const auto& entry : fs::directory_iterator(staging_)) {
      const auto target = out_ / entry.path().filename();
      fs::remove_all(target);
      fs::rename(entry.path(), target);
    }
    fs::remove_all(staging_);
    committed_ = true;
  }

 private:
  static fs::path normalise(fs::path p) {
    p = fs::absolute(p).lexically_normal();
    if (p.filename().empty()) p = p.parent_path();
    return p;
  }
  fs::path out_, staging_;
  bool committed_ = false;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw io::DataError(io::ErrorCode::MissingFile, "cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw io::DataError(io::ErrorCode::WriteFailed, "cannot write " + path.string());
}

// "model.field.width=64" -> {"model": {"field": {"width": 64}}}. Values
// parse as JSON where possible, so strings need no quoting.
json override_tree(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json tree = json::object();
  json* at = &tree;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1)
    at = &(*at)[key.substr(start, dot - start)];
  (*at)[key.substr(start)] = value;
  return tree;
}

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> refs;
  std::optional<std::int64_t> rays;
  std::optional<int> samples;
  std::optional<std::string> profile;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON training config overlaid on the defaults")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override one config key, e.g. model.field.width=64 (repeatable)");
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--refs", refs, "reference frames per view (default 4)");
    cmd->add_option("--rays", rays, "rays per training step");
    cmd->add_option("--samples", samples, "samples per ray");
    cmd->add_option("--profile", profile, "numeric profile")->check(CLI::IsMember({"f32", "f64"}));
  }

  // Precedence: defaults < config file < --set < named flags.
  tr::TrainConfig resolve(const tr::TrainConfig& base) const {
    tr::TrainConfig c = base;
    if (!config_file.empty()) c = tr::overlay_json(c, read_text(config_file));
    for (const auto& s : sets) c = tr::overlay_json(c, override_tree(s).dump());
    json flags = json::object();
    if (seed) flags["seed"] = *seed;
    if (refs) flags["n_references"] = *refs;
    if (rays) flags["rays"] = *rays;
    if (samples) flags["samples"] = *samples;
    if (profile) flags["profile"] = *profile;
    c = tr::overlay_json(c, flags.dump());
    c.validate();
    return c;
  }
};

std::vector<std::int64_t> parse_frames(const std::string& spec, const io::Scene& scene) {
  if (spec == "held-out") return tr::held_out_frames(scene);
  if (spec == "all") {
    std::vector<std::int64_t> all(static_cast<std::size_t>(scene.size()));
    for (std::int64_t i = 0; i < scene.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::vector<std::int64_t> out;
  std::stringstream s(spec);
  for (std::string item; std::getline(s, item, ',');) {
    std::size_t used = 0;
    std::int64_t f = -1;
    try {
      f = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty()) throw UsageError("--frames: '" + item + "' is not a frame index");
    if (f < 0 || f >= scene.size())
      throw UsageError("--frames: " + std::to_string(f) + " is outside scene " + scene.id + " (" +
                       std::to_string(scene.size()) + " frames)");
    out.push_back(f);
  }
  if (out.empty()) throw UsageError("--frames is empty");
  return out;
}

// Condition-vector file: a JSON array of rows, each of the scene's
// condition dimension.
dfrf::conditioning::ConditionTrack read_conditions(const fs::path& path, std::int64_t dim) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw io::DataError(io::ErrorCode::MalformedManifest, path.string() + ": " + e.what());
  }
  if (!j.is_array() || j.empty()) throw io::DataError(io::ErrorCode::MalformedManifest, path.string() + ": expected a non-empty array of rows");
  dfrf::conditioning::ConditionTrack track;
  track.dim = dim;
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || static_cast<std::int64_t>(j[r].size()) != dim)
      throw io::DataError(io::ErrorCode::MalformedManifest,
                          path.string() + ": row " + std::to_string(r) + " must hold " + std::to_string(dim) + " numbers");
    std::vector<double> row;
    for (const auto& v : j[r]) {
      if (!v.is_number())
        throw io::DataError(io::ErrorCode::MalformedManifest, path.string() + ": row " + std::to_string(r) + " is not numeric");
      row.push_back(v.get<double>());
    }
    track.frames.push_back(std::move(row));
  }
  return track;
}

tr::RunHooks hooks_for(std::ofstream& log) {
  tr::RunHooks hooks;
  hooks.log = &log;
  hooks.on_log = [](const tr::LogRecord& r) {
    std::fprintf(stderr, "[%s] it %lld  mse %.6f  reg %.4g  total %.6f  %.1fs\n", rd::stage_name(r.stage),
                 static_cast<long long>(r.iteration), r.l_mse, r.l_reg, r.total, r.wall_ms / 1000.0);
  };
  return hooks;
}

std::string frame_png(const char* prefix, std::int64_t i) {
  char name[64];
  std::snprintf(name, sizeof name, "%s_%05lld.png", prefix, static_cast<long long>(i));
  return name;
}

// ---------------------------------------------------------------------------
// Commands

struct GenData {
  std::string out;
  io::SyntheticSpec spec;
  void attach(CLI::App* cmd) {
    cmd->add_option("--out", out, "scene directory to create")->required();
    cmd->add_option("--seed", spec.seed, "texture and condition seed");
    cmd->add_option("--frames", spec.n_frames, "frame count")->check(CLI::PositiveNumber);
    cmd->add_option("--resolution", spec.resolution, "image side in pixels")->check(CLI::PositiveNumber);
    cmd->add_option("--amplitude", spec.amplitude, "jaw opening at full signal, radians")->check(CLI::NonNegativeNumber);
    cmd->add_option("--condition-dim", spec.condition_dim, "condition vector size")->check(CLI::PositiveNumber);
    cmd->add_option("--supersample", spec.supersample, "per-axis supersampling")->check(CLI::PositiveNumber);
  }
  int run() const {
    StagedOutput staged(out);
    const auto scene = io::write_synthetic_scene(spec, staged.dir());
    staged.commit();
    std::printf("wrote scene %s (%lld frames) to %s\n", scene.id.c_str(), static_cast<long long>(scene.size()),
                out.c_str());
    return kOk;
  }
};

struct TrainBase {
  std::vector<std::string> scenes;
  std::string out;
  std::string iters;
  ConfigFlags flags;
  void attach(CLI::App* cmd) {
    cmd->add_option("--scene", scenes, "training scene directory (at least two; repeatable)")->required();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--iters", iters, "COARSE,JOINT iteration counts");
    flags.attach(cmd);
  }
  tr::TrainConfig config() const {
    auto c = flags.resolve(tr::TrainConfig{});
    if (!iters.empty()) {
      const auto comma = iters.find(',');
      if (comma == std::string::npos) throw UsageError("--iters for train-base is COARSE,JOINT");
      try {
        c.coarse_iters = std::stoll(iters.substr(0, comma));
        c.joint_iters = std::stoll(iters.substr(comma + 1));
      } catch (const std::exception&) {
        throw UsageError("--iters: cannot parse '" + iters + "'");
      }
      c.validate();
    }
    return c;
  }
  template <typename Real>
  int run(const tr::TrainConfig& c) const {
    std::vector<io::Scene> loaded;
    for (const auto& s : scenes) loaded.push_back(io::load_scene(s));
    StagedOutput staged(out);
    write_text(staged / "config.json", tr::to_json(c) + "\n");
    std::ofstream log(staged / "train_log.jsonl");
    const auto state = tr::train_base<Real>(loaded, c, hooks_for(log));
    log.close();
    tr::save_state(staged / "base.ckpt", state);
    staged.commit();
    std::printf("base checkpoint: %s\n", (fs::path(out) / "base.ckpt").c_str());
    return kOk;
  }
};

struct Finetune {
  std::string checkpoint, scene, out;
  std::optional<std::int64_t> iters;
  ConfigFlags flags;
  void attach(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
    cmd->add_option("--scene", scene, "clip to fine-tune on")->required();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--iters", iters, "fine-tuning iterations");
    flags.attach(cmd);
  }
  template <typename Real>
  int run() const {
    const auto base = tr::load_state<Real>(checkpoint);
    auto c = flags.resolve(base.config);
    if (iters) c.finetune_iters = *iters;
    c.validate();
    const auto clip = io::load_scene(scene);
    StagedOutput staged(out);
    write_text(staged / "config.json", tr::to_json(c) + "\n");
    std::ofstream log(staged / "finetune_log.jsonl");
    const auto state = tr::finetune<Real>(base, clip, c, hooks_for(log));
    log.close();
    tr::save_state(staged / "finetuned.ckpt", state);
    staged.commit();
    std::printf("fine-tuned checkpoint: %s\n", (fs::path(out) / "finetuned.ckpt").c_str());
    return kOk;
  }
};

struct RenderFlags {
  std::optional<int> refs;
  std::optional<int> samples;
  std::int64_t chunk = 4096;
  bool zero_density = false;
  void attach(CLI::App* cmd) {
    cmd->add_option("--refs", refs, "reference frames (default 4)")->check(CLI::PositiveNumber);
    cmd->add_option("--samples", samples, "samples per ray (default: the checkpoint's)")->check(CLI::Range(2, 4096));
    cmd->add_option("--chunk", chunk, "rays per evaluation chunk")->check(CLI::PositiveNumber);
    cmd->add_flag("--zero-density", zero_density, "render with the density head forced to zero (diagnostic)");
  }
  template <typename Real>
  rd::Model<Real> model(const tr::TrainState<Real>& state) const {
    auto m = state.model.clone();
    if (zero_density) m.zero_density();
    return m;
  }
  int references(const tr::TrainConfig& c) const { return refs.value_or(c.n_references); }
  rd::RenderSettings settings(const tr::TrainConfig& c) const {
    rd::RenderSettings s;
    s.samples = samples.value_or(c.samples);
    s.chunk = chunk;
    return s;
  }
};

struct Render {
  std::string checkpoint, scene, out, frames = "held-out", conditions;
  std::int64_t camera = 0;
  RenderFlags flags;
  void attach(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    cmd->add_option("--scene", scene, "scene supplying cameras, references and conditions")->required();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--frames", frames, "comma-separated indices, 'held-out' or 'all'");
    cmd->add_option("--conditions", conditions, "JSON array of condition vectors to drive the scene with")
        ->check(CLI::ExistingFile);
    cmd->add_option("--camera-frame", camera, "camera used with --conditions");
    flags.attach(cmd);
  }
  template <typename Real>
  int run() const {
    const auto state = tr::load_state<Real>(checkpoint);
    const auto s = io::load_scene(scene);
    const auto model = flags.model(state);
    const auto settings = flags.settings(state.config);
    const int n = flags.references(state.config);
    std::vector<std::pair<std::string, io::Image>> images;
    if (conditions.empty()) {
      for (auto f : parse_frames(frames, s))
        images.emplace_back(frame_png("frame", f), tr::render_scene_frame(model, s, f, n, settings));
    } else {
      if (camera < 0 || camera >= s.size()) throw UsageError("--camera-frame is outside the scene");
      const auto track = read_conditions(conditions, s.track.dim);
      const auto refs = rd::prepare_references(model, s, tr::first_references(s, n));
      const auto& cam = s.frames[static_cast<std::size_t>(camera)];
      for (std::int64_t t = 0; t < track.size(); ++t) {
        const auto cond = model.filter.filter(track, t, model.config.filter_window);
        images.emplace_back(frame_png("driven", t), rd::render_frame(model, cam, refs, cond, rd::bounds_of(s), settings));
      }
    }
    StagedOutput staged(out);
    for (const auto& [name, image] : images) io::write_png(staged / name, image);
    staged.commit();
    std::printf("rendered %zu frames to %s\n", images.size(), out.c_str());
    return kOk;
  }
};

struct Eval {
  std::string scene, out, frames = "held-out", renders, checkpoint, against = "images";
  RenderFlags flags;
  void attach(CLI::App* cmd) {
    cmd->add_option("--scene", scene, "scene with ground truth")->required();
    cmd->add_option("--out", out, "output directory for metrics.csv")->required();
    cmd->add_option("--frames", frames, "comma-separated indices, 'held-out' or 'all'");
    auto* r = cmd->add_option("--renders", renders, "directory of frame_%05d.png renders")->check(CLI::ExistingDirectory);
    auto* c = cmd->add_option("--checkpoint", checkpoint, "render with this checkpoint instead");
    r->excludes(c);
    cmd->add_option("--against", against, "ground truth: scene images or backgrounds")
        ->check(CLI::IsMember({"images", "backgrounds"}));
    flags.attach(cmd);
  }
  template <typename Real>
  int run() const {
    const auto s = io::load_scene(scene);
    const auto list = parse_frames(frames, s);
    std::vector<io::Image> rendered;
    if (!renders.empty()) {
      for (auto f : list) rendered.push_back(io::read_png(fs::path(renders) / frame_png("frame", f)));
    } else {
      const auto state = tr::load_state<Real>(checkpoint);
      const auto model = flags.model(state);
      for (auto f : list)
        rendered.push_back(tr::render_scene_frame(model, s, f, flags.references(state.config), flags.settings(state.config)));
    }
    std::ostringstream table;
    table << "frame,psnr,ssim\n";
    double sum_p = 0, sum_s = 0;
    char line[128];
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& cam = s.frames[static_cast<std::size_t>(list[i])];
      const auto& truth = against == "images" ? cam.image : cam.background;
      if (!rendered[i].same_shape(truth))
        throw io::DataError(io::ErrorCode::BadImage, "render of frame " + std::to_string(list[i]) + " has the wrong size");
      const double p = io::psnr(rendered[i], truth), q = io::ssim(rendered[i], truth);
      sum_p += p;
      sum_s += q;
      std::snprintf(line, sizeof line, "%lld,%.4f,%.6f\n", static_cast<long long>(list[i]), p, q);
      table << line;
    }
    const double count = static_cast<double>(list.size());
    std::snprintf(line, sizeof line, "mean,%.4f,%.6f\n", sum_p / count, sum_s / count);
    table << line;
    StagedOutput staged(out);
    write_text(staged / "metrics.csv", table.str());
    staged.commit();
    std::cout << table.str();
    return kOk;
  }
};

struct GradCheck {
  std::string out;
  void attach(CLI::App* cmd) { cmd->add_option("--out", out, "also write gradcheck.csv here"); }
  int run() const {
    std::ostringstream table;
    table << "suite,max_rel_error,components,seconds,status\n";
    bool ok = true;
    for (const auto& suite : dfrf::verify::gradient_suites()) {
      const auto r = suite.run();
      ok = ok && r.passed();
      char line[256];
      std::snprintf(line, sizeof line, "%s,%.3e,%lld,%.2f,%s\n", r.name.c_str(), r.max_rel_error,
                    static_cast<long long>(r.components), r.seconds, r.passed() ? "pass" : "FAIL");
      table << line;
      std::cout << line << std::flush;
      if (!r.passed()) std::cerr << "  worst component: " << r.worst << "\n";
    }
    if (!out.empty()) {
      StagedOutput staged(out);
      write_text(staged / "gradcheck.csv", table.str());
      staged.commit();
    }
    return ok ? kOk : kNumerical;
  }
};

template <typename F>
int with_profile(dfrf::diffmath::Profile p, F&& body) {
  return p == dfrf::diffmath::Profile::F64 ? body(double{}) : body(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dfrf: few-shot conditioned dynamic radiance fields"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GenData gen;
  TrainBase train;
  Finetune tune;
  Render render;
  Eval eval;
  GradCheck grad;
  auto* c_gen = app.add_subcommand("gen-data", "write a procedural talking-head scene");
  gen.attach(c_gen);
  auto* c_train = app.add_subcommand("train-base", "coarse then joint training across scenes");
  train.attach(c_train);
  auto* c_tune = app.add_subcommand("finetune", "few-shot fine-tuning of a base checkpoint on one clip");
  tune.attach(c_tune);
  auto* c_render = app.add_subcommand("render", "render frames to PNG");
  render.attach(c_render);
  auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM per frame plus means");
  eval.attach(c_eval);
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference check of every gradient suite");
  grad.attach(c_grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    dfrf::configure_runtime();
    if (c_gen->parsed()) return gen.run();
    if (c_train->parsed()) {
      const auto config = train.config();
      return with_profile(config.profile, [&](auto r) { return train.run<decltype(r)>(config); });
    }
    if (c_tune->parsed())
      return with_profile(io::checkpoint_profile(tune.checkpoint), [&](auto r) { return tune.run<decltype(r)>(); });
    if (c_render->parsed())
      return with_profile(io::checkpoint_profile(render.checkpoint), [&](auto r) { return render.run<decltype(r)>(); });
    if (c_eval->parsed()) {
      if (eval.renders.empty() == eval.checkpoint.empty()) throw UsageError("eval needs --renders or --checkpoint");
      const auto p = eval.checkpoint.empty() ? dfrf::diffmath::Profile::F64 : io::checkpoint_profile(eval.checkpoint);
      return with_profile(p, [&](auto r) { return eval.run<decltype(r)>(); });
    }
    if (c_grad->parsed()) return grad.run();
  } catch (const UsageError& e) {
    std::cerr << "dfrf: " << e.what() << "\n";
    return kUsage;
  } catch (const dfrf::diffmath::ShapeError& e) {
    std::cerr << "dfrf: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "dfrf: " << e.what() << "\n";
    return kUsage;
  } catch (const io::DataError& e) {
    std::cerr << "dfrf: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "dfrf: " << e.what() << "\n";
    return kData;
  } catch (const tr::NumericalError& e) {
    std::cerr << "dfrf: numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kUsage;
}
