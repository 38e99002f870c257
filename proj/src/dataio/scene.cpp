#include "dfrf/dataio/scene.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "dfrf/dataio/errors.hpp"

namespace dfrf::dataio {

namespace fs = std::filesystem;
using nlohmann::json;

std::string frame_file_name(std::int64_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "%05lld.png", static_cast<long long>(index));
  return name;
}

namespace {

std::vector<double> numbers(const json& j, std::size_t count, const std::string& what) {
  if (!j.is_array() || j.size() != count)
    throw DataError(ErrorCode::MalformedManifest, what + ": expected " + std::to_string(count) + " numbers");
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_number()) throw DataError(ErrorCode::MalformedManifest, what + ": non-numeric entry");
    out.push_back(x.get<double>());
  }
  return out;
}

const json& member(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw DataError(ErrorCode::MalformedManifest, std::string("missing key '") + key + "'");
  return j.at(key);
}

template <typename T>
T field(const json& j, const char* key) {
  const json& value = member(j, key);
  try {
    return value.get<T>();
  } catch (const json::exception& e) {
    throw DataError(ErrorCode::MalformedManifest, std::string("key '") + key + "': " + e.what());
  }
}

}  // namespace

Scene load_scene(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest";
  std::ifstream in(manifest_path);
  if (!in) throw DataError(ErrorCode::MissingFile, manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(ErrorCode::MalformedManifest, manifest_path.string() + ": " + e.what());
  }
  Scene scene;
  scene.id = field<std::string>(m, "scene");
  scene.height = field<std::int64_t>(m, "height");
  scene.width = field<std::int64_t>(m, "width");
  scene.z_near = field<double>(m, "z_near");
  scene.z_far = field<double>(m, "z_far");
  scene.world_scale = field<double>(m, "world_scale");
  scene.track.dim = field<std::int64_t>(m, "condition_dim");
  if (scene.height < 1 || scene.width < 1 || scene.track.dim < 1)
    throw DataError(ErrorCode::MalformedManifest, "non-positive image size or condition dimension");
  if (!(scene.z_near > 0 && scene.z_near < scene.z_far))
    throw DataError(ErrorCode::MalformedManifest, "need 0 < z_near < z_far");
  if (!(scene.world_scale > 0)) throw DataError(ErrorCode::MalformedManifest, "world_scale must be positive");

  const auto& frames = member(m, "frames");
  if (!frames.is_array() || frames.empty()) throw DataError(ErrorCode::MalformedManifest, "no frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const std::string tag = "frame " + std::to_string(i);
    CameraFrame frame;
    const auto k = numbers(member(f, "K"), 9, tag + " K");
    frame.K = {k[0], k[4], k[2], k[5]};
    if (!frame.K.valid() || k[1] != 0 || k[3] != 0 || k[6] != 0 || k[7] != 0 || k[8] != 1)
      throw DataError(ErrorCode::MalformedManifest, tag + ": K is not a pinhole matrix with positive focal lengths");
    const auto rt = numbers(member(f, "pose"), 12, tag + " pose");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) frame.pose.R(r, c) = rt[4 * r + c];
      frame.pose.T(r) = rt[4 * r + 3];
    }
    if (!frame.pose.is_rotation())
      throw DataError(ErrorCode::MalformedPose, tag + ": R is not a proper rotation");
    if (!frame.pose.T.allFinite()) throw DataError(ErrorCode::MalformedPose, tag + ": T is not finite");
    auto cond = numbers(member(f, "condition"), static_cast<std::size_t>(scene.track.dim), tag + " condition");
    frame.condition_index = static_cast<std::int64_t>(scene.track.frames.size());
    scene.track.frames.push_back(std::move(cond));
    frame.image = read_png(dir / field<std::string>(f, "image"));
    frame.background = read_png(dir / field<std::string>(f, "background"));
    if (frame.image.height != scene.height || frame.image.width != scene.width || !frame.image.same_shape(frame.background))
      throw DataError(ErrorCode::BadImage, tag + ": image size does not match the manifest");
    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

void save_scene(const fs::path& dir, const Scene& scene) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "backgrounds");
  json m;
  m["scene"] = scene.id;
  m["height"] = scene.height;
  m["width"] = scene.width;
  m["z_near"] = scene.z_near;
  m["z_far"] = scene.z_far;
  m["world_scale"] = scene.world_scale;
  m["condition_dim"] = scene.track.dim;
  m["frames"] = json::array();
  for (std::int64_t i = 0; i < scene.size(); ++i) {
    const auto& f = scene.frames[i];
    const std::string name = frame_file_name(i);
    write_png(dir / "frames" / name, f.image);
    write_png(dir / "backgrounds" / name, f.background);
    const auto& R = f.pose.R;
    const auto& T = f.pose.T;
    m["frames"].push_back({
        {"image", "frames/" + name},
        {"background", "backgrounds/" + name},
        {"K", {f.K.fx, 0.0, f.K.cx, 0.0, f.K.fy, f.K.cy, 0.0, 0.0, 1.0}},
        {"pose", {R(0, 0), R(0, 1), R(0, 2), T(0), R(1, 0), R(1, 1), R(1, 2), T(1), R(2, 0), R(2, 1), R(2, 2), T(2)}},
        {"condition", scene.track.frames.at(static_cast<std::size_t>(f.condition_index))},
    });
  }
  std::ofstream out(dir / "manifest");
  out << m.dump(1) << '\n';
  if (!out) throw DataError(ErrorCode::WriteFailed, (dir / "manifest").string());
}

}  // namespace dfrf::dataio
