#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "dfrf/dataio/checkpoint.hpp"
#include "dfrf/dataio/errors.hpp"
#include "dfrf/dataio/metrics.hpp"
#include "dfrf/dataio/synthetic.hpp"

namespace io = dfrf::dataio;
namespace dm = dfrf::diffmath;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dfrf_dataio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

io::SyntheticSpec small_spec(std::uint64_t seed = 5) {
  io::SyntheticSpec s;
  s.seed = seed;
  s.n_frames = 8;
  s.resolution = 16;
  s.condition_dim = 6;
  return s;
}

template <typename Real>
io::Checkpoint<Real> random_checkpoint(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  io::Checkpoint<Real> c;
  c.config_json = R"({"layers": 4})";
  std::ostringstream state;
  state << rng;
  c.rng_state = state.str();
  for (const dm::Shape& shape : {dm::Shape{3, 4}, dm::Shape{7}, dm::Shape{2, 2, 2, 2}, dm::Shape{}}) {
    std::vector<Real> v(static_cast<std::size_t>(dm::numel(shape)));
    for (auto& x : v) x = static_cast<Real>(g(rng));
    c.tensors.push_back({"t" + std::to_string(c.tensors.size()), dm::Tensor<Real>(shape, std::move(v))});
  }
  return c;
}

template <typename Fn>
io::ErrorCode error_of(Fn&& fn) {
  try {
    fn();
  } catch (const io::DataError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no DataError raised";
  return io::ErrorCode::WriteFailed;
}

}  // namespace

TEST(Png, RoundTripIsExactOnQuantisedValues) {
  const auto dir = scratch("png");
  io::Image img(5, 7);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<double>((i * 37) % 256) / 255.0;
  io::write_png(dir / "a.png", img);
  const auto back = io::read_png(dir / "a.png");
  EXPECT_EQ(back.height, 5);
  EXPECT_EQ(back.width, 7);
  EXPECT_EQ(back.rgb, img.rgb);
}

TEST(Png, QuantisationRoundsHalfUpAndClamps) {
  EXPECT_EQ(io::quantize(0.0), 0);
  EXPECT_EQ(io::quantize(1.0), 255);
  EXPECT_EQ(io::quantize(-0.3), 0);
  EXPECT_EQ(io::quantize(1.7), 255);
  EXPECT_EQ(io::quantize(0.5 / 255.0), 1);
  EXPECT_EQ(io::quantize(0.49 / 255.0), 0);
}

TEST(Png, MissingFileIsReported) {
  EXPECT_EQ(error_of([] { io::read_png("/nonexistent/x.png"); }), io::ErrorCode::MissingFile);
}

TEST(Scene, GenerateAndLoadRoundTrip) {
  const auto dir = scratch("scene");
  const auto spec = small_spec();
  const auto made = io::write_synthetic_scene(spec, dir);
  const auto loaded = io::load_scene(dir);
  ASSERT_EQ(loaded.size(), spec.n_frames);
  EXPECT_EQ(loaded.height, 16);
  EXPECT_EQ(loaded.z_near, made.z_near);
  EXPECT_EQ(loaded.z_far, made.z_far);
  for (std::int64_t f = 0; f < spec.n_frames; ++f) {
    const auto& a = made.frames[f];
    const auto& b = loaded.frames[f];
    EXPECT_EQ(b.image.rgb, a.image.rgb);
    EXPECT_EQ(b.background.rgb, a.background.rgb);
    EXPECT_EQ(loaded.track.frames[b.condition_index], made.track.frames[a.condition_index]);
    EXPECT_EQ(b.K.fx, a.K.fx);
    EXPECT_EQ(b.K.cx, a.K.cx);
    // Loaded poses reproduce the analytic camera centre.
    const auto eye = io::synthetic_frame_state(spec, f).eye;
    EXPECT_LE((b.pose.camera_center() - eye).norm(), 1e-9) << "frame " << f;
    EXPECT_TRUE(b.pose.R == a.pose.R && b.pose.T == a.pose.T);
  }
}

TEST(Scene, ConditionChannelZeroIsTheSignal) {
  const auto spec = small_spec(9);
  const auto scene = io::generate_synthetic_scene(spec);
  for (std::int64_t f = 0; f < spec.n_frames; ++f) {
    const double s = io::synthetic_frame_state(spec, f).signal;
    EXPECT_EQ(scene.track.frames[scene.frames[f].condition_index][0], s);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Scene, StaticSceneFramesAreIdentical) {
  auto spec = small_spec(3);
  spec.amplitude = 0.0;
  spec.orbit_degrees = 0.0;
  const auto scene = io::generate_synthetic_scene(spec);
  for (std::int64_t f = 1; f < spec.n_frames; ++f) EXPECT_EQ(scene.frames[f].image.rgb, scene.frames[0].image.rgb);
}

TEST(Scene, DeformationChangesFrames) {
  const auto scene = io::generate_synthetic_scene(small_spec(3));
  EXPECT_NE(scene.frames[1].image.rgb, scene.frames[0].image.rgb);
}

TEST(Scene, SameSeedGivesByteIdenticalDataset) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  io::write_synthetic_scene(small_spec(4), a);
  io::write_synthetic_scene(small_spec(4), b);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 1u + 2u * 8u);
}

TEST(Scene, DifferentSeedsGiveDifferentIdentities) {
  const auto a = io::generate_synthetic_scene(small_spec(1));
  const auto b = io::generate_synthetic_scene(small_spec(2));
  EXPECT_NE(a.frames[0].image.rgb, b.frames[0].image.rgb);
}

TEST(Scene, NonOrthonormalRotationNamesTheFrame) {
  const auto dir = scratch("badpose");
  auto scene = io::generate_synthetic_scene(small_spec());
  scene.frames[3].pose.R(0, 0) *= 1.01;
  io::save_scene(dir, scene);
  try {
    io::load_scene(dir);
    FAIL() << "expected rejection";
  } catch (const io::DataError& e) {
    EXPECT_EQ(e.code(), io::ErrorCode::MalformedPose);
    EXPECT_NE(std::string(e.what()).find("frame 3"), std::string::npos) << e.what();
  }
}

TEST(Scene, MalformedManifestsAreRejected) {
  const auto dir = scratch("badmanifest");
  EXPECT_EQ(error_of([&] { io::load_scene(dir); }), io::ErrorCode::MissingFile);
  {
    std::ofstream(dir / "manifest") << "{ not json";
  }
  EXPECT_EQ(error_of([&] { io::load_scene(dir); }), io::ErrorCode::MalformedManifest);
  {
    std::ofstream(dir / "manifest") << R"({"scene": "x", "height": 4})";
  }
  EXPECT_EQ(error_of([&] { io::load_scene(dir); }), io::ErrorCode::MalformedManifest);
  // A listed image that does not exist.
  auto scene = io::generate_synthetic_scene(small_spec());
  io::save_scene(dir, scene);
  fs::remove(dir / "frames" / io::frame_file_name(2));
  EXPECT_EQ(error_of([&] { io::load_scene(dir); }), io::ErrorCode::MissingFile);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = scratch("ckpt");
  std::mt19937_64 rng(12);
  const auto saved64 = random_checkpoint<double>(rng);
  io::save_checkpoint(dir / "a.ckpt", saved64);
  const auto loaded64 = io::load_checkpoint<double>(dir / "a.ckpt");
  EXPECT_EQ(loaded64.config_json, saved64.config_json);
  EXPECT_EQ(loaded64.rng_state, saved64.rng_state);
  ASSERT_EQ(loaded64.tensors.size(), saved64.tensors.size());
  for (std::size_t i = 0; i < saved64.tensors.size(); ++i) {
    EXPECT_EQ(loaded64.tensors[i].name, saved64.tensors[i].name);
    EXPECT_EQ(loaded64.tensors[i].tensor.shape(), saved64.tensors[i].tensor.shape());
    const auto a = saved64.tensors[i].tensor.data(), b = loaded64.tensors[i].tensor.data();
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size_bytes()));
  }
  const auto saved32 = random_checkpoint<float>(rng);
  io::save_checkpoint(dir / "b.ckpt", saved32);
  const auto loaded32 = io::load_checkpoint<float>(dir / "b.ckpt");
  for (std::size_t i = 0; i < saved32.tensors.size(); ++i) {
    const auto a = saved32.tensors[i].tensor.data(), b = loaded32.tensors[i].tensor.data();
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size_bytes()));
  }
  EXPECT_EQ(io::checkpoint_profile(dir / "a.ckpt"), dm::Profile::F64);
  EXPECT_EQ(io::checkpoint_profile(dir / "b.ckpt"), dm::Profile::F32);
  EXPECT_FALSE(fs::exists(dir / "a.ckpt.tmp"));
  // Saving the loaded state again reproduces the file byte for byte.
  io::save_checkpoint(dir / "c.ckpt", loaded64);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "c.ckpt"));
}

TEST(Checkpoint, DistinctErrorCodes) {
  const auto dir = scratch("ckpt_err");
  std::mt19937_64 rng(13);
  io::save_checkpoint(dir / "good.ckpt", random_checkpoint<double>(rng));
  const auto bytes = slurp(dir / "good.ckpt");

  EXPECT_EQ(error_of([&] { io::load_checkpoint<double>(dir / "absent.ckpt"); }), io::ErrorCode::MissingFile);

  // Every proper truncation past the header is a corrupt table.
  for (std::size_t cut : {std::size_t{12}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    std::ofstream(dir / "cut.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(cut));
    EXPECT_EQ(error_of([&] { io::load_checkpoint<double>(dir / "cut.ckpt"); }), io::ErrorCode::CorruptTable)
        << "cut at " << cut;
  }
  try {
    io::load_checkpoint<double>(dir / "cut.ckpt");
  } catch (const io::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt table"), std::string::npos) << e.what();
  }

  auto bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
  EXPECT_EQ(error_of([&] { io::load_checkpoint<double>(dir / "magic.ckpt"); }), io::ErrorCode::BadMagic);

  bad = bytes;
  bad[4] = 2;
  std::ofstream(dir / "version.ckpt", std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
  EXPECT_EQ(error_of([&] { io::load_checkpoint<double>(dir / "version.ckpt"); }), io::ErrorCode::VersionMismatch);

  EXPECT_EQ(error_of([&] { io::load_checkpoint<float>(dir / "good.ckpt"); }), io::ErrorCode::ProfileMismatch);

  auto longer = bytes + "junk";
  std::ofstream(dir / "long.ckpt", std::ios::binary).write(longer.data(), static_cast<std::streamsize>(longer.size()));
  EXPECT_EQ(error_of([&] { io::load_checkpoint<double>(dir / "long.ckpt"); }), io::ErrorCode::CorruptTable);
}

TEST(Metrics, IdenticalImagesHitTheCap) {
  io::Image a(16, 16);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : a.rgb) v = u(rng);
  EXPECT_EQ(io::psnr(a, a), 99.0);
  EXPECT_NEAR(io::ssim(a, a), 1.0, 1e-12);
}

TEST(Metrics, ConstantOffsetGivesTwentyDecibels) {
  io::Image a(12, 12, 0.3), b(12, 12, 0.4);
  EXPECT_NEAR(io::psnr(a, b), 20.0, 1e-9);
}

TEST(Metrics, InversionIsDissimilar) {
  // Checkerboard of 0.1 / 0.9: no mid-grey, so inversion swaps the pattern.
  io::Image a(32, 32), inv(32, 32);
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = ((x / 2 + y / 2 + c) % 2) ? 0.9 : 0.1;
        a.pixel(y, x)[c] = v;
        inv.pixel(y, x)[c] = 1.0 - v;
      }
  const double s = io::ssim(a, inv);
  EXPECT_LT(s, 0.1);
  EXPECT_GE(s, -1.0);
}

TEST(Metrics, SsimIsBoundedAndSymmetric) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    io::Image a(20, 24), b(20, 24);
    for (auto& v : a.rgb) v = u(rng);
    for (std::size_t i = 0; i < b.rgb.size(); ++i) b.rgb[i] = std::clamp(a.rgb[i] + 0.3 * (u(rng) - 0.5), 0.0, 1.0);
    const double s = io::ssim(a, b);
    EXPECT_LE(s, 1.0);
    EXPECT_GE(s, -1.0);
    EXPECT_NEAR(s, io::ssim(b, a), 1e-12);
  }
}

TEST(Metrics, ShapeMismatchRejected) {
  io::Image a(16, 16), b(16, 17);
  EXPECT_THROW(io::psnr(a, b), std::invalid_argument);
  EXPECT_THROW(io::ssim(a, b), std::invalid_argument);
}
