#include <gtest/gtest.h>
#include <png.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>

#include "rcn/data.hpp"

using namespace rcn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("rcn_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool bit_identical(const Frame& a, const Frame& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

double distance(const Frame& a, const Frame& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

}  // namespace

TEST(Load, EmptyRootIsEmptyDataset) {
  TempDir dir("empty");
  const auto d = load_dataset(dir.path, 32, 16);
  EXPECT_TRUE(d.samples.empty());
  EXPECT_TRUE(d.manifest.entries.empty());
  EXPECT_THROW(load_dataset(dir.path / "missing", 32, 16), DataError);
}

TEST(Load, CountsSequencesAndFrames) {
  TempDir dir("counts");
  write_frames(synth_generate(2, 5, 32, 16, 1), dir.path);
  const auto d = load_dataset(dir.path, 32, 16);
  ASSERT_EQ(d.samples.size(), 4u);
  std::size_t frames = 0;
  for (const auto& s : d.samples) frames += s.length();
  EXPECT_EQ(frames, 20u);
  EXPECT_EQ(d.persons(), (std::vector<std::string>{"p000", "p001"}));
}

TEST(Load, FramesOrderedByNumericIndex) {
  TempDir dir("order");
  const fs::path cam_a = dir.path / "x" / "cam_a", cam_b = dir.path / "x" / "cam_b";
  fs::create_directories(cam_a);
  fs::create_directories(cam_b);
  for (int i : {10, 2, 1}) {
    write_ppm(cam_a / ("f" + std::to_string(i) + ".ppm"), Frame({3, 4, 4}, float(i) / 255.0f));
  }
  write_ppm(cam_b / "f0.ppm", Frame({3, 4, 4}));
  const auto d = load_dataset(dir.path, 4, 4);
  const auto* s = d.find("x", Camera::kA);
  ASSERT_NE(s, nullptr);
  ASSERT_EQ(s->length(), 3u);
  EXPECT_FLOAT_EQ(s->frames[0][0], 1 / 255.0f);
  EXPECT_FLOAT_EQ(s->frames[1][0], 2 / 255.0f);
  EXPECT_FLOAT_EQ(s->frames[2][0], 10 / 255.0f);
}

TEST(Load, MissingCameraNamesOffender) {
  TempDir dir("coverage");
  fs::create_directories(dir.path / "lonely" / "cam_a");
  write_ppm(dir.path / "lonely" / "cam_a" / "0.ppm", Frame({3, 4, 4}));
  try {
    load_dataset(dir.path, 4, 4);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST(Load, FrameLayoutRoundTripIsBitIdentical) {
  TempDir dir("roundtrip");
  const auto data = synth_generate(3, 4, 32, 16, 2);
  write_frames(data, dir.path);
  const auto back = load_dataset(dir.path, 32, 16);
  ASSERT_EQ(back.samples.size(), data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].person_id, data.samples[i].person_id);
    EXPECT_EQ(back.samples[i].camera, data.samples[i].camera);
    for (std::size_t t = 0; t < data.samples[i].length(); ++t)
      EXPECT_TRUE(bit_identical(back.samples[i].frames[t], data.samples[i].frames[t]));
  }
}

TEST(Load, PackedLayoutRoundTripIsBitIdentical) {
  TempDir dir("packed");
  const auto data = synth_generate(2, 3, 16, 8, 3);
  write_packed(data, dir.path);
  const auto back = load_dataset(dir.path, 16, 8);
  ASSERT_EQ(back.samples.size(), data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    for (std::size_t t = 0; t < data.samples[i].length(); ++t)
      EXPECT_TRUE(bit_identical(back.samples[i].frames[t], data.samples[i].frames[t]));
}

TEST(Load, PngFramesAreReadAndResized) {
  TempDir dir("png");
  for (const char* cam : {"cam_a", "cam_b"}) {
    fs::create_directories(dir.path / "p" / cam);
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = 8;
    img.height = 6;
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(8 * 6 * 3, 51);
    const auto file = (dir.path / "p" / cam / "frame_00000.png").string();
    ASSERT_TRUE(png_image_write_to_file(&img, file.c_str(), 0, px.data(), 0, nullptr));
  }
  const auto d = load_dataset(dir.path, 12, 4);
  ASSERT_EQ(d.samples.size(), 2u);
  const auto& f = d.samples[0].frames[0];
  EXPECT_EQ(f.shape(), (Shape{3, 12, 4}));
  for (float v : f.data()) EXPECT_FLOAT_EQ(v, 0.2f);
}

TEST(Resize, SameSizeIsIdentityAndConstantsStayConstant) {
  Frame f({3, 5, 7}, 0.25f);
  EXPECT_TRUE(resize_bilinear(f, 5, 7).same(f));
  const Frame r = resize_bilinear(f, 9, 3);
  EXPECT_EQ(r.shape(), (Shape{3, 9, 3}));
  for (float v : r.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth_generate(3, 4, 16, 8, 9);
  const auto b = synth_generate(3, 4, 16, 8, 9);
  const auto c = synth_generate(3, 4, 16, 8, 10);
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_TRUE(bit_identical(a.samples[i].frames[t], b.samples[i].frames[t]));
      differs = differs || !bit_identical(a.samples[i].frames[t], c.samples[i].frames[t]);
    }
  EXPECT_TRUE(differs);
}

TEST(Synth, InterPersonDistanceExceedsCrossCameraDistance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = synth_generate(2, 10, 32, 16, seed);
    double intra = 0, inter = 0;
    for (std::size_t t = 0; t < 10; ++t) {
      intra += distance(d.find("p000", Camera::kA)->frames[t], d.find("p000", Camera::kB)->frames[t]);
      inter += distance(d.find("p000", Camera::kA)->frames[t], d.find("p001", Camera::kB)->frames[t]);
    }
    EXPECT_GT(inter, intra) << "seed " << seed;
  }
}

TEST(Split, SizesFollowFloorRule) {
  std::vector<std::string> persons;
  for (int i = 0; i < 300; ++i) persons.push_back("id" + std::to_string(1000 + i));
  const auto s = split_identities(persons, 0.5, 1);
  EXPECT_EQ(s.train.size(), 150u);
  EXPECT_EQ(s.test.size(), 150u);
  const auto three = split_identities({"a", "b", "c"}, 0.5, 1);
  EXPECT_EQ(three.train.size(), 1u);
  EXPECT_EQ(three.test.size(), 2u);
  EXPECT_THROW(split_identities({"a"}, 0.5, 1), DataError);
}

TEST(Split, DeterministicAndDisjoint) {
  std::vector<std::string> persons;
  for (int i = 0; i < 20; ++i) persons.push_back("p" + std::to_string(i));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = split_identities(persons, 0.5, seed);
    const auto b = split_identities(persons, 0.5, seed);
    EXPECT_EQ(a.train, b.train);
    std::set<std::string> all(a.train.begin(), a.train.end());
    for (const auto& id : a.test) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), persons.size());
  }
}

TEST(Subsequence, WrapsAndStartRange) {
  std::vector<Frame> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(Frame({1, 1, 1}, float(i)));
  const auto s = subsequence(frames, 2, 5);
  const float expect[] = {2, 0, 1, 2, 0};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s[i][0], expect[i]);
  EXPECT_EQ(max_start(25, 20), 5u);
  EXPECT_EQ(max_start(23, 20), 3u);
  EXPECT_EQ(max_start(10, 20), 0u);
}

TEST(Augment, MirrorIsInvolutionAndZeroShiftIsIdentity) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> d(0, 1);
  Frame f({3, 8, 5});
  for (auto& v : f.data()) v = d(rng);
  const Augmentation flip{true, 0, 0};
  EXPECT_TRUE(bit_identical(augment_frame(augment_frame(f, flip), flip), f));
  EXPECT_TRUE(bit_identical(augment_frame(f, Augmentation{}), f));
  const auto shifted = augment_frame(f, Augmentation{false, 1, -2});
  EXPECT_EQ(shifted[0 * 5 + 2], f[1 * 5 + 0]);
  EXPECT_EQ(shifted[0], 0.0f);
}

TEST(Augment, WholeSequenceSharesOneCondition) {
  std::vector<Frame> frames(4, Frame({3, 6, 4}));
  for (std::size_t t = 0; t < 4; ++t) frames[t][t] = 1.0f;
  const Augmentation a{true, 0, 1};
  const auto out = augment(frames, a);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_TRUE(bit_identical(out[t], augment_frame(frames[t], a)));
}
