#pragma once

// Dataset ingestion, the synthetic sequence generator, identity splits and
// sequence-level augmentation.
//
// On-disk frame layout: root/<person_id>/<cam_a|cam_b>/frame_%05d.(png|ppm).
// Packed layout: root/index.tsv (person_id, camera_id, path, frames) with one
// SQT1 tensor of shape T x 3 x H x W per sequence.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "rcn/errors.hpp"
#include "rcn/serialize.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

namespace fs = std::filesystem;

enum class Camera { kA, kB };

inline std::string camera_name(Camera c) { return c == Camera::kA ? "cam_a" : "cam_b"; }

inline Camera parse_camera(const std::string& s) {
  if (s == "cam_a") return Camera::kA;
  if (s == "cam_b") return Camera::kB;
  throw DataError("unknown camera '" + s + "' (expected cam_a or cam_b)");
}

/// Frames are float tensors [3 x H x W] with values in [0, 1].
using Frame = Tensor<float>;

struct SequenceSample {
  std::string person_id;
  Camera camera = Camera::kA;
  std::vector<Frame> frames;

  std::size_t length() const { return frames.size(); }
};

struct ManifestEntry {
  std::string person_id;
  Camera camera = Camera::kA;
  std::size_t frames = 0;
};

struct DatasetManifest {
  fs::path root;
  std::vector<ManifestEntry> entries;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SequenceSample> samples;  // sorted by (person, camera)

  /// Sorted, unique person ids.
  std::vector<std::string> persons() const {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.person_id);
    return {ids.begin(), ids.end()};
  }

  /// First sequence of `person` seen by `camera`, or nullptr.
  const SequenceSample* find(const std::string& person, Camera camera) const {
    for (const auto& s : samples)
      if (s.person_id == person && s.camera == camera) return &s;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Pixels.

inline float byte_to_unit(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

inline std::uint8_t unit_to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline Frame frame_from_rgb(const std::vector<std::uint8_t>& rgb, std::size_t h, std::size_t w) {
  Frame f(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) f[(c * h + y) * w + x] = byte_to_unit(rgb[(y * w + x) * 3 + c]);
  return f;
}

inline std::vector<std::uint8_t> frame_to_rgb(const Frame& f) {
  const std::size_t h = f.extent(1), w = f.extent(2);
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) rgb[(y * w + x) * 3 + c] = unit_to_byte(f[(c * h + y) * w + x]);
  return rgb;
}

inline void write_ppm(const fs::path& path, const Frame& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P6\n" << f.extent(2) << ' ' << f.extent(1) << "\n255\n";
  const auto rgb = frame_to_rgb(f);
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

inline Frame read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open frame " + path.string());
  const auto token = [&]() {
    std::string tok;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += ch;
    }
    return tok;
  };
  if (token() != "P6") throw DataError("not a binary PPM (P6): " + path.string());
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError("malformed PPM header: " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) throw DataError("unsupported PPM (need 8-bit, non-empty): " + path.string());
  std::vector<std::uint8_t> rgb(w * h * 3);
  if (!is.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()))) {
    throw DataError("truncated PPM: " + path.string());
  }
  return frame_from_rgb(rgb, h, w);
}

inline Frame read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return frame_from_rgb(rgb, image.height, image.width);
}

inline Frame read_frame(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".png") return read_png(path);
  throw DataError("unsupported frame format: " + path.string());
}

/// Bilinear resampling with pixel-centre alignment; same-size input is returned unchanged.
inline Frame resize_bilinear(const Frame& in, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = in.extent(0), h = in.extent(1), w = in.extent(2);
  if (h == out_h && w == out_w) return in;
  Frame out(Shape{c, out_h, out_w});
  const double sy = double(h) / double(out_h), sx = double(w) / double(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - double(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const auto at = [&](std::size_t yy, std::size_t xx) { return double(in[(ch * h + yy) * w + xx]); };
        const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                         wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        out[(ch * out_h + y) * out_w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading and writing.

namespace detail {

/// Numeric index of "frame_00012.png" -> 12, or -1 when the file is not a frame.
inline long frame_index(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext != ".png" && ext != ".ppm") return -1;
  const auto stem = p.stem().string();
  const auto digits_at = stem.find_last_not_of("0123456789");
  const auto digits = digits_at == std::string::npos ? stem : stem.substr(digits_at + 1);
  if (digits.empty()) return -1;
  return std::stol(digits);
}

inline void sort_samples(std::vector<SequenceSample>& samples) {
  std::stable_sort(samples.begin(), samples.end(), [](const SequenceSample& a, const SequenceSample& b) {
    return std::tie(a.person_id, a.camera) < std::tie(b.person_id, b.camera);
  });
}

inline DatasetManifest manifest_for(const fs::path& root, const std::vector<SequenceSample>& samples,
                                    std::size_t h, std::size_t w) {
  DatasetManifest m{root, {}, h, w};
  for (const auto& s : samples) m.entries.push_back({s.person_id, s.camera, s.frames.size()});
  return m;
}

}  // namespace detail

/// Throws DataError naming every person that lacks one of the two cameras.
inline void check_camera_coverage(const Dataset& data) {
  std::map<std::string, std::pair<bool, bool>> seen;
  for (const auto& s : data.samples) {
    auto& e = seen[s.person_id];
    (s.camera == Camera::kA ? e.first : e.second) = true;
  }
  std::string offenders;
  for (const auto& [id, cams] : seen) {
    if (!cams.first) offenders += " " + id + "(missing cam_a)";
    if (!cams.second) offenders += " " + id + "(missing cam_b)";
  }
  if (!offenders.empty()) throw DataError("every person must appear in both cameras; offenders:" + offenders);
}

inline Dataset load_packed(const fs::path& root, std::size_t height, std::size_t width) {
  std::ifstream index(root / "index.tsv");
  if (!index) throw DataError("cannot open " + (root / "index.tsv").string());
  Dataset out;
  std::string line;
  std::getline(index, line);  // header
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string person, camera, path, count;
    if (!std::getline(fields, person, '\t') || !std::getline(fields, camera, '\t') ||
        !std::getline(fields, path, '\t') || !std::getline(fields, count, '\t')) {
      throw DataError("malformed index.tsv line: " + line);
    }
    const auto packed = load_sqt<float>(root / path);
    if (packed.rank() != 4 || packed.extent(1) != 3) {
      throw DataError(path + ": expected T x 3 x H x W, got " + shape_str(packed.shape()));
    }
    const std::size_t t = packed.extent(0), h = packed.extent(2), w = packed.extent(3);
    if (std::to_string(t) != count) throw DataError(path + ": index lists " + count + " frames, file holds " + std::to_string(t));
    SequenceSample s{person, parse_camera(camera), {}};
    for (std::size_t i = 0; i < t; ++i) {
      const auto begin = packed.data().begin() + static_cast<std::ptrdiff_t>(i * 3 * h * w);
      Frame f(Shape{3, h, w}, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(3 * h * w)));
      s.frames.push_back(resize_bilinear(f, height, width));
    }
    out.samples.push_back(std::move(s));
  }
  detail::sort_samples(out.samples);
  out.manifest = detail::manifest_for(root, out.samples, height, width);
  check_camera_coverage(out);
  return out;
}

/// Loads either layout, resizing frames to height x width. Ordering is
/// lexicographic by person, then camera, then numeric frame index.
inline Dataset load_dataset(const fs::path& root, std::size_t height, std::size_t width) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  if (fs::exists(root / "index.tsv")) return load_packed(root, height, width);
  Dataset out;
  std::vector<fs::path> persons;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) persons.push_back(e.path());
  std::sort(persons.begin(), persons.end());
  for (const auto& pdir : persons) {
    for (Camera cam : {Camera::kA, Camera::kB}) {
      const fs::path cdir = pdir / camera_name(cam);
      if (!fs::is_directory(cdir)) continue;
      std::vector<std::pair<long, fs::path>> files;
      for (const auto& e : fs::directory_iterator(cdir)) {
        const long idx = detail::frame_index(e.path());
        if (idx >= 0) files.emplace_back(idx, e.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) continue;
      SequenceSample s{pdir.filename().string(), cam, {}};
      for (const auto& [idx, path] : files) s.frames.push_back(resize_bilinear(read_frame(path), height, width));
      out.samples.push_back(std::move(s));
    }
  }
  out.manifest = detail::manifest_for(root, out.samples, height, width);
  check_camera_coverage(out);
  return out;
}

inline void write_frames(const Dataset& data, const fs::path& root) {
  for (const auto& s : data.samples) {
    const fs::path dir = root / s.person_id / camera_name(s.camera);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%05zu.ppm", i);
      write_ppm(dir / name, s.frames[i]);
    }
  }
}

inline void write_packed(const Dataset& data, const fs::path& root) {
  fs::create_directories(root);
  std::ofstream index(root / "index.tsv", std::ios::binary);
  if (!index) throw DataError("cannot write " + (root / "index.tsv").string());
  index << "person_id\tcamera_id\tpath\tframes\n";
  for (const auto& s : data.samples) {
    if (s.frames.empty()) continue;
    const std::size_t h = s.frames.front().extent(1), w = s.frames.front().extent(2);
    std::vector<float> flat;
    flat.reserve(s.frames.size() * 3 * h * w);
    for (const auto& f : s.frames) flat.insert(flat.end(), f.data().begin(), f.data().end());
    const std::string file = s.person_id + "_" + camera_name(s.camera) + ".sqt";
    save_sqt(root / file, Tensor<float>(Shape{s.frames.size(), 3, h, w}, std::move(flat)));
    index << s.person_id << '\t' << camera_name(s.camera) << '\t' << file << '\t' << s.frames.size() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic identities.

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) rgb[c] = table[i][c];
}

}  // namespace detail

/// Cross-view change applied to camera b.
struct CameraShift {
  double color[3] = {0.12, -0.06, 0.05};
  double offset_fraction = 0.1;  // horizontal shift as a fraction of frame width
};

/// Builds n_persons synthetic people seen by two cameras. Each person is a
/// two-tone figure (person-specific upper and lower hues) whose horizontal
/// position oscillates with a person-specific frequency and phase. Camera b
/// applies a global colour shift and a horizontal offset. Pixel values are
/// quantised to 8 bits so the frame layout round-trips exactly.
inline Dataset synth_generate(std::size_t n_persons, std::size_t frames_per_seq, std::size_t height,
                              std::size_t width, std::uint64_t seed, const CameraShift& shift = {}) {
  if (n_persons < 2) throw ConfigError("synth_generate: need at least 2 persons");
  if (frames_per_seq == 0 || height < 4 || width < 4) throw ConfigError("synth_generate: frames and resolution must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset out;
  const double pi = std::acos(-1.0);
  for (std::size_t p = 0; p < n_persons; ++p) {
    const double hue_top = (double(p) + 0.5 * unit(rng)) / double(n_persons);
    const double hue_bottom = std::fmod(0.5 + double(p) * 0.618034 + 0.2 * unit(rng), 1.0);
    const double value_top = 0.65 + 0.3 * unit(rng);
    const double value_bottom = 0.45 + 0.3 * unit(rng);
    const double body_w = 0.35 + 0.2 * unit(rng);
    const double split = 0.45 + 0.1 * unit(rng);
    const double freq = 0.05 + 0.2 * unit(rng);
    const double phase = 2 * pi * unit(rng);
    double top[3], bottom[3];
    detail::hsv_to_rgb(hue_top, 0.85, value_top, top);
    detail::hsv_to_rgb(hue_bottom, 0.85, value_bottom, bottom);

    char id[16];
    std::snprintf(id, sizeof(id), "p%03zu", p % 1000000);
    for (Camera cam : {Camera::kA, Camera::kB}) {
      SequenceSample s{id, cam, {}};
      const double cam_offset = cam == Camera::kB ? shift.offset_fraction * double(width) : 0.0;
      for (std::size_t t = 0; t < frames_per_seq; ++t) {
        const double cx = 0.5 * double(width) + 0.15 * double(width) * std::sin(2 * pi * freq * double(t) + phase) + cam_offset;
        const double half = 0.5 * body_w * double(width);
        std::vector<std::uint8_t> rgb(height * width * 3);
        for (std::size_t y = 0; y < height; ++y) {
          const double fy = (double(y) + 0.5) / double(height);
          for (std::size_t x = 0; x < width; ++x) {
            double px[3] = {0.0, 0.0, 0.0};
            const bool inside_x = std::abs(double(x) + 0.5 - cx) <= half;
            if (inside_x && fy >= 0.1 && fy < split) std::copy(top, top + 3, px);
            else if (inside_x && fy >= split && fy < 0.92) std::copy(bottom, bottom + 3, px);
            const double noise = (unit(rng) - 0.5) * 0.06;
            for (int c = 0; c < 3; ++c) {
              double v = px[c] + noise;
              if (cam == Camera::kB) v += shift.color[c];
              rgb[(y * width + x) * 3 + c] = unit_to_byte(static_cast<float>(v));
            }
          }
        }
        s.frames.push_back(frame_from_rgb(rgb, height, width));
      }
      out.samples.push_back(std::move(s));
    }
  }
  out.manifest = detail::manifest_for({}, out.samples, height, width);
  return out;
}

// ---------------------------------------------------------------------------
// Splits and subsequences.

struct IdentitySplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Random partition of the persons; the training side gets floor(n * fraction)
/// identities (at least one, and at least one is left for testing).
inline IdentitySplit split_identities(const std::vector<std::string>& persons, double fraction, std::uint64_t trial_seed) {
  if (persons.size() < 2) throw DataError("split_identities: need at least 2 persons, have " + std::to_string(persons.size()));
  std::vector<std::string> ids = persons;
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(trial_seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::size_t n_train = static_cast<std::size_t>(std::floor(double(ids.size()) * fraction));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  IdentitySplit out{{ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train)},
                    {ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end()}};
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

/// `length` consecutive frames starting at `start`, cycling when the sequence is shorter.
inline std::vector<Frame> subsequence(const std::vector<Frame>& frames, std::size_t start, std::size_t length) {
  if (frames.empty()) throw DataError("subsequence: empty sequence");
  std::vector<Frame> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) out.push_back(frames[(start + i) % frames.size()]);
  return out;
}

/// Largest valid start index for a length-T window (0 when the sequence is shorter than T).
inline std::size_t max_start(std::size_t sequence_length, std::size_t T) {
  return sequence_length > T ? sequence_length - T : 0;
}

// ---------------------------------------------------------------------------
// Augmentation.

struct Augmentation {
  bool mirror = false;
  int dy = 0;  // crop offset relative to the centred crop
  int dx = 0;
};

/// Horizontal flip, then a shift-crop: out(y, x) = in(y + dy, x + dx), zero outside.
inline Frame augment_frame(const Frame& in, const Augmentation& a) {
  const std::size_t c = in.extent(0), h = in.extent(1), w = in.extent(2);
  if (!a.mirror && a.dy == 0 && a.dx == 0) return in;
  Frame out(in.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const long sy = long(y) + a.dy;
      if (sy < 0 || sy >= long(h)) continue;
      for (std::size_t x = 0; x < w; ++x) {
        const long sx = long(x) + a.dx;
        if (sx < 0 || sx >= long(w)) continue;
        const std::size_t src_x = a.mirror ? w - 1 - std::size_t(sx) : std::size_t(sx);
        out[(ch * h + y) * w + x] = in[(ch * h + std::size_t(sy)) * w + src_x];
      }
    }
  }
  return out;
}

/// Applies one augmentation condition uniformly to every frame of a sequence.
inline std::vector<Frame> augment(const std::vector<Frame>& frames, const Augmentation& a) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(augment_frame(f, a));
  return out;
}

/// Mirror with probability 0.5 and a crop offset uniform in [-pad, pad] per axis.
template <typename Rng>
Augmentation sample_augmentation(Rng& rng, std::size_t pad) {
  std::bernoulli_distribution flip(0.5);
  std::uniform_int_distribution<int> shift(-int(pad), int(pad));
  Augmentation a;
  a.mirror = flip(rng);
  a.dy = shift(rng);
  a.dx = shift(rng);
  return a;
}

}  // namespace rcn
