#include "lfa/data_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace lfa {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct PngImageGuard {
  png_image img{};
  ~PngImageGuard() { png_image_free(&img); }
};

}  // namespace

Tensor load_image(const std::string& path) {
  PngImageGuard guard;
  guard.img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&guard.img, path.c_str())) {
    throw IoError("cannot read image " + path + ": " + guard.img.message);
  }
  guard.img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(guard.img));
  if (!png_image_finish_read(&guard.img, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("cannot decode image " + path + ": " + guard.img.message);
  }
  const int h = static_cast<int>(guard.img.height);
  const int w = static_cast<int>(guard.img.width);
  Tensor out({1, 3, h, w}, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const png_byte* px = &buf[static_cast<size_t>(3) * (static_cast<size_t>(y) * w + x)];
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = px[c] / 255.0f;
    }
  }
  return out;
}

Tensor load_mask(const std::string& path) {
  PngImageGuard guard;
  guard.img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&guard.img, path.c_str())) {
    throw IoError("cannot read mask " + path + ": " + guard.img.message);
  }
  guard.img.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(guard.img));
  if (!png_image_finish_read(&guard.img, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("cannot decode mask " + path + ": " + guard.img.message);
  }
  const int h = static_cast<int>(guard.img.height);
  const int w = static_cast<int>(guard.img.width);
  Tensor out({1, 1, h, w}, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(0, 0, y, x) = buf[static_cast<size_t>(y) * w + x] > 127 ? 1.0f : 0.0f;
    }
  }
  return out;
}

void write_mask_png(const Tensor& probabilities, float threshold, const std::string& path) {
  const Shape s = probabilities.shape();
  if (s.n != 1 || s.c != 1) {
    throw ShapeError("write_mask_png expects a (1,1,H,W) tensor, got " + s.str());
  }
  std::vector<png_byte> buf(static_cast<size_t>(s.h) * s.w);
  const float* p = probabilities.data();
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = p[i] >= threshold ? 255 : 0;

  PngImageGuard guard;
  guard.img.version = PNG_IMAGE_VERSION;
  guard.img.width = static_cast<png_uint_32>(s.w);
  guard.img.height = static_cast<png_uint_32>(s.h);
  guard.img.format = PNG_FORMAT_GRAY;
  const std::string tmp = path + ".tmp";
  if (!png_image_write_to_file(&guard.img, tmp.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write mask " + path + ": " + guard.img.message);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot finalize mask " + path + ": " + ec.message());
}

namespace {

float sample_bilinear(const Tensor& t, int n, int c, float sy, float sx) {
  const int h = t.shape().h, w = t.shape().w;
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const float fy = sy - y0, fx = sx - x0;
  auto pick = [&](int y, int x) -> float {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0f;
    return t.at(n, c, y, x);
  };
  const float top = pick(y0, x0) * (1.0f - fx) + pick(y0, x0 + 1) * fx;
  const float bot = pick(y0 + 1, x0) * (1.0f - fx) + pick(y0 + 1, x0 + 1) * fx;
  return top * (1.0f - fy) + bot * fy;
}

float sample_nearest(const Tensor& t, int n, int c, float sy, float sx) {
  const int y = static_cast<int>(std::floor(sy + 0.5f));
  const int x = static_cast<int>(std::floor(sx + 0.5f));
  if (y < 0 || y >= t.shape().h || x < 0 || x >= t.shape().w) return 0.0f;
  return t.at(n, c, y, x);
}

}  // namespace

Tensor resize(const Tensor& t, int target, ResizeFilter filter) {
  if (target < 8 || target % 8 != 0) {
    throw ConfigError("resize target must be >= 8 and divisible by 8, got " +
                      std::to_string(target));
  }
  const Shape s = t.shape();
  if (s.h == target && s.w == target) return t;
  Tensor out({s.n, s.c, target, target}, 0.0f);
  const float scale_y = static_cast<float>(s.h) / target;
  const float scale_x = static_cast<float>(s.w) / target;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < target; ++y) {
        for (int x = 0; x < target; ++x) {
          // Half-pixel-centered source coordinates, clamped at the border.
          float sy = std::clamp((y + 0.5f) * scale_y - 0.5f, 0.0f, static_cast<float>(s.h - 1));
          float sx = std::clamp((x + 0.5f) * scale_x - 0.5f, 0.0f, static_cast<float>(s.w - 1));
          out.at(n, c, y, x) = filter == ResizeFilter::Bilinear
                                   ? sample_bilinear(t, n, c, sy, sx)
                                   : sample_nearest(t, n, c, sy, sx);
        }
      }
    }
  }
  return out;
}

Sample augment(const Sample& sample, std::mt19937& rng) {
  const float angle_deg = std::uniform_real_distribution<float>(-20.0f, 20.0f)(rng);
  const float contrast = std::uniform_real_distribution<float>(0.8f, 1.25f)(rng);
  const float theta = static_cast<float>(angle_deg * kPi / 180.0);
  const float ct = std::cos(theta), st = std::sin(theta);

  const Shape is = sample.image.shape();
  const float cy = (is.h - 1) * 0.5f, cx = (is.w - 1) * 0.5f;
  Sample out;
  out.image = Tensor(is, 0.0f);
  out.mask = Tensor(sample.mask.shape(), 0.0f);
  for (int y = 0; y < is.h; ++y) {
    for (int x = 0; x < is.w; ++x) {
      // Inverse rotation about the image center; zero outside the source.
      const float dy = y - cy, dx = x - cx;
      const float sy = cy + ct * dy - st * dx;
      const float sx = cx + st * dy + ct * dx;
      for (int c = 0; c < is.c; ++c) {
        const float v = sample_bilinear(sample.image, 0, c, sy, sx);
        out.image.at(0, c, y, x) = std::clamp(0.5f + contrast * (v - 0.5f), 0.0f, 1.0f);
      }
      out.mask.at(0, 0, y, x) = sample_nearest(sample.mask, 0, 0, sy, sx);
    }
  }
  return out;
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  Manifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const size_t tab = line.find('\t', first);
    if (tab == std::string::npos) {
      throw DataError("manifest " + path + ":" + std::to_string(line_no) +
                      ": expected image<TAB>mask");
    }
    ManifestEntry e{line.substr(first, tab - first), line.substr(tab + 1)};
    if (!std::filesystem::exists(e.image_path)) {
      throw DataError("manifest " + path + ": missing image " + e.image_path);
    }
    if (!std::filesystem::exists(e.mask_path)) {
      throw DataError("manifest " + path + ": missing mask " + e.mask_path);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void split_indices(int count, uint64_t seed, float fraction, std::vector<int>& train_idx,
                   std::vector<int>& val_idx) {
  std::vector<int> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = static_cast<int>(std::floor(fraction * count));
  train_idx.assign(order.begin(), order.begin() + n_train);
  val_idx.assign(order.begin() + n_train, order.end());
}

Dataset load_dataset(const Manifest& manifest, int target_extent) {
  if (manifest.entries.empty()) throw DataError("empty manifest");
  Dataset d;
  for (const ManifestEntry& e : manifest.entries) {
    Sample s;
    s.image = resize(load_image(e.image_path), target_extent, ResizeFilter::Bilinear);
    s.mask = resize(load_mask(e.mask_path), target_extent, ResizeFilter::Nearest);
    d.samples.push_back(std::move(s));
  }
  split_indices(static_cast<int>(d.samples.size()), manifest.split_seed, manifest.split_fraction,
                d.train_idx, d.val_idx);
  return d;
}

namespace {

constexpr char kMagic[4] = {'L', 'F', 'A', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& b, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

void put_string(std::vector<uint8_t>& b, const std::string& s) {
  put_u32(b, static_cast<uint32_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}

struct Reader {
  const uint8_t* p;
  size_t remaining;

  void need(size_t n) const {
    if (n > remaining) throw IoError("truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  uint8_t u8() {
    need(1);
    const uint8_t v = *p;
    ++p;
    --remaining;
    return v;
  }
  std::string str() {
    const uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p), len);
    p += len;
    remaining -= len;
    return s;
  }
  void floats(float* dst, size_t count) {
    need(count * 4);
    for (size_t i = 0; i < count; ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(p[4 * i + b]) << (8 * b);
      std::memcpy(dst + i, &bits, 4);
    }
    p += count * 4;
    remaining -= count * 4;
  }
};

NamedTensors persisted_tensors(Model& m) {
  NamedTensors all = m.trainable();
  for (auto& nt : m.state_tensors()) all.push_back(nt);
  return all;
}

}  // namespace

void save_checkpoint(Model& model, const AdamState* adam, const std::string& path) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kVersion);
  put_u64(buf, model.rng_seed);
  put_string(buf, model.config.serialize());

  NamedTensors tensors = persisted_tensors(model);
  put_u32(buf, static_cast<uint32_t>(tensors.size()));
  for (auto& [name, t] : tensors) {
    put_string(buf, name);
    const Shape s = t->shape();
    put_u32(buf, static_cast<uint32_t>(s.n));
    put_u32(buf, static_cast<uint32_t>(s.c));
    put_u32(buf, static_cast<uint32_t>(s.h));
    put_u32(buf, static_cast<uint32_t>(s.w));
    for (long long i = 0; i < t->size(); ++i) put_f32(buf, t->data()[i]);
  }

  buf.push_back(adam ? 1 : 0);
  if (adam) {
    put_u64(buf, static_cast<uint64_t>(adam->step));
    put_f32(buf, adam->learning_rate);
    put_f32(buf, adam->beta1);
    put_f32(buf, adam->beta2);
    put_f32(buf, adam->epsilon);
    put_u32(buf, static_cast<uint32_t>(adam->m.size()));
    for (size_t i = 0; i < adam->m.size(); ++i) {
      put_u64(buf, adam->m[i].size());
      for (float v : adam->m[i]) put_f32(buf, v);
      for (float v : adam->v[i]) put_f32(buf, v);
    }
  }

  put_u32(buf, static_cast<uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size()))));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot finalize checkpoint " + path + ": " + ec.message());
}

Model load_checkpoint(const std::string& path, AdamState* adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw IoError("truncated checkpoint");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw IoError(path + " is not a checkpoint file");
  }
  Reader r{buf.data() + 4, buf.size() - 4};
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                       " (expected " + std::to_string(kVersion) + ")");
  }
  const uint32_t stored_crc = [&] {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
    return v;
  }();
  const uint32_t actual_crc =
      static_cast<uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (stored_crc != actual_crc) throw ChecksumError("checkpoint checksum mismatch in " + path);
  r.remaining -= 4;  // exclude the trailing crc from payload parsing

  const uint64_t seed = r.u64();
  const ModelConfig config = ModelConfig::parse(r.str());
  Model model = build_model(config, seed);
  NamedTensors tensors = persisted_tensors(model);

  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Shape s;
    s.n = static_cast<int>(r.u32());
    s.c = static_cast<int>(r.u32());
    s.h = static_cast<int>(r.u32());
    s.w = static_cast<int>(r.u32());
    Tensor* target = nullptr;
    for (auto& [tname, t] : tensors) {
      if (tname == name) {
        target = t;
        break;
      }
    }
    if (!target) throw IoError("checkpoint names unknown tensor " + name);
    if (!(target->shape() == s)) {
      throw IoError("checkpoint tensor " + name + " has shape " + s.str() + ", expected " +
                    target->shape().str());
    }
    r.floats(target->data(), static_cast<size_t>(target->size()));
  }

  const uint8_t has_adam = r.u8();
  if (has_adam && adam) {
    adam->step = static_cast<long long>(r.u64());
    adam->learning_rate = r.f32();
    adam->beta1 = r.f32();
    adam->beta2 = r.f32();
    adam->epsilon = r.f32();
    const uint32_t slots = r.u32();
    adam->m.assign(slots, {});
    adam->v.assign(slots, {});
    for (uint32_t i = 0; i < slots; ++i) {
      const size_t len = static_cast<size_t>(r.u64());
      adam->m[i].resize(len);
      adam->v[i].resize(len);
      r.floats(adam->m[i].data(), len);
      r.floats(adam->v[i].data(), len);
    }
  }
  return model;
}

}  // namespace lfa
