#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lfa/data_io.hpp"
#include "naive_ref.hpp"

using namespace lfa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("lfa_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Tensor random_binary_mask(int extent, std::mt19937& rng) {
  Tensor t({1, 1, extent, extent}, 0.0f);
  std::bernoulli_distribution coin(0.35);
  for (long long i = 0; i < t.size(); ++i) t.data()[i] = coin(rng) ? 1.0f : 0.0f;
  return t;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("mask PNG round-trips through write and load") {
  TempDir dir;
  std::mt19937 rng(3);
  Tensor mask = random_binary_mask(16, rng);
  const std::string path = dir.file("mask.png");
  write_mask_png(mask, 0.5f, path);
  Tensor back = load_mask(path);
  REQUIRE(back.shape() == mask.shape());
  CHECK(back.values() == mask.values());

  // The grayscale file also decodes as an RGB image with replicated channels.
  Tensor img = load_image(path);
  REQUIRE(img.shape() == Shape{1, 3, 16, 16});
  for (int h = 0; h < 16; ++h)
    for (int w = 0; w < 16; ++w)
      for (int c = 0; c < 3; ++c) CHECK(img.at(0, c, h, w) == mask.at(0, 0, h, w));
}

TEST_CASE("missing image files raise IoError") {
  CHECK_THROWS_AS(load_image("/nonexistent/a.png"), IoError);
  CHECK_THROWS_AS(load_mask("/nonexistent/a.png"), IoError);
}

TEST_CASE("resize validates its target and keeps identity exact") {
  std::mt19937 rng(5);
  Tensor t = ref::random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  CHECK_THROWS_AS(resize(t, 12, ResizeFilter::Bilinear), ConfigError);
  CHECK_THROWS_AS(resize(t, 4, ResizeFilter::Bilinear), ConfigError);
  CHECK(resize(t, 16, ResizeFilter::Bilinear).values() == t.values());
}

TEST_CASE("bilinear resize preserves constants, nearest preserves binary masks") {
  Tensor flat({1, 1, 16, 16}, 0.37f);
  Tensor up = resize(flat, 32, ResizeFilter::Bilinear);
  REQUIRE(up.shape() == Shape{1, 1, 32, 32});
  for (float v : up.values()) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));

  std::mt19937 rng(7);
  Tensor mask = random_binary_mask(16, rng);
  for (int target : {8, 32}) {
    Tensor r = resize(mask, target, ResizeFilter::Nearest);
    for (float v : r.values()) CHECK((v == 0.0f || v == 1.0f));
  }
}

TEST_CASE("augment keeps shapes, binary masks, and rng determinism") {
  std::mt19937 rng(9);
  Sample s;
  s.image = ref::random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  s.mask = random_binary_mask(16, rng);

  std::mt19937 a1(11), a2(11), a3(12);
  Sample out1 = augment(s, a1);
  Sample out2 = augment(s, a2);
  Sample out3 = augment(s, a3);
  CHECK(out1.image.shape() == s.image.shape());
  CHECK(out1.mask.shape() == s.mask.shape());
  for (float v : out1.mask.values()) CHECK((v == 0.0f || v == 1.0f));
  for (float v : out1.image.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(out1.image.values() == out2.image.values());
  CHECK(out1.image.values() != out3.image.values());
}

TEST_CASE("manifest parses tab-separated rows and validates paths") {
  TempDir dir;
  std::mt19937 rng(13);
  write_mask_png(random_binary_mask(16, rng), 0.5f, dir.file("a.png"));
  write_mask_png(random_binary_mask(16, rng), 0.5f, dir.file("b.png"));
  {
    std::ofstream out(dir.file("m.tsv"));
    out << "# comment line\n\n";
    out << dir.file("a.png") << "\t" << dir.file("b.png") << "\r\n";
  }
  Manifest m = read_manifest(dir.file("m.tsv"));
  REQUIRE(m.entries.size() == 1);
  CHECK(m.entries[0].image_path == dir.file("a.png"));
  CHECK(m.entries[0].mask_path == dir.file("b.png"));

  {
    std::ofstream out(dir.file("bad.tsv"));
    out << "no-tab-in-this-line\n";
  }
  CHECK_THROWS_AS(read_manifest(dir.file("bad.tsv")), DataError);
  {
    std::ofstream out(dir.file("missing.tsv"));
    out << dir.file("a.png") << "\t" << dir.file("nope.png") << "\n";
  }
  CHECK_THROWS_AS(read_manifest(dir.file("missing.tsv")), DataError);
  CHECK_THROWS_AS(read_manifest(dir.file("not-there.tsv")), IoError);
}

TEST_CASE("split is deterministic, disjoint, and sized by the fraction") {
  std::vector<int> train1, val1, train2, val2;
  split_indices(10, 42, 0.8f, train1, val1);
  split_indices(10, 42, 0.8f, train2, val2);
  CHECK(train1 == train2);
  CHECK(val1 == val2);
  CHECK(train1.size() == 8);
  CHECK(val1.size() == 2);
  std::set<int> seen(train1.begin(), train1.end());
  seen.insert(val1.begin(), val1.end());
  CHECK(seen.size() == 10);

  std::vector<int> train3, val3;
  split_indices(10, 43, 0.8f, train3, val3);
  CHECK(train1 != train3);
}

TEST_CASE("checkpoint round-trips parameters and optimizer state bitwise") {
  TempDir dir;
  ModelConfig cfg = ablation_config("MLU+LF-Bottleneck");
  Model m = build_model(cfg, 77);
  std::mt19937 rng(15);
  for (auto& [name, t] : m.trainable()) fill_uniform(*t, rng, -1.0f, 1.0f);
  for (auto& [name, t] : m.state_tensors()) fill_uniform(*t, rng, 0.0f, 1.0f);
  AdamState adam;
  adam.init(m.trainable());
  adam.step = 17;
  for (auto& slot : adam.m)
    for (float& v : slot) v = 0.25f;
  for (auto& slot : adam.v)
    for (float& v : slot) v = 0.5f;

  const std::string path = dir.file("model.ckpt");
  save_checkpoint(m, &adam, path);

  AdamState adam2;
  Model back = load_checkpoint(path, &adam2);
  CHECK(back.rng_seed == m.rng_seed);
  CHECK(back.config.serialize() == cfg.serialize());
  NamedTensors ta = m.trainable(), tb = back.trainable();
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].first == tb[i].first);
    CHECK(ta[i].second->values() == tb[i].second->values());
  }
  NamedTensors sa = m.state_tensors(), sb = back.state_tensors();
  for (size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].second->values() == sb[i].second->values());
  }
  CHECK(adam2.step == 17);
  REQUIRE(adam2.m.size() == adam.m.size());
  CHECK(adam2.m.back() == adam.m.back());
  CHECK(adam2.v.back() == adam.v.back());
}

TEST_CASE("checkpoint without optimizer state loads cleanly") {
  TempDir dir;
  Model m = build_model(ablation_config("MLU"), 5);
  const std::string path = dir.file("bare.ckpt");
  save_checkpoint(m, nullptr, path);
  AdamState adam;
  adam.step = -1;
  Model back = load_checkpoint(path, &adam);
  CHECK(back.rng_seed == 5);
  CHECK(adam.step == -1);  // untouched
}

TEST_CASE("corrupted checkpoints are rejected by kind") {
  TempDir dir;
  Model m = build_model(ablation_config("MLU"), 5);
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(m, nullptr, path);
  const std::vector<char> good = slurp(path);
  REQUIRE(good.size() > 64);

  // Payload bit flip: checksum mismatch.
  std::vector<char> flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  spit(dir.file("flip.ckpt"), flipped);
  CHECK_THROWS_AS(load_checkpoint(dir.file("flip.ckpt")), ChecksumError);

  // Version bump: rejected before the checksum is even consulted.
  std::vector<char> versioned = good;
  versioned[4] = 9;
  spit(dir.file("ver.ckpt"), versioned);
  CHECK_THROWS_AS(load_checkpoint(dir.file("ver.ckpt")), VersionError);

  // Foreign magic and truncation: plain I/O errors.
  std::vector<char> magic = good;
  magic[0] = 'X';
  spit(dir.file("magic.ckpt"), magic);
  CHECK_THROWS_AS(load_checkpoint(dir.file("magic.ckpt")), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir.file("magic.ckpt")), std::runtime_error);

  spit(dir.file("short.ckpt"), {good.begin(), good.begin() + 6});
  CHECK_THROWS_AS(load_checkpoint(dir.file("short.ckpt")), IoError);

  CHECK_THROWS_AS(load_checkpoint(dir.file("absent.ckpt")), IoError);
}

TEST_CASE("load_dataset resizes and splits") {
  TempDir dir;
  std::mt19937 rng(21);
  std::ofstream manifest(dir.file("m.tsv"));
  for (int i = 0; i < 5; ++i) {
    const std::string img = dir.file("img" + std::to_string(i) + ".png");
    const std::string msk = dir.file("msk" + std::to_string(i) + ".png");
    write_mask_png(random_binary_mask(16, rng), 0.5f, img);
    write_mask_png(random_binary_mask(16, rng), 0.5f, msk);
    manifest << img << "\t" << msk << "\n";
  }
  manifest.close();

  Manifest m = read_manifest(dir.file("m.tsv"));
  Dataset d = load_dataset(m, 32);
  REQUIRE(d.samples.size() == 5);
  CHECK(d.samples[0].image.shape() == Shape{1, 3, 32, 32});
  CHECK(d.samples[0].mask.shape() == Shape{1, 1, 32, 32});
  CHECK(d.train_idx.size() == 4);
  CHECK(d.val_idx.size() == 1);

  Manifest empty;
  CHECK_THROWS_AS(load_dataset(empty, 32), DataError);
}
