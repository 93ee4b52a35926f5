#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mib/checkpoint.hpp"
#include "mib/rng.hpp"

using namespace mib;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("mib_ckpt_") + tag);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(42);
  NamedTensors tensors;
  auto t1 = TensorF::zeros({3, 4});
  for (auto& v : t1.values_mut()) v = static_cast<float>(rng.normal());
  // awkward values: negative zero, denormal, huge
  auto t2 = TensorF::from_values({4}, {-0.0f, 1e-42f, 3.4e38f, -1.5f});
  tensors.emplace_back("enc.block0.weight", t1);
  tensors.emplace_back("dec.bias", t2);

  const auto dir = fresh_dir("roundtrip");
  save_checkpoint(dir, tensors);
  auto back = load_checkpoint(dir);

  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "enc.block0.weight");
  CHECK(back[0].second.shape() == Shape{3, 4});
  CHECK(back[1].first == "dec.bias");
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& a = tensors[k].second.values();
    const auto& b = back[k].second.values();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("manifest records name, shape and dtype") {
  const auto dir = fresh_dir("manifest");
  save_checkpoint(dir, {{"w", TensorF::from_values({2, 1}, {1.f, 2.f})}});
  const auto manifest = read_json_file(dir / "manifest.json");
  REQUIRE(manifest.is_array());
  REQUIRE(manifest.size() == 1);
  CHECK(manifest[0]["name"] == "w");
  CHECK(manifest[0]["shape"] == json::array({2, 1}));
  CHECK(manifest[0]["dtype"] == "f32");
  CHECK(fs::file_size(dir / "w") == 8);
}

TEST_CASE("blob bytes are little-endian float32") {
  const auto dir = fresh_dir("le");
  save_checkpoint(dir, {{"x", TensorF::from_values({1}, {1.0f})}});
  std::ifstream in(dir / "x", std::ios::binary);
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  CHECK(bytes[0] == 0x00);
  CHECK(bytes[1] == 0x00);
  CHECK(bytes[2] == 0x80);
  CHECK(bytes[3] == 0x3f);
}

TEST_CASE("load failures raise data errors") {
  const auto dir = fresh_dir("bad");
  CHECK_THROWS_AS(load_checkpoint(dir), DataError);

  save_checkpoint(dir, {{"w", TensorF::from_values({2}, {1.f, 2.f})}});
  fs::remove(dir / "w");
  CHECK_THROWS_AS(load_checkpoint(dir), DataError);

  // truncated blob
  save_checkpoint(dir, {{"w", TensorF::from_values({2}, {1.f, 2.f})}});
  fs::resize_file(dir / "w", 4);
  CHECK_THROWS_AS(load_checkpoint(dir), DataError);

  // oversized blob
  save_checkpoint(dir, {{"w", TensorF::from_values({2}, {1.f, 2.f})}});
  std::ofstream(dir / "w", std::ios::binary | std::ios::app) << "XXXX";
  CHECK_THROWS_AS(load_checkpoint(dir), DataError);

  CHECK_THROWS_AS(save_checkpoint(dir, {{"../evil", TensorF::zeros({1})}}), DataError);
}
