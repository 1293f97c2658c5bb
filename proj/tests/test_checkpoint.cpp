#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"

#include "hetmem/checkpoint.hpp"
#include "hetmem/errors.hpp"

using namespace hetmem;
namespace fs = std::filesystem;

namespace {

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("hetmem_test_ckpt_" + name); }

bool bit_equal(const ModelParams<float>& a, const ModelParams<float>& b) {
  std::vector<const Tensor<float>*> xs, ys;
  a.for_each([&xs](const std::string&, const Tensor<float>& t) { xs.push_back(&t); });
  b.for_each([&ys](const std::string&, const Tensor<float>& t) { ys.push_back(&t); });
  if (xs.size() != ys.size()) return false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->shape() != ys[i]->shape()) return false;
    if (std::memcmp(xs[i]->ptr(), ys[i]->ptr(), xs[i]->bytes()) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint reload is bit-exact") {
  for (bool tied : {false, true}) {
    ModelConfig c = oracle::tiny_config();
    c.tie_embeddings = tied;
    c.memory = MemoryConfig::make(2, 1, Arrangement::last, 12, 30, 3);
    auto p = ModelParams<float>::init(c, 5);
    p.embedding[0] = -0.0f;
    p.embedding[1] = 1e-40f;  // subnormal
    const auto path = temp(tied ? "tied" : "untied");
    save_checkpoint(path, c, p);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.config == c);
    CHECK(bit_equal(back.params, p));
    CHECK(std::signbit(back.params.embedding[0]));
    fs::remove(path);
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  ModelConfig c = oracle::tiny_config();
  const auto p = ModelParams<float>::init(c, 6);
  const auto path = temp("damaged");
  save_checkpoint(path, c, p);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  REQUIRE(bytes.substr(0, 7) == "HMTXLCK");

  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bad;
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  bad = bytes;
  bad[8] = 9;  // version
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bad;
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  fs::remove(path);

  CHECK_THROWS_AS(load_checkpoint(temp("absent")), IoError);
}
