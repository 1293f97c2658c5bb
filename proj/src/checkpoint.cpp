#include "hetmem/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "hetmem/config.hpp"
#include "hetmem/errors.hpp"

namespace hetmem {

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'M', 'T', 'X', 'L', 'C', 'K', '\0'};

template <class U>
void put(std::ostream& out, U value) {
  static_assert(std::is_integral_v<U>);
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw IoError("truncated checkpoint " + path.string());
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams<float>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = serialize_model(config);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::uint64_t count = 0;
  params.for_each([&count](const std::string&, const Tensor<float>&) { ++count; });
  put<std::uint64_t>(out, count);
  params.for_each([&out](const std::string& name, const Tensor<float>& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (float v : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  });
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  const auto text_len = get<std::uint64_t>(in, path);
  if (text_len > (1u << 20)) throw IoError("checkpoint config block too large");
  std::string text(text_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text_len))) throw IoError("truncated checkpoint " + path.string());

  Checkpoint ck;
  try {
    ck.config = parse_model(text);
  } catch (const ConfigError& e) {
    throw IoError("checkpoint " + path.string() + " carries an invalid config: " + e.what());
  }
  ck.params = ModelParams<float>::zeros(ck.config);

  const auto count = get<std::uint64_t>(in, path);
  std::uint64_t expected = 0;
  ck.params.for_each([&expected](const std::string&, const Tensor<float>&) { ++expected; });
  if (count != expected) {
    throw IoError("checkpoint " + path.string() + " holds " + std::to_string(count) + " arrays, config needs " +
                  std::to_string(expected));
  }
  ck.params.for_each([&](const std::string& want, Tensor<float>& t) {
    const auto name_len = get<std::uint32_t>(in, path);
    if (name_len > 4096) throw IoError("checkpoint array name too long");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError("truncated checkpoint " + path.string());
    if (name != want) throw IoError("checkpoint array '" + name + "' where '" + want + "' was expected");
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    if (shape != t.shape()) {
      throw IoError("checkpoint array '" + name + "' has shape " + to_string(shape) + ", expected " +
                    to_string(t.shape()));
    }
    for (float& v : t.data()) v = std::bit_cast<float>(get<std::uint32_t>(in, path));
  });
  return ck;
}

}  // namespace hetmem
