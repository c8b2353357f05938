#include "pmil/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "pmil/errors.hpp"

namespace pmil {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

template <class T>
void write_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw DataError(DataError::Kind::Truncated,
                    std::string("checkpoint truncated reading ") + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

std::vector<NamedParam> all_params(const PromptVit& model, const MILHead& head) {
  std::vector<NamedParam> out = model.backbone_params();
  for (NamedParam& p : model.prompt_params()) out.push_back(p);
  for (NamedParam& p : head.params()) out.push_back(p);
  return out;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(DataError::Kind::Generic, "cannot open for write: " + path);
  os.write(kMagic, 4);
  write_le<std::uint16_t>(os, kVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.config_ini.size()));
  os.write(ckpt.config_ini.data(), static_cast<std::streamsize>(ckpt.config_ini.size()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const CheckpointTensor& t : ckpt.tensors) {
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_le<std::uint8_t>(os, t.trainable ? 1 : 0);
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (std::int64_t d : t.shape) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (float v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      write_le<std::uint32_t>(os, bits);
    }
  }
  if (!os) throw DataError(DataError::Kind::Generic, "checkpoint write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataError::Kind::NotFound, "cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(DataError::Kind::BadMagic, "bad magic number in " + path);
  const auto version = read_le<std::uint16_t>(is, "version");
  if (version != kVersion)
    throw DataError(DataError::Kind::BadVersion,
                    "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  const auto cfg_len = read_le<std::uint32_t>(is, "config length");
  ckpt.config_ini.resize(cfg_len);
  is.read(ckpt.config_ini.data(), cfg_len);
  if (is.gcount() != static_cast<std::streamsize>(cfg_len))
    throw DataError(DataError::Kind::Truncated, "checkpoint truncated reading config");

  const auto count = read_le<std::uint32_t>(is, "tensor count");
  ckpt.tensors.resize(count);
  for (CheckpointTensor& t : ckpt.tensors) {
    const auto name_len = read_le<std::uint16_t>(is, "name length");
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    if (is.gcount() != static_cast<std::streamsize>(name_len))
      throw DataError(DataError::Kind::Truncated, "checkpoint truncated reading name");
    t.trainable = read_le<std::uint8_t>(is, "trainable flag") != 0;
    const auto ndim = read_le<std::uint8_t>(is, "rank");
    t.shape.resize(ndim);
    std::int64_t numel = 1;
    for (auto& d : t.shape) {
      d = static_cast<std::int64_t>(read_le<std::uint32_t>(is, "dim"));
      numel *= d;
    }
    t.data.resize(static_cast<std::size_t>(numel));
    for (float& v : t.data) {
      const std::uint32_t bits = read_le<std::uint32_t>(is, "tensor data");
      std::memcpy(&v, &bits, sizeof(v));
    }
  }
  return ckpt;
}

Checkpoint snapshot_params(const std::string& config_ini, const PromptVit& model,
                           const MILHead& head) {
  Checkpoint ckpt;
  ckpt.config_ini = config_ini;
  for (const NamedParam& p : all_params(model, head)) {
    CheckpointTensor t;
    t.name = p.name;
    t.trainable = p.tensor.requires_grad();
    t.shape = p.tensor.shape();
    t.data.resize(static_cast<std::size_t>(p.tensor.numel()));
    for (std::int64_t i = 0; i < p.tensor.numel(); ++i)
      t.data[static_cast<std::size_t>(i)] = static_cast<float>(p.tensor.value_at(i));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, PromptVit& model, MILHead& head) {
  std::map<std::string, Tensor> by_name;
  for (NamedParam& p : all_params(model, head)) by_name.emplace(p.name, p.tensor);
  for (const CheckpointTensor& t : ckpt.tensors) {
    auto it = by_name.find(t.name);
    if (it == by_name.end())
      throw DataError("checkpoint tensor '" + t.name + "' has no matching parameter");
    Tensor dst = it->second;
    if (dst.shape() != t.shape)
      throw ShapeError("checkpoint tensor '" + t.name + "' shape " + shape_str(t.shape) +
                       " does not match parameter " + shape_str(dst.shape()));
    for (std::int64_t i = 0; i < dst.numel(); ++i)
      dst.set_value_at(i, static_cast<double>(t.data[static_cast<std::size_t>(i)]));
  }
}

}  // namespace pmil
