#include "pmil/bagio.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pmil/errors.hpp"

namespace fs = std::filesystem;

namespace pmil {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'B', 'G'};
constexpr char kLatentTag[4] = {'L', 'T', 'N', 'T'};
constexpr std::uint16_t kVersion = 1;

template <class T>
void write_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

void write_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  write_le<std::uint32_t>(os, bits);
}

template <class T>
T read_le(std::istream& is, const std::string& what) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw DataError(DataError::Kind::Truncated, "bag file truncated reading " + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

float read_f32_le(std::istream& is, const std::string& what) {
  const std::uint32_t bits = read_le<std::uint32_t>(is, what);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void write_bag(const Bag& bag, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(DataError::Kind::Generic, "cannot open for write: " + path);
  os.write(kMagic, 4);
  write_le<std::uint16_t>(os, kVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bag.n));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bag.height));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bag.width));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bag.channels));
  write_le<std::int32_t>(os, bag.label);
  write_le<std::uint64_t>(os, bag.bag_id);
  for (float v : bag.data) write_f32_le(os, v);
  if (!bag.latents.empty()) {
    os.write(kLatentTag, 4);
    for (std::int32_t l : bag.latents) write_le<std::int32_t>(os, l);
  }
  if (!os) throw DataError(DataError::Kind::Generic, "write failed: " + path);
}

Bag read_bag(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataError::Kind::NotFound, "cannot open bag file: " + path);

  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(DataError::Kind::BadMagic, "bad magic number in " + path);
  const auto version = read_le<std::uint16_t>(is, "version");
  if (version != kVersion)
    throw DataError(DataError::Kind::BadVersion,
                    "unsupported bag format version " + std::to_string(version) +
                        " in " + path);

  Bag bag;
  bag.n = static_cast<int>(read_le<std::uint32_t>(is, "n"));
  bag.height = static_cast<int>(read_le<std::uint32_t>(is, "height"));
  bag.width = static_cast<int>(read_le<std::uint32_t>(is, "width"));
  bag.channels = static_cast<int>(read_le<std::uint32_t>(is, "channels"));
  bag.label = read_le<std::int32_t>(is, "label");
  bag.bag_id = read_le<std::uint64_t>(is, "bag_id");

  const std::int64_t total = static_cast<std::int64_t>(bag.n) * bag.instance_elems();
  bag.data.resize(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < total; ++i)
    bag.data[static_cast<std::size_t>(i)] = read_f32_le(is, "instance data");

  char tag[4];
  is.read(tag, 4);
  if (is.gcount() == 4) {
    if (std::memcmp(tag, kLatentTag, 4) != 0)
      throw DataError(DataError::Kind::Generic, "unknown trailing section in " + path);
    bag.latents.resize(static_cast<std::size_t>(bag.n));
    for (int i = 0; i < bag.n; ++i)
      bag.latents[static_cast<std::size_t>(i)] = read_le<std::int32_t>(is, "latents");
  } else if (is.gcount() != 0) {
    throw DataError(DataError::Kind::Truncated, "bag file truncated reading section tag");
  }
  return bag;
}

namespace {

void write_split(const std::vector<Bag>& bags, const std::string& split,
                 const fs::path& dir, std::ostream& manifest) {
  for (std::size_t i = 0; i < bags.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05zu.pmbg", split.c_str(), i);
    write_bag(bags[i], (dir / "bags" / name).string());
    manifest << split << " bags/" << name << "\n";
  }
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  const fs::path out(dir);
  const fs::path parent = out.parent_path();
  if (!parent.empty() && !fs::exists(parent))
    throw DataError(DataError::Kind::NotFound,
                    "parent directory does not exist: " + parent.string());
  fs::create_directories(out / "bags");

  std::ofstream manifest(out / "manifest.txt");
  if (!manifest)
    throw DataError(DataError::Kind::Generic, "cannot write manifest in " + dir);
  manifest << "# promptmil dataset manifest v1\n";
  write_split(ds.train, "train", out, manifest);
  write_split(ds.val, "val", out, manifest);
  write_split(ds.test, "test", out, manifest);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest)
    throw DataError(DataError::Kind::NotFound, "no manifest.txt under " + dir);

  Dataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string split, rel;
    if (!(ls >> split >> rel))
      throw DataError(DataError::Kind::Generic, "malformed manifest line: " + line);
    Bag bag = read_bag((root / rel).string());
    if (split == "train")
      ds.train.push_back(std::move(bag));
    else if (split == "val")
      ds.val.push_back(std::move(bag));
    else if (split == "test")
      ds.test.push_back(std::move(bag));
    else
      throw DataError(DataError::Kind::Generic, "unknown split in manifest: " + split);
  }
  if (ds.train.empty() && ds.val.empty() && ds.test.empty())
    throw DataError(DataError::Kind::Generic, "manifest lists no bags: " + dir);
  return ds;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError(DataError::Kind::NotFound, "cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace pmil
