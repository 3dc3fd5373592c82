#include "vfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vfm/error.hpp"

namespace vfm {
namespace {

constexpr char kMagic[8] = {'V', 'F', 'M', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in native little-endian order");

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(Errc::CorruptCheckpoint, path.string() + ": truncated header");
  }
  return v;
}

}  // namespace

const Tensor& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  throw Error(Errc::CorruptCheckpoint, "missing array '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& entry : arrays) {
    if (entry.first == name) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["meta"]["format_version"] = kCheckpointFormatVersion;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.arrays) {
    header["arrays"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::UnwritablePath, path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, kCheckpointFormatVersion);
  write_pod<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& entry : ckpt.arrays) {
    const Tensor& t = entry.second;
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw Error(Errc::UnwritablePath, path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::MissingFile, path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(Errc::CorruptCheckpoint, path.string() + ": bad magic");
  }
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != static_cast<std::uint32_t>(kCheckpointFormatVersion)) {
    throw Error(Errc::CorruptCheckpoint,
                path.string() + ": unsupported format_version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(is, path);
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw Error(Errc::CorruptCheckpoint, path.string() + ": truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  const auto payload_start = is.tellg();
  for (const auto& entry : header.at("arrays")) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    Tensor t(shape);
    is.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw Error(Errc::CorruptCheckpoint, path.string() + ": truncated payload");
    }
    ckpt.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

void append_params(Checkpoint& ckpt, const nn::ConstParamRefs& params) {
  for (const nn::Param* p : params) ckpt.arrays.emplace_back(p->name, p->value);
}

void restore_params(const Checkpoint& ckpt, const nn::ParamRefs& params) {
  for (nn::Param* p : params) {
    const Tensor& t = ckpt.array(p->name);
    if (!t.same_shape(p->value)) {
      throw Error(Errc::CorruptCheckpoint, p->name + ": stored " + shape_string(t.shape()) +
                                               " vs expected " + shape_string(p->value.shape()));
    }
    p->value = t;
    p->grad = Tensor(t.shape());
  }
}

}  // namespace vfm
