#include "gfslt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace gfslt {

namespace {

constexpr char kMagic[4] = {'G', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagOptimizer = 1u;
constexpr const char* kMomentumPrefix = "_opt.m.";

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

struct Reader {
  std::ifstream is;
  std::uint64_t offset = 0;
  std::string path;

  template <class T>
  T get() {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
      throw FormatError("checkpoint '" + path + "' truncated at byte offset " + std::to_string(offset));
    offset += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is)
      throw FormatError("checkpoint '" + path + "' truncated at byte offset " + std::to_string(offset));
    offset += n;
    return s;
  }

  void get_floats(float* dst, std::size_t n) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is)
      throw FormatError("checkpoint '" + path + "' truncated at byte offset " + std::to_string(offset));
    offset += n * sizeof(float);
  }
};

struct ManifestEntry {
  std::string name;
  std::vector<int> shape;
  std::uint64_t offset = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  if (ckpt.has_optimizer && static_cast<int>(ckpt.momentum.size()) != ckpt.params.count())
    throw ConfigError("checkpoint: momentum buffers misaligned with parameters");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, ckpt.config_fingerprint);
  put<std::uint64_t>(os, ckpt.compat_fingerprint);
  put<std::uint64_t>(os, ckpt.seed);
  put<std::uint32_t>(os, ckpt.next_epoch);
  put<std::uint32_t>(os, ckpt.has_optimizer ? kFlagOptimizer : 0u);

  const int n_params = ckpt.params.count();
  const std::uint32_t n_tensors =
      static_cast<std::uint32_t>(n_params) * (ckpt.has_optimizer ? 2u : 1u);
  put<std::uint32_t>(os, n_tensors);

  auto write_manifest_entry = [&](const std::string& name, const std::vector<int>& shape,
                                  std::uint64_t& offset) {
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint16_t>(os, static_cast<std::uint16_t>(shape.size()));
    for (int d : shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(os, offset);
    offset += static_cast<std::uint64_t>(shape_numel(shape)) * sizeof(float);
  };

  std::uint64_t offset = 0;
  for (int i = 0; i < n_params; ++i)
    write_manifest_entry(ckpt.params.info(i).name, ckpt.params.info(i).shape, offset);
  if (ckpt.has_optimizer)
    for (int i = 0; i < n_params; ++i)
      write_manifest_entry(kMomentumPrefix + ckpt.params.info(i).name, ckpt.params.info(i).shape,
                           offset);

  for (int i = 0; i < n_params; ++i) {
    const auto& v = *ckpt.params.value(i);
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (ckpt.has_optimizer) {
    for (int i = 0; i < n_params; ++i) {
      const auto& v = ckpt.momentum[static_cast<std::size_t>(i)];
      os.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
  }
  if (!os) throw FormatError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r;
  r.path = path;
  r.is.open(path, std::ios::binary);
  if (!r.is) throw FormatError("cannot open '" + path + "' for reading");

  char magic[4];
  r.is.read(magic, 4);
  if (!r.is || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("checkpoint '" + path + "': bad magic at byte offset 0");
  r.offset = 4;

  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw VersionError("checkpoint '" + path + "' has version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kVersion));

  Checkpoint ckpt;
  ckpt.config_fingerprint = r.get<std::uint64_t>();
  ckpt.compat_fingerprint = r.get<std::uint64_t>();
  ckpt.seed = r.get<std::uint64_t>();
  ckpt.next_epoch = r.get<std::uint32_t>();
  const auto flags = r.get<std::uint32_t>();
  ckpt.has_optimizer = (flags & kFlagOptimizer) != 0;
  const auto n_tensors = r.get<std::uint32_t>();

  std::vector<ManifestEntry> manifest;
  manifest.reserve(n_tensors);
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    ManifestEntry e;
    const auto name_len = r.get<std::uint16_t>();
    e.name = r.get_string(name_len);
    const auto ndim = r.get<std::uint16_t>();
    for (int d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
    e.offset = r.get<std::uint64_t>();
    if (e.offset != expected_offset)
      throw FormatError("checkpoint '" + path + "': manifest offset for '" + e.name +
                        "' is " + std::to_string(e.offset) + ", expected " +
                        std::to_string(expected_offset));
    expected_offset += static_cast<std::uint64_t>(shape_numel(e.shape)) * sizeof(float);
    manifest.push_back(std::move(e));
  }

  std::vector<std::vector<float>> payloads;
  payloads.reserve(n_tensors);
  for (const auto& e : manifest) {
    std::vector<float> data(static_cast<std::size_t>(shape_numel(e.shape)));
    r.get_floats(data.data(), data.size());
    payloads.push_back(std::move(data));
  }

  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto& e = manifest[i];
    if (e.name.rfind(kMomentumPrefix, 0) == 0) {
      ckpt.momentum.push_back(std::move(payloads[i]));
    } else {
      ckpt.params.add(e.name, e.shape, std::move(payloads[i]));
    }
  }
  if (ckpt.has_optimizer && static_cast<int>(ckpt.momentum.size()) != ckpt.params.count())
    throw FormatError("checkpoint '" + path + "': optimizer flag set but momentum tensors missing");
  return ckpt;
}

}  // namespace gfslt
