#include "avemo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace avemo {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'A', 'V', 'C', 'K'};

struct ManifestAndOffset {
  json manifest;
  std::streamoff payload_start;
};

ManifestAndOffset read_manifest(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw std::runtime_error(path + ": truncated manifest");
  json manifest = json::parse(mtext);
  if (manifest.value("version", 0) != 1)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  return {std::move(manifest), static_cast<std::streamoff>(12 + mlen)};
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const json& config_echo) {
  json manifest;
  manifest["version"] = 1;
  manifest["config"] = config_echo;
  json params = json::array();
  for (const Parameter* p : store.all()) {
    json e;
    e["name"] = p->name;
    e["group"] = p->group;
    e["shape"] = p->value.shape;
    e["frozen"] = p->frozen;
    params.push_back(std::move(e));
  }
  manifest["params"] = std::move(params);
  std::string mtext = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(kMagic, 4);
  uint64_t mlen = mtext.size();
  f.write(reinterpret_cast<const char*>(&mlen), 8);
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const Parameter* p : store.all())
    f.write(reinterpret_cast<const char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

json read_checkpoint_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  return read_manifest(f, path).manifest.at("config");
}

void load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  auto [manifest, off] = read_manifest(f, path);
  f.seekg(off);
  for (const json& e : manifest.at("params")) {
    std::string name = e.at("name").get<std::string>();
    Parameter& p = store.get(name);
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    if (shape != p.value.shape)
      throw std::runtime_error(path + ": shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(p.value.data.data()),
           static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error(path + ": truncated payload at " + name);
    p.group = e.at("group").get<std::string>();
    p.frozen = e.at("frozen").get<bool>();
  }
}

}  // namespace avemo
