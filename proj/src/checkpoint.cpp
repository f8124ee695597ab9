#include "ganunlearn/core/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace gu {

namespace {
constexpr char kMagic[4] = {'G', 'U', 'C', 'P'};
constexpr uint32_t kContainerVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::ifstream& f) {
  uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

nlohmann::json header_json(const CheckpointMeta& meta, const std::vector<Param<real>*>& params) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const Param<real>* p : params)
    arrays.push_back({{"name", p->name}, {"shape", p->value.shape}});
  return {{"component", meta.component}, {"version", meta.version},
          {"seed", meta.seed},           {"config_hash", meta.config_hash},
          {"manifest", meta.manifest},   {"arrays", arrays}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.component = j.at("component").get<std::string>();
  m.version = j.at("version").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_hash = j.at("config_hash").get<uint64_t>();
  m.manifest = j.at("manifest");
  return m;
}

nlohmann::json read_header(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw StateError("not a checkpoint file: " + path);
  uint32_t cv = read_u32(f);
  if (cv != kContainerVersion)
    throw StateError("unsupported checkpoint container version " + std::to_string(cv) + ": " + path);
  uint64_t jlen = read_u64(f);
  std::string js(jlen, '\0');
  f.read(js.data(), std::streamsize(jlen));
  if (!f) throw StateError("truncated checkpoint header: " + path);
  return nlohmann::json::parse(js);
}
}  // namespace

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<Param<real>*>& params) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StateError("cannot open for writing: " + path);
  std::string js = header_json(meta, params).dump();
  f.write(kMagic, 4);
  write_u32(f, kContainerVersion);
  write_u64(f, uint64_t(js.size()));
  f.write(js.data(), std::streamsize(js.size()));
  for (const Param<real>* prm : params)
    f.write(reinterpret_cast<const char*>(prm->value.data.data()),
            std::streamsize(prm->value.data.size() * sizeof(real)));
  if (!f) throw StateError("write failed: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, const std::string& expect_component,
                               uint64_t expect_config_hash, std::vector<Param<real>*>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingDependencyError("checkpoint not found: " + path);
  nlohmann::json j = read_header(f, path);
  CheckpointMeta meta = meta_from_json(j);
  if (meta.component != expect_component)
    throw StateError("checkpoint component mismatch: have '" + meta.component + "', want '" +
                     expect_component + "' (" + path + ")");
  if (expect_config_hash != 0 && meta.config_hash != expect_config_hash)
    throw ConfigError("checkpoint config hash mismatch for " + path +
                      ": the checkpoint was produced under a different configuration");
  const auto& arrays = j.at("arrays");
  if (arrays.size() != params.size())
    throw StateError("checkpoint array count mismatch for " + path);
  for (size_t i = 0; i < params.size(); ++i) {
    std::string name = arrays[i].at("name").get<std::string>();
    std::vector<int> shape = arrays[i].at("shape").get<std::vector<int>>();
    if (name != params[i]->name)
      throw StateError("checkpoint tensor name mismatch at '" + name + "' (expected '" +
                       params[i]->name + "')");
    if (shape != params[i]->value.shape)
      throw StateError("checkpoint tensor shape mismatch at '" + name + "'");
    f.read(reinterpret_cast<char*>(params[i]->value.data.data()),
           std::streamsize(params[i]->value.data.size() * sizeof(real)));
    if (!f) throw StateError("truncated checkpoint payload at '" + name + "': " + path);
  }
  return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingDependencyError("checkpoint not found: " + path);
  return meta_from_json(read_header(f, path));
}

}  // namespace gu
