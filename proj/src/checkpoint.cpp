#include "robustae/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace robustae::ckpt {

namespace {

nlohmann::json read_header(std::ifstream& f, const std::string& path, const std::string& magic) {
  std::string line;
  if (!std::getline(f, line) || line != magic)
    throw CheckpointError("checkpoint " + path + ": bad magic (expected " + magic + ")");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f) throw CheckpointError("checkpoint " + path + ": truncated header length");
  std::string hdr(hlen, '\0');
  f.read(hdr.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw CheckpointError("checkpoint " + path + ": truncated header");
  return nlohmann::json::parse(hdr);
}

}  // namespace

void save_container(const std::string& path, const std::string& magic,
                    const nlohmann::json& config, const nn::ParamMap& params) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, t] : params)
    manifest.push_back({{"name", name}, {"shape", t->shape()}});
  nlohmann::json header = {{"config", config}, {"params", manifest}};
  std::string hdr = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  f << magic << "\n";
  uint64_t hlen = hdr.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& [name, t] : params)
    f.write(reinterpret_cast<const char*>(t->data()),
            static_cast<std::streamsize>(t->numel() * sizeof(double)));
  if (!f) throw CheckpointError("checkpoint: short write to " + path);
}

nlohmann::json read_container_config(const std::string& path, const std::string& magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  return read_header(f, path, magic)["config"];
}

void load_params(const std::string& path, const std::string& magic, const nn::ParamMap& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  nlohmann::json header = read_header(f, path, magic);
  const auto& manifest = header["params"];
  if (manifest.size() != params.size())
    throw CheckpointError("checkpoint " + path + ": parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (manifest[i]["name"] != name)
      throw CheckpointError("checkpoint " + path + ": parameter name mismatch at " + name);
    std::vector<int> shape = manifest[i]["shape"].get<std::vector<int>>();
    if (shape != t->shape())
      throw CheckpointError("checkpoint " + path + ": shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(t->data()),
           static_cast<std::streamsize>(t->numel() * sizeof(double)));
    if (!f) throw CheckpointError("checkpoint " + path + ": truncated blob for " + name);
  }
}

}  // namespace robustae::ckpt
