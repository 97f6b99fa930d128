#include "pipetteloc/nn/serialize.hpp"

#include <fstream>

namespace pipetteloc::nn {

namespace {
constexpr char kMagic[4] = {'P', 'L', 'C', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header = ckpt.header;
    header["checkpoint_version"] = kVersion;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, tensor] : ckpt.tensors)
        index.push_back({{"name", name}, {"shape", tensor.shape()}});
    header["tensors"] = index;

    const std::string head = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kMagic, 4);
    const uint64_t head_len = head.size();
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, tensor] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    if (!out) throw std::runtime_error("save_checkpoint: I/O failure writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error("load_checkpoint: " + path + " is not a pipetteloc checkpoint");
    uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);

    Checkpoint ckpt;
    ckpt.header = nlohmann::json::parse(head);
    const uint32_t version = ckpt.header.value("checkpoint_version", 0u);
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported checkpoint version " +
                                 std::to_string(version));
    for (const auto& entry : ckpt.header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in) throw std::runtime_error("load_checkpoint: truncated tensor " + name);
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

}  // namespace pipetteloc::nn
